// Run configuration: a flat key = value file with typed validation. Unknown
// keys are rejected; validation happens before any compute. The same format
// is echoed into every run directory so a run is reproducible from its
// artifacts alone.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcforge/detector.hpp"
#include "sdcforge/fault.hpp"
#include "sdcforge/model.hpp"
#include "sdcforge/optimizer.hpp"
#include "sdcforge/strings.hpp"

namespace sdcforge {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class RunMode : std::uint8_t { Baseline, Fault, Guarded };

inline std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Baseline: return "baseline";
        case RunMode::Fault: return "fault";
        case RunMode::Guarded: return "guarded";
    }
    return "?";
}

struct RunConfig {
    // run
    RunMode mode = RunMode::Baseline;
    std::uint64_t total_steps = 500;
    std::uint64_t eval_every = 100;
    std::uint32_t eval_batches = 16;
    std::uint32_t batch_size = 16;
    std::vector<std::uint64_t> seeds{0};
    std::string corpus = "synthetic";  // "synthetic" or a file path
    std::uint64_t corpus_bytes = 1 << 20;
    std::string out_dir = "runs/out";
    std::string baseline_dir;  // optional: enables parameter_difference in summaries

    // model
    ModelConfig model;

    // optimizer + schedule
    OptimizerHyper hyper;
    ScheduleConfig schedule;

    // fault (active when fault_sites is nonempty)
    std::vector<std::string> fault_sites;
    std::uint16_t fault_bitmask = 1u << 14;
    std::uint64_t fault_element = 0;
    bool fault_all_elements = false;
    std::string fault_mode = "rate";  // rate | window | rate_random_duration
    std::uint64_t fault_rate_n = 10;
    std::uint64_t fault_window_start = 0;
    std::uint64_t fault_window_duration = 1;
    std::uint64_t fault_dur_min = 1;
    std::uint64_t fault_dur_max = 5;
    std::optional<std::uint64_t> fault_seed;  // default: the run seed
    std::string fault_site_selection = "fixed";  // fixed | random_per_event
    bool fault_during_recompute = false;

    // detector (guarded mode)
    DetectorConfig detector;
    std::uint64_t grace = 2;  // attribution window for precision accounting

    bool fault_configured() const { return !fault_sites.empty(); }

    FaultSpec make_fault_spec() const {
        FaultSpec spec;
        for (const auto& s : fault_sites) spec.sites.push_back(SiteSelector::parse(s));
        spec.bitmask = fault_bitmask;
        spec.element_index = fault_element;
        spec.all_elements = fault_all_elements;
        return spec;
    }

    FaultSchedule make_fault_schedule(std::uint64_t run_seed) const {
        FaultSchedule sch;
        if (fault_mode == "rate") {
            sch.mode = FaultSchedule::Mode::Rate;
        } else if (fault_mode == "window") {
            sch.mode = FaultSchedule::Mode::Window;
        } else if (fault_mode == "rate_random_duration") {
            sch.mode = FaultSchedule::Mode::RateWithRandomDuration;
        } else {
            throw ConfigError("fault_mode: unknown value '" + fault_mode + "'");
        }
        sch.rate_n = fault_rate_n;
        sch.window_start = fault_window_start;
        sch.window_duration = fault_window_duration;
        sch.dur_min = fault_dur_min;
        sch.dur_max = fault_dur_max;
        sch.seed = fault_seed.value_or(run_seed);
        sch.site_selection = fault_site_selection == "random_per_event"
                                 ? FaultSchedule::SiteSelection::RandomPerEvent
                                 : FaultSchedule::SiteSelection::Fixed;
        sch.inject_during_recompute = fault_during_recompute;
        return sch;
    }

    void validate() const {
        try {
            model.validate();
            detector.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (total_steps < 1) throw ConfigError("total_steps: must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
        if (eval_every < 1) throw ConfigError("eval_every: must be >= 1");
        if (eval_batches < 1) throw ConfigError("eval_batches: must be >= 1");
        if (seeds.empty()) throw ConfigError("seeds: must be nonempty");
        if (out_dir.empty()) throw ConfigError("out_dir: must be set");
        if (mode == RunMode::Fault && !fault_configured()) {
            throw ConfigError("fault_sites: fault mode needs at least one site");
        }
        if (mode == RunMode::Baseline && fault_configured()) {
            throw ConfigError("fault_sites: not allowed in baseline mode");
        }
        if (fault_configured()) {
            try {
                (void)make_fault_spec();
                (void)make_fault_schedule(0);
                make_fault_spec().validate();
                make_fault_schedule(0).validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        if (fault_site_selection != "fixed" && fault_site_selection != "random_per_event") {
            throw ConfigError("fault_site_selection: unknown value '" + fault_site_selection + "'");
        }
        if (corpus.empty()) throw ConfigError("corpus: must be 'synthetic' or a file path");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const auto r = std::stoull(v, &pos, 0);  // base 0: accepts 0x...
        if (pos != v.size()) throw std::invalid_argument("trailing junk");
        return r;
    } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline float to_f32(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const float r = std::stof(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing junk");
        return r;
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

}  // namespace detail

// Applies one key. Returns false when the key is unknown (callers that layer
// extra keys on top, like campaign grids, try theirs first).
inline bool apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::to_bool;
    using detail::to_f32;
    using detail::to_u64;
    if (key == "mode") {
        if (value == "baseline") cfg.mode = RunMode::Baseline;
        else if (value == "fault") cfg.mode = RunMode::Fault;
        else if (value == "guarded") cfg.mode = RunMode::Guarded;
        else throw ConfigError("mode: expected baseline|fault|guarded, got '" + value + "'");
    } else if (key == "total_steps") {
        cfg.total_steps = to_u64(key, value);
    } else if (key == "eval_every") {
        cfg.eval_every = to_u64(key, value);
    } else if (key == "eval_batches") {
        cfg.eval_batches = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "batch_size") {
        cfg.batch_size = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& s : detail::split_list(value)) cfg.seeds.push_back(to_u64(key, s));
    } else if (key == "corpus") {
        cfg.corpus = value;
    } else if (key == "corpus_bytes") {
        cfg.corpus_bytes = to_u64(key, value);
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "baseline_dir") {
        cfg.baseline_dir = value;
    } else if (key == "vocab_size") {
        cfg.model.vocab_size = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "d_model") {
        cfg.model.d_model = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "n_heads") {
        cfg.model.n_heads = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "n_layers") {
        cfg.model.n_layers = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "seq_len") {
        cfg.model.seq_len = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "ffn_mult") {
        cfg.model.ffn_mult = static_cast<std::uint32_t>(to_u64(key, value));
    } else if (key == "lr_max") {
        cfg.schedule.lr_max = to_f32(key, value);
    } else if (key == "warmup_steps") {
        cfg.schedule.warmup_steps = to_u64(key, value);
    } else if (key == "schedule_total_steps") {
        cfg.schedule.total_steps = to_u64(key, value);
    } else if (key == "beta1") {
        cfg.hyper.beta1 = to_f32(key, value);
    } else if (key == "beta2") {
        cfg.hyper.beta2 = to_f32(key, value);
    } else if (key == "eps") {
        cfg.hyper.eps = to_f32(key, value);
    } else if (key == "weight_decay") {
        cfg.hyper.weight_decay = to_f32(key, value);
    } else if (key == "clip_threshold") {
        cfg.hyper.clip_threshold = to_f32(key, value);
    } else if (key == "clip_enabled") {
        cfg.hyper.clip_enabled = to_bool(key, value);
    } else if (key == "fault_sites") {
        cfg.fault_sites = detail::split_list(value);
    } else if (key == "fault_bitmask") {
        cfg.fault_bitmask = static_cast<std::uint16_t>(to_u64(key, value));
    } else if (key == "fault_element") {
        cfg.fault_element = to_u64(key, value);
    } else if (key == "fault_all_elements") {
        cfg.fault_all_elements = to_bool(key, value);
    } else if (key == "fault_mode") {
        cfg.fault_mode = value;
    } else if (key == "fault_rate_n") {
        cfg.fault_rate_n = to_u64(key, value);
    } else if (key == "fault_window_start") {
        cfg.fault_window_start = to_u64(key, value);
    } else if (key == "fault_window_duration") {
        cfg.fault_window_duration = to_u64(key, value);
    } else if (key == "fault_dur_min") {
        cfg.fault_dur_min = to_u64(key, value);
    } else if (key == "fault_dur_max") {
        cfg.fault_dur_max = to_u64(key, value);
    } else if (key == "fault_seed") {
        cfg.fault_seed = to_u64(key, value);
    } else if (key == "fault_site_selection") {
        cfg.fault_site_selection = value;
    } else if (key == "fault_during_recompute") {
        cfg.fault_during_recompute = to_bool(key, value);
    } else if (key == "alpha") {
        cfg.detector.alpha = to_f32(key, value);
    } else if (key == "detector_warmup") {
        cfg.detector.warmup_len = to_u64(key, value);
    } else if (key == "detector_min_steps") {
        cfg.detector.min_steps = to_u64(key, value);
    } else if (key == "grace") {
        cfg.grace = to_u64(key, value);
    } else {
        return false;
    }
    return true;
}

// Parse `key = value` lines; '#' starts a comment, blank lines are ignored.
// extra_key, when given, gets first refusal on unknown keys (campaign axes).
template <typename ExtraKeyFn>
RunConfig parse_config_text(const std::string& text, ExtraKeyFn&& extra_key) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (extra_key(key, value)) continue;
        if (!apply_config_key(cfg, key, value)) {
            throw ConfigError("unknown key '" + key + "' (line " + std::to_string(line_no) + ")");
        }
    }
    return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
    return parse_config_text(text, [](const std::string&, const std::string&) { return false; });
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// Serialize in the same format parse_config_text reads.
inline std::string config_to_text(const RunConfig& c) {
    std::ostringstream o;
    o << "mode = " << run_mode_name(c.mode) << "\n";
    o << "total_steps = " << c.total_steps << "\n";
    o << "eval_every = " << c.eval_every << "\n";
    o << "eval_batches = " << c.eval_batches << "\n";
    o << "batch_size = " << c.batch_size << "\n";
    o << "seeds = ";
    for (std::size_t i = 0; i < c.seeds.size(); ++i) o << (i ? "," : "") << c.seeds[i];
    o << "\n";
    o << "corpus = " << c.corpus << "\n";
    o << "corpus_bytes = " << c.corpus_bytes << "\n";
    o << "out_dir = " << c.out_dir << "\n";
    if (!c.baseline_dir.empty()) o << "baseline_dir = " << c.baseline_dir << "\n";
    o << "vocab_size = " << c.model.vocab_size << "\n";
    o << "d_model = " << c.model.d_model << "\n";
    o << "n_heads = " << c.model.n_heads << "\n";
    o << "n_layers = " << c.model.n_layers << "\n";
    o << "seq_len = " << c.model.seq_len << "\n";
    o << "ffn_mult = " << c.model.ffn_mult << "\n";
    o << "lr_max = " << f32_to_string(c.schedule.lr_max) << "\n";
    o << "warmup_steps = " << c.schedule.warmup_steps << "\n";
    o << "schedule_total_steps = " << c.schedule.total_steps << "\n";
    o << "beta1 = " << f32_to_string(c.hyper.beta1) << "\n";
    o << "beta2 = " << f32_to_string(c.hyper.beta2) << "\n";
    o << "eps = " << f32_to_string(c.hyper.eps) << "\n";
    o << "weight_decay = " << f32_to_string(c.hyper.weight_decay) << "\n";
    o << "clip_threshold = " << f32_to_string(c.hyper.clip_threshold) << "\n";
    o << "clip_enabled = " << (c.hyper.clip_enabled ? "true" : "false") << "\n";
    if (c.fault_configured()) {
        o << "fault_sites = ";
        for (std::size_t i = 0; i < c.fault_sites.size(); ++i) o << (i ? "," : "") << c.fault_sites[i];
        o << "\n";
        o << "fault_bitmask = 0x" << std::hex << c.fault_bitmask << std::dec << "\n";
        o << "fault_element = " << c.fault_element << "\n";
        o << "fault_all_elements = " << (c.fault_all_elements ? "true" : "false") << "\n";
        o << "fault_mode = " << c.fault_mode << "\n";
        o << "fault_rate_n = " << c.fault_rate_n << "\n";
        o << "fault_window_start = " << c.fault_window_start << "\n";
        o << "fault_window_duration = " << c.fault_window_duration << "\n";
        o << "fault_dur_min = " << c.fault_dur_min << "\n";
        o << "fault_dur_max = " << c.fault_dur_max << "\n";
        if (c.fault_seed) o << "fault_seed = " << *c.fault_seed << "\n";
        o << "fault_site_selection = " << c.fault_site_selection << "\n";
        o << "fault_during_recompute = " << (c.fault_during_recompute ? "true" : "false") << "\n";
    }
    o << "alpha = " << f32_to_string(c.detector.alpha) << "\n";
    o << "detector_warmup = " << c.detector.warmup_len << "\n";
    o << "detector_min_steps = " << c.detector.min_steps << "\n";
    o << "grace = " << c.grace << "\n";
    return o.str();
}

}  // namespace sdcforge
