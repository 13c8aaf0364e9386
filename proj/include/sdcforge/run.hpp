// One training run end to end: corpus, trainer, optional injector and guard,
// telemetry persistence, periodic evaluation, checkpoint and summary. A run
// directory is self-describing: config echo, telemetry.csv, eval.csv,
// fault_log.csv, params.ckpt, summary.json.
#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "sdcforge/checkpoint.hpp"
#include "sdcforge/config.hpp"
#include "sdcforge/corpus.hpp"
#include "sdcforge/guard.hpp"
#include "sdcforge/telemetry.hpp"
#include "sdcforge/trainer.hpp"

namespace sdcforge {

// The synthetic dataset is shared across seeds (seeds control init and batch
// order, not the data itself).
inline constexpr std::uint64_t kCorpusSeed = 0xDA7Aull;

inline std::filesystem::path run_dir_for_seed(const std::string& out_dir, std::uint64_t seed) {
    return std::filesystem::path(out_dir) / ("seed" + std::to_string(seed));
}

// JSON helpers that keep Inf/NaN representable (nlohmann would emit null).
inline nlohmann::json json_f32(float v) {
    if (std::isfinite(v)) return v;
    return f32_to_string(v);
}

inline float json_to_f32(const nlohmann::json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<float>::infinity();
        if (s == "-inf") return -std::numeric_limits<float>::infinity();
        return std::numeric_limits<float>::quiet_NaN();
    }
    return j.get<float>();
}

inline nlohmann::json summary_to_json(const RunSummary& s) {
    nlohmann::json j;
    j["final_eval_loss"] = json_f32(s.final_eval_loss);
    j["max_grad_norm_pre"] = json_f32(s.max_grad_norm_pre);
    j["max_attn_logit"] = json_f32(s.max_attn_logit);
    j["param_difference"] = json_f32(s.param_difference);
    j["steps"] = s.steps;
    j["fault_steps"] = s.fault_steps;
    j["fault_events"] = s.fault_events;
    j["detections"] = s.detections;
    j["recomputes"] = s.recomputes;
    return j;
}

inline RunSummary summary_from_json(const nlohmann::json& j) {
    RunSummary s;
    s.final_eval_loss = json_to_f32(j.at("final_eval_loss"));
    s.max_grad_norm_pre = json_to_f32(j.at("max_grad_norm_pre"));
    s.max_attn_logit = json_to_f32(j.at("max_attn_logit"));
    s.param_difference = json_to_f32(j.at("param_difference"));
    s.steps = j.at("steps").get<std::uint64_t>();
    s.fault_steps = j.at("fault_steps").get<std::uint64_t>();
    s.fault_events = j.at("fault_events").get<std::uint64_t>();
    s.detections = j.at("detections").get<std::uint64_t>();
    s.recomputes = j.at("recomputes").get<std::uint64_t>();
    return s;
}

inline RunSummary load_summary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("summary: cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    return summary_from_json(j);
}

inline Corpus load_run_corpus(const RunConfig& cfg) {
    if (cfg.corpus == "synthetic") {
        return synth_corpus(kCorpusSeed, cfg.corpus_bytes, cfg.model.vocab_size);
    }
    return load_corpus_file(cfg.corpus, cfg.model.vocab_size);
}

struct RunResult {
    std::filesystem::path dir;
    RunSummary summary;
};

// Executes one seed of a run config and writes all artifacts. force_anomaly
// is a test hook for exercising the false-positive verification path.
inline RunResult run_training(const RunConfig& cfg, std::uint64_t seed,
                              const ForceAnomalyFn& force_anomaly = nullptr) {
    cfg.validate();
    const std::filesystem::path dir = run_dir_for_seed(cfg.out_dir, seed);
    std::filesystem::create_directories(dir);

    // echo the exact configuration this run used, pinned to this seed
    {
        RunConfig echo = cfg;
        echo.seeds = {seed};
        std::ofstream out(dir / "config.txt", std::ios::trunc);
        out << config_to_text(echo);
    }

    const Corpus corpus = load_run_corpus(cfg);
    const BatchStream stream(corpus, cfg.model.seq_len, cfg.batch_size, seed, cfg.eval_batches);
    const auto eval_set = stream.eval_batches(cfg.eval_batches);

    TrainerState ts = make_trainer(cfg.model, seed, cfg.hyper, cfg.detector);

    FaultLog fault_log;
    std::optional<FaultPlanner> planner;
    if (cfg.fault_configured() && cfg.mode != RunMode::Baseline) {
        planner.emplace(cfg.make_fault_schedule(seed), cfg.make_fault_spec(),
                        enumerate_gemm_sites(cfg.model), cfg.total_steps);
    }

    TelemetryWriter telemetry((dir / "telemetry.csv").string());
    std::ofstream eval_csv(dir / "eval.csv", std::ios::trunc);
    eval_csv << "step,eval_loss\n";

    float final_eval = std::numeric_limits<float>::quiet_NaN();
    std::vector<StepTelemetry> records;
    records.reserve(cfg.total_steps);

    // raw-mode delta tracking (guarded mode gets deltas from the detector path)
    float prev_r = std::numeric_limits<float>::quiet_NaN();
    float prev_g = std::numeric_limits<float>::quiet_NaN();
    StepSnapshot snapshot_scratch;

    for (std::uint64_t step = 1; step <= cfg.total_steps; ++step) {
        StepTelemetry t;
        if (cfg.mode == RunMode::Guarded) {
            const auto out = guarded_step(ts, stream, cfg.schedule, planner ? &*planner : nullptr,
                                          &fault_log, cfg.fault_during_recompute, force_anomaly,
                                          &snapshot_scratch);
            t = out.telemetry;
        } else {
            InjectionHook hook = planner ? make_hook(planner->plan_step(step), step, &fault_log)
                                         : make_hook({}, step, nullptr);
            const RawStepResult r = run_raw_step(ts, stream, cfg.schedule, &hook);
            t.step = step;
            t.train_loss = r.loss;
            t.grad_norm_pre = r.grad_norm_pre;
            t.grad_norm_post = r.grad_norm_post;
            t.max_attn_logit = r.max_attn_logit;
            t.r_t = r.r_t;
            t.lr = r.lr;
            t.fault_active = r.applied_flips > 0;
            t.delta_r = std::isnan(prev_r) ? 0.0f : std::abs(r.r_t - prev_r);
            t.delta_g = std::isnan(prev_g) ? 0.0f : std::max(0.0f, r.grad_norm_pre - prev_g);
            prev_r = r.r_t;
            prev_g = r.grad_norm_pre;
        }
        telemetry.append(t);
        records.push_back(t);

        if (step % cfg.eval_every == 0 || step == cfg.total_steps) {
            const float ev = eval_loss(ts.params, eval_set);
            eval_csv << step << ',' << f32_to_string(ev) << '\n';
            if (step == cfg.total_steps) final_eval = ev;
        }
    }
    telemetry.flush();
    eval_csv.flush();

    save_params((dir / "params.ckpt").string(), ts.params);

    {
        std::ofstream flog(dir / "fault_log.csv", std::ios::trunc);
        flog << "step,site,bitmask,element_index\n";
        char hexbuf[8];
        for (const auto& e : fault_log.entries) {
            std::snprintf(hexbuf, sizeof(hexbuf), "0x%04X", e.bitmask);
            flog << e.step << ',' << site_to_string(e.site) << ',' << hexbuf << ','
                 << e.element_index << '\n';
        }
    }

    RunSummary summary = RunSummary::from_records(records);
    summary.final_eval_loss = final_eval;
    if (!cfg.baseline_dir.empty()) {
        const auto base_ckpt = run_dir_for_seed(cfg.baseline_dir, seed) / "params.ckpt";
        const ParameterSet base = load_params(base_ckpt.string());
        summary.param_difference = parameter_difference(ts.params, base);
    }

    {
        std::ofstream out(dir / "summary.json", std::ios::trunc);
        out << summary_to_json(summary).dump(2) << '\n';
    }
    return {dir, summary};
}

// Runs every seed of the config sequentially. Resume skips seeds whose
// summary already exists.
inline std::vector<RunResult> run_all_seeds(const RunConfig& cfg, bool resume = false,
                                            const ForceAnomalyFn& force_anomaly = nullptr) {
    std::vector<RunResult> out;
    for (const std::uint64_t seed : cfg.seeds) {
        const auto dir = run_dir_for_seed(cfg.out_dir, seed);
        if (resume && std::filesystem::exists(dir / "summary.json")) {
            out.push_back({dir, load_summary(dir / "summary.json")});
            continue;
        }
        out.push_back(run_training(cfg, seed, force_anomaly));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-run comparison
// ---------------------------------------------------------------------------

struct CompareResult {
    float param_difference = 0.0f;
    std::vector<std::uint64_t> steps;
    std::vector<float> loss_delta;  // run - baseline, per step
};

// Configs must match except for fault, guard and output settings.
inline void require_comparable_configs(const RunConfig& a, const RunConfig& b) {
    RunConfig na = a, nb = b;
    for (RunConfig* c : {&na, &nb}) {
        c->mode = RunMode::Baseline;
        c->fault_sites.clear();
        c->fault_bitmask = 0;
        c->fault_element = 0;
        c->fault_all_elements = false;
        c->fault_mode = "rate";
        c->fault_rate_n = 1;
        c->fault_window_start = 0;
        c->fault_window_duration = 1;
        c->fault_dur_min = 1;
        c->fault_dur_max = 1;
        c->fault_seed.reset();
        c->fault_site_selection = "fixed";
        c->fault_during_recompute = false;
        c->detector = DetectorConfig{};
        c->out_dir = "";
        c->baseline_dir = "";
        c->grace = 0;
    }
    if (config_to_text(na) != config_to_text(nb)) {
        throw ConfigError("compare: run configs differ beyond fault/guard settings");
    }
}

inline CompareResult compare_runs(const std::filesystem::path& run_dir,
                                  const std::filesystem::path& baseline_dir) {
    const RunConfig ca = load_config((run_dir / "config.txt").string());
    const RunConfig cb = load_config((baseline_dir / "config.txt").string());
    require_comparable_configs(ca, cb);

    CompareResult out;
    const ParameterSet pa = load_params((run_dir / "params.ckpt").string());
    const ParameterSet pb = load_params((baseline_dir / "params.ckpt").string());
    out.param_difference = parameter_difference(pa, pb);

    const auto ra = read_records((run_dir / "telemetry.csv").string());
    const auto rb = read_records((baseline_dir / "telemetry.csv").string());
    const std::size_t n = std::min(ra.size(), rb.size());
    out.steps.reserve(n);
    out.loss_delta.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.steps.push_back(ra[i].step);
        out.loss_delta.push_back(ra[i].train_loss - rb[i].train_loss);
    }
    return out;
}

inline void write_compare_csv(const std::filesystem::path& path, const CompareResult& r) {
    std::ofstream out(path, std::ios::trunc);
    out << "step,loss_delta\n";
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        out << r.steps[i] << ',' << f32_to_string(r.loss_delta[i]) << '\n';
    }
}

}  // namespace sdcforge
