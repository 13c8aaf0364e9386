// Campaign grids: a run-config template plus axes over bit positions, sites,
// fault rates, window durations, detector alphas and seeds. Cells expand
// deterministically, run independently (in-process or as child processes of
// the CLI), and aggregate into a report with recompute precision and
// detection rate computed against the fault log ground truth.
#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "sdcforge/config.hpp"
#include "sdcforge/run.hpp"

namespace sdcforge {

struct CampaignGrid {
    RunConfig base;
    std::vector<std::uint32_t> bits;
    std::vector<std::string> sites;
    std::vector<std::uint64_t> rates;
    std::vector<std::uint64_t> durations;
    std::vector<float> alphas;
    std::vector<std::uint64_t> seeds;  // overrides base.seeds when nonempty
};

namespace detail {

// "0..15" or "1,3,5"
inline std::vector<std::uint64_t> parse_int_axis(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> out;
    const auto dots = v.find("..");
    if (dots != std::string::npos) {
        const auto lo = to_u64(key, trim(v.substr(0, dots)));
        const auto hi = to_u64(key, trim(v.substr(dots + 2)));
        if (hi < lo) throw ConfigError(key + ": empty range");
        for (std::uint64_t i = lo; i <= hi; ++i) out.push_back(i);
        return out;
    }
    for (const auto& item : split_list(v)) out.push_back(to_u64(key, item));
    return out;
}

inline std::string sanitize_site(const std::string& s) {
    std::string out;
    for (const char c : s) {
        if (c == ':') continue;
        out += c == '*' ? 'x' : c;
    }
    return out;
}

}  // namespace detail

inline CampaignGrid load_campaign(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open campaign file " + path);
    std::stringstream ss;
    ss << in.rdbuf();

    CampaignGrid grid;
    grid.base = parse_config_text(ss.str(), [&](const std::string& key, const std::string& value) {
        if (key == "axis_bits") {
            for (const auto b : detail::parse_int_axis(key, value)) {
                if (b > 15) throw ConfigError("axis_bits: bit positions are 0..15");
                grid.bits.push_back(static_cast<std::uint32_t>(b));
            }
        } else if (key == "axis_sites") {
            grid.sites = detail::split_list(value);
            for (const auto& s : grid.sites) (void)SiteSelector::parse(s);
        } else if (key == "axis_rates") {
            grid.rates = detail::parse_int_axis(key, value);
        } else if (key == "axis_durations") {
            grid.durations = detail::parse_int_axis(key, value);
        } else if (key == "axis_alphas") {
            for (const auto& a : detail::split_list(value)) {
                grid.alphas.push_back(detail::to_f32(key, a));
            }
        } else if (key == "axis_seeds") {
            grid.seeds = detail::parse_int_axis(key, value);
        } else {
            return false;
        }
        return true;
    });
    if (!grid.seeds.empty()) grid.base.seeds = grid.seeds;
    return grid;
}

struct CampaignCell {
    std::string name;
    RunConfig cfg;
    std::map<std::string, std::string> axes;  // axis -> value, for the report
};

// Deterministic cartesian expansion, axis order: bit, site, rate, duration, alpha.
inline std::vector<CampaignCell> expand_campaign(const CampaignGrid& grid) {
    const std::filesystem::path root(grid.base.out_dir);

    auto one = [](auto& v) { return v.empty() ? std::size_t{1} : v.size(); };
    std::vector<CampaignCell> cells;
    for (std::size_t ib = 0; ib < one(grid.bits); ++ib) {
        for (std::size_t is = 0; is < one(grid.sites); ++is) {
            for (std::size_t ir = 0; ir < one(grid.rates); ++ir) {
                for (std::size_t id = 0; id < one(grid.durations); ++id) {
                    for (std::size_t ia = 0; ia < one(grid.alphas); ++ia) {
                        CampaignCell cell;
                        cell.cfg = grid.base;
                        std::string name;
                        auto add = [&name](const std::string& part) {
                            if (!name.empty()) name += '_';
                            name += part;
                        };
                        if (!grid.bits.empty()) {
                            const auto bit = grid.bits[ib];
                            cell.cfg.fault_bitmask = static_cast<std::uint16_t>(1u << bit);
                            cell.axes["bit"] = std::to_string(bit);
                            add("bit" + std::to_string(bit));
                        }
                        if (!grid.sites.empty()) {
                            cell.cfg.fault_sites = {grid.sites[is]};
                            cell.axes["site"] = grid.sites[is];
                            add("site" + detail::sanitize_site(grid.sites[is]));
                        }
                        if (!grid.rates.empty()) {
                            cell.cfg.fault_mode = "rate";
                            cell.cfg.fault_rate_n = grid.rates[ir];
                            cell.axes["rate"] = std::to_string(grid.rates[ir]);
                            add("rate" + std::to_string(grid.rates[ir]));
                        }
                        if (!grid.durations.empty()) {
                            cell.cfg.fault_mode = "window";
                            cell.cfg.fault_window_duration = grid.durations[id];
                            cell.axes["duration"] = std::to_string(grid.durations[id]);
                            add("dur" + std::to_string(grid.durations[id]));
                        }
                        if (!grid.alphas.empty()) {
                            cell.cfg.detector.alpha = grid.alphas[ia];
                            cell.axes["alpha"] = f32_to_string(grid.alphas[ia]);
                            add("a" + f32_to_string(grid.alphas[ia]));
                        }
                        if (name.empty()) name = "cell";
                        cell.name = name;
                        cell.cfg.out_dir = (root / name).string();
                        cell.cfg.validate();
                        cells.push_back(std::move(cell));
                    }
                }
            }
        }
    }
    return cells;
}

struct CellRunStatus {
    std::string cell;
    std::uint64_t seed = 0;
    bool ok = false;
    bool skipped = false;  // resume hit
    std::string error;
};

struct CampaignOptions {
    bool resume = false;
    unsigned parallelism = 1;  // > 1 requires self_exe (child processes)
    std::string self_exe;      // path to the CLI binary; empty = in-process
};

namespace detail {

inline CellRunStatus run_cell_inprocess(const CampaignCell& cell, std::uint64_t seed) {
    CellRunStatus st;
    st.cell = cell.name;
    st.seed = seed;
    try {
        (void)run_training(cell.cfg, seed);
        st.ok = true;
    } catch (const std::exception& e) {
        st.error = e.what();
    }
    return st;
}

struct ChildTask {
    pid_t pid = -1;
    std::size_t index = 0;  // into the status vector
};

inline pid_t spawn_train(const std::string& exe, const std::string& cfg_path, std::uint64_t seed) {
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("campaign: fork failed");
    if (pid == 0) {
        const std::string seed_str = std::to_string(seed);
        const char* argv[] = {exe.c_str(),      "train", "--config", cfg_path.c_str(),
                              "--seed",         seed_str.c_str(),    nullptr};
        execv(exe.c_str(), const_cast<char**>(argv));
        _exit(127);
    }
    return pid;
}

}  // namespace detail

// Executes all (cell, seed) runs. Per-run failures are recorded and the
// campaign continues. Child-process mode writes each cell's config file and
// re-invokes the CLI, so cells never share mutable state.
inline std::vector<CellRunStatus> run_campaign(const CampaignGrid& grid,
                                               const CampaignOptions& opts = {}) {
    const auto cells = expand_campaign(grid);
    std::filesystem::create_directories(grid.base.out_dir);

    struct Task {
        const CampaignCell* cell;
        std::uint64_t seed;
        std::filesystem::path cfg_path;
    };
    std::vector<Task> tasks;
    std::vector<CellRunStatus> status;
    for (const auto& cell : cells) {
        std::filesystem::create_directories(cell.cfg.out_dir);
        const auto cfg_path = std::filesystem::path(cell.cfg.out_dir) / "cell_config.txt";
        {
            std::ofstream out(cfg_path, std::ios::trunc);
            out << config_to_text(cell.cfg);
        }
        for (const std::uint64_t seed : cell.cfg.seeds) {
            if (opts.resume &&
                std::filesystem::exists(run_dir_for_seed(cell.cfg.out_dir, seed) / "summary.json")) {
                CellRunStatus st;
                st.cell = cell.name;
                st.seed = seed;
                st.ok = true;
                st.skipped = true;
                status.push_back(st);
                continue;
            }
            tasks.push_back({&cell, seed, cfg_path});
            status.push_back({cell.name, seed, false, false, ""});
        }
    }

    // map task order onto the non-skipped status slots
    std::vector<std::size_t> slot;
    for (std::size_t i = 0; i < status.size(); ++i) {
        if (!status[i].skipped) slot.push_back(i);
    }

    if (opts.self_exe.empty() || opts.parallelism <= 1) {
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            if (opts.self_exe.empty()) {
                status[slot[t]] = detail::run_cell_inprocess(*tasks[t].cell, tasks[t].seed);
            } else {
                const pid_t pid =
                    detail::spawn_train(opts.self_exe, tasks[t].cfg_path.string(), tasks[t].seed);
                int wstatus = 0;
                waitpid(pid, &wstatus, 0);
                status[slot[t]].ok = WIFEXITED(wstatus) && WEXITSTATUS(wstatus) == 0;
                if (!status[slot[t]].ok) {
                    status[slot[t]].error = "child exited with status " + std::to_string(wstatus);
                }
            }
        }
        return status;
    }

    // process pool
    std::vector<detail::ChildTask> active;
    std::size_t next = 0;
    while (next < tasks.size() || !active.empty()) {
        while (next < tasks.size() && active.size() < opts.parallelism) {
            const pid_t pid =
                detail::spawn_train(opts.self_exe, tasks[next].cfg_path.string(), tasks[next].seed);
            active.push_back({pid, slot[next]});
            ++next;
        }
        int wstatus = 0;
        const pid_t done = waitpid(-1, &wstatus, 0);
        for (std::size_t i = 0; i < active.size(); ++i) {
            if (active[i].pid == done) {
                status[active[i].index].ok = WIFEXITED(wstatus) && WEXITSTATUS(wstatus) == 0;
                if (!status[active[i].index].ok) {
                    status[active[i].index].error =
                        "child exited with status " + std::to_string(wstatus);
                }
                active.erase(active.begin() + static_cast<std::ptrdiff_t>(i));
                break;
            }
        }
    }
    return status;
}

// ---------------------------------------------------------------------------
// Detection accounting and the campaign report
// ---------------------------------------------------------------------------

struct DetectionStats {
    std::uint64_t fault_steps = 0;
    std::uint64_t fault_events = 0;
    std::uint64_t detections = 0;
    std::uint64_t justified = 0;
    std::uint64_t detected_events = 0;
    std::uint64_t recomputes = 0;
};

// A detection is justified when a fault event was active within the step or
// the preceding grace window; an event is detected when any step in
// [start, end + grace] is flagged.
inline DetectionStats detection_stats(const std::vector<StepTelemetry>& recs, std::uint64_t grace) {
    DetectionStats out;
    struct Event {
        std::uint64_t start, end;
        bool detected = false;
    };
    std::vector<Event> events;
    for (const auto& r : recs) {
        if (r.fault_active) {
            out.fault_steps += 1;
            if (!events.empty() && events.back().end + 1 == r.step) {
                events.back().end = r.step;
            } else {
                events.push_back({r.step, r.step, false});
            }
        }
        out.recomputes += r.recomputed ? 1 : 0;
    }
    out.fault_events = events.size();
    for (const auto& r : recs) {
        if (!r.detected) continue;
        out.detections += 1;
        bool j = false;
        for (auto& e : events) {
            if (r.step >= e.start && r.step <= e.end + grace) {
                j = true;
                e.detected = true;
            }
        }
        out.justified += j ? 1 : 0;
    }
    for (const auto& e : events) out.detected_events += e.detected ? 1 : 0;
    return out;
}

struct CellReport {
    std::string name;
    std::map<std::string, std::string> axes;
    std::uint64_t runs_ok = 0;
    std::uint64_t runs_failed = 0;
    std::vector<float> eval_losses;  // finite final evals across seeds
    std::uint64_t nonfinite_evals = 0;
    DetectionStats stats;

    float eval_mean() const {
        if (eval_losses.empty()) return std::numeric_limits<float>::quiet_NaN();
        float s = 0.0f;
        for (const float v : eval_losses) s += v;
        return s / static_cast<float>(eval_losses.size());
    }
    float eval_std() const {
        if (eval_losses.size() < 2) return 0.0f;
        const float m = eval_mean();
        float s = 0.0f;
        for (const float v : eval_losses) s += (v - m) * (v - m);
        return std::sqrt(s / static_cast<float>(eval_losses.size() - 1));
    }
    float precision() const {
        return stats.detections > 0 ? static_cast<float>(stats.justified) /
                                          static_cast<float>(stats.detections)
                                    : std::numeric_limits<float>::quiet_NaN();
    }
    float detection_rate() const {
        return stats.fault_events > 0 ? static_cast<float>(stats.detected_events) /
                                            static_cast<float>(stats.fault_events)
                                      : std::numeric_limits<float>::quiet_NaN();
    }
};

struct CampaignReport {
    std::vector<CellReport> cells;
    DetectionStats aggregate;

    float aggregate_precision() const {
        return aggregate.detections > 0 ? static_cast<float>(aggregate.justified) /
                                              static_cast<float>(aggregate.detections)
                                        : std::numeric_limits<float>::quiet_NaN();
    }
    float aggregate_detection_rate() const {
        return aggregate.fault_events > 0 ? static_cast<float>(aggregate.detected_events) /
                                                static_cast<float>(aggregate.fault_events)
                                          : std::numeric_limits<float>::quiet_NaN();
    }
};

inline CampaignReport build_campaign_report(const CampaignGrid& grid) {
    CampaignReport report;
    for (const auto& cell : expand_campaign(grid)) {
        CellReport cr;
        cr.name = cell.name;
        cr.axes = cell.axes;
        for (const std::uint64_t seed : cell.cfg.seeds) {
            const auto dir = run_dir_for_seed(cell.cfg.out_dir, seed);
            if (!std::filesystem::exists(dir / "summary.json")) {
                cr.runs_failed += 1;
                continue;
            }
            const RunSummary s = load_summary(dir / "summary.json");
            cr.runs_ok += 1;
            if (std::isfinite(s.final_eval_loss)) {
                cr.eval_losses.push_back(s.final_eval_loss);
            } else {
                cr.nonfinite_evals += 1;
            }
            const auto recs = read_records((dir / "telemetry.csv").string());
            const DetectionStats ds = detection_stats(recs, cell.cfg.grace);
            cr.stats.fault_steps += ds.fault_steps;
            cr.stats.fault_events += ds.fault_events;
            cr.stats.detections += ds.detections;
            cr.stats.justified += ds.justified;
            cr.stats.detected_events += ds.detected_events;
            cr.stats.recomputes += ds.recomputes;
        }
        report.aggregate.fault_steps += cr.stats.fault_steps;
        report.aggregate.fault_events += cr.stats.fault_events;
        report.aggregate.detections += cr.stats.detections;
        report.aggregate.justified += cr.stats.justified;
        report.aggregate.detected_events += cr.stats.detected_events;
        report.aggregate.recomputes += cr.stats.recomputes;
        report.cells.push_back(std::move(cr));
    }
    return report;
}

inline void write_campaign_report(const std::filesystem::path& root, const CampaignReport& report) {
    {
        std::ofstream csv(root / "report.csv", std::ios::trunc);
        csv << "cell,bit,site,rate,duration,alpha,runs_ok,runs_failed,eval_mean,eval_std,"
               "nonfinite_evals,fault_steps,fault_events,detections,justified,precision,"
               "detected_events,detection_rate,recomputes\n";
        auto axis = [](const CellReport& c, const char* k) {
            const auto it = c.axes.find(k);
            return it == c.axes.end() ? std::string() : it->second;
        };
        for (const auto& c : report.cells) {
            csv << c.name << ',' << axis(c, "bit") << ',' << axis(c, "site") << ','
                << axis(c, "rate") << ',' << axis(c, "duration") << ',' << axis(c, "alpha") << ','
                << c.runs_ok << ',' << c.runs_failed << ',' << f32_to_string(c.eval_mean()) << ','
                << f32_to_string(c.eval_std()) << ',' << c.nonfinite_evals << ','
                << c.stats.fault_steps << ',' << c.stats.fault_events << ',' << c.stats.detections
                << ',' << c.stats.justified << ',' << f32_to_string(c.precision()) << ','
                << c.stats.detected_events << ',' << f32_to_string(c.detection_rate()) << ','
                << c.stats.recomputes << '\n';
        }
    }
    {
        nlohmann::json j;
        j["aggregate"] = {{"fault_events", report.aggregate.fault_events},
                          {"detections", report.aggregate.detections},
                          {"justified", report.aggregate.justified},
                          {"detected_events", report.aggregate.detected_events},
                          {"precision", json_f32(report.aggregate_precision())},
                          {"detection_rate", json_f32(report.aggregate_detection_rate())}};
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : report.cells) {
            nlohmann::json jc;
            jc["name"] = c.name;
            jc["axes"] = c.axes;
            jc["runs_ok"] = c.runs_ok;
            jc["runs_failed"] = c.runs_failed;
            jc["eval_mean"] = json_f32(c.eval_mean());
            jc["eval_std"] = json_f32(c.eval_std());
            jc["nonfinite_evals"] = c.nonfinite_evals;
            jc["precision"] = json_f32(c.precision());
            jc["detection_rate"] = json_f32(c.detection_rate());
            jc["fault_events"] = c.stats.fault_events;
            jc["detections"] = c.stats.detections;
            jc["recomputes"] = c.stats.recomputes;
            cells.push_back(jc);
        }
        j["cells"] = cells;
        std::ofstream out(root / "report.json", std::ios::trunc);
        out << j.dump(2) << '\n';
    }
}

}  // namespace sdcforge
