// sdcforge command line: train / campaign / compare / report.
// Exit codes: 0 success, 1 run failure, 2 configuration error.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "sdcforge/campaign.hpp"
#include "sdcforge/config.hpp"
#include "sdcforge/run.hpp"

namespace fs = std::filesystem;
using namespace sdcforge;

namespace {

unsigned campaign_parallelism() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SDC_FORGE_THREADS")) {
        try {
            const unsigned cap = static_cast<unsigned>(std::stoul(env));
            if (cap >= 1) n = std::min(n, cap);
        } catch (...) {
            throw ConfigError("SDC_FORGE_THREADS: expected a positive integer");
        }
    }
    return n;
}

std::string self_exe_path() {
    std::error_code ec;
    const fs::path p = fs::read_symlink("/proc/self/exe", ec);
    return ec ? std::string() : p.string();
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override,
              const std::string& out_override, const std::string& mode_override, bool resume) {
    RunConfig cfg = load_config(config_path);
    if (seed_override) cfg.seeds = {*seed_override};
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (!mode_override.empty()) {
        if (!apply_config_key(cfg, "mode", mode_override)) return 2;
    }
    cfg.validate();

    const auto results = run_all_seeds(cfg, resume);
    for (const auto& r : results) {
        std::printf("run %s: eval_loss=%s detections=%llu recomputes=%llu\n",
                    r.dir.string().c_str(), f32_to_string(r.summary.final_eval_loss).c_str(),
                    static_cast<unsigned long long>(r.summary.detections),
                    static_cast<unsigned long long>(r.summary.recomputes));
    }
    return 0;
}

int cmd_campaign(const std::string& config_path, const std::string& out_override, bool resume) {
    CampaignGrid grid = load_campaign(config_path);
    if (!out_override.empty()) grid.base.out_dir = out_override;

    CampaignOptions opts;
    opts.resume = resume;
    opts.parallelism = campaign_parallelism();
    opts.self_exe = opts.parallelism > 1 ? self_exe_path() : std::string();

    const auto status = run_campaign(grid, opts);
    std::size_t failed = 0;
    for (const auto& st : status) {
        if (!st.ok) {
            ++failed;
            std::fprintf(stderr, "cell %s seed %llu failed: %s\n", st.cell.c_str(),
                         static_cast<unsigned long long>(st.seed), st.error.c_str());
        }
    }
    const CampaignReport report = build_campaign_report(grid);
    write_campaign_report(grid.base.out_dir, report);
    std::printf("campaign: %zu runs, %zu failed; precision=%s detection_rate=%s\n", status.size(),
                failed, f32_to_string(report.aggregate_precision()).c_str(),
                f32_to_string(report.aggregate_detection_rate()).c_str());
    return failed == 0 ? 0 : 1;
}

int cmd_compare(const std::string& run_dir, const std::string& baseline_dir,
                const std::string& out_path) {
    const CompareResult r = compare_runs(run_dir, baseline_dir);
    std::printf("parameter_difference=%s\n", f32_to_string(r.param_difference).c_str());
    if (!out_path.empty()) {
        write_compare_csv(out_path, r);
        std::printf("loss deltas written to %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_report(const std::string& run_dir, const std::string& campaign_path,
               const std::string& campaign_dir) {
    if (!run_dir.empty()) {
        const RunSummary s = load_summary(fs::path(run_dir) / "summary.json");
        std::printf("final_eval_loss=%s\n", f32_to_string(s.final_eval_loss).c_str());
        std::printf("max_grad_norm_pre=%s\n", f32_to_string(s.max_grad_norm_pre).c_str());
        std::printf("max_attn_logit=%s\n", f32_to_string(s.max_attn_logit).c_str());
        std::printf("param_difference=%s\n", f32_to_string(s.param_difference).c_str());
        std::printf("steps=%llu fault_steps=%llu fault_events=%llu detections=%llu recomputes=%llu\n",
                    static_cast<unsigned long long>(s.steps),
                    static_cast<unsigned long long>(s.fault_steps),
                    static_cast<unsigned long long>(s.fault_events),
                    static_cast<unsigned long long>(s.detections),
                    static_cast<unsigned long long>(s.recomputes));
        return 0;
    }
    CampaignGrid grid = load_campaign(campaign_path);
    if (!campaign_dir.empty()) grid.base.out_dir = campaign_dir;
    const CampaignReport report = build_campaign_report(grid);
    write_campaign_report(grid.base.out_dir, report);
    std::printf("report written to %s (precision=%s detection_rate=%s)\n",
                (fs::path(grid.base.out_dir) / "report.csv").string().c_str(),
                f32_to_string(report.aggregate_precision()).c_str(),
                f32_to_string(report.aggregate_detection_rate()).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic SDC injection and detection harness for tiny-transformer training"};
    app.require_subcommand(1);

    std::string config_path, out_dir, mode, run_dir, baseline_dir, out_csv, campaign_dir;
    std::optional<std::uint64_t> seed;
    bool resume = false;

    auto* train = app.add_subcommand("train", "run one training configuration");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--seed", seed, "override the config's seed list with one seed");
    train->add_option("--out", out_dir, "override out_dir");
    train->add_option("--mode", mode, "override mode (baseline|fault|guarded)");
    train->add_flag("--resume", resume, "skip seeds whose summary already exists");

    auto* campaign = app.add_subcommand("campaign", "run a campaign grid");
    campaign->add_option("--config", config_path, "campaign config file")->required();
    campaign->add_option("--out", out_dir, "override the campaign root directory");
    campaign->add_flag("--resume", resume, "skip runs whose summary already exists");

    auto* compare = app.add_subcommand("compare", "compare a run against a baseline run");
    compare->add_option("run_dir", run_dir, "run directory (seed level)")->required();
    compare->add_option("baseline_dir", baseline_dir, "baseline run directory (seed level)")
        ->required();
    compare->add_option("--out", out_csv, "write per-step loss deltas to this CSV");

    auto* report = app.add_subcommand("report", "summarize a run or rebuild a campaign report");
    report->add_option("--run", run_dir, "run directory (seed level)");
    report->add_option("--campaign", config_path, "campaign config file");
    report->add_option("--campaign-dir", campaign_dir, "override the campaign root directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, seed, out_dir, mode, resume);
        if (campaign->parsed()) return cmd_campaign(config_path, out_dir, resume);
        if (compare->parsed()) return cmd_compare(run_dir, baseline_dir, out_csv);
        if (report->parsed()) {
            if (run_dir.empty() && config_path.empty()) {
                std::fprintf(stderr, "report: need --run or --campaign\n");
                return 2;
            }
            return cmd_report(run_dir, config_path, campaign_dir);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
