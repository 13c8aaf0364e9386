// Fault scheduling and the GEMM hook that carries bit flips into computation.
// The planner decides, per step, which sites are corrupted and at which
// operand element; everything is a deterministic function of the schedule
// seed, so identical configs produce identical fault logs across runs.
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcforge/gemm.hpp"
#include "sdcforge/model.hpp"
#include "sdcforge/rng.hpp"

namespace sdcforge {

// A site selector is either a concrete (pass, ordinal) or a per-pass wildcard.
struct SiteSelector {
    Pass pass = Pass::Backward;
    std::optional<std::uint32_t> ordinal;  // nullopt = any site of that pass

    static SiteSelector parse(const std::string& text) {
        SiteSelector s;
        if (text.rfind("FP:", 0) == 0) {
            s.pass = Pass::Forward;
        } else if (text.rfind("BP:", 0) == 0) {
            s.pass = Pass::Backward;
        } else {
            throw std::invalid_argument("site selector must look like FP:<n>, BP:<n> or FP:*/BP:*: " + text);
        }
        const std::string rest = text.substr(3);
        if (rest == "*") return s;
        try {
            s.ordinal = static_cast<std::uint32_t>(std::stoul(rest));
        } catch (...) {
            throw std::invalid_argument("bad site ordinal: " + text);
        }
        return s;
    }

    std::string to_string() const {
        return (pass == Pass::Forward ? std::string("FP:") : std::string("BP:")) +
               (ordinal ? std::to_string(*ordinal) : std::string("*"));
    }
};

struct FaultSpec {
    std::vector<SiteSelector> sites;
    std::uint16_t bitmask = 0;
    std::uint64_t element_index = 0;  // flat index into the A operand, modulo its size
    bool all_elements = false;        // density bracket: flip every A element instead

    void validate() const {
        if (sites.empty()) throw std::invalid_argument("fault.sites: must be nonempty");
        if (bitmask == 0) throw std::invalid_argument("fault.bitmask: must be nonzero");
    }
};

struct FaultSchedule {
    enum class Mode : std::uint8_t { Rate, Window, RateWithRandomDuration };
    enum class SiteSelection : std::uint8_t { Fixed, RandomPerEvent };

    Mode mode = Mode::Rate;
    std::uint64_t rate_n = 10;          // Rate / RateWithRandomDuration: Bernoulli(1/N) per step
    std::uint64_t window_start = 0;     // Window mode
    std::uint64_t window_duration = 1;
    std::uint64_t dur_min = 1;          // RateWithRandomDuration
    std::uint64_t dur_max = 5;
    std::uint64_t seed = 0;
    SiteSelection site_selection = SiteSelection::Fixed;
    bool inject_during_recompute = false;

    void validate() const {
        if (rate_n < 1) throw std::invalid_argument("fault.rate_n: must be >= 1");
        if (window_duration < 1) throw std::invalid_argument("fault.window_duration: must be >= 1");
        if (dur_min < 1 || dur_max < dur_min) {
            throw std::invalid_argument("fault.duration: need 1 <= dur_min <= dur_max");
        }
    }
};

struct FaultLogEntry {
    std::uint64_t step = 0;
    GemmSiteId site;
    std::uint16_t bitmask = 0;
    std::uint64_t element_index = 0;  // effective flat index actually flipped (first hit)
};

struct FaultLog {
    std::vector<FaultLogEntry> entries;
};

struct ActiveFault {
    GemmSiteId site;
    std::uint16_t bitmask = 0;
    std::uint64_t element_index = 0;
    bool all_elements = false;
};

// Precomputes the activation pattern for a whole run. plan_step stays a pure
// function of (schedule, spec, step) because the scan is fully determined by
// the schedule seed. Steps are 1-based, matching telemetry step numbering;
// total_steps means steps 1..total_steps inclusive.
class FaultPlanner {
public:
    FaultPlanner() = default;

    FaultPlanner(FaultSchedule schedule, FaultSpec spec, const std::vector<SiteInfo>& sites,
                 std::uint64_t total_steps)
        : schedule_(schedule), spec_(spec) {
        schedule_.validate();
        spec_.validate();
        candidates_ = expand_sites(spec_.sites, sites);
        if (candidates_.empty()) {
            throw std::invalid_argument("fault.sites: no matching GEMM sites");
        }
        build(total_steps);
    }

    // Sites corrupted at this step (empty when the fault is inactive).
    std::vector<ActiveFault> plan_step(std::uint64_t step) const {
        std::vector<ActiveFault> out;
        if (step >= active_event_.size() || active_event_[step] < 0) return out;
        const auto event = static_cast<std::uint64_t>(active_event_[step]);
        if (schedule_.site_selection == FaultSchedule::SiteSelection::RandomPerEvent) {
            const std::size_t pick =
                static_cast<std::size_t>(hash_mix(schedule_.seed ^ 0x51735173ull, event) % candidates_.size());
            out.push_back({candidates_[pick], spec_.bitmask, spec_.element_index, spec_.all_elements});
        } else {
            for (const GemmSiteId s : candidates_) {
                out.push_back({s, spec_.bitmask, spec_.element_index, spec_.all_elements});
            }
        }
        return out;
    }

    bool any_active(std::uint64_t step) const {
        return step < active_event_.size() && active_event_[step] >= 0;
    }

    // Scheduled event index at this step, -1 when inactive. Adjacent events
    // can touch; events() merges them for detection accounting, this does not.
    std::int64_t event_index(std::uint64_t step) const {
        return step < active_event_.size() ? active_event_[step] : -1;
    }

    // Maximal runs of consecutive active steps, the unit of detection-rate
    // accounting.
    struct Event {
        std::uint64_t start = 0;
        std::uint64_t end = 0;  // inclusive
    };
    std::vector<Event> events() const {
        std::vector<Event> out;
        for (std::uint64_t s = 0; s < active_event_.size(); ++s) {
            if (active_event_[s] < 0) continue;
            if (!out.empty() && out.back().end + 1 == s) {
                out.back().end = s;
            } else {
                out.push_back({s, s});
            }
        }
        return out;
    }

    const std::vector<GemmSiteId>& candidate_sites() const { return candidates_; }

private:
    static std::vector<GemmSiteId> expand_sites(const std::vector<SiteSelector>& sel,
                                                const std::vector<SiteInfo>& all) {
        std::vector<GemmSiteId> out;
        for (const SiteSelector& s : sel) {
            if (s.ordinal) {
                bool known = false;
                for (const SiteInfo& info : all) {
                    if (info.id.pass == s.pass && info.id.ordinal == *s.ordinal) {
                        known = true;
                        break;
                    }
                }
                if (!known) throw std::invalid_argument("fault site not in model: " + s.to_string());
                out.push_back({s.pass, *s.ordinal});
            } else {
                for (const SiteInfo& info : all) {
                    if (info.id.pass == s.pass) out.push_back(info.id);
                }
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end(),
                              [](GemmSiteId a, GemmSiteId b) { return a == b; }),
                  out.end());
        return out;
    }

    void build(std::uint64_t total_steps) {
        active_event_.assign(total_steps + 1, -1);  // index 0 unused, steps are 1-based
        switch (schedule_.mode) {
            case FaultSchedule::Mode::Window: {
                std::int64_t event = 0;
                for (std::uint64_t s = std::max<std::uint64_t>(schedule_.window_start, 1);
                     s < schedule_.window_start + schedule_.window_duration && s <= total_steps; ++s) {
                    active_event_[s] = event;
                }
                break;
            }
            case FaultSchedule::Mode::Rate: {
                std::int64_t event = 0;
                for (std::uint64_t s = 1; s <= total_steps; ++s) {
                    if (hash_mix(schedule_.seed, s) % schedule_.rate_n == 0) {
                        active_event_[s] = event++;
                    }
                }
                break;
            }
            case FaultSchedule::Mode::RateWithRandomDuration: {
                std::int64_t event = 0;
                std::uint64_t s = 1;
                while (s <= total_steps) {
                    if (hash_mix(schedule_.seed, s) % schedule_.rate_n == 0) {
                        const std::uint64_t span = schedule_.dur_max - schedule_.dur_min + 1;
                        const std::uint64_t dur =
                            schedule_.dur_min +
                            hash_mix(schedule_.seed ^ 0xD07A110ull, static_cast<std::uint64_t>(event)) % span;
                        for (std::uint64_t k = 0; k < dur && s + k <= total_steps; ++k) {
                            active_event_[s + k] = event;
                        }
                        ++event;
                        s += dur;  // no new draws while an event is ongoing
                    } else {
                        ++s;
                    }
                }
                break;
            }
        }
    }

    FaultSchedule schedule_;
    FaultSpec spec_;
    std::vector<GemmSiteId> candidates_;
    std::vector<std::int64_t> active_event_;  // -1 = inactive, else event index
};

// GemmHook over one step's active fault set. Logs the first applied flip per
// site per step, which corresponds to one corrupted GEMM launch.
class InjectionHook : public GemmHook {
public:
    InjectionHook(std::vector<ActiveFault> active, std::uint64_t step, FaultLog* log)
        : active_(std::move(active)), step_(step), log_(log) {}

    bool touches(GemmSiteId site) const override { return find(site) != nullptr; }

    std::uint16_t mask_for(GemmSiteId site, std::size_t row, std::size_t col, std::size_t a_rows,
                           std::size_t a_cols) const override {
        const ActiveFault* f = find(site);
        if (f == nullptr) return 0;
        if (f->all_elements) return f->bitmask;
        const std::uint64_t flat = static_cast<std::uint64_t>(row) * a_cols + col;
        return flat == f->element_index % (static_cast<std::uint64_t>(a_rows) * a_cols) ? f->bitmask : 0;
    }

    void on_applied(GemmSiteId site, std::size_t flat, std::uint16_t mask) const override {
        ++applied_flips_;
        if (log_ == nullptr) return;
        for (const GemmSiteId s : logged_) {
            if (s == site) return;
        }
        logged_.push_back(site);
        log_->entries.push_back({step_, site, mask, static_cast<std::uint64_t>(flat)});
    }

    std::uint64_t applied_flips() const { return applied_flips_; }
    bool empty() const { return active_.empty(); }

private:
    const ActiveFault* find(GemmSiteId site) const {
        for (const ActiveFault& f : active_) {
            if (f.site == site) return &f;
        }
        return nullptr;
    }

    std::vector<ActiveFault> active_;
    std::uint64_t step_ = 0;
    FaultLog* log_ = nullptr;
    mutable std::vector<GemmSiteId> logged_;
    mutable std::uint64_t applied_flips_ = 0;
};

inline InjectionHook make_hook(std::vector<ActiveFault> active, std::uint64_t step,
                               FaultLog* log = nullptr) {
    return InjectionHook(std::move(active), step, log);
}

}  // namespace sdcforge
