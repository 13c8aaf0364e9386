// Guarded stepping: snapshot before the step, run it with injection live,
// consult the detector, and on detection restore the snapshot and replay the
// step with injection disabled. Exactly one update is committed per logical
// step regardless of the outcome.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sdcforge/detector.hpp"
#include "sdcforge/fault.hpp"
#include "sdcforge/trainer.hpp"

namespace sdcforge {

// Non-finite loss after a clean recompute: the training run itself is sick,
// not the hardware model. Propagated out of the run loop.
struct TrainingHealthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Byte-faithful capture of everything a step can change.
struct StepSnapshot {
    std::vector<std::vector<Bf16>> param_bits;
    std::vector<std::vector<float>> m_bits;
    std::vector<std::vector<float>> v_bits;
    std::uint64_t opt_t = 0;
    std::uint64_t step_done = 0;
    std::uint64_t cursor = 0;
    std::uint64_t data_seed = 0;
    DetectorState detector;

    // Serialized payload size: bf16 params + two f32 moment sets + the
    // counters (opt_t, step_done, cursor, data_seed) + detector fields
    // (warmup_len, alpha, min_steps, prev_r, prev_g, sum_dr, samples, last_step).
    std::size_t byte_size() const {
        std::size_t n = 0;
        for (const auto& p : param_bits) n += p.size() * sizeof(Bf16);
        for (const auto& m : m_bits) n += m.size() * sizeof(float);
        for (const auto& v : v_bits) n += v.size() * sizeof(float);
        n += 4 * sizeof(std::uint64_t);
        n += sizeof(std::uint64_t) + sizeof(float) + sizeof(std::uint64_t);  // detector config
        n += 3 * sizeof(float) + 2 * sizeof(std::uint64_t);                  // detector state
        return n;
    }
};

// Assigning into an existing snapshot reuses its buffers, so a snapshot taken
// every step costs a memcpy, not an allocation.
inline void take_snapshot_into(const TrainerState& ts, StepSnapshot& s) {
    s.param_bits.resize(ts.params.groups.size());
    s.m_bits.resize(ts.opt.m.size());
    s.v_bits.resize(ts.opt.v.size());
    for (std::size_t g = 0; g < ts.params.groups.size(); ++g) {
        s.param_bits[g].assign(ts.params.groups[g].w.data.begin(), ts.params.groups[g].w.data.end());
        s.m_bits[g].assign(ts.opt.m[g].data.begin(), ts.opt.m[g].data.end());
        s.v_bits[g].assign(ts.opt.v[g].data.begin(), ts.opt.v[g].data.end());
    }
    s.opt_t = ts.opt.t;
    s.step_done = ts.step_done;
    s.cursor = ts.cursor;
    s.data_seed = ts.data_seed;
    s.detector = ts.detector;
}

inline StepSnapshot take_snapshot(const TrainerState& ts) {
    StepSnapshot s;
    take_snapshot_into(ts, s);
    return s;
}

inline void restore_snapshot(TrainerState& ts, const StepSnapshot& s) {
    if (s.param_bits.size() != ts.params.groups.size()) {
        throw std::invalid_argument("restore_snapshot: group count mismatch");
    }
    for (std::size_t g = 0; g < s.param_bits.size(); ++g) {
        ts.params.groups[g].w.data = s.param_bits[g];
        ts.opt.m[g].data = s.m_bits[g];
        ts.opt.v[g].data = s.v_bits[g];
    }
    ts.opt.t = s.opt_t;
    ts.step_done = s.step_done;
    ts.cursor = s.cursor;
    ts.data_seed = s.data_seed;
    ts.detector = s.detector;
}

enum class Adopted : std::uint8_t { Original = 0, Recomputed = 1 };

struct GuardReport {
    std::uint64_t step = 0;
    Decision decision;
    bool fault_active = false;   // the original attempt applied at least one flip
    bool recomputed = false;
    float original_delta_r = 0.0f;
    float recomputed_delta_r = std::numeric_limits<float>::quiet_NaN();
    Adopted adopted = Adopted::Original;
    bool recompute_flagged = false;  // the replayed step would itself have been flagged
};

struct GuardedStepOutcome {
    GuardReport report;
    StepTelemetry telemetry;
};

// Test hook: force a detection on an otherwise clean step.
using ForceAnomalyFn = std::function<bool(std::uint64_t step)>;

inline GuardedStepOutcome guarded_step(TrainerState& ts, const BatchStream& stream,
                                       const ScheduleConfig& sched, const FaultPlanner* planner,
                                       FaultLog* log, bool inject_during_recompute = false,
                                       const ForceAnomalyFn& force = nullptr,
                                       StepSnapshot* scratch = nullptr) {
    const std::uint64_t step = ts.step_done + 1;
    StepSnapshot local;
    StepSnapshot& snap = scratch != nullptr ? *scratch : local;
    take_snapshot_into(ts, snap);

    InjectionHook hook = planner != nullptr ? make_hook(planner->plan_step(step), step, log)
                                            : make_hook({}, step, nullptr);
    const RawStepResult first = run_raw_step(ts, stream, sched, &hook);
    const bool fault_active = first.applied_flips > 0;

    auto [observed, decision] = detector_observe(ts.detector, first.r_t, first.grad_norm_pre, step);
    const bool forced = force && force(step);
    const bool anomalous = decision.verdict == Verdict::Anomalous || forced;

    GuardedStepOutcome out;
    out.report.step = step;
    out.report.decision = decision;
    out.report.fault_active = fault_active;
    out.report.original_delta_r = decision.delta_r;

    StepTelemetry& t = out.telemetry;
    t.step = step;
    t.fault_active = fault_active;

    if (!anomalous) {
        ts.detector = observed;
        t.train_loss = first.loss;
        t.grad_norm_pre = first.grad_norm_pre;
        t.grad_norm_post = first.grad_norm_post;
        t.max_attn_logit = first.max_attn_logit;
        t.r_t = first.r_t;
        t.delta_r = decision.delta_r;
        t.delta_g = decision.delta_g;
        t.lr = first.lr;
        return out;
    }

    // Roll back and replay. Injection stays off during recomputation unless
    // explicitly re-enabled for stress testing.
    restore_snapshot(ts, snap);
    InjectionHook replay_hook = (planner != nullptr && inject_during_recompute)
                                    ? make_hook(planner->plan_step(step), step, log)
                                    : make_hook({}, step, nullptr);
    const RawStepResult second = run_raw_step(ts, stream, sched, &replay_hook);
    if (!std::isfinite(second.loss)) {
        throw TrainingHealthError("non-finite loss after clean recompute at step " +
                                  std::to_string(step));
    }

    // Would the adopted step have been flagged too? Surfaced, not acted on:
    // one recompute per step.
    const auto replay_view = detector_observe(snap.detector, second.r_t, second.grad_norm_pre, step);
    out.report.recompute_flagged = replay_view.second.verdict == Verdict::Anomalous;

    const float prev_r = snap.detector.prev_r;
    const float prev_g = snap.detector.prev_g;
    const float rec_dr = std::isnan(prev_r) ? 0.0f : std::abs(second.r_t - prev_r);
    const float rec_dg = std::isnan(prev_g) ? 0.0f : std::max(0.0f, second.grad_norm_pre - prev_g);
    ts.detector = detector_reset_after_recompute(snap.detector, second.r_t, second.grad_norm_pre, step);

    out.report.recomputed = true;
    out.report.recomputed_delta_r = rec_dr;
    out.report.adopted = Adopted::Recomputed;

    t.detected = true;
    t.recomputed = true;
    t.train_loss = second.loss;
    t.grad_norm_pre = second.grad_norm_pre;
    t.grad_norm_post = second.grad_norm_post;
    t.max_attn_logit = second.max_attn_logit;
    t.r_t = second.r_t;
    t.delta_r = rec_dr;
    t.delta_g = rec_dg;
    t.lr = second.lr;
    return out;
}

}  // namespace sdcforge
