// The sequential training step: forward, backward, clip, AdamW. TrainerState
// is everything that evolves across steps; run_raw_step mutates it in place
// and reports the step's telemetry inputs. Guarding (snapshot, detection,
// recompute) wraps around this in guard.hpp.
#pragma once

#include <cstdint>

#include "sdcforge/corpus.hpp"
#include "sdcforge/detector.hpp"
#include "sdcforge/fault.hpp"
#include "sdcforge/model.hpp"
#include "sdcforge/optimizer.hpp"
#include "sdcforge/telemetry.hpp"

namespace sdcforge {

struct TrainerState {
    ParameterSet params;
    OptimizerState opt;
    DetectorState detector;       // used only in guarded mode
    std::uint64_t step_done = 0;  // committed steps; telemetry steps are step_done after commit
    std::uint64_t cursor = 0;     // batch cursor, advances once per committed step
    std::uint64_t data_seed = 0;  // seed the batch stream was built with (snapshot metadata)
};

inline TrainerState make_trainer(const ModelConfig& cfg, std::uint64_t seed,
                                 OptimizerHyper hyper = {}, DetectorConfig det = {}) {
    TrainerState ts;
    ts.params = init_params(cfg, seed);
    ts.opt = OptimizerState::init(ts.params, hyper);
    ts.detector.config = det;
    ts.data_seed = seed;
    return ts;
}

struct RawStepResult {
    float loss = 0.0f;
    float grad_norm_pre = 0.0f;
    float grad_norm_post = 0.0f;
    float max_attn_logit = 0.0f;
    float r_t = 0.0f;
    float lr = 0.0f;
    std::uint64_t applied_flips = 0;  // bit flips the hook actually performed
};

// One full optimizer step at the trainer's current cursor. The hook may be
// null (clean step). Commits unconditionally; callers that may roll back take
// a snapshot first.
inline RawStepResult run_raw_step(TrainerState& ts, const BatchStream& stream,
                                  const ScheduleConfig& sched, const InjectionHook* hook) {
    const Batch batch = stream.batch_at(ts.cursor);
    const GemmHook* gh = (hook != nullptr && !hook->empty()) ? hook : nullptr;

    const ForwardRecord rec = forward(ts.params, batch, gh);
    const GradientSet grads = backward(ts.params, rec, batch, gh);

    RawStepResult out;
    out.loss = rec.loss;
    out.max_attn_logit = rec.max_attn_logit;
    out.grad_norm_pre = global_grad_norm(grads);

    const GradientSet* effective = &grads;
    GradientSet clipped;
    if (ts.opt.hyper.clip_enabled) {
        clipped = clip_gradients(grads, out.grad_norm_pre, ts.opt.hyper.clip_threshold);
        effective = &clipped;
    }
    out.grad_norm_post = global_grad_norm(*effective);

    out.lr = lr_schedule(sched, ts.step_done);
    const UpdateReport rep = adamw_step(ts.params, *effective, ts.opt, out.lr);
    out.r_t = rep.r_t;
    out.applied_flips = hook != nullptr ? hook->applied_flips() : 0;

    ts.step_done += 1;
    ts.cursor += 1;
    return out;
}

}  // namespace sdcforge
