// Per-step telemetry records, lossless CSV persistence, run summaries, and
// the cross-run parameter-difference metric. Floats serialize via to_chars
// (shortest round-trip form; non-finite as inf/-inf/nan), so two identical
// runs produce byte-identical files.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdcforge/corpus.hpp"
#include "sdcforge/model.hpp"
#include "sdcforge/strings.hpp"

namespace sdcforge {

struct StepTelemetry {
    std::uint64_t step = 0;  // 1-based committed step
    float train_loss = 0.0f;
    float grad_norm_pre = 0.0f;
    float grad_norm_post = 0.0f;
    float max_attn_logit = 0.0f;
    float r_t = 0.0f;
    float delta_r = 0.0f;
    float delta_g = 0.0f;
    float lr = 0.0f;
    bool fault_active = false;
    bool detected = false;
    bool recomputed = false;
};

// Fixed, versioned header: readers reject files whose header differs.
inline constexpr std::string_view kTelemetryHeader =
    "step,train_loss,grad_norm_pre,grad_norm_post,max_attn_logit,r_t,delta_r,delta_g,lr,"
    "fault_active,detected,recomputed";

struct CsvParseError : std::runtime_error {
    std::size_t line;
    CsvParseError(const std::string& path, std::size_t line_no, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what), line(line_no) {}
};

namespace detail {

inline float parse_f32(std::string_view s, const std::string& path, std::size_t line_no) {
    float v = 0.0f;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw CsvParseError(path, line_no, "bad float field '" + std::string(s) + "'");
    }
    return v;
}

inline std::uint64_t parse_u64(std::string_view s, const std::string& path, std::size_t line_no) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw CsvParseError(path, line_no, "bad integer field '" + std::string(s) + "'");
    }
    return v;
}

inline bool parse_flag(std::string_view s, const std::string& path, std::size_t line_no) {
    if (s == "1") return true;
    if (s == "0") return false;
    throw CsvParseError(path, line_no, "bad flag field '" + std::string(s) + "'");
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace detail

inline std::string telemetry_to_csv_line(const StepTelemetry& t) {
    std::string s;
    s.reserve(160);
    s += std::to_string(t.step);
    s += ',';
    s += f32_to_string(t.train_loss);
    s += ',';
    s += f32_to_string(t.grad_norm_pre);
    s += ',';
    s += f32_to_string(t.grad_norm_post);
    s += ',';
    s += f32_to_string(t.max_attn_logit);
    s += ',';
    s += f32_to_string(t.r_t);
    s += ',';
    s += f32_to_string(t.delta_r);
    s += ',';
    s += f32_to_string(t.delta_g);
    s += ',';
    s += f32_to_string(t.lr);
    s += ',';
    s += t.fault_active ? '1' : '0';
    s += ',';
    s += t.detected ? '1' : '0';
    s += ',';
    s += t.recomputed ? '1' : '0';
    return s;
}

// Append-only writer owned by the run loop.
class TelemetryWriter {
public:
    explicit TelemetryWriter(const std::string& path) : path_(path), out_(path, std::ios::trunc) {
        if (!out_) throw std::runtime_error("telemetry: cannot open " + path);
        out_ << kTelemetryHeader << '\n';
    }

    void append(const StepTelemetry& t) { out_ << telemetry_to_csv_line(t) << '\n'; }

    void flush() { out_.flush(); }

private:
    std::string path_;
    std::ofstream out_;
};

inline void write_records(const std::string& path, std::span<const StepTelemetry> records) {
    TelemetryWriter w(path);
    for (const auto& r : records) w.append(r);
    w.flush();
}

inline std::vector<StepTelemetry> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("telemetry: cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw CsvParseError(path, 1, "missing header");
    ++line_no;
    if (line != kTelemetryHeader) throw CsvParseError(path, 1, "unexpected header: " + line);

    std::vector<StepTelemetry> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 12) {
            throw CsvParseError(path, line_no, "expected 12 fields, got " + std::to_string(f.size()));
        }
        StepTelemetry t;
        t.step = detail::parse_u64(f[0], path, line_no);
        t.train_loss = detail::parse_f32(f[1], path, line_no);
        t.grad_norm_pre = detail::parse_f32(f[2], path, line_no);
        t.grad_norm_post = detail::parse_f32(f[3], path, line_no);
        t.max_attn_logit = detail::parse_f32(f[4], path, line_no);
        t.r_t = detail::parse_f32(f[5], path, line_no);
        t.delta_r = detail::parse_f32(f[6], path, line_no);
        t.delta_g = detail::parse_f32(f[7], path, line_no);
        t.lr = detail::parse_f32(f[8], path, line_no);
        t.fault_active = detail::parse_flag(f[9], path, line_no);
        t.detected = detail::parse_flag(f[10], path, line_no);
        t.recomputed = detail::parse_flag(f[11], path, line_no);
        out.push_back(t);
    }
    return out;
}

// L2 norm of entrywise parameter differences, f32 accumulation in group order.
inline float parameter_difference(const ParameterSet& a, const ParameterSet& b) {
    if (a.groups.size() != b.groups.size()) {
        throw std::invalid_argument("parameter_difference: group count mismatch");
    }
    float acc = 0.0f;
    for (std::size_t g = 0; g < a.groups.size(); ++g) {
        if (a.groups[g].name != b.groups[g].name) {
            throw std::invalid_argument("parameter_difference: group name mismatch at " +
                                        a.groups[g].name);
        }
        require_same_shape(a.groups[g].w, b.groups[g].w, "parameter_difference");
        for (std::size_t e = 0; e < a.groups[g].w.data.size(); ++e) {
            const float d = bf16_decode(a.groups[g].w.data[e]) - bf16_decode(b.groups[g].w.data[e]);
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

// Mean cross-entropy over a fixed eval set, injection always disabled.
inline float eval_loss(const ParameterSet& params, std::span<const Batch> batches) {
    float total = 0.0f;
    for (const Batch& b : batches) total += forward(params, b, nullptr).loss;
    return batches.empty() ? 0.0f : total / static_cast<float>(batches.size());
}

// Maxima ignore NaN steps (a NaN metric is an outcome class of its own); if
// every value is NaN the max is NaN.
inline float nan_aware_max(std::span<const float> values) {
    float mx = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (const float v : values) {
        if (std::isnan(v)) continue;
        any = true;
        if (v > mx) mx = v;
    }
    return any ? mx : std::numeric_limits<float>::quiet_NaN();
}

struct RunSummary {
    float final_eval_loss = std::numeric_limits<float>::quiet_NaN();
    float max_grad_norm_pre = std::numeric_limits<float>::quiet_NaN();
    float max_attn_logit = std::numeric_limits<float>::quiet_NaN();
    float param_difference = std::numeric_limits<float>::quiet_NaN();  // vs named baseline
    std::uint64_t steps = 0;
    std::uint64_t fault_steps = 0;
    std::uint64_t fault_events = 0;
    std::uint64_t detections = 0;
    std::uint64_t recomputes = 0;

    static RunSummary from_records(std::span<const StepTelemetry> recs) {
        RunSummary s;
        s.steps = recs.size();
        std::vector<float> pre, attn;
        pre.reserve(recs.size());
        attn.reserve(recs.size());
        bool prev_fault = false;
        for (const auto& r : recs) {
            pre.push_back(r.grad_norm_pre);
            attn.push_back(r.max_attn_logit);
            s.fault_steps += r.fault_active ? 1 : 0;
            s.detections += r.detected ? 1 : 0;
            s.recomputes += r.recomputed ? 1 : 0;
            if (r.fault_active && !prev_fault) s.fault_events += 1;
            prev_fault = r.fault_active;
        }
        s.max_grad_norm_pre = nan_aware_max(pre);
        s.max_attn_logit = nan_aware_max(attn);
        return s;
    }
};

}  // namespace sdcforge
