// Locale-free float formatting. to_chars produces the shortest string that
// parses back to the same bits; non-finite values come out as inf/-inf/nan.
#pragma once

#include <charconv>
#include <string>

namespace sdcforge {

inline std::string f32_to_string(float v) {
    char buf[48];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

}  // namespace sdcforge
