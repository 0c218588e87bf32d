#ifndef ZHANG_FORMAT_HPP
#define ZHANG_FORMAT_HPP

#include <cstdio>
#include <span>
#include <string>

namespace zhang {

/// Locale-independent real with 17 significant digits (round-trips a double).
inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Short human-readable real (12 significant digits).
inline std::string format_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

template <class T, class F>
std::string join(std::span<const T> values, F&& fmt, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += sep;
        out += fmt(values[i]);
    }
    return out;
}

}  // namespace zhang

#endif
