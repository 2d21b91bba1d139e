#ifndef ANCHOR_FORMAT_HPP
#define ANCHOR_FORMAT_HPP

#include <cstdio>
#include <string>

namespace anchor {

// Shortest round-trip-safe decimal form; used everywhere a float lands in a
// report so identical runs produce byte-identical files.
[[nodiscard]] inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

[[nodiscard]] inline std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

// Renders a fraction as a percentage with three decimals, e.g. 16 violations
// out of 1.2e6 parameters -> "0.001%".
[[nodiscard]] inline std::string fmt_percent(double fraction) {
    return fmt_fixed(fraction * 100.0, 3) + "%";
}

}  // namespace anchor

#endif  // ANCHOR_FORMAT_HPP
