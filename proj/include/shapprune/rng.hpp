#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace shapprune {

// mt19937_64 produces identical streams everywhere, but the standard
// library's distributions are implementation-defined, so the reductions here
// are hand-rolled to keep fixtures reproducible across toolchains.
class deterministic_rng {
public:
    explicit deterministic_rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_raw() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Modulo bias is negligible for fixture
    // sampling and keeps the reduction trivially portable.
    std::uint64_t next_below(std::uint64_t n) { return engine_() % n; }

    // Standard normal via Box-Muller.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - next_unit();  // (0, 1], keeps the log finite
        const double u2 = next_unit();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    static constexpr double pi = 3.14159265358979323846;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace shapprune
