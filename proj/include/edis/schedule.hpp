#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"

namespace edis {

/// Karras noise ladder: sigma_max at t = 0 down to sigma_min at t = T-1, then 0 at t = T.
struct NoiseSchedule {
    double sigma_max = 80.0;
    double sigma_min = 0.002;
    double rho = 7.0;
    std::size_t steps = 128;

    void validate() const {
        detail::require(sigma_max > 0 && sigma_min > 0, "noise schedule: sigmas must be positive");
        detail::require(sigma_min < sigma_max, "noise schedule: sigma_min must be below sigma_max");
        detail::require(rho > 0, "noise schedule: rho must be positive");
        detail::require(steps >= 2, "noise schedule: need at least 2 steps");
    }
};

inline double karras_sigma(const NoiseSchedule& s, std::size_t t) {
    if (t > s.steps)
        throw ValidationError("karras_sigma: step " + std::to_string(t) + " outside 0.." + std::to_string(s.steps));
    if (t == s.steps) return 0.0;
    if (t == 0) return s.sigma_max;
    if (t + 1 == s.steps) return s.sigma_min;
    const double inv = 1.0 / s.rho;
    const double hi = std::pow(s.sigma_max, inv), lo = std::pow(s.sigma_min, inv);
    const double frac = static_cast<double>(t) / static_cast<double>(s.steps - 1);
    return std::pow(hi + frac * (lo - hi), s.rho);
}

/// The full ladder sigma_0 .. sigma_T (T + 1 entries, last is 0).
inline std::vector<double> karras_ladder(const NoiseSchedule& s) {
    s.validate();
    std::vector<double> out(s.steps + 1);
    for (std::size_t t = 0; t <= s.steps; ++t) out[t] = karras_sigma(s, t);
    return out;
}

}  // namespace edis
