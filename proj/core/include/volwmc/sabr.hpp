#pragma once

#include <cstdint>
#include <vector>

namespace volwmc::wmc {
struct PathSet;
}

namespace volwmc::sabr {

// beta = 0 SABR: dS = sigma dW1, dsigma = volvol * sigma dW2, d<W1,W2> = rho dt.
struct SabrParams {
    double alpha = 0.005;
    double rho = 0.0;
    double volvol = 0.0;

    void validate() const;
};

// Hagan normal-vol expansion for beta = 0 with the first-order time
// correction. Uses a series for |zeta| below 1e-6.
double normal_vol(const SabrParams& p, double s0, double strike, double expiry);

struct SmilePoint {
    double strike_offset;
    double vol;
};

struct SmileFit {
    SabrParams params;
    std::vector<double> residuals; // fitted - quoted, per point
    double rmse = 0.0;
    int iterations = 0;
    // Objective of each multi-start candidate (sum of squared residuals).
    std::vector<double> start_objectives;
};

struct FitOptions {
    double alpha_lo = 1e-6;
    double alpha_hi = 0.1;
    double rho_lo = -0.999;
    double rho_hi = 0.999;
    double volvol_lo = 0.0;
    double volvol_hi = 5.0;
    int max_iterations = 500;
};

SmileFit fit_smile(const std::vector<SmilePoint>& smile, double expiry, double s0 = 0.0,
                   const FitOptions& options = {});

// Euler scheme in S with an exact lognormal step for sigma. Path i uses its own
// random stream so results do not depend on the number of paths.
wmc::PathSet simulate_paths(const SabrParams& p, std::size_t n_paths, double horizon,
                            std::size_t steps, std::uint64_t seed);

} // namespace volwmc::sabr
