#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "volwmc/bachelier.hpp"
#include "volwmc/market.hpp"

namespace volwmc::wmc {

enum class PathKind : std::uint32_t { Brownian = 0, Sabr = 1 };

// nu paths on a shared uniform time grid, forward-centered (every path starts
// at 0). values is nu x (steps + 1), row i is path i.
struct PathSet {
    std::vector<double> times;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;
    double sigma_prior = 0.0;
    std::uint64_t seed = 0;
    PathKind kind = PathKind::Brownian;

    std::size_t n_paths() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
    double horizon() const { return times.back(); }
    double dt() const { return times.back() / static_cast<double>(steps()); }

    // Index of the grid time within half a step of t; ConfigError otherwise.
    std::size_t time_index(double t) const;
    void validate() const;
};

std::vector<double> uniform_times(double horizon, std::size_t steps);

// Arithmetic Brownian paths dS = sigma_prior dW. Path i draws from stream i,
// so results are identical for any worker count.
PathSet generate_brownian_paths(std::size_t n_paths, double horizon, std::size_t steps, double sigma_prior,
                                std::uint64_t seed, unsigned workers = 1);

enum class ColumnKind { Call, Put, Martingale };

struct ColumnSpec {
    ColumnKind kind = ColumnKind::Call;
    double strike_offset = 0.0;
    double expiry = 0.0;
    double t1 = 0.0; // martingale windows only
    double center = 0.0;
    double half_width = 0.0;
};

struct PayoffMatrix {
    Eigen::MatrixXd values; // nu x N
    std::vector<ColumnSpec> columns;

    std::size_t n_paths() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t n_columns() const { return columns.size(); }
    void append(const PayoffMatrix& other);
};

// Undiscounted annuity-normalized payoffs. Columns are ordered by flavor (in
// the order given), then expiry, then strike, so call column e*nK + k is grid
// node (e, k).
PayoffMatrix vanilla_payoffs(const PathSet& paths, const market::SurfaceGrid& grid,
                             const std::vector<bachelier::Flavor>& flavors);

struct WeightVector {
    Eigen::VectorXd p;

    static WeightVector uniform(std::size_t n);
    std::size_t size() const { return static_cast<std::size_t>(p.size()); }
    void validate(double tolerance = 1e-12) const;
};

Eigen::VectorXd weighted_price(const PayoffMatrix& payoffs, const WeightVector& weights);

// sum p ln(p/q), with 0 ln 0 = 0.
double relative_entropy(const WeightVector& p, const WeightVector& q);
// Against the uniform prior.
double relative_entropy_uniform(const WeightVector& p);

// Gibbs weights p_i proportional to exp((G lambda)_i).
WeightVector weights_from_lagrange(const PayoffMatrix& payoffs, const Eigen::VectorXd& lambda);

struct DualOptions {
    double tolerance = 1e-8;
    int max_iterations = 500;
    // Per-column weights on the constraint residuals; each weight w_j > 0
    // relaxes column j to an entropy-penalized fit with strength 1/w_j.
    std::optional<Eigen::VectorXd> column_weights;
};

struct DualResult {
    Eigen::VectorXd lambda;
    WeightVector weights;
    Eigen::VectorXd achieved;
    Eigen::VectorXd residuals; // achieved - target
    double max_residual = 0.0;
    int iterations = 0;
    bool converged = false;
    bool infeasible = false; // some target lies outside the range of its payoff column
    double entropy = 0.0;
};

// Minimum relative entropy weights reproducing the targets, via damped Newton
// on the convex dual  log sum exp(G lambda) - lambda^T c.
DualResult solve_lagrange_dual(const PayoffMatrix& payoffs, const Eigen::VectorXd& targets,
                               const DualOptions& options = {});

struct MartingaleWindow {
    double t1 = 0.0;
    double t2 = 0.0;
    double center = 0.0;
    double half_width = 0.001;
};

std::vector<MartingaleWindow> martingale_windows(const std::vector<double>& expiries, std::size_t n_positions = 20,
                                                 double lo = -0.01, double hi = 0.01, double delta = 0.001);

struct WindowResidual {
    MartingaleWindow window;
    double mass = 0.0;
    double residual = 0.0;
    bool evaluated = false;
};

struct MartingaleReport {
    std::vector<WindowResidual> windows;
    std::size_t skipped = 0;
    double mean_abs_residual = 0.0;
    double relative_loss = 0.0; // mean |residual| / range width
};

// Windows whose total weight is below min_mass are skipped; by default
// min_mass is 10 / nu.
MartingaleReport martingale_loss(const PathSet& paths, const WeightVector& weights,
                                 const std::vector<MartingaleWindow>& windows, double range_width = 0.02,
                                 std::optional<double> min_mass = std::nullopt);

PayoffMatrix martingale_constraint_columns(const PathSet& paths, const std::vector<MartingaleWindow>& windows);

struct Histogram {
    std::vector<double> edges; // bins + 1
    std::vector<double> mass;  // sums to 1
};

// Weighted histogram of S_T on [lo, hi]; values outside fall into the edge
// bins so that the total mass is preserved.
Histogram risk_neutral_density(const PathSet& paths, const WeightVector& weights, double expiry, double lo,
                               double hi, std::size_t bins);

} // namespace volwmc::wmc
