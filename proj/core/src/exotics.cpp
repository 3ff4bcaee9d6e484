#include "volwmc/exotics.hpp"

#include <algorithm>
#include <cmath>

#include "volwmc/errors.hpp"

namespace volwmc::exotics {

namespace {

struct Terminal {
    Eigen::VectorXd running_max;
    Eigen::VectorXd payoff;
};

Terminal terminal_data(const wmc::PathSet& paths, const wmc::WeightVector& weights, double strike, double expiry)
{
    if (weights.size() != paths.n_paths()) throw ConfigError("weights do not match path count");
    if (!std::isfinite(strike)) throw ConfigError("strike must be finite");
    if (expiry > paths.horizon() + 0.5 * paths.dt()) throw ConfigError("expiry is beyond the path horizon");
    const auto ti = static_cast<Eigen::Index>(paths.time_index(expiry));
    Terminal t;
    t.running_max = paths.values.leftCols(ti + 1).rowwise().maxCoeff();
    t.payoff = (paths.values.col(ti).array() - strike).max(0.0);
    return t;
}

BarrierPoint price_at(const Terminal& t, const wmc::WeightVector& weights, double barrier)
{
    if (!std::isfinite(barrier)) throw ConfigError("barrier must be finite");
    const Eigen::ArrayXd g = (t.running_max.array() < barrier).select(t.payoff.array(), 0.0);
    BarrierPoint pt;
    pt.barrier = barrier;
    pt.price = (g * weights.p.array()).sum();
    pt.std_error = std::sqrt((weights.p.array().square() * (g - pt.price).square()).sum());
    return pt;
}

} // namespace

double barrier_call_price(const wmc::PathSet& paths, const wmc::WeightVector& weights, double strike,
                          double barrier, double expiry)
{
    return price_at(terminal_data(paths, weights, strike, expiry), weights, barrier).price;
}

std::vector<BarrierPoint> barrier_sweep(const wmc::PathSet& paths, const wmc::WeightVector& weights,
                                        double strike, const std::vector<double>& barriers, double expiry)
{
    const Terminal t = terminal_data(paths, weights, strike, expiry);
    std::vector<BarrierPoint> out;
    out.reserve(barriers.size());
    for (double b : barriers) out.push_back(price_at(t, weights, b));
    return out;
}

std::vector<double> barrier_grid(double from, double to, double step)
{
    if (!(step > 0.0) || !(to >= from)) throw ConfigError("invalid barrier grid");
    const auto n = static_cast<std::size_t>(std::floor((to - from) / step + 0.5));
    std::vector<double> out(n + 1);
    for (std::size_t i = 0; i <= n; ++i) out[i] = from + step * static_cast<double>(i);
    return out;
}

double vanilla_call_price(const wmc::PathSet& paths, const wmc::WeightVector& weights, double strike,
                          double expiry)
{
    const Terminal t = terminal_data(paths, weights, strike, expiry);
    return t.payoff.dot(weights.p);
}

} // namespace volwmc::exotics
