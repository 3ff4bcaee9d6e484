#include "volwmc/wmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <thread>

#include "volwmc/errors.hpp"
#include "volwmc/random.hpp"

namespace volwmc::wmc {

std::size_t PathSet::time_index(double t) const
{
    if (times.size() < 2) throw ConfigError("path set has no time grid");
    const double step = dt();
    const double pos = t / step;
    const auto idx = static_cast<long long>(std::llround(pos));
    if (idx < 0 || static_cast<std::size_t>(idx) >= times.size() || std::abs(times[static_cast<std::size_t>(idx)] - t) > 0.5 * step + 1e-12) {
        throw ConfigError("time " + std::to_string(t) + " is not on the path grid (horizon " +
                          std::to_string(horizon()) + ")");
    }
    return static_cast<std::size_t>(idx);
}

void PathSet::validate() const
{
    if (times.size() < 2) throw ConfigError("path set needs at least one step");
    if (values.cols() != static_cast<Eigen::Index>(times.size())) throw ConfigError("path matrix width != time grid");
    if (values.rows() < 1) throw ConfigError("path set is empty");
    if (!values.allFinite()) throw NumericalError("path set contains non-finite values");
    if ((values.col(0).array() != 0.0).any()) throw ConfigError("paths must start at 0");
}

std::vector<double> uniform_times(double horizon, std::size_t steps)
{
    std::vector<double> t(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) t[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
    return t;
}

PathSet generate_brownian_paths(std::size_t n_paths, double horizon, std::size_t steps, double sigma_prior,
                                std::uint64_t seed, unsigned workers)
{
    if (n_paths < 2) throw ConfigError("need at least 2 paths");
    if (steps < 1) throw ConfigError("need at least 1 time step");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
    if (!(sigma_prior > 0.0) || !std::isfinite(sigma_prior)) throw ConfigError("sigma_prior must be positive");

    PathSet ps;
    ps.times = uniform_times(horizon, steps);
    ps.values.resize(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(steps + 1));
    ps.sigma_prior = sigma_prior;
    ps.seed = seed;
    ps.kind = PathKind::Brownian;
    const double scale = sigma_prior * std::sqrt(horizon / static_cast<double>(steps));

    auto fill = [&](std::size_t first, std::size_t last) {
        std::normal_distribution<double> normal;
        for (std::size_t i = first; i < last; ++i) {
            Rng rng = make_stream(seed, i);
            normal.reset();
            auto row = ps.values.row(static_cast<Eigen::Index>(i));
            row(0) = 0.0;
            double s = 0.0;
            for (std::size_t k = 1; k <= steps; ++k) {
                s += scale * normal(rng);
                row(static_cast<Eigen::Index>(k)) = s;
            }
        }
    };

    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n_paths)));
    if (workers == 1) {
        fill(0, n_paths);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (n_paths + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t first = w * chunk;
            const std::size_t last = std::min(n_paths, first + chunk);
            if (first < last) pool.emplace_back(fill, first, last);
        }
    }
    return ps;
}

void PayoffMatrix::append(const PayoffMatrix& other)
{
    if (values.size() == 0) {
        *this = other;
        return;
    }
    if (other.values.rows() != values.rows()) throw ConfigError("cannot append payoff columns for different paths");
    Eigen::MatrixXd merged(values.rows(), values.cols() + other.values.cols());
    merged << values, other.values;
    values = std::move(merged);
    columns.insert(columns.end(), other.columns.begin(), other.columns.end());
}

PayoffMatrix vanilla_payoffs(const PathSet& paths, const market::SurfaceGrid& grid,
                             const std::vector<bachelier::Flavor>& flavors)
{
    grid.validate();
    if (flavors.empty()) throw ConfigError("no option flavors requested");
    for (double t : grid.expiries) {
        if (t > paths.horizon() + 0.5 * paths.dt()) {
            throw ConfigError("expiry " + std::to_string(t) + " is beyond the path horizon " +
                              std::to_string(paths.horizon()));
        }
    }
    const auto nu = static_cast<Eigen::Index>(paths.n_paths());
    PayoffMatrix g;
    g.values.resize(nu, static_cast<Eigen::Index>(flavors.size() * grid.size()));
    Eigen::Index col = 0;
    for (auto flavor : flavors) {
        for (double t : grid.expiries) {
            const auto ti = static_cast<Eigen::Index>(paths.time_index(t));
            const auto s = paths.values.col(ti);
            for (double k : grid.strike_offsets) {
                if (flavor == bachelier::Flavor::Call) {
                    g.values.col(col) = (s.array() - k).max(0.0);
                    g.columns.push_back({ColumnKind::Call, k, t});
                } else {
                    g.values.col(col) = (k - s.array()).max(0.0);
                    g.columns.push_back({ColumnKind::Put, k, t});
                }
                ++col;
            }
        }
    }
    return g;
}

WeightVector WeightVector::uniform(std::size_t n)
{
    if (n == 0) throw ConfigError("weight vector must be non-empty");
    return {Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n))};
}

void WeightVector::validate(double tolerance) const
{
    if (p.size() == 0) throw ConfigError("weight vector is empty");
    if (!p.allFinite() || (p.array() < 0.0).any()) throw NumericalError("weights must be finite and non-negative");
    if (std::abs(p.sum() - 1.0) > tolerance) throw NumericalError("weights do not sum to 1");
}

Eigen::VectorXd weighted_price(const PayoffMatrix& payoffs, const WeightVector& weights)
{
    if (payoffs.values.rows() != weights.p.size()) {
        throw ConfigError("weight vector length " + std::to_string(weights.p.size()) + " != path count " +
                          std::to_string(payoffs.values.rows()));
    }
    return payoffs.values.transpose() * weights.p;
}

double relative_entropy(const WeightVector& p, const WeightVector& q)
{
    if (p.p.size() != q.p.size()) throw ConfigError("relative_entropy: size mismatch");
    double d = 0.0;
    for (Eigen::Index i = 0; i < p.p.size(); ++i) {
        if (p.p(i) <= 0.0) continue;
        if (q.p(i) <= 0.0) throw NumericalError("relative_entropy: p is not absolutely continuous w.r.t. q");
        d += p.p(i) * std::log(p.p(i) / q.p(i));
    }
    return d;
}

double relative_entropy_uniform(const WeightVector& p)
{
    return relative_entropy(p, WeightVector::uniform(p.size()));
}

namespace {

// Normalized exp(a - max a); returns log-sum-exp of a.
double gibbs(const Eigen::VectorXd& a, Eigen::VectorXd& p)
{
    const double m = a.maxCoeff();
    p = (a.array() - m).exp();
    const double z = p.sum();
    p /= z;
    return m + std::log(z);
}

} // namespace

WeightVector weights_from_lagrange(const PayoffMatrix& payoffs, const Eigen::VectorXd& lambda)
{
    if (lambda.size() != payoffs.values.cols()) throw ConfigError("lambda length != payoff column count");
    if (!lambda.allFinite()) throw NumericalError("non-finite Lagrange multipliers");
    WeightVector w;
    gibbs(payoffs.values * lambda, w.p);
    return w;
}

DualResult solve_lagrange_dual(const PayoffMatrix& payoffs, const Eigen::VectorXd& targets,
                               const DualOptions& options)
{
    const Eigen::MatrixXd& g = payoffs.values;
    const Eigen::Index n = g.cols();
    if (n == 0 || g.rows() < 2) throw ConfigError("dual solver needs at least one column and two paths");
    if (targets.size() != n) throw ConfigError("target count != payoff column count");
    if (!targets.allFinite()) throw ConfigError("targets must be finite");
    if (options.column_weights && (options.column_weights->size() != n || (options.column_weights->array() <= 0.0).any())) {
        throw ConfigError("column weights must be positive, one per column");
    }

    DualResult res;
    // Gibbs weights cannot reach the boundary of the payoff range.
    const Eigen::RowVectorXd lo = g.colwise().minCoeff();
    const Eigen::RowVectorXd hi = g.colwise().maxCoeff();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (!(targets(j) > lo(j) && targets(j) < hi(j)) && !(lo(j) == hi(j) && targets(j) == lo(j))) {
            res.infeasible = true;
        }
    }

    // Work with columns scaled to unit dispersion; mu = scale .* lambda.
    Eigen::VectorXd scale(n);
    const double nu = static_cast<double>(g.rows());
    for (Eigen::Index j = 0; j < n; ++j) {
        const double mean = g.col(j).mean();
        const double sd = std::sqrt((g.col(j).array() - mean).square().sum() / nu);
        scale(j) = sd > 0.0 ? sd : 1.0;
    }
    const Eigen::MatrixXd gs = g * scale.cwiseInverse().asDiagonal();
    const Eigen::VectorXd cs = targets.cwiseQuotient(scale);
    Eigen::VectorXd ridge = Eigen::VectorXd::Zero(n);
    if (options.column_weights) ridge = (options.column_weights->cwiseProduct(scale.cwiseProduct(scale))).cwiseInverse();
    // Penalty 0.5 * lambda_j^2 / w_j expressed in mu: 0.5 * mu_j^2 / (w_j s_j^2).

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd p;
    auto objective = [&](const Eigen::VectorXd& m, Eigen::VectorXd& w) {
        return gibbs(gs * m, w) - m.dot(cs) + 0.5 * m.dot(ridge.cwiseProduct(m));
    };
    double f = objective(mu, p);
    Eigen::VectorXd trial_p;

    auto residual_of = [&](const Eigen::VectorXd& w) { return (g.transpose() * w - targets).eval(); };

    for (int it = 0; it < options.max_iterations; ++it) {
        const Eigen::VectorXd mean = gs.transpose() * p;
        const Eigen::VectorXd grad = mean - cs + ridge.cwiseProduct(mu);
        const Eigen::VectorXd resid = residual_of(p);
        res.iterations = it;
        if (resid.lpNorm<Eigen::Infinity>() <= options.tolerance && !options.column_weights) {
            res.converged = true;
            break;
        }
        if (options.column_weights && grad.lpNorm<Eigen::Infinity>() <= options.tolerance * 1e-3) {
            res.converged = true;
            break;
        }
        const Eigen::MatrixXd centered = gs.rowwise() - mean.transpose();
        Eigen::MatrixXd h = centered.transpose() * p.asDiagonal() * centered;
        h.diagonal() += ridge;
        const double tr = h.diagonal().maxCoeff();
        Eigen::VectorXd step;
        for (double reg = 1e-14 * tr;; reg *= 100.0) {
            Eigen::MatrixXd hr = h;
            hr.diagonal().array() += reg;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(hr);
            step = ldlt.solve(-grad);
            if (ldlt.info() == Eigen::Success && step.allFinite() && step.dot(grad) < 0.0) break;
            if (reg > tr) {
                step = -grad;
                break;
            }
        }
        // Backtracking line search on the dual objective.
        double t = 1.0;
        bool accepted = false;
        const double slope = step.dot(grad);
        for (int ls = 0; ls < 60; ++ls) {
            const Eigen::VectorXd cand = mu + t * step;
            const double fc = objective(cand, trial_p);
            if (std::isfinite(fc) && fc <= f + 1e-4 * t * slope) {
                mu = cand;
                f = fc;
                p.swap(trial_p);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            res.iterations = it + 1;
            break; // stalled at machine precision
        }
        res.iterations = it + 1;
    }

    res.lambda = mu.cwiseQuotient(scale);
    res.weights = weights_from_lagrange(payoffs, res.lambda);
    p = res.weights.p;
    res.achieved = g.transpose() * p;
    res.residuals = res.achieved - targets;
    res.max_residual = res.residuals.lpNorm<Eigen::Infinity>();
    if (!options.column_weights) res.converged = res.max_residual <= options.tolerance;
    if (res.infeasible) res.converged = false;
    res.entropy = relative_entropy_uniform(res.weights);
    return res;
}

std::vector<MartingaleWindow> martingale_windows(const std::vector<double>& expiries, std::size_t n_positions,
                                                 double lo, double hi, double delta)
{
    if (expiries.size() < 2) throw ConfigError("martingale windows need at least two expiries");
    if (n_positions == 0) throw ConfigError("need at least one window position");
    if (!(delta > 0.0)) throw ConfigError("window half-width must be positive");
    if (!(hi >= lo)) throw ConfigError("window range is empty");
    std::vector<MartingaleWindow> out;
    for (std::size_t e = 0; e + 1 < expiries.size(); ++e) {
        if (!(expiries[e] < expiries[e + 1])) throw ConfigError("expiries must be strictly increasing");
        for (std::size_t k = 0; k < n_positions; ++k) {
            const double s = n_positions == 1 ? 0.5 * (lo + hi)
                                              : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n_positions - 1);
            out.push_back({expiries[e], expiries[e + 1], s, delta});
        }
    }
    return out;
}

MartingaleReport martingale_loss(const PathSet& paths, const WeightVector& weights,
                                 const std::vector<MartingaleWindow>& windows, double range_width,
                                 std::optional<double> min_mass)
{
    if (weights.size() != paths.n_paths()) throw ConfigError("weights do not match path count");
    if (!(range_width > 0.0)) throw ConfigError("range width must be positive");
    const double threshold = min_mass.value_or(10.0 / static_cast<double>(paths.n_paths()));
    MartingaleReport rep;
    double sum_abs = 0.0;
    std::size_t evaluated = 0;
    for (const auto& w : windows) {
        const auto c1 = paths.values.col(static_cast<Eigen::Index>(paths.time_index(w.t1)));
        const auto c2 = paths.values.col(static_cast<Eigen::Index>(paths.time_index(w.t2)));
        double mass = 0.0, moved = 0.0;
        for (Eigen::Index i = 0; i < c1.size(); ++i) {
            if (std::abs(c1(i) - w.center) <= w.half_width) {
                mass += weights.p(i);
                moved += weights.p(i) * (c2(i) - c1(i));
            }
        }
        WindowResidual r{w, mass, 0.0, false};
        if (mass >= threshold && mass > 0.0) {
            r.residual = moved / mass;
            r.evaluated = true;
            sum_abs += std::abs(r.residual);
            ++evaluated;
        } else {
            ++rep.skipped;
        }
        rep.windows.push_back(r);
    }
    if (evaluated > 0) rep.mean_abs_residual = sum_abs / static_cast<double>(evaluated);
    rep.relative_loss = rep.mean_abs_residual / range_width;
    return rep;
}

PayoffMatrix martingale_constraint_columns(const PathSet& paths, const std::vector<MartingaleWindow>& windows)
{
    PayoffMatrix g;
    g.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(paths.n_paths()), static_cast<Eigen::Index>(windows.size()));
    for (std::size_t j = 0; j < windows.size(); ++j) {
        const auto& w = windows[j];
        const auto c1 = paths.values.col(static_cast<Eigen::Index>(paths.time_index(w.t1)));
        const auto c2 = paths.values.col(static_cast<Eigen::Index>(paths.time_index(w.t2)));
        for (Eigen::Index i = 0; i < c1.size(); ++i) {
            if (std::abs(c1(i) - w.center) <= w.half_width) g.values(i, static_cast<Eigen::Index>(j)) = c2(i) - c1(i);
        }
        g.columns.push_back({ColumnKind::Martingale, 0.0, w.t2, w.t1, w.center, w.half_width});
    }
    return g;
}

Histogram risk_neutral_density(const PathSet& paths, const WeightVector& weights, double expiry, double lo,
                               double hi, std::size_t bins)
{
    if (weights.size() != paths.n_paths()) throw ConfigError("weights do not match path count");
    if (bins == 0 || !(hi > lo)) throw ConfigError("invalid histogram range");
    const auto col = paths.values.col(static_cast<Eigen::Index>(paths.time_index(expiry)));
    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    h.mass.assign(bins, 0.0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (Eigen::Index i = 0; i < col.size(); ++i) {
        const double pos = std::floor((col(i) - lo) / width);
        const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
        h.mass[b] += weights.p(i);
    }
    const double total = std::accumulate(h.mass.begin(), h.mass.end(), 0.0);
    for (double& m : h.mass) m /= total;
    return h;
}

} // namespace volwmc::wmc
