#include "volwmc/sabr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "volwmc/errors.hpp"
#include "volwmc/random.hpp"
#include "volwmc/wmc.hpp"

namespace volwmc::sabr {

void SabrParams::validate() const
{
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("SABR alpha must be positive");
    if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("SABR rho must lie in (-1, 1)");
    if (!(volvol >= 0.0) || !std::isfinite(volvol)) throw ConfigError("SABR volvol must be non-negative");
}

namespace {

// zeta / x(zeta)
double smile_factor(double zeta, double rho)
{
    if (std::abs(zeta) < 1e-6) return 1.0 - 0.5 * rho * zeta + (2.0 - 3.0 * rho * rho) * zeta * zeta / 12.0;
    const double root = std::sqrt(1.0 - 2.0 * rho * zeta + zeta * zeta);
    // (root + zeta - rho)(root - zeta + rho) = 1 - rho^2; pick the form without cancellation.
    const double x = zeta - rho >= 0.0 ? std::log((root + zeta - rho) / (1.0 - rho))
                                       : std::log((1.0 + rho) / (root - zeta + rho));
    return zeta / x;
}

} // namespace

double normal_vol(const SabrParams& p, double s0, double strike, double expiry)
{
    p.validate();
    if (!(expiry > 0.0)) throw ConfigError("expiry must be positive");
    const double correction = 1.0 + (2.0 - 3.0 * p.rho * p.rho) / 24.0 * p.volvol * p.volvol * expiry;
    const double zeta = p.volvol / p.alpha * (s0 - strike);
    return p.alpha * smile_factor(zeta, p.rho) * correction;
}

namespace {

constexpr int n_params = 3;
using Vec3 = Eigen::Vector3d;

Vec3 clamp_params(const Vec3& x, const FitOptions& o)
{
    return {std::clamp(x(0), o.alpha_lo, o.alpha_hi), std::clamp(x(1), o.rho_lo, o.rho_hi),
            std::clamp(x(2), o.volvol_lo, o.volvol_hi)};
}

Eigen::VectorXd residuals(const Vec3& x, const std::vector<SmilePoint>& smile, double expiry, double s0)
{
    const SabrParams p{x(0), x(1), x(2)};
    Eigen::VectorXd r(static_cast<Eigen::Index>(smile.size()));
    for (std::size_t i = 0; i < smile.size(); ++i) {
        r(static_cast<Eigen::Index>(i)) =
            (normal_vol(p, s0, s0 + smile[i].strike_offset, expiry) - smile[i].vol) / smile[i].vol;
    }
    return r;
}

struct LocalFit {
    Vec3 x;
    double cost;
    int iterations;
};

LocalFit levenberg_marquardt(Vec3 x, const std::vector<SmilePoint>& smile, double expiry, double s0,
                             const FitOptions& o)
{
    const Vec3 lo{o.alpha_lo, o.rho_lo, o.volvol_lo};
    const Vec3 hi{o.alpha_hi, o.rho_hi, o.volvol_hi};
    const Vec3 typical{1e-3, 0.1, 0.1};
    x = clamp_params(x, o);
    Eigen::VectorXd r = residuals(x, smile, expiry, s0);
    double cost = r.squaredNorm();
    double damping = 1e-3;
    int it = 0;
    for (; it < o.max_iterations; ++it) {
        Eigen::MatrixXd jac(r.size(), n_params);
        for (int k = 0; k < n_params; ++k) {
            const double h = 1e-7 * std::max(std::abs(x(k)), typical(k));
            Vec3 up = x, dn = x;
            up(k) = std::min(x(k) + h, hi(k));
            dn(k) = std::max(x(k) - h, lo(k));
            jac.col(k) = (residuals(up, smile, expiry, s0) - residuals(dn, smile, expiry, s0)) / (up(k) - dn(k));
        }
        const Eigen::Matrix3d jtj = jac.transpose() * jac;
        const Vec3 g = jac.transpose() * r;
        if (g.cwiseProduct(typical).lpNorm<Eigen::Infinity>() < 1e-16) break;
        bool improved = false;
        double gain = 0.0;
        while (damping < 1e14) {
            Eigen::Matrix3d a = jtj;
            for (int k = 0; k < n_params; ++k) a(k, k) += damping * std::max(jtj(k, k), 1e-20);
            const Vec3 trial = clamp_params(x + a.ldlt().solve(-g), o);
            const Eigen::VectorXd rt = residuals(trial, smile, expiry, s0);
            const double ct = rt.squaredNorm();
            if (ct < cost) {
                gain = cost - ct;
                x = trial;
                r = rt;
                cost = ct;
                damping = std::max(damping * 0.3, 1e-15);
                improved = true;
                break;
            }
            damping *= 5.0;
        }
        if (!improved || gain <= 1e-15 * cost || cost < 1e-30) {
            ++it;
            break;
        }
    }
    return {x, cost, it};
}

} // namespace

SmileFit fit_smile(const std::vector<SmilePoint>& smile, double expiry, double s0, const FitOptions& options)
{
    if (smile.size() < static_cast<std::size_t>(n_params)) {
        throw ConfigError("smile fit needs at least 3 points, got " + std::to_string(smile.size()));
    }
    if (!(expiry > 0.0)) throw ConfigError("expiry must be positive");
    for (const auto& pt : smile) {
        if (!(pt.vol > 0.0) || !std::isfinite(pt.vol)) throw ConfigError("smile vols must be positive");
    }
    const auto atm = std::min_element(smile.begin(), smile.end(), [](const SmilePoint& a, const SmilePoint& b) {
        return std::abs(a.strike_offset) < std::abs(b.strike_offset);
    });
    const double a0 = atm->vol;
    const std::array<Vec3, 3> starts{Vec3{a0, 0.0, 0.3}, Vec3{a0, -0.5, 0.6}, Vec3{a0, 0.5, 0.15}};

    SmileFit fit;
    LocalFit best{Vec3::Zero(), std::numeric_limits<double>::infinity(), 0};
    for (const auto& s : starts) {
        const LocalFit lf = levenberg_marquardt(s, smile, expiry, s0, options);
        fit.start_objectives.push_back(lf.cost);
        fit.iterations += lf.iterations;
        if (lf.cost < best.cost) best = lf;
    }
    fit.params = {best.x(0), best.x(1), best.x(2)};
    double ss = 0.0;
    for (const auto& pt : smile) {
        const double r = normal_vol(fit.params, s0, s0 + pt.strike_offset, expiry) - pt.vol;
        fit.residuals.push_back(r);
        ss += r * r;
    }
    fit.rmse = std::sqrt(ss / static_cast<double>(smile.size()));
    return fit;
}

wmc::PathSet simulate_paths(const SabrParams& p, std::size_t n_paths, double horizon, std::size_t steps,
                            std::uint64_t seed)
{
    p.validate();
    if (n_paths < 2) throw ConfigError("need at least 2 paths");
    if (steps < 1) throw ConfigError("need at least 1 time step");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");

    wmc::PathSet ps;
    ps.times = wmc::uniform_times(horizon, steps);
    ps.values.resize(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(steps + 1));
    ps.sigma_prior = p.alpha;
    ps.seed = seed;
    ps.kind = wmc::PathKind::Sabr;

    const double dt = horizon / static_cast<double>(steps);
    const double sq = std::sqrt(dt);
    const double drift = -0.5 * p.volvol * p.volvol * dt;
    const double rho_perp = std::sqrt(1.0 - p.rho * p.rho);
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < n_paths; ++i) {
        Rng rng = make_stream(seed, i);
        normal.reset();
        auto row = ps.values.row(static_cast<Eigen::Index>(i));
        row(0) = 0.0;
        double s = 0.0, sigma = p.alpha;
        for (std::size_t k = 1; k <= steps; ++k) {
            const double z1 = normal(rng);
            const double z2 = p.rho * z1 + rho_perp * normal(rng);
            s += sigma * sq * z1;
            sigma *= std::exp(drift + p.volvol * sq * z2);
            row(static_cast<Eigen::Index>(k)) = s;
        }
    }
    return ps;
}

} // namespace volwmc::sabr
