#include "volwmc/bachelier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "volwmc/errors.hpp"

namespace volwmc::bachelier {

namespace {

constexpr double inv_sqrt_2pi = 0.3989422804014326779399460599343818684758586311649;

void check_inputs(double sigma, double expiry, double annuity)
{
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("normal vol must be non-negative");
    if (!(expiry > 0.0)) throw ConfigError("expiry must be positive");
    if (!(annuity > 0.0)) throw ConfigError("annuity must be positive");
}

// Time value of either flavor (they coincide): the out-of-the-money premium.
double time_value(double moneyness, double sigma, double expiry)
{
    const double sd = sigma * std::sqrt(expiry);
    if (sd == 0.0) return 0.0;
    const double u = std::abs(moneyness) / sd;
    return sd * norm_pdf(u) - std::abs(moneyness) * norm_cdf(-u);
}

} // namespace

Flavor parse_flavor(const char* name)
{
    const std::string s(name);
    if (s == "call" || s == "payer") return Flavor::Call;
    if (s == "put" || s == "receiver") return Flavor::Put;
    throw ConfigError("unknown option flavor '" + s + "' (expected call|put|payer|receiver)");
}

const char* to_string(Flavor f)
{
    return f == Flavor::Call ? "call" : "put";
}

double norm_pdf(double x)
{
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

double norm_cdf(double x)
{
    return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

double price(double s0, double strike, double sigma, double expiry, Flavor flavor, double annuity)
{
    check_inputs(sigma, expiry, annuity);
    const double x = s0 - strike;
    const double sd = sigma * std::sqrt(expiry);
    if (sd == 0.0) {
        return annuity * (flavor == Flavor::Call ? std::max(x, 0.0) : std::max(-x, 0.0));
    }
    const double d = x / sd;
    if (flavor == Flavor::Call) return annuity * (x * norm_cdf(d) + sd * norm_pdf(d));
    return annuity * (-x * norm_cdf(-d) + sd * norm_pdf(d));
}

double vega(double s0, double strike, double sigma, double expiry, double annuity)
{
    check_inputs(sigma, expiry, annuity);
    const double sq = std::sqrt(expiry);
    if (sigma == 0.0) return s0 == strike ? annuity * sq * inv_sqrt_2pi : 0.0;
    return annuity * sq * norm_pdf((s0 - strike) / (sigma * sq));
}

double implied_vol(double premium, double s0, double strike, double expiry, Flavor flavor,
                   double annuity, const InversionOptions& options)
{
    if (!std::isfinite(premium)) throw NumericalError("implied vol: premium is not finite");
    check_inputs(0.0, expiry, annuity);
    const double x = s0 - strike;
    const double intrinsic = annuity * (flavor == Flavor::Call ? std::max(x, 0.0) : std::max(-x, 0.0));
    if (!(premium > intrinsic)) {
        throw NumericalError("implied vol: premium " + std::to_string(premium) +
                             " is not above intrinsic value " + std::to_string(intrinsic));
    }

    // Solve ln tv(sigma) = ln target; tv is increasing in sigma and log-space
    // keeps Newton well scaled for deep out-of-the-money quotes.
    const double target = (premium - intrinsic) / annuity;
    const double log_target = std::log(target);
    const double sq = std::sqrt(expiry);
    const double ax = std::abs(x);

    double guess = target / (sq * inv_sqrt_2pi); // exact at the money, a lower bound otherwise
    if (ax > 0.0 && target < ax * inv_sqrt_2pi) {
        // Leading-order wing asymptotics: tv ~ exp(-u^2/2).
        guess = std::max(guess, ax / (sq * std::sqrt(2.0 * std::log(ax / target))));
    }

    double lo = 0.0;
    double hi = guess;
    int guard = 0;
    while (time_value(x, hi, expiry) < target) {
        lo = hi;
        hi *= 2.0;
        if (++guard > 2100 || !std::isfinite(hi)) throw NumericalError("implied vol: cannot bracket premium");
    }

    double sigma = std::clamp(guess, lo, hi);
    if (sigma <= 0.0) sigma = 0.5 * hi;
    for (int it = 0; it < options.max_iterations; ++it) {
        const double tv = time_value(x, sigma, expiry);
        if (tv <= 0.0) {
            lo = sigma;
            sigma = 0.5 * (lo + hi);
            continue;
        }
        const double g = std::log(tv) - log_target;
        if (g == 0.0) break;
        if (g < 0.0) lo = sigma; else hi = sigma;
        const double slope = sq * norm_pdf(x / (sigma * sq)) / tv; // d ln tv / d sigma
        double next = sigma - g / slope;
        if (!(next > lo && next < hi)) next = lo > 0.0 ? std::sqrt(lo * hi) : 0.5 * hi;
        const double step = std::abs(next - sigma);
        sigma = next;
        if (step <= 1e-15 * sigma || hi - lo <= 4e-16 * hi) break;
    }

    const double achieved = price(s0, strike, sigma, expiry, flavor, annuity);
    if (!(std::abs(achieved - premium) <= options.price_tolerance)) {
        throw NumericalError("implied vol: did not converge (residual " +
                             std::to_string(achieved - premium) + ")");
    }
    return sigma;
}

} // namespace volwmc::bachelier
