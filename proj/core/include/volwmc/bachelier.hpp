#pragma once

namespace volwmc::bachelier {

// Payer/receiver swaptions are calls/puts on the forward swap rate.
enum class Flavor { Call, Put };

Flavor parse_flavor(const char* name);
const char* to_string(Flavor f);

double norm_pdf(double x);
double norm_cdf(double x);

// Normal-model premium. The annuity multiplies the whole price, including the
// time-value term.
double price(double s0, double strike, double sigma, double expiry, Flavor flavor,
             double annuity = 1.0);

double vega(double s0, double strike, double sigma, double expiry, double annuity = 1.0);

struct InversionOptions {
    double price_tolerance = 1e-12;
    int max_iterations = 200;
};

// Normal implied vol reproducing `premium`. Throws NumericalError when the
// premium is not strictly above intrinsic value or not finite.
double implied_vol(double premium, double s0, double strike, double expiry, Flavor flavor,
                   double annuity = 1.0, const InversionOptions& options = {});

// Annuity-normalized parity in forward-centered coordinates (S0 = 0):
// put = dK + call.
inline double put_from_call(double strike_offset, double call_price)
{
    return strike_offset + call_price;
}

inline double parity_residual(double strike_offset, double call_price, double put_price)
{
    return strike_offset + call_price - put_price;
}

} // namespace volwmc::bachelier
