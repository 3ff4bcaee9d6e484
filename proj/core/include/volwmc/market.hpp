#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace volwmc::market {

using Date = std::chrono::year_month_day;

Date parse_date(std::string_view iso);
std::string format_date(const Date& d);

// Strike-offset x expiry grid of a quoted surface. Offsets are in decimal rate
// units relative to the forward (ATM = 0), expiries in year fractions.
struct SurfaceGrid {
    std::vector<double> strike_offsets;
    std::vector<double> expiries;

    std::size_t n_strikes() const { return strike_offsets.size(); }
    std::size_t n_expiries() const { return expiries.size(); }
    std::size_t size() const { return n_strikes() * n_expiries(); }

    // Flat node index, expiry-major: all strikes of the first expiry first.
    std::size_t node(std::size_t expiry_idx, std::size_t strike_idx) const
    {
        return expiry_idx * n_strikes() + strike_idx;
    }

    void validate() const;
    bool operator==(const SurfaceGrid&) const = default;
};

// ATM + [-50,-25,-12.5,0,12.5,25,50]bp, expiries 9M..5Y.
const SurfaceGrid& default_grid();

// Equally spaced n x n grid spanning the same (dK, T) box as `base`.
SurfaceGrid refined_grid(const SurfaceGrid& base, std::size_t n);

// Normal implied vols for one observation date. vols(i, j) is expiry i,
// strike offset j.
struct VolSurface {
    Date date{};
    SurfaceGrid grid;
    Eigen::MatrixXd vols;

    double at(std::size_t expiry_idx, std::size_t strike_idx) const
    {
        return vols(static_cast<Eigen::Index>(expiry_idx), static_cast<Eigen::Index>(strike_idx));
    }
    // Vols flattened in grid node order.
    Eigen::VectorXd flat() const;
    static VolSurface from_flat(Date date, SurfaceGrid grid, const Eigen::VectorXd& flat);

    void validate() const;
};

class MarketHistory {
public:
    MarketHistory() = default;
    explicit MarketHistory(std::vector<VolSurface> surfaces);

    const std::vector<VolSurface>& surfaces() const { return surfaces_; }
    std::size_t size() const { return surfaces_.size(); }
    bool empty() const { return surfaces_.empty(); }
    const VolSurface& operator[](std::size_t i) const { return surfaces_[i]; }
    auto begin() const { return surfaces_.begin(); }
    auto end() const { return surfaces_.end(); }

private:
    std::vector<VolSurface> surfaces_;
};

// Discount factors P(0, t) at pillar times, log-linear in between. An implicit
// pillar P(0,0) = 1 is added when t = 0 is not given.
class DiscountCurve {
public:
    DiscountCurve(std::vector<double> times, std::vector<double> discount_factors);

    static DiscountCurve flat_rate(double rate, double last_pillar, std::size_t n_pillars = 41);
    static DiscountCurve unit(double last_pillar);

    double discount(double t) const;
    double last_pillar() const { return times_.back(); }

private:
    std::vector<double> times_;
    std::vector<double> log_dfs_;
};

struct SwapSchedule {
    double start = 0.0;
    std::vector<double> payments;

    static SwapSchedule regular(double start, double end, double period);
    void validate() const;
};

double annuity_factor(const DiscountCurve& curve, const SwapSchedule& schedule);
double forward_swap_rate(const DiscountCurve& curve, const SwapSchedule& schedule);

// CSV: date,expiry_years,strike_offset,normal_vol with 49 rows per date.
MarketHistory load_history(const std::filesystem::path& path);
void save_history(const MarketHistory& history, const std::filesystem::path& path);
MarketHistory parse_history_csv(std::istream& in, const std::string& source_name = "<stream>");
void write_history_csv(const MarketHistory& history, std::ostream& out);

// Drivers of the synthetic surface generator. Each day evaluates the normal
// SABR smile per expiry with (alpha, rho, volvol) following mean-reverting
// walks and a power-law term-structure tilt on alpha.
struct SyntheticConfig {
    double alpha_mean = 0.0055;
    double alpha_vol = 0.35;       // annualised vol of log(alpha)
    double alpha_reversion = 1.0;
    double rho_mean = -0.2;
    double rho_vol = 0.6;
    double rho_reversion = 3.0;
    double volvol_mean = 0.35;
    double volvol_vol = 0.5;       // annualised vol of log(volvol)
    double volvol_reversion = 3.0;
    double tilt_mean = 0.12;       // alpha(T) = alpha * (T / 2)^tilt
    double tilt_vol = 0.25;
    double tilt_reversion = 2.0;
    double noise_rel = 0.002;      // i.i.d. relative quote noise per node
    // Crisis segment as fractions of the history: alpha is scaled up to
    // crisis_alpha_multiplier in the middle of [crisis_start, crisis_end].
    double crisis_start = 0.86;
    double crisis_end = 0.96;
    double crisis_alpha_multiplier = 1.35;
    int start_year = 2015;
    unsigned start_month = 9;
    unsigned start_day = 1;
};

MarketHistory synthetic_history(std::size_t n_days, std::uint64_t seed,
                                const SyntheticConfig& config = {},
                                const SurfaceGrid& grid = default_grid());

struct Split {
    MarketHistory train;
    MarketHistory validation;
    MarketHistory test;
    // Positions of each set in the source history.
    std::vector<std::size_t> train_index;
    std::vector<std::size_t> validation_index;
    std::vector<std::size_t> test_index;
};

// Chronological split: the last (1 - train_fraction) share is the test block,
// validation days are drawn without replacement from the preceding block.
Split chronological_split(const MarketHistory& history, double train_fraction,
                          std::size_t n_validation, std::uint64_t val_seed);

double mrae(const VolSurface& real, const VolSurface& reconstructed);
double mse(const VolSurface& real, const VolSurface& reconstructed);

enum class DispersionMode { Relative, Absolute };

// Day-to-day market fluctuation: per node standard deviation inside a
// trailing window, averaged over the grid (optionally relative to the window
// mean). Entry k corresponds to history index k + window - 1.
std::vector<double> sliding_window_std(const MarketHistory& history, std::size_t window = 5,
                                       DispersionMode mode = DispersionMode::Relative);

} // namespace volwmc::market
