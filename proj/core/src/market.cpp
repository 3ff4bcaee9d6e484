#include "volwmc/market.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "volwmc/errors.hpp"
#include "volwmc/random.hpp"
#include "volwmc/sabr.hpp"

namespace volwmc::market {

namespace {

bool strictly_increasing(const std::vector<double>& v)
{
    return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

double parse_double(std::string_view field, const std::string& where)
{
    double value = 0.0;
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError(where + ": cannot parse number '" + std::string(field) + "'");
    }
    return value;
}

std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        auto comma = line.find(',', pos);
        out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos
                                                                       : comma - pos));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

std::size_t find_node(const std::vector<double>& axis, double value)
{
    for (std::size_t i = 0; i < axis.size(); ++i) {
        if (std::abs(axis[i] - value) <= 1e-12 * std::max(1.0, std::abs(value))) return i;
    }
    return axis.size();
}

} // namespace

Date parse_date(std::string_view iso)
{
    iso = trim(iso);
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
        throw ConfigError("invalid ISO date '" + std::string(iso) + "'");
    }
    int y = 0;
    unsigned m = 0, d = 0;
    auto ok = [&](std::string_view part, auto& out) {
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
        return ec == std::errc() && ptr == part.data() + part.size();
    };
    if (!ok(iso.substr(0, 4), y) || !ok(iso.substr(5, 2), m) || !ok(iso.substr(8, 2), d)) {
        throw ConfigError("invalid ISO date '" + std::string(iso) + "'");
    }
    Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!date.ok()) throw ConfigError("invalid calendar date '" + std::string(iso) + "'");
    return date;
}

std::string format_date(const Date& d)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

void SurfaceGrid::validate() const
{
    if (strike_offsets.empty() || expiries.empty()) throw ConfigError("surface grid has an empty axis");
    if (!strictly_increasing(strike_offsets)) throw ConfigError("strike offsets must be strictly increasing");
    if (!strictly_increasing(expiries)) throw ConfigError("expiries must be strictly increasing");
    if (std::find(strike_offsets.begin(), strike_offsets.end(), 0.0) == strike_offsets.end()) {
        throw ConfigError("strike offsets must contain the ATM point 0");
    }
    if (expiries.front() <= 0.0) throw ConfigError("expiries must be positive");
}

const SurfaceGrid& default_grid()
{
    static const SurfaceGrid grid{
        {-0.0050, -0.0025, -0.00125, 0.0, 0.00125, 0.0025, 0.0050},
        {0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0},
    };
    return grid;
}

SurfaceGrid refined_grid(const SurfaceGrid& base, std::size_t n)
{
    if (n < 2) throw ConfigError("refined grid needs at least 2 nodes per axis");
    auto span = [n](double lo, double hi) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        }
        return v;
    };
    return {span(base.strike_offsets.front(), base.strike_offsets.back()),
            span(base.expiries.front(), base.expiries.back())};
}

Eigen::VectorXd VolSurface::flat() const
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
            out(static_cast<Eigen::Index>(grid.node(i, j))) = at(i, j);
        }
    }
    return out;
}

VolSurface VolSurface::from_flat(Date date, SurfaceGrid grid, const Eigen::VectorXd& flat)
{
    if (static_cast<std::size_t>(flat.size()) != grid.size()) {
        throw ConfigError("flat vol vector does not match grid size");
    }
    VolSurface s{date, std::move(grid), {}};
    s.vols.resize(static_cast<Eigen::Index>(s.grid.n_expiries()),
                  static_cast<Eigen::Index>(s.grid.n_strikes()));
    for (std::size_t i = 0; i < s.grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < s.grid.n_strikes(); ++j) {
            s.vols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                flat(static_cast<Eigen::Index>(s.grid.node(i, j)));
        }
    }
    return s;
}

void VolSurface::validate() const
{
    if (static_cast<std::size_t>(vols.rows()) != grid.n_expiries() ||
        static_cast<std::size_t>(vols.cols()) != grid.n_strikes()) {
        throw ConfigError("vol matrix shape does not match grid on " + format_date(date));
    }
    if (!vols.allFinite()) throw ConfigError("non-finite vol on " + format_date(date));
    if ((vols.array() <= 0.0).any()) throw ConfigError("non-positive vol on " + format_date(date));
}

MarketHistory::MarketHistory(std::vector<VolSurface> surfaces) : surfaces_(std::move(surfaces))
{
    for (std::size_t i = 1; i < surfaces_.size(); ++i) {
        if (!(std::chrono::sys_days{surfaces_[i - 1].date} < std::chrono::sys_days{surfaces_[i].date})) {
            throw ConfigError("history dates must be strictly increasing (at " +
                              format_date(surfaces_[i].date) + ")");
        }
    }
}

DiscountCurve::DiscountCurve(std::vector<double> times, std::vector<double> discount_factors)
{
    if (times.size() != discount_factors.size() || times.empty()) {
        throw ConfigError("discount curve needs matching, non-empty pillar and factor lists");
    }
    if (!strictly_increasing(times) || times.front() < 0.0) {
        throw ConfigError("discount curve pillars must be non-negative and strictly increasing");
    }
    if (times.front() > 0.0) {
        times.insert(times.begin(), 0.0);
        discount_factors.insert(discount_factors.begin(), 1.0);
    } else if (discount_factors.front() != 1.0) {
        throw ConfigError("discount factor at t = 0 must be 1");
    }
    for (double df : discount_factors) {
        if (!(df > 0.0) || !std::isfinite(df)) throw ConfigError("discount factors must be positive");
    }
    times_ = std::move(times);
    log_dfs_.reserve(discount_factors.size());
    for (double df : discount_factors) log_dfs_.push_back(std::log(df));
}

DiscountCurve DiscountCurve::flat_rate(double rate, double last_pillar, std::size_t n_pillars)
{
    std::vector<double> t(n_pillars), df(n_pillars);
    for (std::size_t i = 0; i < n_pillars; ++i) {
        t[i] = last_pillar * static_cast<double>(i) / static_cast<double>(n_pillars - 1);
        df[i] = std::exp(-rate * t[i]);
    }
    return DiscountCurve(std::move(t), std::move(df));
}

DiscountCurve DiscountCurve::unit(double last_pillar)
{
    return DiscountCurve({0.0, last_pillar}, {1.0, 1.0});
}

double DiscountCurve::discount(double t) const
{
    if (t < 0.0) throw ConfigError("discount requested before the curve start");
    if (t > times_.back() * (1.0 + 1e-14)) {
        throw ConfigError("discount curve extrapolation beyond last pillar " +
                          std::to_string(times_.back()));
    }
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.end()) return std::exp(log_dfs_.back());
    const auto hi = static_cast<std::size_t>(it - times_.begin());
    const auto lo = hi - 1;
    const double w = (t - times_[lo]) / (times_[hi] - times_[lo]);
    return std::exp((1.0 - w) * log_dfs_[lo] + w * log_dfs_[hi]);
}

SwapSchedule SwapSchedule::regular(double start, double end, double period)
{
    SwapSchedule s{start, {}};
    const auto n = static_cast<std::size_t>(std::llround((end - start) / period));
    for (std::size_t i = 1; i <= n; ++i) s.payments.push_back(start + period * static_cast<double>(i));
    return s;
}

void SwapSchedule::validate() const
{
    if (payments.empty()) throw ConfigError("swap schedule has no payment periods");
    double prev = start;
    for (double t : payments) {
        if (!(t > prev)) throw ConfigError("swap schedule times must be strictly increasing");
        prev = t;
    }
}

double annuity_factor(const DiscountCurve& curve, const SwapSchedule& schedule)
{
    schedule.validate();
    double annuity = 0.0;
    double prev = schedule.start;
    for (double t : schedule.payments) {
        annuity += curve.discount(t) * (t - prev);
        prev = t;
    }
    return annuity;
}

double forward_swap_rate(const DiscountCurve& curve, const SwapSchedule& schedule)
{
    const double annuity = annuity_factor(curve, schedule);
    if (!(annuity > 0.0)) throw NumericalError("annuity factor is not positive");
    return (curve.discount(schedule.start) - curve.discount(schedule.payments.back())) / annuity;
}

MarketHistory parse_history_csv(std::istream& in, const std::string& source_name)
{
    const SurfaceGrid& grid = default_grid();
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ConfigError(source_name + ": empty file");
    ++line_no;
    if (trim(line) != "date,expiry_years,strike_offset,normal_vol") {
        throw ConfigError(source_name + ":1: unexpected header '" + line + "'");
    }

    struct Pending {
        Eigen::MatrixXd vols;
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen;
        std::size_t first_line = 0;
    };
    std::map<std::chrono::sys_days, Pending> by_date;

    while (std::getline(in, line)) {
        ++line_no;
        const auto view = trim(line);
        if (view.empty()) continue;
        const std::string where = source_name + ":" + std::to_string(line_no);
        const auto fields = split_fields(view);
        if (fields.size() != 4) throw ConfigError(where + ": expected 4 fields, got " + std::to_string(fields.size()));
        Date date;
        try {
            date = parse_date(fields[0]);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
        const double expiry = parse_double(trim(fields[1]), where);
        const double offset = parse_double(trim(fields[2]), where);
        const double vol = parse_double(trim(fields[3]), where);
        if (!std::isfinite(vol) || vol <= 0.0) {
            throw ConfigError(where + ": non-positive or non-finite vol " + std::string(fields[3]));
        }
        const auto ei = find_node(grid.expiries, expiry);
        const auto ki = find_node(grid.strike_offsets, offset);
        if (ei == grid.n_expiries() || ki == grid.n_strikes()) {
            throw ConfigError(where + ": node (" + std::string(fields[1]) + ", " +
                              std::string(fields[2]) + ") is not on the canonical grid");
        }
        auto& pending = by_date[std::chrono::sys_days{date}];
        if (pending.vols.size() == 0) {
            pending.vols = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.n_expiries()),
                                                 static_cast<Eigen::Index>(grid.n_strikes()));
            pending.seen.setConstant(pending.vols.rows(), pending.vols.cols(), false);
            pending.first_line = line_no;
        }
        const auto r = static_cast<Eigen::Index>(ei);
        const auto c = static_cast<Eigen::Index>(ki);
        if (pending.seen(r, c)) throw ConfigError(where + ": duplicate grid node for date " + format_date(date));
        pending.seen(r, c) = true;
        pending.vols(r, c) = vol;
    }

    std::vector<VolSurface> surfaces;
    surfaces.reserve(by_date.size());
    for (auto& [day, pending] : by_date) {
        if (!pending.seen.all()) {
            throw ConfigError(source_name + ":" + std::to_string(pending.first_line) +
                              ": missing grid cell(s) for date " + format_date(Date{day}));
        }
        surfaces.push_back(VolSurface{Date{day}, grid, std::move(pending.vols)});
    }
    return MarketHistory(std::move(surfaces));
}

MarketHistory load_history(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open history file " + path.string());
    return parse_history_csv(in, path.string());
}

void write_history_csv(const MarketHistory& history, std::ostream& out)
{
    out << "date,expiry_years,strike_offset,normal_vol\n";
    out << std::setprecision(17);
    for (const auto& s : history) {
        const auto date = format_date(s.date);
        for (std::size_t i = 0; i < s.grid.n_expiries(); ++i) {
            for (std::size_t j = 0; j < s.grid.n_strikes(); ++j) {
                out << date << ',' << s.grid.expiries[i] << ',' << s.grid.strike_offsets[j] << ','
                    << s.at(i, j) << '\n';
            }
        }
    }
}

void save_history(const MarketHistory& history, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write history file " + path.string());
    write_history_csv(history, out);
}

MarketHistory synthetic_history(std::size_t n_days, std::uint64_t seed, const SyntheticConfig& cfg,
                                const SurfaceGrid& grid)
{
    if (n_days == 0) throw ConfigError("synthetic history needs at least one day");
    grid.validate();

    constexpr double dt = 1.0 / 252.0;
    const double sqdt = std::sqrt(dt);
    Rng rng = make_stream(seed, 0);
    std::normal_distribution<double> normal;

    double log_alpha = std::log(cfg.alpha_mean);
    double rho = cfg.rho_mean;
    double log_volvol = std::log(cfg.volvol_mean);
    double tilt = cfg.tilt_mean;

    std::chrono::sys_days day{std::chrono::year_month_day{
        std::chrono::year{cfg.start_year}, std::chrono::month{cfg.start_month},
        std::chrono::day{cfg.start_day}}};
    auto next_business_day = [](std::chrono::sys_days d) {
        while (std::chrono::weekday{d} == std::chrono::Saturday ||
               std::chrono::weekday{d} == std::chrono::Sunday) {
            d += std::chrono::days{1};
        }
        return d;
    };
    day = next_business_day(day);

    std::vector<VolSurface> surfaces;
    surfaces.reserve(n_days);
    for (std::size_t n = 0; n < n_days; ++n) {
        if (n > 0) {
            log_alpha += cfg.alpha_reversion * (std::log(cfg.alpha_mean) - log_alpha) * dt +
                         cfg.alpha_vol * sqdt * normal(rng);
            rho += cfg.rho_reversion * (cfg.rho_mean - rho) * dt + cfg.rho_vol * sqdt * normal(rng);
            rho = std::clamp(rho, -0.95, 0.95);
            log_volvol += cfg.volvol_reversion * (std::log(cfg.volvol_mean) - log_volvol) * dt +
                          cfg.volvol_vol * sqdt * normal(rng);
            tilt += cfg.tilt_reversion * (cfg.tilt_mean - tilt) * dt + cfg.tilt_vol * sqdt * normal(rng);
            day = next_business_day(day + std::chrono::days{1});
        }

        const double frac = n_days > 1 ? static_cast<double>(n) / static_cast<double>(n_days - 1) : 0.0;
        double crisis = 1.0;
        if (frac > cfg.crisis_start && frac < cfg.crisis_end) {
            const double u = (frac - cfg.crisis_start) / (cfg.crisis_end - cfg.crisis_start);
            const double bump = std::sin(u * std::numbers::pi);
            crisis = 1.0 + (cfg.crisis_alpha_multiplier - 1.0) * bump * bump;
        }

        const double alpha = std::max(std::exp(log_alpha) * crisis, 1e-5);
        const double volvol = std::max(std::exp(log_volvol), 0.0);

        VolSurface s{Date{day}, grid, Eigen::MatrixXd(static_cast<Eigen::Index>(grid.n_expiries()),
                                                      static_cast<Eigen::Index>(grid.n_strikes()))};
        for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
            const double t = grid.expiries[i];
            const sabr::SabrParams p{alpha * std::pow(t / 2.0, tilt), rho, volvol};
            for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
                double vol = sabr::normal_vol(p, 0.0, grid.strike_offsets[j], t);
                vol *= 1.0 + cfg.noise_rel * normal(rng);
                s.vols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::max(vol, 1e-6);
            }
        }
        surfaces.push_back(std::move(s));
    }
    return MarketHistory(std::move(surfaces));
}

Split chronological_split(const MarketHistory& history, double train_fraction,
                          std::size_t n_validation, std::uint64_t val_seed)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1)");
    }
    const std::size_t n = history.size();
    // The small epsilon keeps 0.7 * 10 from landing on 6.999...
    const auto n_block = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
    if (n_block == 0 || n_block >= n) throw ConfigError("history too short for the requested split");
    if (n_validation >= n_block) throw ConfigError("validation set must be smaller than the training block");

    std::vector<std::size_t> block(n_block);
    std::iota(block.begin(), block.end(), std::size_t{0});
    Rng rng = make_stream(val_seed, 0);
    std::vector<std::size_t> val;
    std::sample(block.begin(), block.end(), std::back_inserter(val), n_validation, rng);
    std::sort(val.begin(), val.end());

    Split split;
    std::vector<VolSurface> train, validation, test;
    std::size_t vi = 0;
    for (std::size_t i = 0; i < n_block; ++i) {
        if (vi < val.size() && val[vi] == i) {
            validation.push_back(history[i]);
            split.validation_index.push_back(i);
            ++vi;
        } else {
            train.push_back(history[i]);
            split.train_index.push_back(i);
        }
    }
    for (std::size_t i = n_block; i < n; ++i) {
        test.push_back(history[i]);
        split.test_index.push_back(i);
    }
    split.train = MarketHistory(std::move(train));
    split.validation = MarketHistory(std::move(validation));
    split.test = MarketHistory(std::move(test));
    return split;
}

double mrae(const VolSurface& real, const VolSurface& reconstructed)
{
    if (real.grid != reconstructed.grid || real.vols.rows() != reconstructed.vols.rows() ||
        real.vols.cols() != reconstructed.vols.cols()) {
        throw ConfigError("MRAE requires surfaces on the same grid");
    }
    if ((real.vols.array() <= 0.0).any()) throw ConfigError("MRAE requires positive reference vols");
    return ((real.vols - reconstructed.vols).array().abs() / real.vols.array()).mean();
}

double mse(const VolSurface& real, const VolSurface& reconstructed)
{
    if (real.vols.rows() != reconstructed.vols.rows() || real.vols.cols() != reconstructed.vols.cols()) {
        throw ConfigError("MSE requires surfaces on the same grid");
    }
    return (real.vols - reconstructed.vols).array().square().mean();
}

std::vector<double> sliding_window_std(const MarketHistory& history, std::size_t window, DispersionMode mode)
{
    if (window < 2) throw ConfigError("sliding window must be at least 2");
    if (history.size() < window) throw ConfigError("history shorter than the sliding window");

    std::vector<double> out;
    out.reserve(history.size() - window + 1);
    const double w = static_cast<double>(window);
    for (std::size_t end = window - 1; end < history.size(); ++end) {
        Eigen::ArrayXXd mean = Eigen::ArrayXXd::Zero(history[end].vols.rows(), history[end].vols.cols());
        for (std::size_t k = end + 1 - window; k <= end; ++k) mean += history[k].vols.array();
        mean /= w;
        Eigen::ArrayXXd var = Eigen::ArrayXXd::Zero(mean.rows(), mean.cols());
        for (std::size_t k = end + 1 - window; k <= end; ++k) var += (history[k].vols.array() - mean).square();
        const Eigen::ArrayXXd sd = (var / w).sqrt();
        out.push_back(mode == DispersionMode::Relative ? (sd / mean).mean() : sd.mean());
    }
    return out;
}

} // namespace volwmc::market
