#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "volwmc/bachelier.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/wmc.hpp"

using namespace volwmc;
using namespace volwmc::wmc;

namespace {

// Paths given explicitly, row by row, on times 0..steps.
PathSet explicit_paths(const std::vector<std::vector<double>>& rows, double horizon)
{
    PathSet p;
    const std::size_t steps = rows.front().size() - 1;
    p.times = uniform_times(horizon, steps);
    p.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(steps + 1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j <= steps; ++j) p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    p.sigma_prior = 0.005;
    return p;
}

PayoffMatrix single_column(const std::vector<double>& g)
{
    PayoffMatrix m;
    m.values = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
    m.columns.push_back({ColumnKind::Call, 0.0, 1.0});
    return m;
}

WeightVector weights(std::initializer_list<double> v)
{
    WeightVector w;
    w.p.resize(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) w.p(i++) = x;
    return w;
}

const PathSet& desk_paths()
{
    static const PathSet p = generate_brownian_paths(4000, 5.0, 500, 0.006, 11);
    return p;
}

} // namespace

TEST(Paths, StartAtZeroOnSharedGrid)
{
    const auto& p = desk_paths();
    EXPECT_EQ(p.values.col(0).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(p.times.size(), 501u);
    EXPECT_DOUBLE_EQ(p.horizon(), 5.0);
    EXPECT_TRUE(p.values.allFinite());
}

TEST(Paths, TerminalVarianceMatchesPrior)
{
    const auto p = generate_brownian_paths(20000, 5.0, 50, 0.006, 3);
    const Eigen::VectorXd st = p.values.col(50);
    const double n = static_cast<double>(st.size());
    const double mean = st.mean();
    const double var = (st.array() - mean).square().sum() / (n - 1);
    const double expected = 0.006 * 0.006 * 5.0;
    EXPECT_LT(std::abs(var - expected), 5.0 * expected * std::sqrt(2.0 / (n - 1)));
}

TEST(Paths, IndependentOfWorkersAndPathCount)
{
    const auto a = generate_brownian_paths(300, 2.0, 40, 0.005, 8, 1);
    const auto b = generate_brownian_paths(300, 2.0, 40, 0.005, 8, 4);
    EXPECT_TRUE((a.values.array() == b.values.array()).all());
    const auto c = generate_brownian_paths(100, 2.0, 40, 0.005, 8, 1);
    EXPECT_TRUE((c.values.array() == a.values.topRows(100).array()).all());
}

TEST(Paths, InvalidParameters)
{
    EXPECT_THROW(generate_brownian_paths(1, 1.0, 10, 0.005, 1), ConfigError);
    EXPECT_THROW(generate_brownian_paths(10, 1.0, 0, 0.005, 1), ConfigError);
    EXPECT_THROW(generate_brownian_paths(10, 1.0, 10, 0.0, 1), ConfigError);
}

TEST(Payoffs, ConstantPathHandEvaluation)
{
    const auto p = explicit_paths({{0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}}, 5.0);
    const auto g = vanilla_payoffs(p, market::default_grid(), {bachelier::Flavor::Call, bachelier::Flavor::Put});
    EXPECT_EQ(g.n_columns(), 98u);
    const std::size_t node = market::default_grid().node(0, 5); // dK = +25bp
    EXPECT_DOUBLE_EQ(market::default_grid().strike_offsets[5], 0.0025);
    EXPECT_EQ(g.values(0, static_cast<Eigen::Index>(node)), 0.0);
    EXPECT_DOUBLE_EQ(g.values(0, static_cast<Eigen::Index>(49 + node)), 0.0025);
}

TEST(Payoffs, ExpiryBeyondHorizonIsError)
{
    const auto p = generate_brownian_paths(10, 2.0, 20, 0.005, 1);
    EXPECT_THROW(vanilla_payoffs(p, market::default_grid(), {bachelier::Flavor::Call}), ConfigError);
}

TEST(Payoffs, UniformPricesMatchBachelier)
{
    const auto& p = desk_paths();
    const auto& grid = market::default_grid();
    const auto g = vanilla_payoffs(p, grid, {bachelier::Flavor::Call});
    const auto w = WeightVector::uniform(p.n_paths());
    const Eigen::VectorXd prices = weighted_price(g, w);
    const double n = static_cast<double>(p.n_paths());
    for (std::size_t j = 0; j < g.n_columns(); ++j) {
        const auto col = g.values.col(static_cast<Eigen::Index>(j));
        const double se = std::sqrt((col.array() - col.mean()).square().sum() / (n - 1) / n);
        const auto& spec = g.columns[j];
        const double exact = bachelier::price(0.0, spec.strike_offset, 0.006, spec.expiry, bachelier::Flavor::Call);
        EXPECT_LT(std::abs(prices(static_cast<Eigen::Index>(j)) - exact), 3.0 * se + 1e-15) << j;
    }
}

TEST(WeightedPrice, Examples)
{
    const auto g = single_column({0.0, 1.0, 4.0});
    EXPECT_NEAR(weighted_price(g, weights({0.2, 0.3, 0.5}))(0), 2.3, 1e-15);
    EXPECT_NEAR(weighted_price(g, WeightVector::uniform(3))(0), 5.0 / 3.0, 1e-15);
    EXPECT_EQ(weighted_price(g, weights({0.0, 1.0, 0.0}))(0), 1.0);
    EXPECT_THROW(weighted_price(g, WeightVector::uniform(4)), ConfigError);
}

TEST(WeightedPrice, LinearInWeights)
{
    const auto& p = desk_paths();
    const auto g = vanilla_payoffs(p, market::default_grid(), {bachelier::Flavor::Call});
    WeightVector a = weights_from_lagrange(g, Eigen::VectorXd::Constant(49, 10.0));
    WeightVector b = WeightVector::uniform(p.n_paths());
    WeightVector mix;
    mix.p = 0.3 * a.p + 0.7 * b.p;
    const Eigen::VectorXd lhs = weighted_price(g, mix);
    const Eigen::VectorXd rhs = 0.3 * weighted_price(g, a) + 0.7 * weighted_price(g, b);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Entropy, Examples)
{
    EXPECT_EQ(relative_entropy(weights({0.2, 0.8}), weights({0.2, 0.8})), 0.0);
    EXPECT_NEAR(relative_entropy(weights({0, 0, 1, 0}), WeightVector::uniform(4)), std::log(4.0), 1e-15);
    EXPECT_NEAR(relative_entropy(weights({0.5, 0.5}), weights({0.25, 0.75})), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0),
                1e-15);
    EXPECT_NEAR(relative_entropy(weights({0.5, 0.5}), weights({0.25, 0.75})), 0.14384, 1e-5);
    EXPECT_THROW(relative_entropy(weights({0.5, 0.5}), weights({0.0, 1.0})), NumericalError);
    EXPECT_NEAR(relative_entropy_uniform(weights({0.5, 0.5, 0.0, 0.0})), std::log(2.0), 1e-15);
}

TEST(Gibbs, Examples)
{
    const auto g = single_column({1.0, -1.0});
    EXPECT_TRUE(weights_from_lagrange(g, Eigen::VectorXd::Zero(1)).p.isApprox(Eigen::Vector2d(0.5, 0.5), 1e-15));
    const auto w = weights_from_lagrange(g, Eigen::VectorXd::Constant(1, 0.5 * std::log(2.0)));
    EXPECT_NEAR(w.p(0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(w.p(1), 1.0 / 3.0, 1e-15);
    const auto big = weights_from_lagrange(g, Eigen::VectorXd::Constant(1, 2000.0));
    EXPECT_TRUE(big.p.allFinite());
    EXPECT_NEAR(big.p.sum(), 1.0, 1e-12);
}

TEST(Dual, SymmetricTargetGivesUniform)
{
    const auto r = solve_lagrange_dual(single_column({1.0, -1.0}), Eigen::VectorXd::Zero(1));
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.lambda(0), 0.0, 1e-14);
    EXPECT_NEAR(r.weights.p(0), 0.5, 1e-14);
}

TEST(Dual, ClosedFormTwoPoint)
{
    const auto r = solve_lagrange_dual(single_column({1.0, -1.0}), Eigen::VectorXd::Constant(1, 1.0 / 3.0));
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.weights.p(0), 2.0 / 3.0, 1e-8);
    EXPECT_NEAR(r.lambda(0), 0.5 * std::log(2.0), 1e-8);
}

TEST(Dual, OutsideHullIsFlagged)
{
    const auto r = solve_lagrange_dual(single_column({1.0, -1.0, 0.5}), Eigen::VectorXd::Constant(1, 2.0));
    EXPECT_TRUE(r.infeasible);
    EXPECT_FALSE(r.converged);
    EXPECT_TRUE(std::isfinite(r.max_residual));
}

TEST(Dual, ReachesBachelierTargetsInGibbsForm)
{
    const auto& p = desk_paths();
    const auto& grid = market::default_grid();
    const auto g = vanilla_payoffs(p, grid, {bachelier::Flavor::Call});
    Eigen::VectorXd c(49);
    for (std::size_t j = 0; j < 49; ++j) {
        c(static_cast<Eigen::Index>(j)) =
            bachelier::price(0.0, g.columns[j].strike_offset, 0.0066, g.columns[j].expiry, bachelier::Flavor::Call);
    }
    const auto r = solve_lagrange_dual(g, c);
    ASSERT_TRUE(r.converged);
    EXPECT_LE(r.max_residual, 1e-8);
    const auto gibbs = weights_from_lagrange(g, r.lambda);
    EXPECT_LE((gibbs.p - r.weights.p).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.weights.p.sum(), 1.0, 1e-12);
    EXPECT_NEAR(r.entropy, relative_entropy_uniform(r.weights), 1e-14);
}

TEST(Dual, SolutionHasMinimalEntropy)
{
    const auto p = generate_brownian_paths(400, 2.0, 20, 0.006, 4);
    market::SurfaceGrid grid{{-0.0025, 0.0, 0.0025}, {1.0, 2.0}};
    const auto g = vanilla_payoffs(p, grid, {bachelier::Flavor::Call});
    Eigen::VectorXd c(6);
    for (std::size_t j = 0; j < 6; ++j) {
        c(static_cast<Eigen::Index>(j)) =
            bachelier::price(0.0, g.columns[j].strike_offset, 0.0064, g.columns[j].expiry, bachelier::Flavor::Call);
    }
    const auto r = solve_lagrange_dual(g, c);
    ASSERT_TRUE(r.converged);
    // Directions preserving every price and the total mass.
    Eigen::MatrixXd a(7, 400);
    a.topRows(6) = g.values.transpose();
    a.row(6).setOnes();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::MatrixXd null = lu.kernel();
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd coef(null.cols());
        for (Eigen::Index k = 0; k < coef.size(); ++k) coef(k) = n(rng);
        Eigen::VectorXd dir = null * coef;
        const double room = (r.weights.p.array() / dir.array().abs().max(1e-300)).minCoeff();
        WeightVector q;
        q.p = r.weights.p + 0.5 * room * dir;
        ASSERT_GE(q.p.minCoeff(), 0.0);
        EXPECT_GE(relative_entropy_uniform(q), r.entropy - 1e-9);
    }
}

TEST(Dual, ColumnWeightsRelaxFit)
{
    const auto g = single_column({1.0, -1.0});
    DualOptions o;
    o.column_weights = Eigen::VectorXd::Constant(1, 1.0);
    const auto r = solve_lagrange_dual(g, Eigen::VectorXd::Constant(1, 0.5), o);
    EXPECT_TRUE(r.converged);
    EXPECT_GT(r.max_residual, 1e-3);
    EXPECT_LT(r.achieved(0), 0.5);
}

TEST(Windows, Counts)
{
    EXPECT_EQ(martingale_windows(market::default_grid().expiries).size(), 120u);
    const auto one = martingale_windows({1.0, 2.0}, 1, 0.0, 0.0);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].t1, 1.0);
    EXPECT_EQ(one[0].t2, 2.0);
    EXPECT_EQ(one[0].center, 0.0);
    const auto w = martingale_windows({1.0, 2.0}, 5);
    EXPECT_DOUBLE_EQ(w.front().center, -0.01);
    EXPECT_DOUBLE_EQ(w.back().center, 0.01);
    for (std::size_t i = 1; i < w.size(); ++i) EXPECT_NEAR(w[i].center - w[i - 1].center, 0.005, 1e-15);
    EXPECT_DOUBLE_EQ(w[2].half_width, 0.001);
}

TEST(MartingaleLoss, ConstantPathsGiveZero)
{
    const auto p = explicit_paths({{0, 0.0005, 0.0005}, {0, -0.0005, -0.0005}, {0, 0, 0}}, 2.0);
    const auto report = martingale_loss(p, WeightVector::uniform(3), martingale_windows({1.0, 2.0}, 3, -0.001, 0.001), 0.02, 0.0);
    for (const auto& w : report.windows) {
        if (w.evaluated) EXPECT_EQ(w.residual, 0.0);
    }
    EXPECT_EQ(report.relative_loss, 0.0);
}

TEST(MartingaleLoss, TwoPathHandEvaluation)
{
    const double a = 0.0007;
    const auto p = explicit_paths({{0, 0, a}, {0, 0, -a}}, 2.0);
    const auto windows = martingale_windows({1.0, 2.0}, 1, 0.0, 0.0);
    const auto half = martingale_loss(p, WeightVector::uniform(2), windows, 0.02, 0.0);
    EXPECT_NEAR(half.windows[0].residual, 0.0, 1e-18);
    const auto one = martingale_loss(p, weights({1.0, 0.0}), windows, 0.02, 0.0);
    EXPECT_NEAR(one.windows[0].residual, a, 1e-18);
    EXPECT_NEAR(one.relative_loss, a / 0.02, 1e-15);
}

TEST(MartingaleLoss, ThinWindowsSkipped)
{
    const auto p = explicit_paths({{0, 0, 0.001}, {0, 0, -0.001}}, 2.0);
    const auto report = martingale_loss(p, WeightVector::uniform(2), martingale_windows({1.0, 2.0}, 3), 0.02);
    EXPECT_EQ(report.skipped, 3u);
    for (const auto& w : report.windows) EXPECT_FALSE(w.evaluated);
}

TEST(MartingaleLoss, NoiseFallsWithPathCount)
{
    const auto windows = martingale_windows(market::default_grid().expiries);
    double prev = 1e9;
    for (std::size_t nu : {2000u, 8000u, 32000u}) {
        double mean = 0.0;
        for (std::uint64_t s = 0; s < 3; ++s) {
            const auto p = generate_brownian_paths(nu, 5.0, 100, 0.006, 100 + s);
            mean += martingale_loss(p, WeightVector::uniform(nu), windows).relative_loss / 3.0;
        }
        EXPECT_LT(mean, prev) << nu;
        prev = mean;
    }
}

TEST(ConstraintColumns, ShapeAndOutOfWindowZero)
{
    const auto& p = desk_paths();
    const auto windows = martingale_windows(market::default_grid().expiries);
    const auto g = martingale_constraint_columns(p, windows);
    EXPECT_EQ(g.n_columns(), windows.size());
    const auto& w = windows[7];
    const auto i1 = static_cast<Eigen::Index>(p.time_index(w.t1));
    const auto i2 = static_cast<Eigen::Index>(p.time_index(w.t2));
    for (Eigen::Index i = 0; i < g.values.rows(); ++i) {
        const double s1 = p.values(i, i1);
        if (std::abs(s1 - w.center) > w.half_width) {
            EXPECT_EQ(g.values(i, 7), 0.0);
        } else {
            EXPECT_DOUBLE_EQ(g.values(i, 7), p.values(i, i2) - s1);
        }
    }
}

TEST(ConstraintColumns, SolvingDrivesWindowResidualsToZero)
{
    const auto& p = desk_paths();
    const auto& grid = market::default_grid();
    auto g = vanilla_payoffs(p, grid, {bachelier::Flavor::Call});
    const auto windows = martingale_windows(grid.expiries);
    g.append(martingale_constraint_columns(p, windows));
    Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.n_columns()));
    for (std::size_t j = 0; j < 49; ++j) {
        c(static_cast<Eigen::Index>(j)) =
            bachelier::price(0.0, g.columns[j].strike_offset, 0.0063, g.columns[j].expiry, bachelier::Flavor::Call);
    }
    const auto r = solve_lagrange_dual(g, c);
    ASSERT_TRUE(r.converged);
    const auto report = martingale_loss(p, r.weights, windows);
    for (const auto& w : report.windows) {
        if (w.evaluated) EXPECT_LT(std::abs(w.residual), 1e-8 / std::max(w.mass, 1e-12));
    }
}

TEST(Density, MassAndOneHot)
{
    const auto& p = desk_paths();
    const auto h = risk_neutral_density(p, WeightVector::uniform(p.n_paths()), 2.0, -0.03, 0.03, 60);
    EXPECT_EQ(h.edges.size(), 61u);
    double total = 0.0;
    for (double m : h.mass) total += m;
    EXPECT_NEAR(total, 1.0, 1e-12);
    WeightVector one = WeightVector::uniform(p.n_paths());
    one.p.setZero();
    one.p(17) = 1.0;
    const auto single = risk_neutral_density(p, one, 2.0, -0.03, 0.03, 60);
    EXPECT_EQ(std::count_if(single.mass.begin(), single.mass.end(), [](double m) { return m > 0.0; }), 1);
    EXPECT_THROW(risk_neutral_density(p, one, 7.0, -0.03, 0.03, 60), ConfigError);
}

TEST(Density, UniformBrownianPassesKolmogorovSmirnov)
{
    const auto& p = desk_paths();
    const double sd = 0.006 * std::sqrt(3.0);
    const auto h = risk_neutral_density(p, WeightVector::uniform(p.n_paths()), 3.0, -6 * sd, 6 * sd, 400);
    double cdf = 0.0, ks = 0.0;
    for (std::size_t b = 0; b < h.mass.size(); ++b) {
        cdf += h.mass[b];
        ks = std::max(ks, std::abs(cdf - bachelier::norm_cdf(h.edges[b + 1] / sd)));
    }
    EXPECT_LT(ks, 1.63 / std::sqrt(static_cast<double>(p.n_paths())));
}

TEST(PathSet, TimeIndexSnapsWithinHalfStep)
{
    const auto p = generate_brownian_paths(2, 1.0, 10, 0.005, 1);
    EXPECT_EQ(p.time_index(0.5), 5u);
    EXPECT_EQ(p.time_index(0.52), 5u);
    EXPECT_THROW(p.time_index(1.2), ConfigError);
}
