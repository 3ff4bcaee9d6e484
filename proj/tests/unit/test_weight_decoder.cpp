#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "test_support.hpp"
#include "volwmc/bachelier.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/weight_decoder.hpp"

using namespace volwmc;
using namespace volwmc::wd;

namespace {

const wmc::PathSet& paths()
{
    static const auto p = wmc::generate_brownian_paths(300, 5.0, 100, 0.006, 5);
    return p;
}

const PricingContext& context()
{
    static const auto ctx = PricingContext::make(paths(), market::default_grid());
    return ctx;
}

vae::VaeModel untrained_vae()
{
    vae::Scaler s;
    s.vol_mean = 0.006;
    s.vol_scale = 0.0005;
    s.strike_lo = -0.005;
    s.strike_hi = 0.005;
    s.expiry_lo = 0.75;
    s.expiry_hi = 5.0;
    vae::VaeConfig c;
    c.seed = 3;
    return vae::make_model(c, s, market::default_grid());
}

// Targets priced from a flat Bachelier surface.
PriceTargets flat_targets(const Eigen::VectorXd& z, double sigma)
{
    const auto& ctx = context();
    PriceTargets t;
    t.z = z;
    t.calls.resize(49);
    t.puts.resize(49);
    t.valid.assign(49, true);
    for (std::size_t j = 0; j < 49; ++j) {
        const auto& col = ctx.calls.columns[j];
        const auto i = static_cast<Eigen::Index>(j);
        t.calls(i) = bachelier::price(0.0, col.strike_offset, sigma, col.expiry, bachelier::Flavor::Call);
        t.puts(i) = bachelier::put_from_call(col.strike_offset, t.calls(i));
    }
    return t;
}

Eigen::VectorXd random_z(std::mt19937_64& rng, double scale = 2.0)
{
    std::normal_distribution<double> n(0.0, scale);
    return Eigen::Vector3d(n(rng), n(rng), n(rng));
}

} // namespace

TEST(Decode, ValidWeightsForAnyFiniteZ)
{
    const auto net = make_weight_decoder(3, paths(), 1);
    EXPECT_EQ(net.net.output_size(), 300u);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        const auto w = decode_weights(net, random_z(rng, 10.0), paths());
        EXPECT_NEAR(w.p.sum(), 1.0, 1e-12);
        EXPECT_GT(w.p.minCoeff(), 0.0);
    }
}

TEST(Decode, ZeroReadoutIsUniform)
{
    Architecture arch;
    arch.zero_readout = true;
    const auto net = make_weight_decoder(3, paths(), 1, arch);
    const auto w = decode_weights(net, Eigen::Vector3d(0.4, -1.0, 2.0), paths());
    EXPECT_NEAR(wmc::relative_entropy_uniform(w), 0.0, 1e-14);
}

TEST(Decode, DeterministicAndBound)
{
    const auto net = make_weight_decoder(3, paths(), 1);
    const Eigen::Vector3d z(0.1, 0.2, 0.3);
    EXPECT_TRUE(decode_weights(net, z, paths()).p == decode_weights(net, z, paths()).p);
    const auto other = wmc::generate_brownian_paths(300, 5.0, 100, 0.006, 6);
    EXPECT_THROW(decode_weights(net, z, other), ConfigError);
    EXPECT_THROW(decode_weights(net, Eigen::Vector2d(0.0, 0.0), paths()), ConfigError);
}

TEST(Targets, ParityShapeAndAtmClosedForm)
{
    const auto model = untrained_vae();
    const std::vector<Eigen::VectorXd> latents{Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, -1, 0.5)};
    const auto& grid = market::default_grid();
    const auto targets = build_training_targets(model, latents, grid);
    ASSERT_EQ(targets.size(), 2u);
    for (const auto& t : targets) {
        ASSERT_EQ(t.calls.size() + t.puts.size(), 98);
        for (std::size_t e = 0; e < grid.n_expiries(); ++e) {
            for (std::size_t s = 0; s < grid.n_strikes(); ++s) {
                const auto n = static_cast<Eigen::Index>(grid.node(e, s));
                EXPECT_EQ(bachelier::parity_residual(grid.strike_offsets[s], t.calls(n), t.puts(n)), 0.0);
                if (grid.strike_offsets[s] == 0.0) {
                    const double vol = vae::decode_point(model, t.z, 0.0, grid.expiries[e]);
                    EXPECT_NEAR(t.calls(n), vol * std::sqrt(grid.expiries[e]) * bachelier::norm_pdf(0.0), 1e-17);
                }
            }
        }
    }
}

TEST(Parity, ConstrainedModeIsExactForAnyWeights)
{
    const auto net = make_weight_decoder(3, paths(), 2);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 5; ++i) {
        const auto prices = model_prices(decode_weights(net, random_z(rng), paths()), context(), ParityMode::Constrained);
        EXPECT_EQ(max_parity_residual(prices, context()), 0.0);
    }
    const auto dual = model_prices(wmc::WeightVector::uniform(300), context(), ParityMode::DualPayoff);
    EXPECT_GE(max_parity_residual(dual, context()), 0.0);
    EXPECT_EQ(parse_parity_mode("dual-payoff"), ParityMode::DualPayoff);
    EXPECT_THROW(parse_parity_mode("none"), ConfigError);
}

TEST(Parity, DualPayoffResidualIsSampleMean)
{
    // dK + call - put = dK + E[S - dK] = mean terminal level.
    const auto prices = model_prices(wmc::WeightVector::uniform(300), context(), ParityMode::DualPayoff);
    const auto& p = paths();
    const double mean5 = p.values.col(p.values.cols() - 1).mean();
    const auto n = static_cast<Eigen::Index>(market::default_grid().node(6, 3));
    EXPECT_NEAR(context().strike_offsets(n) + prices.calls(n) - prices.puts(n), mean5, 1e-15);
}

TEST(Loss, GradientMatchesFiniteDifferences)
{
    for (auto mode : {ParityMode::Constrained, ParityMode::DualPayoff}) {
        auto net = make_weight_decoder(3, paths(), 4);
        std::mt19937_64 rng(5);
        const auto a = flat_targets(random_z(rng, 1.0), 0.0055);
        const auto b = flat_targets(random_z(rng, 1.0), 0.0068);
        const std::vector<const PriceTargets*> batch{&a, &b};
        WdConfig cfg;
        cfg.gamma = 1e-3;
        cfg.parity_mode = mode;
        auto grads = net.net.zero_gradients();
        weight_decoder_loss(net, context(), batch, cfg, &grads);
        const Eigen::VectorXd theta = net.net.parameters();
        const Eigen::VectorXd g = grads.flat();
        std::mt19937_64 pick(7);
        std::uniform_int_distribution<Eigen::Index> idx(0, theta.size() - 1);
        for (int k = 0; k < 30; ++k) {
            const Eigen::Index i = idx(pick);
            const double h = 1e-6;
            Eigen::VectorXd t = theta;
            t(i) += h;
            net.net.set_parameters(t);
            const double up = weight_decoder_loss(net, context(), batch, cfg).total;
            t(i) -= 2 * h;
            net.net.set_parameters(t);
            const double down = weight_decoder_loss(net, context(), batch, cfg).total;
            net.net.set_parameters(theta);
            const double fd = (up - down) / (2 * h);
            EXPECT_NEAR(g(i), fd, 1e-4 * std::max(1.0, std::abs(fd))) << i;
        }
    }
}

TEST(Train, HugeGammaCollapsesToUniform)
{
    std::mt19937_64 rng(8);
    std::vector<PriceTargets> train;
    for (int i = 0; i < 8; ++i) train.push_back(flat_targets(random_z(rng, 1.0), 0.004 + 0.0005 * i));
    WdConfig cfg;
    cfg.gamma = 1e6;
    cfg.epochs = 100;
    cfg.patience = 100;
    const auto trained = train_weight_decoder(paths(), context(), train, train, cfg);
    for (const auto& t : train) EXPECT_LT(wmc::relative_entropy_uniform(decode_weights(trained.net, t.z, paths())), 1e-3);
}

TEST(Train, CheckpointLossesNonIncreasingAndDeterministic)
{
    std::mt19937_64 rng(9);
    std::vector<PriceTargets> train, validation;
    for (int i = 0; i < 12; ++i) train.push_back(flat_targets(random_z(rng, 1.0), 0.004 + 0.0003 * i));
    for (int i = 0; i < 4; ++i) validation.push_back(flat_targets(random_z(rng, 1.0), 0.0045 + 0.0006 * i));
    WdConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 3;
    const auto a = train_weight_decoder(paths(), context(), train, validation, cfg);
    const auto b = train_weight_decoder(paths(), context(), train, validation, cfg);
    for (std::size_t i = 1; i < a.report.checkpoint_losses.size(); ++i) {
        EXPECT_LE(a.report.checkpoint_losses[i], a.report.checkpoint_losses[i - 1]);
    }
    EXPECT_EQ(a.report.best_validation_loss,
              *std::min_element(a.report.validation_loss.begin(), a.report.validation_loss.end()));
    EXPECT_TRUE(a.net.net.parameters() == b.net.net.parameters());
}

TEST(Train, SinglePointMatchesDualSolver)
{
    const auto target = flat_targets(Eigen::Vector3d(0.3, -0.2, 0.1), 0.0064);
    const auto dual = wmc::solve_lagrange_dual(context().calls, target.calls);
    ASSERT_TRUE(dual.converged);
    WdConfig cfg;
    cfg.epochs = 150000;
    cfg.patience = 150000;
    cfg.batch = 1; cfg.gamma = 0.0;
    cfg.lr_plateau = 0; cfg.learning_rate = 1e-3;
    cfg.min_learning_rate = 1e-7;
    const auto trained = train_weight_decoder(paths(), context(), {target}, {target}, cfg);
    const auto prices = model_prices(decode_weights(trained.net, target.z, paths()), context(), ParityMode::Constrained);
    const double err = (prices.calls - target.calls).cwiseAbs().maxCoeff();
    EXPECT_LE(err, 10.0 * std::max(dual.max_residual, 1e-8)) << "dual residual " << dual.max_residual;
}

TEST(Reconstruct, DualWeightsRecoverFlatVol)
{
    const auto target = flat_targets(Eigen::Vector3d::Zero(), 0.0064);
    const auto dual = wmc::solve_lagrange_dual(context().calls, target.calls);
    ASSERT_TRUE(dual.converged);
    const auto r = reconstruct_surface(dual.weights, context());
    EXPECT_EQ(r.surface.grid, market::default_grid());
    EXPECT_EQ(r.n_failed, 0u);
    for (std::size_t j = 0; j < 49; ++j) {
        const auto& col = context().calls.columns[j];
        const double vega = std::sqrt(col.expiry) *
                            bachelier::norm_pdf(col.strike_offset / (0.0064 * std::sqrt(col.expiry)));
        EXPECT_NEAR(r.surface.vols(static_cast<Eigen::Index>(j)), 0.0064, 2.0 * dual.max_residual / vega + 1e-12) << j;
    }
}

TEST(Reconstruct, UniformWeightsRecoverPrior)
{
    const std::size_t n = 4000;
    const auto p = wmc::generate_brownian_paths(n, 5.0, 100, 0.006, 12);
    const auto ctx = PricingContext::make(p, market::default_grid());
    const auto r = reconstruct_surface(wmc::WeightVector::uniform(n), ctx);
    EXPECT_EQ(r.n_failed, 0u);
    for (Eigen::Index j = 0; j < 49; ++j) {
        // Out-of-the-money leg carries the smaller Monte Carlo error.
        const auto& col = ctx.calls.columns[static_cast<std::size_t>(j)];
        const auto g = col.strike_offset >= 0.0 ? ctx.calls.values.col(j) : ctx.puts.values.col(j);
        const double se = std::sqrt((g.array() - g.mean()).square().sum() / (n - 1.0) / n);
        const double vega = std::sqrt(col.expiry) * bachelier::norm_pdf(col.strike_offset / (0.006 * std::sqrt(col.expiry)));
        const double call_se = col.strike_offset >= 0.0 ? se : se + std::abs(p.values.col(p.time_index(col.expiry)).mean());
        EXPECT_NEAR(r.surface.vols(j), 0.006, 4.0 * call_se / vega) << j;
    }
}

TEST(Sweep, DensityShapeAndMass)
{
    const auto net = make_weight_decoder(3, paths(), 1);
    const std::vector<double> values{-2.0, 0.0, 2.0};
    const std::vector<double> expiries{1.0, 5.0};
    const auto out = latent_sweep_densities(net, paths(), 1, values, Eigen::Vector3d::Zero(), expiries, -0.04, 0.04, 40);
    ASSERT_EQ(out.size(), 6u);
    for (const auto& e : out) {
        EXPECT_NEAR(std::accumulate(e.histogram.mass.begin(), e.histogram.mass.end(), 0.0), 1.0, 1e-12);
        EXPECT_EQ(e.histogram.edges.front(), -0.04);
    }
    EXPECT_THROW(latent_sweep_densities(net, paths(), 3, values, Eigen::Vector3d::Zero(), expiries, -0.04, 0.04, 40),
                 ConfigError);
}

TEST(Symmetry, JointPermutationLeavesPricesUnchanged)
{
    const auto net = make_weight_decoder(3, paths(), 6);
    std::vector<int> perm(300);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    wmc::PathSet shuffled = paths();
    auto permuted = net;
    auto layers = net.net.layers();
    for (int i = 0; i < 300; ++i) {
        shuffled.values.row(i) = paths().values.row(perm[static_cast<std::size_t>(i)]);
        layers.back().weights.row(i) = net.net.layers().back().weights.row(perm[static_cast<std::size_t>(i)]);
        layers.back().bias(i) = net.net.layers().back().bias(perm[static_cast<std::size_t>(i)]);
    }
    permuted.net = nn::DenseNet(layers);
    const auto ctx2 = PricingContext::make(shuffled, market::default_grid());
    const Eigen::Vector3d z(0.5, -0.3, 1.2);
    const auto a = model_prices(decode_weights(net, z, paths()), context(), ParityMode::DualPayoff);
    const auto b = model_prices(decode_weights(permuted, z, shuffled), ctx2, ParityMode::DualPayoff);
    EXPECT_LT((a.calls - b.calls).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((a.puts - b.puts).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Checkpoint, RoundTripKeepsBinding)
{
    testutil::TempDir dir("wd");
    const auto net = make_weight_decoder(3, paths(), 7);
    save_weight_decoder(net, dir / "wd.json");
    const auto back = load_weight_decoder(dir / "wd.json");
    EXPECT_EQ(back.binding, net.binding);
    const Eigen::Vector3d z(0.2, 0.1, -0.4);
    EXPECT_TRUE(decode_weights(back, z, paths()).p == decode_weights(net, z, paths()).p);
    EXPECT_NO_THROW(check_binding(back, paths()));
    EXPECT_THROW(check_binding(back, wmc::generate_brownian_paths(300, 5.0, 50, 0.006, 5)), ConfigError);
}
