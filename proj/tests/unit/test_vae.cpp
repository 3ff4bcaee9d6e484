#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/market.hpp"
#include "volwmc/vae.hpp"

using namespace volwmc;
using namespace volwmc::vae;

namespace {

struct Trained {
    market::MarketHistory history;
    market::Split split;
    VaeModel model;
    TrainingReport report;
};

const Trained& trained()
{
    static const Trained t = [] {
        Trained out;
        out.history = market::synthetic_history(200, 21);
        out.split = market::chronological_split(out.history, 0.7, 20, 3);
        VaeConfig c;
        c.epochs = 300;
        c.patience = 100;
        c.seed = 5;
        auto r = train_vae(out.split.train, out.split.validation, c);
        out.model = std::move(r.model);
        out.report = r.report;
        return out;
    }();
    return t;
}

Eigen::VectorXd vec(std::initializer_list<double> v)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

double direct_mrae(const VaeModel& m, const VolSurface& s)
{
    return market::mrae(s, decode_surface(m, encode(m, s).mu, s.grid));
}

} // namespace

TEST(Encode, ShapesAndDeterminism)
{
    const auto& t = trained();
    const auto a = encode(t.model, t.history[0]);
    const auto b = encode(t.model, t.history[0]);
    EXPECT_EQ(a.mu.size(), 3);
    EXPECT_EQ(a.logvar.size(), 3);
    EXPECT_TRUE(a.mu == b.mu);
    EXPECT_TRUE(a.logvar == b.logvar);
}

TEST(Encode, GridMismatchIsError)
{
    const auto& t = trained();
    auto s = t.history[0];
    s.grid = market::refined_grid(s.grid, 7);
    s.grid.expiries[1] += 0.01;
    EXPECT_THROW(encode(t.model, s), ConfigError);
}

TEST(Encode, TrainingSurfaceWithinTwiceValidationError)
{
    const auto& t = trained();
    double val = 0.0;
    for (const auto& s : t.split.validation) val += direct_mrae(t.model, s);
    val /= static_cast<double>(t.split.validation.size());
    double train = 0.0;
    for (const auto& s : t.split.train) train += direct_mrae(t.model, s);
    train /= static_cast<double>(t.split.train.size());
    EXPECT_LT(train, 2.0 * val);
}

TEST(Reparameterize, Examples)
{
    const auto mu = vec({0.5, -1.0, 2.0});
    const auto lv = vec({0.3, -0.2, 1.0});
    EXPECT_TRUE(reparameterize(mu, lv, Eigen::VectorXd::Zero(3)) == mu);
    const auto e = vec({0.1, 0.2, -0.3});
    EXPECT_TRUE(reparameterize(mu, Eigen::VectorXd::Zero(3), e).isApprox(mu + e, 1e-15));
}

TEST(Reparameterize, SampleMeanConverges)
{
    const auto mu = vec({0.5, -1.0, 2.0});
    const auto lv = vec({0.3, -0.2, 1.0});
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) sum += reparameterize(mu, lv, vec({n(rng), n(rng), n(rng)}));
    const Eigen::VectorXd mean = sum / draws;
    for (Eigen::Index k = 0; k < 3; ++k) {
        EXPECT_LT(std::abs(mean(k) - mu(k)), 4.0 * std::exp(0.5 * lv(k)) / std::sqrt(draws));
    }
}

TEST(Kl, Examples)
{
    EXPECT_EQ(kl_divergence(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), 0.0);
    EXPECT_DOUBLE_EQ(kl_divergence(vec({1, 0, 0}), Eigen::VectorXd::Zero(3)), 0.5);
    EXPECT_NEAR(kl_divergence(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(3, std::log(2.0))),
                3.0 * 0.5 * (2.0 - 1.0 - std::log(2.0)), 1e-15);
    EXPECT_GT(kl_divergence(vec({0.1, 0, 0}), vec({0, 0.2, 0})), 0.0);
}

TEST(Decode, SurfaceEqualsPointwise)
{
    const auto& t = trained();
    const auto z = vec({0.3, -0.7, 1.1});
    const auto s = decode_surface(t.model, z, t.model.grid);
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t j = 0; j < 7; ++j) {
            EXPECT_EQ(s.at(i, j), decode_point(t.model, z, t.model.grid.strike_offsets[j], t.model.grid.expiries[i]));
        }
    }
}

TEST(Decode, Continuous)
{
    const auto& t = trained();
    const auto z = vec({0.3, -0.7, 1.1});
    EXPECT_LT(std::abs(decode_point(t.model, z, 0.001, 2.0) - decode_point(t.model, z, 0.001 + 1e-8, 2.0)), 1e-6);
}

TEST(Decode, RefinementsStayNearNeighbours)
{
    const auto& t = trained();
    const auto& g = t.model.grid;
    const auto z = encode(t.model, t.history[50]).mu;
    const auto coarse = decode_surface(t.model, z, g);
    for (std::size_t n : {10u, 25u, 50u}) {
        const auto fine = decode_surface(t.model, z, market::refined_grid(g, n));
        for (std::size_t i = 0; i < n; ++i) {
            const double tt = fine.grid.expiries[i];
            const auto ie = std::upper_bound(g.expiries.begin(), g.expiries.end() - 1, tt) - g.expiries.begin();
            for (std::size_t j = 0; j < n; ++j) {
                const double k = fine.grid.strike_offsets[j];
                const auto is = std::upper_bound(g.strike_offsets.begin(), g.strike_offsets.end() - 1, k) -
                                g.strike_offsets.begin();
                double lo = 1e9, hi = -1e9;
                for (auto a : {ie - 1, ie}) {
                    for (auto b : {is - 1, is}) {
                        const double v = coarse.at(static_cast<std::size_t>(std::max<long>(a, 0)),
                                                   static_cast<std::size_t>(std::max<long>(b, 0)));
                        lo = std::min(lo, v);
                        hi = std::max(hi, v);
                    }
                }
                EXPECT_GE(fine.at(i, j), 0.8 * lo);
                EXPECT_LE(fine.at(i, j), 1.2 * hi);
            }
        }
    }
}

TEST(Decode, FloorKeepsPositiveAndMatchesRawAboveIt)
{
    const auto& t = trained();
    const auto z = vec({0.0, 0.0, 0.0});
    const double raw = decode_point_raw(t.model, z, 0.0, 2.0);
    ASSERT_GT(raw, 1e-4);
    EXPECT_NEAR(decode_point(t.model, z, 0.0, 2.0), raw, 1e-12);
    EXPECT_GT(decode_point(t.model, vec({40, -40, 40}), 0.005, 0.75), 0.0);
}

TEST(Greeks, MatchFiniteDifferences)
{
    const auto& t = trained();
    const double h = 1e-6;
    for (const auto& z : {vec({0.3, -0.7, 1.1}), vec({-1.5, 0.2, 0.0})}) {
        const double k = 0.0015, T = 2.5;
        const auto g = decoder_greeks(t.model, z, k, T);
        Eigen::VectorXd fd(5), an(5);
        for (Eigen::Index i = 0; i < 3; ++i) {
            auto up = z, dn = z;
            up(i) += h;
            dn(i) -= h;
            fd(i) = (decode_point(t.model, up, k, T) - decode_point(t.model, dn, k, T)) / (2 * h);
            an(i) = g.d_latent(i);
        }
        fd(3) = (decode_point(t.model, z, k + h * 1e-3, T) - decode_point(t.model, z, k - h * 1e-3, T)) / (2e-3 * h);
        fd(4) = (decode_point(t.model, z, k, T + h) - decode_point(t.model, z, k, T - h)) / (2 * h);
        an(3) = g.d_strike_offset;
        an(4) = g.d_expiry;
        EXPECT_LT(testutil::max_relative_error(an, fd, 1e-6), 1e-4);
        EXPECT_DOUBLE_EQ(g.vol, decode_point(t.model, z, k, T));
    }
}

TEST(Greeks, ZeroDecoderHasZeroGradient)
{
    auto m = trained().model;
    for (auto& l : m.decoder.mutable_layers()) {
        l.weights.setZero();
        l.bias.setZero();
    }
    const auto g = decoder_greeks(m, vec({0.3, -0.7, 1.1}), 0.001, 2.0);
    EXPECT_EQ(g.d_latent.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.d_strike_offset, 0.0);
    EXPECT_EQ(g.d_expiry, 0.0);
}

TEST(Greeks, ScaleWithOutputLayer)
{
    const auto& base = trained().model;
    auto scaled = base;
    auto& last = scaled.decoder.mutable_layers().back();
    const double alpha = 1.3;
    last.weights *= alpha;
    last.bias *= alpha;
    const auto z = vec({0.3, -0.7, 1.1});
    const auto a = decoder_greeks(base, z, 0.001, 2.0);
    const auto b = decoder_greeks(scaled, z, 0.001, 2.0);
    ASSERT_GT(b.vol, 1e-4);
    EXPECT_LT(testutil::max_relative_error(b.d_latent, alpha * a.d_latent, 1e-9), 1e-9);
}

TEST(Loss, GradientsMatchFiniteDifferences)
{
    const auto& t = trained();
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        auto m = t.model;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<const VolSurface*> batch;
        std::vector<Eigen::VectorXd> noise;
        for (std::size_t i = 0; i < 4; ++i) {
            batch.push_back(&t.history[10 * i + seed]);
            noise.push_back(vec({n(rng), n(rng), n(rng)}));
        }
        auto ge = m.encoder.zero_gradients();
        auto gd = m.decoder.zero_gradients();
        vae_loss(m, batch, noise, &ge, &gd);
        Eigen::VectorXd analytic(ge.flat().size() + gd.flat().size());
        analytic << ge.flat(), gd.flat();
        const Eigen::VectorXd pe = m.encoder.parameters(), pd = m.decoder.parameters();
        Eigen::VectorXd fd(analytic.size());
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < fd.size(); ++i) {
            auto eval = [&](double delta) {
                Eigen::VectorXd e = pe, d = pd;
                if (i < pe.size()) e(i) += delta; else d(i - pe.size()) += delta;
                m.encoder.set_parameters(e);
                m.decoder.set_parameters(d);
                return vae_loss(m, batch, noise, nullptr, nullptr).total;
            };
            fd(i) = (eval(h) - eval(-h)) / (2 * h);
        }
        EXPECT_LT(testutil::max_relative_error(analytic, fd, 1e-7), 1e-4) << "seed " << seed;
    }
}

TEST(Train, BetaZeroReachesLowerTrainingLoss)
{
    const auto h = market::synthetic_history(80, 4);
    VaeConfig c;
    c.epochs = 60;
    c.patience = 1000;
    c.seed = 2;
    const auto with_kl = train_vae(h, {}, c);
    c.beta = 0.0;
    const auto plain = train_vae(h, {}, c);
    EXPECT_LT(plain.report.final_train_loss, with_kl.report.final_train_loss);
}

TEST(Train, BatchAccounting)
{
    const auto h = market::synthetic_history(32, 4);
    VaeConfig c;
    c.epochs = 5;
    c.batch_surfaces = 32;
    const auto r = train_vae(h, {}, c);
    EXPECT_EQ(r.report.epochs_run, 5u);
    EXPECT_EQ(r.report.batch_updates, 5u);
    c.batch_surfaces = 10;
    EXPECT_EQ(train_vae(h, {}, c).report.batch_updates, 20u);
}

TEST(Train, DeterministicGivenSeed)
{
    const auto h = market::synthetic_history(40, 4);
    VaeConfig c;
    c.epochs = 10;
    c.seed = 9;
    const auto a = train_vae(h, {}, c);
    const auto b = train_vae(h, {}, c);
    EXPECT_TRUE(a.model.decoder.parameters() == b.model.decoder.parameters());
    EXPECT_TRUE(a.model.encoder.parameters() == b.model.encoder.parameters());
}

TEST(Train, KeepsBestValidationParameters)
{
    const auto& t = trained();
    EXPECT_LE(t.report.best_epoch, t.report.epochs_run);
    double val = 0.0;
    for (const auto& s : t.split.validation) {
        const auto z = encode(t.model, s).mu;
        for (std::size_t i = 0; i < 7; ++i) {
            for (std::size_t j = 0; j < 7; ++j) {
                const double u = t.model.scaler.vol_to_unit(decode_point_raw(t.model, z, s.grid.strike_offsets[j], s.grid.expiries[i])) -
                                 t.model.scaler.vol_to_unit(s.at(i, j));
                val += u * u;
            }
        }
    }
    val /= 49.0 * static_cast<double>(t.split.validation.size());
    EXPECT_NEAR(val, t.report.best_validation_mse, 1e-9 * std::max(1.0, val));
    EXPECT_FALSE(t.report.diverged);
}

TEST(Calibrate, RecoversDecoderGeneratedSurface)
{
    const auto& t = trained();
    const auto zstar = vec({0.8, -0.4, 0.5});
    const auto target = decode_surface(t.model, zstar, t.model.grid);
    const auto fit = calibrate_latent(t.model, observations_from(target));
    EXPECT_LE(market::mrae(target, decode_surface(t.model, fit.z, t.model.grid)), 1e-9);
    EXPECT_GT(fit.iterations, 0);
}

TEST(Calibrate, FullGridBeatsSubsetOnHeldOutPoints)
{
    const auto& t = trained();
    const auto& s = t.split.test[5];
    const auto all = observations_from(s);
    std::vector<Observation> subset;
    for (std::size_t n : {0u, 6u, 24u, 42u, 48u}) subset.push_back(all[n]);
    const auto full = calibrate_latent(t.model, all);
    const auto part = calibrate_latent(t.model, subset);
    EXPECT_TRUE(full.converged);
    EXPECT_TRUE(part.converged);
    double err_full = 0.0, err_part = 0.0;
    for (std::size_t n = 0; n < all.size(); ++n) {
        if (n == 0 || n == 6 || n == 24 || n == 42 || n == 48) continue;
        const auto& o = all[n];
        err_full += std::pow(decode_point(t.model, full.z, o.strike_offset, o.expiry) - o.vol, 2);
        err_part += std::pow(decode_point(t.model, part.z, o.strike_offset, o.expiry) - o.vol, 2);
    }
    EXPECT_LE(err_full, err_part);
}

TEST(Calibrate, StaysInBoundsAndRejectsEmpty)
{
    const auto& t = trained();
    EXPECT_THROW(calibrate_latent(t.model, {}), ConfigError);
    auto s = t.history[0];
    s.vols *= 3.0;
    const auto fit = calibrate_latent(t.model, observations_from(s));
    EXPECT_LE(fit.z.cwiseAbs().maxCoeff(), 4.0);
}

TEST(Synthetic, PositiveCountedAndVariance)
{
    const auto& t = trained();
    const std::size_t n = 20000;
    const auto sample = sample_synthetic_surfaces(t.model, n, 4.0, 17);
    EXPECT_EQ(sample.surfaces.size() + sample.discarded, n);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sq = Eigen::VectorXd::Zero(3);
    for (const auto& e : sample.surfaces) {
        EXPECT_GT(e.surface.vols.minCoeff(), 0.0);
        sum += e.z;
        sq += e.z.cwiseAbs2();
    }
    const double m = static_cast<double>(sample.surfaces.size());
    for (Eigen::Index k = 0; k < 3; ++k) {
        const double var = sq(k) / m - std::pow(sum(k) / m, 2);
        EXPECT_NEAR(var, 4.0, 0.2) << "coordinate " << k << " discarded " << sample.discarded;
    }
}

TEST(Finetune, DecoderFrozenAndHoldoutImproves)
{
    const auto& t = trained();
    const auto sample = sample_synthetic_surfaces(t.model, 1500, 4.0, 3);
    FinetuneConfig c;
    c.epochs = 40;
    c.seed = 1;
    const auto r = finetune_encoder(t.model, sample.surfaces, c);
    EXPECT_TRUE(r.model.decoder.parameters() == t.model.decoder.parameters());
    EXPECT_LE(r.report.best_holdout_latent_mse, r.report.initial_holdout_latent_mse);
    const std::size_t start = sample.surfaces.size() - r.report.holdout_size;
    double before = 0.0, after = 0.0;
    for (std::size_t i = start; i < sample.surfaces.size(); ++i) {
        before += direct_mrae(t.model, sample.surfaces[i].surface);
        after += direct_mrae(r.model, sample.surfaces[i].surface);
    }
    EXPECT_LE(after, before);
    EXPECT_THROW(finetune_encoder(t.model, {}, c), ConfigError);
}

TEST(Sweep, OriginShapeAndContinuity)
{
    const auto& t = trained();
    const auto values = default_sweep_values();
    for (std::size_t dim = 0; dim < 3; ++dim) {
        const auto sweep = latent_sweep(t.model, dim, values);
        ASSERT_EQ(sweep.size(), values.size());
        for (std::size_t i = 0; i < sweep.size(); ++i) {
            if (sweep[i].value == 0.0) EXPECT_EQ(sweep[i].diff_vs_origin.cwiseAbs().maxCoeff(), 0.0);
        }
        for (std::size_t i = 1; i < sweep.size(); ++i) {
            const double step = sweep[i].value - sweep[i - 1].value;
            double slope = 0.0;
            for (double v = sweep[i - 1].value; v <= sweep[i].value + 1e-12; v += step / 20.0) {
                Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
                z(static_cast<Eigen::Index>(dim)) = v;
                for (double k : t.model.grid.strike_offsets) {
                    for (double T : t.model.grid.expiries) {
                        slope = std::max(slope, std::abs(decoder_greeks(t.model, z, k, T).d_latent(static_cast<Eigen::Index>(dim))));
                    }
                }
            }
            const double jump = (sweep[i].surface.vols - sweep[i - 1].surface.vols).cwiseAbs().maxCoeff();
            EXPECT_LE(jump, 1.1 * slope * step);
        }
    }
    EXPECT_THROW(latent_sweep(t.model, 3, values), ConfigError);
}

TEST(Checkpoint, SaveLoadRoundTrip)
{
    testutil::TempDir dir("vae");
    const auto& t = trained();
    save_model(t.model, dir / "m.json");
    const auto back = load_model(dir / "m.json");
    const auto z = vec({0.1, 0.2, 0.3});
    EXPECT_EQ(decode_point(back, z, 0.001, 2.0), decode_point(t.model, z, 0.001, 2.0));
    EXPECT_TRUE(encode(back, t.history[3]).mu == encode(t.model, t.history[3]).mu);
    EXPECT_EQ(back.latent_dim, 3u);
}
