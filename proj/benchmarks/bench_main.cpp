#include <benchmark/benchmark.h>

#include "volwmc/bachelier.hpp"
#include "volwmc/exotics.hpp"
#include "volwmc/market.hpp"
#include "volwmc/sabr.hpp"
#include "volwmc/vae.hpp"
#include "volwmc/weight_decoder.hpp"
#include "volwmc/wmc.hpp"

using namespace volwmc;

namespace {

const wmc::PathSet& desk_paths()
{
    static const auto p = wmc::generate_brownian_paths(4000, 5.0, 500, 0.006, 1);
    return p;
}

Eigen::VectorXd flat_targets(const wmc::PayoffMatrix& g, double sigma)
{
    Eigen::VectorXd c(static_cast<Eigen::Index>(g.n_columns()));
    for (std::size_t j = 0; j < g.n_columns(); ++j) {
        c(static_cast<Eigen::Index>(j)) =
            bachelier::price(0.0, g.columns[j].strike_offset, sigma, g.columns[j].expiry, bachelier::Flavor::Call);
    }
    return c;
}

void BM_BachelierPrice(benchmark::State& state)
{
    double k = -0.005;
    for (auto _ : state) {
        benchmark::DoNotOptimize(bachelier::price(0.0, k, 0.006, 2.0, bachelier::Flavor::Call));
        k = k > 0.005 ? -0.005 : k + 1e-5;
    }
}
BENCHMARK(BM_BachelierPrice);

void BM_ImpliedVol(benchmark::State& state)
{
    const double p = bachelier::price(0.0, 0.002, 0.0065, 3.0, bachelier::Flavor::Call);
    for (auto _ : state) benchmark::DoNotOptimize(bachelier::implied_vol(p, 0.0, 0.002, 3.0, bachelier::Flavor::Call));
}
BENCHMARK(BM_ImpliedVol);

void BM_GeneratePaths(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(wmc::generate_brownian_paths(n, 5.0, 500, 0.006, 2));
    state.SetItemsProcessed(state.iterations() * state.range(0) * 500);
}
BENCHMARK(BM_GeneratePaths)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_DualSolver(benchmark::State& state)
{
    const auto g = wmc::vanilla_payoffs(desk_paths(), market::default_grid(), {bachelier::Flavor::Call});
    const auto c = flat_targets(g, 0.0066);
    for (auto _ : state) benchmark::DoNotOptimize(wmc::solve_lagrange_dual(g, c));
}
BENCHMARK(BM_DualSolver)->Unit(benchmark::kMillisecond);

void BM_MartingaleLoss(benchmark::State& state)
{
    const auto& p = desk_paths();
    const auto windows = wmc::martingale_windows(market::default_grid().expiries);
    const auto w = wmc::WeightVector::uniform(p.n_paths());
    for (auto _ : state) benchmark::DoNotOptimize(wmc::martingale_loss(p, w, windows));
}
BENCHMARK(BM_MartingaleLoss)->Unit(benchmark::kMillisecond);

void BM_DecodeSurface(benchmark::State& state)
{
    vae::VaeConfig cfg;
    const auto model = vae::make_model(cfg, vae::Scaler{}, market::default_grid());
    const Eigen::Vector3d z(0.3, -0.5, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(vae::decode_surface(model, z, market::default_grid()));
}
BENCHMARK(BM_DecodeSurface);

void BM_WeightDecoderPricing(benchmark::State& state)
{
    const auto& p = desk_paths();
    const auto net = wd::make_weight_decoder(3, p, 1);
    const auto ctx = wd::PricingContext::make(p, market::default_grid());
    const Eigen::Vector3d z(0.3, -0.5, 1.0);
    for (auto _ : state) {
        const auto w = wd::decode_weights(net, z, p);
        benchmark::DoNotOptimize(wd::model_prices(w, ctx, wd::ParityMode::Constrained));
    }
}
BENCHMARK(BM_WeightDecoderPricing)->Unit(benchmark::kMicrosecond);

void BM_SabrSmileFit(benchmark::State& state)
{
    const sabr::SabrParams truth{0.0062, -0.35, 0.45};
    std::vector<sabr::SmilePoint> smile;
    for (double k : market::default_grid().strike_offsets) smile.push_back({k, sabr::normal_vol(truth, 0.0, k, 5.0)});
    for (auto _ : state) benchmark::DoNotOptimize(sabr::fit_smile(smile, 5.0));
}
BENCHMARK(BM_SabrSmileFit)->Unit(benchmark::kMicrosecond);

void BM_BarrierSweep(benchmark::State& state)
{
    const auto& p = desk_paths();
    const auto w = wmc::WeightVector::uniform(p.n_paths());
    const auto barriers = exotics::barrier_grid(0.01, 0.1, 0.005);
    for (auto _ : state) benchmark::DoNotOptimize(exotics::barrier_sweep(p, w, 0.0, barriers, 5.0));
}
BENCHMARK(BM_BarrierSweep)->Unit(benchmark::kMillisecond);

} // namespace
BENCHMARK_MAIN();
