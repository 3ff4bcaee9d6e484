#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "volwmc/nn.hpp"
#include "volwmc/path_io.hpp"
#include "volwmc/vae.hpp"
#include "volwmc/wmc.hpp"

namespace volwmc::wd {

// Latent coordinates -> softmax weights over one specific path set.
struct WeightDecoderNet {
    nn::DenseNet net;
    wmc::PathBinding binding;

    std::size_t latent_dim() const { return net.input_size(); }
};

struct Architecture {
    std::vector<std::size_t> hidden{20, 49};
    bool zero_readout = false; // start from exactly uniform weights
};

WeightDecoderNet make_weight_decoder(std::size_t latent_dim, const wmc::PathSet& paths, std::uint64_t seed,
                                     const Architecture& arch = {});

// Throws ConfigError when the decoder was trained on a different path set.
void check_binding(const WeightDecoderNet& net, const wmc::PathSet& paths);

wmc::WeightVector decode_weights(const WeightDecoderNet& net, const Eigen::VectorXd& z, const wmc::PathSet& paths);

// Smooth price targets from VAE-decoded vols at each latent point, node order
// matching the grid (expiry-major).
struct PriceTargets {
    Eigen::VectorXd z;
    Eigen::VectorXd calls;
    Eigen::VectorXd puts;
    std::vector<bool> valid; // false where the raw decoded vol is not positive
};

std::vector<PriceTargets> build_training_targets(const vae::VaeModel& model, const std::vector<Eigen::VectorXd>& latents,
                                                 const market::SurfaceGrid& grid);

enum class ParityMode { Constrained, DualPayoff };
ParityMode parse_parity_mode(std::string_view name);
const char* to_string(ParityMode mode);

// Payoff columns of the grid's calls and puts on one path set.
struct PricingContext {
    market::SurfaceGrid grid;
    wmc::PayoffMatrix calls;
    wmc::PayoffMatrix puts;
    Eigen::VectorXd strike_offsets; // per node

    static PricingContext make(const wmc::PathSet& paths, const market::SurfaceGrid& grid);
};

struct WdConfig {
    double gamma = 1e-8;
    double learning_rate = 0.01;
    std::size_t batch = 32;
    std::size_t epochs = 300;
    std::size_t patience = 50;
    // Halve the learning rate after this many epochs without a new best
    // validation loss (0 disables), never going below min_learning_rate.
    std::size_t lr_plateau = 10;
    double min_learning_rate = 1e-5;
    ParityMode parity_mode = ParityMode::Constrained;
    double parity_weight = 1.0; // dual-payoff mode only
    // The loss is multiplied by price_scale^2 (prices quoted in basis points),
    // which leaves the minimizer unchanged.
    double price_scale = 1e4;
    std::uint64_t seed = 0;
    Architecture architecture;
};

struct WdLoss {
    double total = 0.0;     // scaled units
    double call_mse = 0.0;  // raw price units
    double put_mse = 0.0;
    double parity_mse = 0.0;
    double entropy = 0.0;   // batch mean D(p || uniform)
};

// Loss on a batch of targets; adds parameter gradients into `grads` when
// non-null.
WdLoss weight_decoder_loss(const WeightDecoderNet& net, const PricingContext& ctx,
                           const std::vector<const PriceTargets*>& batch, const WdConfig& config,
                           nn::Gradients* grads = nullptr);

struct WdReport {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_validation_loss = 0.0;
    std::vector<double> epoch_loss;
    std::vector<double> validation_loss;
    std::vector<double> checkpoint_losses; // validation loss at each retained checkpoint
    double max_parity_residual = 0.0;      // over validation targets, final parameters
};

struct TrainedWeightDecoder {
    WeightDecoderNet net;
    WdReport report;
};

TrainedWeightDecoder train_weight_decoder(const wmc::PathSet& paths, const PricingContext& ctx,
                                          const std::vector<PriceTargets>& train,
                                          const std::vector<PriceTargets>& validation, const WdConfig& config);

struct ModelPrices {
    Eigen::VectorXd calls;
    Eigen::VectorXd puts;
};

ModelPrices model_prices(const wmc::WeightVector& weights, const PricingContext& ctx, ParityMode mode);

// max |dK + call - put| over the grid.
double max_parity_residual(const ModelPrices& prices, const PricingContext& ctx);

struct Reconstruction {
    market::VolSurface surface;
    ModelPrices prices;
    std::vector<bool> failed; // implied vol inversion failed; vol set to vae::min_vol
    std::size_t n_failed = 0;
};

// Implied vols of the weighted call prices on the grid.
Reconstruction reconstruct_surface(const wmc::WeightVector& weights, const PricingContext& ctx,
                                   ParityMode mode = ParityMode::Constrained, market::Date date = {});

struct DensityEntry {
    double value = 0.0;
    double expiry = 0.0;
    wmc::Histogram histogram;
};

// Densities at each expiry while coordinate `dim` of `base` sweeps `values`;
// every histogram shares [lo, hi] and the bin count.
std::vector<DensityEntry> latent_sweep_densities(const WeightDecoderNet& net, const wmc::PathSet& paths,
                                                 std::size_t dim, const std::vector<double>& values,
                                                 const Eigen::VectorXd& base, const std::vector<double>& expiries,
                                                 double lo, double hi, std::size_t bins);

void save_weight_decoder(const WeightDecoderNet& net, const std::filesystem::path& path);
WeightDecoderNet load_weight_decoder(const std::filesystem::path& path);

} // namespace volwmc::wd
