#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "volwmc/market.hpp"
#include "volwmc/nn.hpp"

namespace volwmc::vae {

using market::MarketHistory;
using market::SurfaceGrid;
using market::VolSurface;

// Input/output standardization stored with the model: vols by a training-set
// mean and standard deviation, strike offsets and expiries min-max mapped to
// [-1, 1].
struct Scaler {
    double vol_mean = 0.0;
    double vol_scale = 1.0;
    double strike_lo = -1.0;
    double strike_hi = 1.0;
    double expiry_lo = -1.0;
    double expiry_hi = 1.0;

    static Scaler fit(const MarketHistory& train);

    double vol_to_unit(double v) const { return (v - vol_mean) / vol_scale; }
    double vol_from_unit(double u) const { return vol_mean + vol_scale * u; }
    double strike_to_unit(double k) const { return 2.0 * (k - strike_lo) / (strike_hi - strike_lo) - 1.0; }
    double expiry_to_unit(double t) const { return 2.0 * (t - expiry_lo) / (expiry_hi - expiry_lo) - 1.0; }
};

struct VaeModel {
    nn::DenseNet encoder; // 49 -> hidden -> 2d (mu, log-variance)
    nn::DenseNet decoder; // d + 2 -> hidden -> 1
    Scaler scaler;
    SurfaceGrid grid;
    std::size_t latent_dim = 3;
    double beta = 5e-5;
};

struct VaeConfig {
    std::size_t latent_dim = 3;
    std::size_t hidden_layers = 2;
    std::size_t hidden_units = 10;
    double beta = 5e-5;
    double learning_rate = 1e-3;
    std::size_t batch_surfaces = 32; // each surface contributes one sample per grid node
    std::size_t epochs = 2000;
    std::size_t patience = 200;
    std::uint64_t seed = 0;
};

// Fresh, untrained model with the configured topology.
VaeModel make_model(const VaeConfig& config, const Scaler& scaler, const SurfaceGrid& grid);

struct Encoding {
    Eigen::VectorXd mu;
    Eigen::VectorXd logvar;
};

Encoding encode(const VaeModel& model, const VolSurface& surface);

Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar,
                               const Eigen::VectorXd& noise);

// KL(N(mu, diag(exp(logvar))) || N(0, I)).
double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);

// Smallest vol the decoder reports; the raw output is smoothly floored here.
inline constexpr double min_vol = 1e-6;

double decode_point_raw(const VaeModel& model, const Eigen::VectorXd& z, double strike_offset, double expiry);
double decode_point(const VaeModel& model, const Eigen::VectorXd& z, double strike_offset, double expiry);

// Node-by-node decode_point (identical values, not a batched evaluation).
VolSurface decode_surface(const VaeModel& model, const Eigen::VectorXd& z, const SurfaceGrid& grid,
                          market::Date date = {});
VolSurface decode_surface_raw(const VaeModel& model, const Eigen::VectorXd& z, const SurfaceGrid& grid,
                              market::Date date = {});

struct DecoderGreeks {
    double vol = 0.0;
    Eigen::VectorXd d_latent;
    double d_strike_offset = 0.0;
    double d_expiry = 0.0;
};

// Exact input gradients of decode_point.
DecoderGreeks decoder_greeks(const VaeModel& model, const Eigen::VectorXd& z, double strike_offset, double expiry);

struct LossBreakdown {
    double total = 0.0;
    double reconstruction = 0.0; // per-point MSE in standardized vol units
    double kl = 0.0;             // batch mean
};

// Loss L = L_rec + beta * L_KL on a batch of surfaces, with the noise draw
// supplied by the caller (one d-vector per surface). Gradients are added into
// the given accumulators when non-null.
LossBreakdown vae_loss(const VaeModel& model, const std::vector<const VolSurface*>& batch,
                       const std::vector<Eigen::VectorXd>& noise, nn::Gradients* encoder_grads,
                       nn::Gradients* decoder_grads);

// Per-point MSE of encode(mu)->decode reconstructions in standardized units.
double reconstruction_mse(const VaeModel& model, const MarketHistory& history);

struct TrainingReport {
    std::size_t epochs_run = 0;
    std::size_t batch_updates = 0;
    std::size_t best_epoch = 0;
    double best_validation_mse = 0.0;
    double final_train_mse = 0.0;  // of the retained parameters
    double final_train_loss = 0.0; // mean L over the last epoch
    std::vector<double> epoch_loss;
    std::vector<double> validation_mse;
    bool diverged = false;
};

struct TrainedVae {
    VaeModel model;
    TrainingReport report;
};

// Adam on minibatches of surfaces; keeps the parameters with the lowest
// validation reconstruction MSE (training MSE when validation is empty).
TrainedVae train_vae(const MarketHistory& train, const MarketHistory& validation, const VaeConfig& config);

struct Observation {
    double strike_offset;
    double expiry;
    double vol;
};

std::vector<Observation> observations_from(const VolSurface& surface);

struct CalibrationOptions {
    double lower = -4.0;
    double upper = 4.0;
    int max_iterations = 200;
};

struct CalibrationResult {
    Eigen::VectorXd z;
    double residual_norm = 0.0; // sqrt(sum sq) in vol units
    double rmse = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Box-constrained Levenberg-Marquardt in latent space on
// sum_i (decode_point(z, dK_i, T_i) - vol_i)^2.
CalibrationResult calibrate_latent(const VaeModel& model, const std::vector<Observation>& observations,
                                   const std::optional<Eigen::VectorXd>& init = std::nullopt,
                                   const CalibrationOptions& options = {});

struct SyntheticSurface {
    Eigen::VectorXd z;
    VolSurface surface;
};

struct SyntheticSample {
    std::vector<SyntheticSurface> surfaces;
    std::size_t discarded = 0; // surfaces with any non-positive raw decoded vol
};

SyntheticSample sample_synthetic_surfaces(const VaeModel& model, std::size_t n, double variance,
                                          std::uint64_t seed);

struct FinetuneConfig {
    std::size_t epochs = 300;
    std::size_t patience = 50;
    double learning_rate = 1e-3;
    std::size_t batch = 32;
    double logvar_floor = -8.0;
    double logvar_weight = 0.01;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct FinetuneReport {
    std::size_t epochs_run = 0;
    std::size_t train_size = 0;
    std::size_t holdout_size = 0;
    double initial_holdout_latent_mse = 0.0;
    double best_holdout_latent_mse = 0.0;
};

struct FinetuneResult {
    VaeModel model;
    FinetuneReport report;
};

// Supervised retraining of the encoder toward the latent coordinates that
// generated each synthetic surface. Decoder parameters are not touched. The
// holdout is the trailing holdout_fraction of `synthetic`.
FinetuneResult finetune_encoder(const VaeModel& model, const std::vector<SyntheticSurface>& synthetic,
                                const FinetuneConfig& config);

struct SweepEntry {
    double value = 0.0;
    VolSurface surface;
    Eigen::MatrixXd diff_vs_origin;
};

std::vector<double> default_sweep_values();

// Decoded surfaces moving coordinate `dim` of `fixed` through `values`, with
// differences against the surface at `fixed` itself.
std::vector<SweepEntry> latent_sweep(const VaeModel& model, std::size_t dim, const std::vector<double>& values,
                                     const std::optional<Eigen::VectorXd>& fixed = std::nullopt,
                                     const std::optional<SurfaceGrid>& grid = std::nullopt);

void save_model(const VaeModel& model, const std::filesystem::path& path);
VaeModel load_model(const std::filesystem::path& path);

} // namespace volwmc::vae
