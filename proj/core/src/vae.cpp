#include "volwmc/vae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json_io.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/random.hpp"

namespace volwmc::vae {

namespace {

constexpr double floor_width = 1e-5;

double softplus(double x)
{
    return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x)
{
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double smooth_floor(double raw)
{
    return min_vol + floor_width * softplus((raw - min_vol) / floor_width);
}

double smooth_floor_slope(double raw)
{
    return sigmoid((raw - min_vol) / floor_width);
}

void check_grid(const VaeModel& model, const VolSurface& surface)
{
    if (surface.grid != model.grid) throw ConfigError("surface grid does not match the model grid");
}

void check_latent(const VaeModel& model, const Eigen::VectorXd& z)
{
    if (static_cast<std::size_t>(z.size()) != model.latent_dim) {
        throw ConfigError("latent vector has dimension " + std::to_string(z.size()) + ", model uses " +
                          std::to_string(model.latent_dim));
    }
}

Eigen::VectorXd encoder_input(const VaeModel& model, const VolSurface& surface)
{
    Eigen::VectorXd x = surface.flat();
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = model.scaler.vol_to_unit(x(i));
    return x;
}

Eigen::VectorXd decoder_input(const VaeModel& model, const Eigen::VectorXd& z, double k, double t)
{
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    Eigen::VectorXd x(d + 2);
    x.head(d) = z;
    x(d) = model.scaler.strike_to_unit(k);
    x(d + 1) = model.scaler.expiry_to_unit(t);
    return x;
}

// Decoder inputs for every node of `grid` at latent z, one column per node.
Eigen::MatrixXd decoder_grid_inputs(const VaeModel& model, const Eigen::VectorXd& z, const SurfaceGrid& grid)
{
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    Eigen::MatrixXd x(d + 2, static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
            const auto c = static_cast<Eigen::Index>(grid.node(i, j));
            x.col(c).head(d) = z;
            x(d, c) = model.scaler.strike_to_unit(grid.strike_offsets[j]);
            x(d + 1, c) = model.scaler.expiry_to_unit(grid.expiries[i]);
        }
    }
    return x;
}

std::vector<nn::Activation> hidden_activations(std::size_t hidden_layers)
{
    std::vector<nn::Activation> acts(hidden_layers, nn::Activation::Elu);
    acts.push_back(nn::Activation::Linear);
    return acts;
}

} // namespace

Scaler Scaler::fit(const MarketHistory& train)
{
    if (train.empty()) throw ConfigError("cannot fit scaler on an empty history");
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : train) {
        sum += s.vols.sum();
        sum_sq += s.vols.squaredNorm();
        n += static_cast<std::size_t>(s.vols.size());
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(sum_sq / static_cast<double>(n) - mean * mean, 0.0);
    const auto& grid = train[0].grid;
    Scaler sc;
    sc.vol_mean = mean;
    sc.vol_scale = std::max(std::sqrt(var), 1e-12);
    sc.strike_lo = grid.strike_offsets.front();
    sc.strike_hi = grid.strike_offsets.back();
    sc.expiry_lo = grid.expiries.front();
    sc.expiry_hi = grid.expiries.back();
    return sc;
}

VaeModel make_model(const VaeConfig& config, const Scaler& scaler, const SurfaceGrid& grid)
{
    if (config.latent_dim == 0) throw ConfigError("latent dimension must be positive");
    if (config.hidden_layers == 0 || config.hidden_units == 0) throw ConfigError("hidden layers must be non-empty");
    grid.validate();

    std::vector<std::size_t> enc_sizes{grid.size()};
    std::vector<std::size_t> dec_sizes{config.latent_dim + 2};
    for (std::size_t l = 0; l < config.hidden_layers; ++l) {
        enc_sizes.push_back(config.hidden_units);
        dec_sizes.push_back(config.hidden_units);
    }
    enc_sizes.push_back(2 * config.latent_dim);
    dec_sizes.push_back(1);

    VaeModel m;
    m.encoder = nn::DenseNet::glorot(enc_sizes, hidden_activations(config.hidden_layers), mix64(config.seed) ^ 0x1);
    m.decoder = nn::DenseNet::glorot(dec_sizes, hidden_activations(config.hidden_layers), mix64(config.seed) ^ 0x2);
    m.scaler = scaler;
    m.grid = grid;
    m.latent_dim = config.latent_dim;
    m.beta = config.beta;
    return m;
}

Encoding encode(const VaeModel& model, const VolSurface& surface)
{
    check_grid(model, surface);
    const Eigen::VectorXd out = model.encoder.forward(encoder_input(model, surface));
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    return {out.head(d), out.tail(d)};
}

Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, const Eigen::VectorXd& noise)
{
    if (mu.size() != logvar.size() || mu.size() != noise.size()) throw ConfigError("reparameterize: size mismatch");
    return mu + ((0.5 * logvar.array()).exp() * noise.array()).matrix();
}

double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar)
{
    if (mu.size() != logvar.size()) throw ConfigError("kl_divergence: size mismatch");
    return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

double decode_point_raw(const VaeModel& model, const Eigen::VectorXd& z, double strike_offset, double expiry)
{
    check_latent(model, z);
    const Eigen::VectorXd out = model.decoder.forward(decoder_input(model, z, strike_offset, expiry));
    return model.scaler.vol_from_unit(out(0));
}

double decode_point(const VaeModel& model, const Eigen::VectorXd& z, double strike_offset, double expiry)
{
    return smooth_floor(decode_point_raw(model, z, strike_offset, expiry));
}

VolSurface decode_surface(const VaeModel& model, const Eigen::VectorXd& z, const SurfaceGrid& grid, market::Date date)
{
    VolSurface s{date, grid, Eigen::MatrixXd(static_cast<Eigen::Index>(grid.n_expiries()),
                                             static_cast<Eigen::Index>(grid.n_strikes()))};
    for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
            s.vols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                decode_point(model, z, grid.strike_offsets[j], grid.expiries[i]);
        }
    }
    return s;
}

VolSurface decode_surface_raw(const VaeModel& model, const Eigen::VectorXd& z, const SurfaceGrid& grid,
                              market::Date date)
{
    VolSurface s{date, grid, Eigen::MatrixXd(static_cast<Eigen::Index>(grid.n_expiries()),
                                             static_cast<Eigen::Index>(grid.n_strikes()))};
    for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
            s.vols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                decode_point_raw(model, z, grid.strike_offsets[j], grid.expiries[i]);
        }
    }
    return s;
}

DecoderGreeks decoder_greeks(const VaeModel& model, const Eigen::VectorXd& z, double strike_offset, double expiry)
{
    check_latent(model, z);
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    const nn::Tape tape = model.decoder.forward_tape(decoder_input(model, z, strike_offset, expiry));
    nn::Gradients scratch = model.decoder.zero_gradients();
    const Eigen::MatrixXd dx = model.decoder.backward(tape, Eigen::MatrixXd::Ones(1, 1), scratch);

    const double raw = model.scaler.vol_from_unit(tape.outputs.back()(0, 0));
    const double chain = model.scaler.vol_scale * smooth_floor_slope(raw);
    DecoderGreeks g;
    g.vol = smooth_floor(raw);
    g.d_latent = chain * dx.col(0).head(d);
    g.d_strike_offset = chain * dx(d, 0) * 2.0 / (model.scaler.strike_hi - model.scaler.strike_lo);
    g.d_expiry = chain * dx(d + 1, 0) * 2.0 / (model.scaler.expiry_hi - model.scaler.expiry_lo);
    return g;
}

LossBreakdown vae_loss(const VaeModel& model, const std::vector<const VolSurface*>& batch,
                       const std::vector<Eigen::VectorXd>& noise, nn::Gradients* encoder_grads,
                       nn::Gradients* decoder_grads)
{
    if (batch.empty()) throw ConfigError("vae_loss: empty batch");
    if (noise.size() != batch.size()) throw ConfigError("vae_loss: one noise vector per surface required");
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    const auto b = static_cast<Eigen::Index>(batch.size());
    const auto n_nodes = static_cast<Eigen::Index>(model.grid.size());

    Eigen::MatrixXd enc_in(n_nodes, b);
    for (Eigen::Index s = 0; s < b; ++s) {
        check_grid(model, *batch[static_cast<std::size_t>(s)]);
        enc_in.col(s) = encoder_input(model, *batch[static_cast<std::size_t>(s)]);
    }
    const nn::Tape enc_tape = model.encoder.forward_tape(enc_in);
    const Eigen::MatrixXd& enc_out = enc_tape.outputs.back();
    const Eigen::MatrixXd mu = enc_out.topRows(d);
    const Eigen::MatrixXd logvar = enc_out.bottomRows(d);

    Eigen::MatrixXd eps(d, b);
    for (Eigen::Index s = 0; s < b; ++s) {
        if (noise[static_cast<std::size_t>(s)].size() != d) throw ConfigError("vae_loss: noise has wrong dimension");
        eps.col(s) = noise[static_cast<std::size_t>(s)];
    }
    const Eigen::MatrixXd std_dev = (0.5 * logvar.array()).exp().matrix();
    const Eigen::MatrixXd z = mu + (std_dev.array() * eps.array()).matrix();

    Eigen::MatrixXd dec_in(d + 2, b * n_nodes);
    Eigen::RowVectorXd target(b * n_nodes);
    const Eigen::MatrixXd node_inputs = decoder_grid_inputs(model, Eigen::VectorXd::Zero(d), model.grid);
    for (Eigen::Index s = 0; s < b; ++s) {
        auto block = dec_in.middleCols(s * n_nodes, n_nodes);
        block = node_inputs;
        block.topRows(d) = z.col(s).replicate(1, n_nodes);
        target.segment(s * n_nodes, n_nodes) = enc_in.col(s).transpose();
    }
    const nn::Tape dec_tape = model.decoder.forward_tape(dec_in);
    const Eigen::RowVectorXd residual = dec_tape.outputs.back().row(0) - target;
    const double n_points = static_cast<double>(b * n_nodes);

    LossBreakdown out;
    out.reconstruction = residual.squaredNorm() / n_points;
    double kl_sum = 0.0;
    for (Eigen::Index s = 0; s < b; ++s) kl_sum += kl_divergence(mu.col(s), logvar.col(s));
    out.kl = kl_sum / static_cast<double>(b);
    out.total = out.reconstruction + model.beta * out.kl;

    if (encoder_grads == nullptr && decoder_grads == nullptr) return out;

    nn::Gradients dec_scratch;
    nn::Gradients& dec_g = decoder_grads != nullptr ? *decoder_grads : dec_scratch;
    const Eigen::MatrixXd d_dec_in = model.decoder.backward(dec_tape, (2.0 / n_points) * residual, dec_g);

    if (encoder_grads == nullptr) return out;
    Eigen::MatrixXd dz(d, b);
    for (Eigen::Index s = 0; s < b; ++s) {
        dz.col(s) = d_dec_in.block(0, s * n_nodes, d, n_nodes).rowwise().sum();
    }
    const double kl_scale = model.beta / static_cast<double>(b);
    Eigen::MatrixXd d_enc_out(2 * d, b);
    d_enc_out.topRows(d) = dz + kl_scale * mu;
    d_enc_out.bottomRows(d) = (dz.array() * eps.array() * 0.5 * std_dev.array() +
                               kl_scale * 0.5 * (logvar.array().exp() - 1.0))
                                  .matrix();
    model.encoder.backward(enc_tape, d_enc_out, *encoder_grads);
    return out;
}

double reconstruction_mse(const VaeModel& model, const MarketHistory& history)
{
    if (history.empty()) throw ConfigError("reconstruction_mse: empty history");
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    Eigen::MatrixXd node_inputs = decoder_grid_inputs(model, Eigen::VectorXd::Zero(d), model.grid);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : history) {
        const Encoding e = encode(model, s);
        node_inputs.topRows(d) = e.mu.replicate(1, node_inputs.cols());
        const Eigen::RowVectorXd pred = model.decoder.forward_batch(node_inputs).row(0);
        const Eigen::VectorXd x = encoder_input(model, s);
        sum += (pred.transpose() - x).squaredNorm();
        n += static_cast<std::size_t>(x.size());
    }
    return sum / static_cast<double>(n);
}

TrainedVae train_vae(const MarketHistory& train, const MarketHistory& validation, const VaeConfig& config)
{
    if (train.empty()) throw ConfigError("train_vae: empty training set");
    if (config.batch_surfaces == 0) throw ConfigError("train_vae: batch size must be positive");
    const SurfaceGrid& grid = train[0].grid;
    VaeModel model = make_model(config, Scaler::fit(train), grid);
    const MarketHistory& monitor = validation.empty() ? train : validation;

    const auto n_enc = static_cast<Eigen::Index>(model.encoder.parameter_count());
    const auto n_dec = static_cast<Eigen::Index>(model.decoder.parameter_count());
    Eigen::VectorXd params(n_enc + n_dec);
    params << model.encoder.parameters(), model.decoder.parameters();
    nn::Adam adam(static_cast<std::size_t>(params.size()), config.learning_rate);

    Rng rng = make_stream(config.seed, 0x7ae);
    std::normal_distribution<double> normal;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainingReport report;
    Eigen::VectorXd best_params = params;
    report.best_validation_mse = std::numeric_limits<double>::infinity();
    nn::Gradients enc_g = model.encoder.zero_gradients();
    nn::Gradients dec_g = model.decoder.zero_gradients();
    Eigen::VectorXd grad(params.size());

    for (std::size_t epoch = 0; epoch < config.epochs && !report.diverged; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_surfaces) {
            const std::size_t stop = std::min(order.size(), start + config.batch_surfaces);
            std::vector<const VolSurface*> batch;
            std::vector<Eigen::VectorXd> noise;
            for (std::size_t k = start; k < stop; ++k) {
                batch.push_back(&train[order[k]]);
                Eigen::VectorXd e(static_cast<Eigen::Index>(config.latent_dim));
                for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = normal(rng);
                noise.push_back(std::move(e));
            }
            enc_g.set_zero();
            dec_g.set_zero();
            const LossBreakdown loss = vae_loss(model, batch, noise, &enc_g, &dec_g);
            if (!std::isfinite(loss.total)) {
                report.diverged = true;
                break;
            }
            grad << enc_g.flat(), dec_g.flat();
            adam.step(params, grad);
            model.encoder.set_parameters(params.head(n_enc));
            model.decoder.set_parameters(params.tail(n_dec));
            epoch_loss += loss.total;
            ++n_batches;
            ++report.batch_updates;
        }
        if (report.diverged) break;
        report.epochs_run = epoch + 1;
        report.final_train_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(n_batches, 1));
        report.epoch_loss.push_back(report.final_train_loss);

        const double val = reconstruction_mse(model, monitor);
        report.validation_mse.push_back(val);
        if (!std::isfinite(val)) {
            report.diverged = true;
            break;
        }
        if (val < report.best_validation_mse) {
            report.best_validation_mse = val;
            report.best_epoch = epoch;
            best_params = params;
        } else if (epoch - report.best_epoch >= config.patience) {
            break;
        }
    }

    if (!std::isfinite(report.best_validation_mse)) {
        throw NumericalError("VAE training diverged before producing a finite validation loss");
    }
    model.encoder.set_parameters(best_params.head(n_enc));
    model.decoder.set_parameters(best_params.tail(n_dec));
    report.final_train_mse = reconstruction_mse(model, train);
    return {std::move(model), std::move(report)};
}

std::vector<Observation> observations_from(const VolSurface& surface)
{
    std::vector<Observation> obs;
    obs.reserve(surface.grid.size());
    for (std::size_t i = 0; i < surface.grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < surface.grid.n_strikes(); ++j) {
            obs.push_back({surface.grid.strike_offsets[j], surface.grid.expiries[i], surface.at(i, j)});
        }
    }
    return obs;
}

namespace {

struct Fit {
    Eigen::VectorXd residual; // standardized units
    Eigen::MatrixXd jacobian; // n x d
};

Fit evaluate_fit(const VaeModel& model, const Eigen::VectorXd& z, const std::vector<Observation>& obs)
{
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    const auto n = static_cast<Eigen::Index>(obs.size());
    Eigen::MatrixXd x(d + 2, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.col(i) = decoder_input(model, z, obs[static_cast<std::size_t>(i)].strike_offset,
                                 obs[static_cast<std::size_t>(i)].expiry);
    }
    const nn::Tape tape = model.decoder.forward_tape(x);
    nn::Gradients scratch = model.decoder.zero_gradients();
    // Columns are independent samples, so a unit output gradient yields each
    // sample's own input gradient.
    const Eigen::MatrixXd dx = model.decoder.backward(tape, Eigen::MatrixXd::Ones(1, n), scratch);
    Fit f{Eigen::VectorXd(n), Eigen::MatrixXd(n, d)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const double raw = model.scaler.vol_from_unit(tape.outputs.back()(0, i));
        const double vol = smooth_floor(raw);
        f.residual(i) = (vol - obs[static_cast<std::size_t>(i)].vol) / model.scaler.vol_scale;
        f.jacobian.row(i) = smooth_floor_slope(raw) * dx.col(i).head(d).transpose();
    }
    return f;
}

} // namespace

CalibrationResult calibrate_latent(const VaeModel& model, const std::vector<Observation>& observations,
                                   const std::optional<Eigen::VectorXd>& init, const CalibrationOptions& options)
{
    if (observations.empty()) throw ConfigError("calibrate_latent: no observations");
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    Eigen::VectorXd z = init ? *init : Eigen::VectorXd::Zero(d);
    check_latent(model, z);
    z = z.cwiseMax(options.lower).cwiseMin(options.upper);

    Fit fit = evaluate_fit(model, z, observations);
    double cost = 0.5 * fit.residual.squaredNorm();
    double damping = 1e-3;
    CalibrationResult result;
    for (int it = 0; it < options.max_iterations; ++it) {
        result.iterations = it + 1;
        const Eigen::MatrixXd jtj = fit.jacobian.transpose() * fit.jacobian;
        const Eigen::VectorXd g = fit.jacobian.transpose() * fit.residual;
        // Projected gradient: ignore components pushing further into an active bound.
        Eigen::VectorXd pg = g;
        for (Eigen::Index k = 0; k < d; ++k) {
            if ((z(k) <= options.lower && g(k) > 0.0) || (z(k) >= options.upper && g(k) < 0.0)) pg(k) = 0.0;
        }
        if (pg.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, cost) || cost == 0.0) {
            result.converged = true;
            break;
        }
        // Coordinates held at an active bound are left out of the step.
        std::vector<Eigen::Index> free;
        for (Eigen::Index k = 0; k < d; ++k) {
            if (pg(k) != 0.0 || (z(k) > options.lower && z(k) < options.upper)) free.push_back(k);
        }
        const auto nf = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd jtj_free(nf, nf);
        Eigen::VectorXd g_free(nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            g_free(a) = g(free[static_cast<std::size_t>(a)]);
            for (Eigen::Index b = 0; b < nf; ++b) {
                jtj_free(a, b) = jtj(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
            }
        }
        bool improved = false;
        while (damping < 1e12) {
            Eigen::MatrixXd a = jtj_free;
            a.diagonal() += damping * (jtj_free.diagonal().array() + 1e-12).matrix();
            const Eigen::VectorXd step_free = a.ldlt().solve(-g_free);
            Eigen::VectorXd step = Eigen::VectorXd::Zero(d);
            for (Eigen::Index k = 0; k < nf; ++k) step(free[static_cast<std::size_t>(k)]) = step_free(k);
            const Eigen::VectorXd trial = (z + step).cwiseMax(options.lower).cwiseMin(options.upper);
            Fit trial_fit = evaluate_fit(model, trial, observations);
            const double trial_cost = 0.5 * trial_fit.residual.squaredNorm();
            if (trial_cost < cost) {
                const double decrease = cost - trial_cost;
                const double moved = (trial - z).lpNorm<Eigen::Infinity>();
                z = trial;
                fit = std::move(trial_fit);
                cost = trial_cost;
                damping = std::max(damping / 3.0, 1e-12);
                improved = true;
                if (decrease <= 1e-12 * cost || moved <= 1e-10 * (1.0 + z.lpNorm<Eigen::Infinity>())) {
                    result.converged = true;
                }
                break;
            }
            damping *= 4.0;
        }
        if (!improved) {
            result.converged = true; // no descent direction left at machine precision
            break;
        }
        if (result.converged) break;
    }

    result.z = z;
    result.residual_norm = std::sqrt(2.0 * cost) * model.scaler.vol_scale;
    result.rmse = result.residual_norm / std::sqrt(static_cast<double>(observations.size()));
    return result;
}

SyntheticSample sample_synthetic_surfaces(const VaeModel& model, std::size_t n, double variance, std::uint64_t seed)
{
    if (!(variance > 0.0)) throw ConfigError("synthetic sampling variance must be positive");
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    Rng rng = make_stream(seed, 0x5e);
    std::normal_distribution<double> normal(0.0, std::sqrt(variance));
    Eigen::MatrixXd inputs = decoder_grid_inputs(model, Eigen::VectorXd::Zero(d), model.grid);

    SyntheticSample out;
    out.surfaces.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        Eigen::VectorXd z(d);
        for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
        inputs.topRows(d) = z.replicate(1, inputs.cols());
        const Eigen::RowVectorXd raw = model.decoder.forward_batch(inputs).row(0);
        Eigen::VectorXd vols(raw.size());
        for (Eigen::Index i = 0; i < raw.size(); ++i) vols(i) = model.scaler.vol_from_unit(raw(i));
        if (!vols.allFinite() || (vols.array() <= 0.0).any()) {
            ++out.discarded;
            continue;
        }
        out.surfaces.push_back({z, VolSurface::from_flat({}, model.grid, vols)});
    }
    return out;
}

FinetuneResult finetune_encoder(const VaeModel& model, const std::vector<SyntheticSurface>& synthetic,
                                const FinetuneConfig& config)
{
    if (synthetic.empty()) throw ConfigError("finetune_encoder: empty synthetic set");
    const auto d = static_cast<Eigen::Index>(model.latent_dim);
    const std::size_t n = synthetic.size();
    std::size_t n_hold = static_cast<std::size_t>(std::ceil(config.holdout_fraction * static_cast<double>(n)));
    if (n_hold >= n) n_hold = 0;
    const std::size_t n_train = n - n_hold;

    auto inputs_of = [&](std::size_t first, std::size_t count) {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(model.grid.size()), static_cast<Eigen::Index>(count));
        Eigen::MatrixXd z(d, static_cast<Eigen::Index>(count));
        for (std::size_t k = 0; k < count; ++k) {
            x.col(static_cast<Eigen::Index>(k)) = encoder_input(model, synthetic[first + k].surface);
            z.col(static_cast<Eigen::Index>(k)) = synthetic[first + k].z;
        }
        return std::pair{std::move(x), std::move(z)};
    };
    const auto [train_x, train_z] = inputs_of(0, n_train);
    const auto [hold_x, hold_z] = n_hold > 0 ? inputs_of(n_train, n_hold) : inputs_of(0, n_train);

    FinetuneResult result{model, {}};
    nn::DenseNet& enc = result.model.encoder;
    auto latent_mse = [&](const nn::DenseNet& net) {
        const Eigen::MatrixXd out = net.forward_batch(hold_x);
        return (out.topRows(d) - hold_z).squaredNorm() / static_cast<double>(hold_z.size());
    };

    Eigen::VectorXd params = enc.parameters();
    nn::Adam adam(static_cast<std::size_t>(params.size()), config.learning_rate);
    Rng rng = make_stream(config.seed, 0xf1);
    std::vector<Eigen::Index> order(n_train);
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    result.report.train_size = n_train;
    result.report.holdout_size = n_hold;
    result.report.initial_holdout_latent_mse = latent_mse(enc);
    double best = result.report.initial_holdout_latent_mse;
    Eigen::VectorXd best_params = params;
    std::size_t best_epoch = 0;
    nn::Gradients grads = enc.zero_gradients();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n_train; start += config.batch) {
            const std::size_t stop = std::min(n_train, start + config.batch);
            const auto b = static_cast<Eigen::Index>(stop - start);
            Eigen::MatrixXd x(train_x.rows(), b), z(d, b);
            for (Eigen::Index k = 0; k < b; ++k) {
                x.col(k) = train_x.col(order[start + static_cast<std::size_t>(k)]);
                z.col(k) = train_z.col(order[start + static_cast<std::size_t>(k)]);
            }
            const nn::Tape tape = enc.forward_tape(x);
            const Eigen::MatrixXd& out = tape.outputs.back();
            const double scale = 2.0 / static_cast<double>(d * b);
            Eigen::MatrixXd d_out(2 * d, b);
            d_out.topRows(d) = scale * (out.topRows(d) - z);
            d_out.bottomRows(d) = scale * config.logvar_weight * (out.bottomRows(d).array() - config.logvar_floor).matrix();
            grads.set_zero();
            enc.backward(tape, d_out, grads);
            adam.step(params, grads.flat());
            enc.set_parameters(params);
        }
        result.report.epochs_run = epoch + 1;
        const double hold = latent_mse(enc);
        if (!std::isfinite(hold)) throw NumericalError("encoder fine-tuning diverged");
        if (hold < best) {
            best = hold;
            best_params = params;
            best_epoch = epoch;
        } else if (epoch - best_epoch >= config.patience) {
            break;
        }
    }
    enc.set_parameters(best_params);
    result.report.best_holdout_latent_mse = best;
    return result;
}

std::vector<double> default_sweep_values()
{
    return {-2.0, -1.0, 0.0, 1.0, 2.0};
}

std::vector<SweepEntry> latent_sweep(const VaeModel& model, std::size_t dim, const std::vector<double>& values,
                                     const std::optional<Eigen::VectorXd>& fixed, const std::optional<SurfaceGrid>& grid)
{
    if (dim >= model.latent_dim) {
        throw ConfigError("sweep dimension " + std::to_string(dim) + " out of range for latent dim " +
                          std::to_string(model.latent_dim));
    }
    const Eigen::VectorXd origin = fixed ? *fixed : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.latent_dim));
    check_latent(model, origin);
    const SurfaceGrid& g = grid ? *grid : model.grid;
    const VolSurface base = decode_surface(model, origin, g);
    std::vector<SweepEntry> out;
    out.reserve(values.size());
    for (double v : values) {
        Eigen::VectorXd z = origin;
        z(static_cast<Eigen::Index>(dim)) = v;
        VolSurface s = decode_surface(model, z, g);
        Eigen::MatrixXd diff = s.vols - base.vols;
        out.push_back({v, std::move(s), std::move(diff)});
    }
    return out;
}

void save_model(const VaeModel& model, const std::filesystem::path& path)
{
    using detail::json;
    json doc{{"format", "volwmc-vae"},
             {"version", nn::checkpoint_version},
             {"latent_dim", model.latent_dim},
             {"beta", model.beta},
             {"scaler",
              {{"vol_mean", model.scaler.vol_mean},
               {"vol_scale", model.scaler.vol_scale},
               {"strike_lo", model.scaler.strike_lo},
               {"strike_hi", model.scaler.strike_hi},
               {"expiry_lo", model.scaler.expiry_lo},
               {"expiry_hi", model.scaler.expiry_hi}}},
             {"grid", {{"strike_offsets", model.grid.strike_offsets}, {"expiries", model.grid.expiries}}},
             {"encoder", detail::dense_to_json(model.encoder)},
             {"decoder", detail::dense_to_json(model.decoder)}};
    detail::write_json_file(doc, path);
}

VaeModel load_model(const std::filesystem::path& path)
{
    using detail::required;
    const auto doc = detail::read_json_file(path);
    const std::string where = path.string();
    if (required<std::string>(doc, "format", where) != "volwmc-vae") {
        throw CorruptFileError(where + ": not a VAE checkpoint");
    }
    if (required<int>(doc, "version", where) != nn::checkpoint_version) {
        throw VersionError(where + ": unsupported VAE checkpoint version");
    }
    VaeModel m;
    m.latent_dim = required<std::size_t>(doc, "latent_dim", where);
    m.beta = required<double>(doc, "beta", where);
    const auto& sc = doc.at("scaler");
    m.scaler.vol_mean = required<double>(sc, "vol_mean", where);
    m.scaler.vol_scale = required<double>(sc, "vol_scale", where);
    m.scaler.strike_lo = required<double>(sc, "strike_lo", where);
    m.scaler.strike_hi = required<double>(sc, "strike_hi", where);
    m.scaler.expiry_lo = required<double>(sc, "expiry_lo", where);
    m.scaler.expiry_hi = required<double>(sc, "expiry_hi", where);
    const auto& g = doc.at("grid");
    m.grid.strike_offsets = required<std::vector<double>>(g, "strike_offsets", where);
    m.grid.expiries = required<std::vector<double>>(g, "expiries", where);
    m.encoder = detail::dense_from_json(doc.at("encoder"));
    m.decoder = detail::dense_from_json(doc.at("decoder"));
    if (m.encoder.input_size() != m.grid.size() || m.encoder.output_size() != 2 * m.latent_dim ||
        m.decoder.input_size() != m.latent_dim + 2 || m.decoder.output_size() != 1) {
        throw CorruptFileError(where + ": network shapes do not match latent dimension and grid");
    }
    return m;
}

} // namespace volwmc::vae
