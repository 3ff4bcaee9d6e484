#include "volwmc/weight_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "json_io.hpp"
#include "volwmc/bachelier.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/random.hpp"

namespace volwmc::wd {

WeightDecoderNet make_weight_decoder(std::size_t latent_dim, const wmc::PathSet& paths, std::uint64_t seed,
                                     const Architecture& arch)
{
    if (latent_dim == 0) throw ConfigError("latent dimension must be positive");
    std::vector<std::size_t> sizes{latent_dim};
    sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
    sizes.push_back(paths.n_paths());
    std::vector<nn::Activation> acts(arch.hidden.size(), nn::Activation::Elu);
    acts.push_back(nn::Activation::Softmax);
    WeightDecoderNet wd{nn::DenseNet::glorot(sizes, acts, mix64(seed) ^ 0x3), wmc::PathBinding::of(paths)};
    if (arch.zero_readout) wd.net.mutable_layers().back().weights.setZero();
    return wd;
}

void check_binding(const WeightDecoderNet& net, const wmc::PathSet& paths)
{
    if (!(net.binding == wmc::PathBinding::of(paths))) {
        throw ConfigError("weight decoder is bound to a different path set (seed " + std::to_string(net.binding.seed) +
                          ", " + std::to_string(net.binding.n_paths) + " paths)");
    }
}

wmc::WeightVector decode_weights(const WeightDecoderNet& net, const Eigen::VectorXd& z, const wmc::PathSet& paths)
{
    check_binding(net, paths);
    if (static_cast<std::size_t>(z.size()) != net.latent_dim()) throw ConfigError("latent dimension mismatch");
    if (!z.allFinite()) throw ConfigError("latent coordinates must be finite");
    return {net.net.forward(z)};
}

std::vector<PriceTargets> build_training_targets(const vae::VaeModel& model, const std::vector<Eigen::VectorXd>& latents,
                                                 const market::SurfaceGrid& grid)
{
    grid.validate();
    std::vector<PriceTargets> out;
    out.reserve(latents.size());
    const auto n = static_cast<Eigen::Index>(grid.size());
    for (const auto& z : latents) {
        PriceTargets t{z, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), std::vector<bool>(grid.size(), true)};
        for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
            for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
                const auto node = grid.node(i, j);
                const double k = grid.strike_offsets[j];
                const double T = grid.expiries[i];
                const double raw = vae::decode_point_raw(model, z, k, T);
                if (!(raw > 0.0) || !std::isfinite(raw)) {
                    t.valid[node] = false;
                    continue;
                }
                const double call = bachelier::price(0.0, k, vae::decode_point(model, z, k, T), T, bachelier::Flavor::Call);
                t.calls(static_cast<Eigen::Index>(node)) = call;
                t.puts(static_cast<Eigen::Index>(node)) = bachelier::put_from_call(k, call);
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

ParityMode parse_parity_mode(std::string_view name)
{
    if (name == "parity-constrained" || name == "constrained") return ParityMode::Constrained;
    if (name == "dual-payoff") return ParityMode::DualPayoff;
    throw ConfigError("unknown parity mode '" + std::string(name) + "' (expected parity-constrained or dual-payoff)");
}

const char* to_string(ParityMode mode)
{
    return mode == ParityMode::Constrained ? "parity-constrained" : "dual-payoff";
}

PricingContext PricingContext::make(const wmc::PathSet& paths, const market::SurfaceGrid& grid)
{
    PricingContext ctx;
    ctx.grid = grid;
    ctx.calls = wmc::vanilla_payoffs(paths, grid, {bachelier::Flavor::Call});
    ctx.puts = wmc::vanilla_payoffs(paths, grid, {bachelier::Flavor::Put});
    ctx.strike_offsets.resize(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
            ctx.strike_offsets(static_cast<Eigen::Index>(grid.node(i, j))) = grid.strike_offsets[j];
        }
    }
    return ctx;
}

WdLoss weight_decoder_loss(const WeightDecoderNet& net, const PricingContext& ctx,
                           const std::vector<const PriceTargets*>& batch, const WdConfig& config, nn::Gradients* grads)
{
    if (batch.empty()) throw ConfigError("weight decoder loss: empty batch");
    const auto b = static_cast<Eigen::Index>(batch.size());
    const auto d = static_cast<Eigen::Index>(net.latent_dim());
    const auto n_nodes = static_cast<Eigen::Index>(ctx.grid.size());
    if (static_cast<std::size_t>(ctx.calls.values.rows()) != net.binding.n_paths) {
        throw ConfigError("pricing context does not match the weight decoder's path set");
    }

    Eigen::MatrixXd z(d, b), tc(n_nodes, b), tp(n_nodes, b), mask(n_nodes, b);
    for (Eigen::Index s = 0; s < b; ++s) {
        const PriceTargets& t = *batch[static_cast<std::size_t>(s)];
        if (t.z.size() != d || t.calls.size() != n_nodes) throw ConfigError("target shape mismatch");
        z.col(s) = t.z;
        tc.col(s) = t.calls;
        tp.col(s) = t.puts;
        for (Eigen::Index k = 0; k < n_nodes; ++k) mask(k, s) = t.valid[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
    }
    const double n_valid = std::max(mask.sum(), 1.0);
    const double n_all = static_cast<double>(n_nodes * b);

    const nn::Tape tape = net.net.forward_tape(z);
    const Eigen::MatrixXd& p = tape.outputs.back();
    const Eigen::MatrixXd calls = ctx.calls.values.transpose() * p;
    const Eigen::MatrixXd dk = ctx.strike_offsets.replicate(1, b);
    const bool dual = config.parity_mode == ParityMode::DualPayoff;
    const Eigen::MatrixXd puts = dual ? Eigen::MatrixXd(ctx.puts.values.transpose() * p) : Eigen::MatrixXd(dk + calls);

    const Eigen::MatrixXd rc = (calls - tc).cwiseProduct(mask);
    const Eigen::MatrixXd rp = (puts - tp).cwiseProduct(mask);
    const Eigen::MatrixXd par = dual ? Eigen::MatrixXd(dk + calls - puts) : Eigen::MatrixXd::Zero(n_nodes, b);
    const double log_nu = std::log(static_cast<double>(p.rows()));
    const Eigen::MatrixXd log_p = p.array().log().matrix();

    WdLoss loss;
    loss.call_mse = rc.squaredNorm() / n_valid;
    loss.put_mse = rp.squaredNorm() / n_valid;
    loss.parity_mse = par.squaredNorm() / n_all;
    loss.entropy = (p.cwiseProduct(log_p).colwise().sum().array() + log_nu).mean();
    const double scale2 = config.price_scale * config.price_scale;
    const double weight_parity = dual ? config.parity_weight : 0.0;
    loss.total = scale2 * (loss.call_mse + loss.put_mse + weight_parity * loss.parity_mse + config.gamma * loss.entropy);

    if (grads == nullptr) return loss;
    Eigen::MatrixXd d_calls = (2.0 / n_valid) * rc;
    Eigen::MatrixXd d_p;
    if (dual) {
        d_calls += (2.0 * weight_parity / n_all) * par;
        const Eigen::MatrixXd d_puts = (2.0 / n_valid) * rp - (2.0 * weight_parity / n_all) * par;
        d_p = ctx.calls.values * d_calls + ctx.puts.values * d_puts;
    } else {
        d_calls += (2.0 / n_valid) * rp;
        d_p = ctx.calls.values * d_calls;
    }
    d_p += (config.gamma / static_cast<double>(b)) * (log_p.array() + 1.0).matrix();
    d_p *= scale2;
    net.net.backward(tape, d_p, *grads);
    return loss;
}

namespace {

double mean_loss(const WeightDecoderNet& net, const PricingContext& ctx, const std::vector<PriceTargets>& set,
                 const WdConfig& config)
{
    double sum = 0.0;
    for (std::size_t start = 0; start < set.size(); start += 64) {
        const std::size_t stop = std::min(set.size(), start + 64);
        std::vector<const PriceTargets*> batch;
        for (std::size_t k = start; k < stop; ++k) batch.push_back(&set[k]);
        sum += weight_decoder_loss(net, ctx, batch, config).total * static_cast<double>(stop - start);
    }
    return sum / static_cast<double>(set.size());
}

} // namespace

TrainedWeightDecoder train_weight_decoder(const wmc::PathSet& paths, const PricingContext& ctx,
                                          const std::vector<PriceTargets>& train,
                                          const std::vector<PriceTargets>& validation, const WdConfig& config)
{
    if (train.empty()) throw ConfigError("weight decoder training set is empty");
    if (config.batch == 0) throw ConfigError("batch size must be positive");
    const std::size_t d = static_cast<std::size_t>(train.front().z.size());
    TrainedWeightDecoder out{make_weight_decoder(d, paths, config.seed, config.architecture), {}};
    WeightDecoderNet& net = out.net;
    const std::vector<PriceTargets>& monitor = validation.empty() ? train : validation;

    Eigen::VectorXd params = net.net.parameters();
    Eigen::VectorXd best = params;
    nn::Adam adam(static_cast<std::size_t>(params.size()), config.learning_rate);
    nn::Gradients grads = net.net.zero_gradients();
    Rng rng = make_stream(config.seed, 0xd0);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    WdReport& rep = out.report;
    rep.best_validation_loss = std::numeric_limits<double>::infinity();
    std::size_t since_decay = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t stop = std::min(order.size(), start + config.batch);
            std::vector<const PriceTargets*> batch;
            for (std::size_t k = start; k < stop; ++k) batch.push_back(&train[order[k]]);
            grads.set_zero();
            const WdLoss l = weight_decoder_loss(net, ctx, batch, config, &grads);
            if (!std::isfinite(l.total)) throw NumericalError("weight decoder loss became non-finite");
            adam.step(params, grads.flat());
            net.net.set_parameters(params);
            epoch_sum += l.total;
            ++n_batches;
        }
        rep.epochs_run = epoch + 1;
        rep.epoch_loss.push_back(epoch_sum / static_cast<double>(n_batches));
        const double val = mean_loss(net, ctx, monitor, config);
        if (!std::isfinite(val)) throw NumericalError("weight decoder validation loss became non-finite");
        rep.validation_loss.push_back(val);
        if (val < rep.best_validation_loss) {
            rep.best_validation_loss = val;
            rep.best_epoch = epoch;
            rep.checkpoint_losses.push_back(val);
            best = params;
            since_decay = 0;
        } else if (epoch - rep.best_epoch >= config.patience) {
            break;
        } else if (config.lr_plateau > 0 && ++since_decay >= config.lr_plateau) {
            adam.set_learning_rate(std::max(0.5 * adam.learning_rate(), config.min_learning_rate));
            since_decay = 0;
        }
    }
    net.net.set_parameters(best);

    for (const auto& t : monitor) {
        const auto prices = model_prices(decode_weights(net, t.z, paths), ctx, config.parity_mode);
        rep.max_parity_residual = std::max(rep.max_parity_residual, max_parity_residual(prices, ctx));
    }
    return out;
}

ModelPrices model_prices(const wmc::WeightVector& weights, const PricingContext& ctx, ParityMode mode)
{
    ModelPrices mp;
    mp.calls = wmc::weighted_price(ctx.calls, weights);
    if (mode == ParityMode::DualPayoff) {
        mp.puts = wmc::weighted_price(ctx.puts, weights);
    } else {
        mp.puts.resize(mp.calls.size());
        for (Eigen::Index k = 0; k < mp.calls.size(); ++k) mp.puts(k) = bachelier::put_from_call(ctx.strike_offsets(k), mp.calls(k));
    }
    return mp;
}

double max_parity_residual(const ModelPrices& prices, const PricingContext& ctx)
{
    double worst = 0.0;
    for (Eigen::Index k = 0; k < prices.calls.size(); ++k) {
        worst = std::max(worst, std::abs(bachelier::parity_residual(ctx.strike_offsets(k), prices.calls(k), prices.puts(k))));
    }
    return worst;
}

Reconstruction reconstruct_surface(const wmc::WeightVector& weights, const PricingContext& ctx, ParityMode mode,
                                   market::Date date)
{
    Reconstruction r;
    r.prices = model_prices(weights, ctx, mode);
    const auto& g = ctx.grid;
    r.surface = {date, g, Eigen::MatrixXd(static_cast<Eigen::Index>(g.n_expiries()), static_cast<Eigen::Index>(g.n_strikes()))};
    r.failed.assign(g.size(), false);
    for (std::size_t i = 0; i < g.n_expiries(); ++i) {
        for (std::size_t j = 0; j < g.n_strikes(); ++j) {
            const auto node = g.node(i, j);
            double vol = vae::min_vol;
            try {
                vol = bachelier::implied_vol(r.prices.calls(static_cast<Eigen::Index>(node)), 0.0, g.strike_offsets[j],
                                             g.expiries[i], bachelier::Flavor::Call);
            } catch (const NumericalError&) {
                r.failed[node] = true;
                ++r.n_failed;
            }
            r.surface.vols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vol;
        }
    }
    return r;
}

std::vector<DensityEntry> latent_sweep_densities(const WeightDecoderNet& net, const wmc::PathSet& paths,
                                                 std::size_t dim, const std::vector<double>& values,
                                                 const Eigen::VectorXd& base, const std::vector<double>& expiries,
                                                 double lo, double hi, std::size_t bins)
{
    if (dim >= net.latent_dim()) throw ConfigError("sweep dimension out of range");
    std::vector<DensityEntry> out;
    for (double v : values) {
        Eigen::VectorXd z = base;
        z(static_cast<Eigen::Index>(dim)) = v;
        const auto w = decode_weights(net, z, paths);
        for (double t : expiries) out.push_back({v, t, wmc::risk_neutral_density(paths, w, t, lo, hi, bins)});
    }
    return out;
}

void save_weight_decoder(const WeightDecoderNet& net, const std::filesystem::path& path)
{
    using detail::json;
    const auto& b = net.binding;
    json doc{{"format", "volwmc-weight-decoder"},
             {"version", nn::checkpoint_version},
             {"paths",
              {{"seed", b.seed},
               {"n_paths", b.n_paths},
               {"steps", b.steps},
               {"horizon", b.horizon},
               {"sigma_prior", b.sigma_prior},
               {"kind", static_cast<std::uint32_t>(b.kind)}}},
             {"net", detail::dense_to_json(net.net)}};
    detail::write_json_file(doc, path);
}

WeightDecoderNet load_weight_decoder(const std::filesystem::path& path)
{
    using detail::required;
    const auto doc = detail::read_json_file(path);
    const std::string where = path.string();
    if (required<std::string>(doc, "format", where) != "volwmc-weight-decoder") {
        throw CorruptFileError(where + ": not a weight decoder checkpoint");
    }
    if (required<int>(doc, "version", where) != nn::checkpoint_version) {
        throw VersionError(where + ": unsupported weight decoder checkpoint version");
    }
    const auto& p = doc.at("paths");
    WeightDecoderNet net;
    net.binding.seed = required<std::uint64_t>(p, "seed", where);
    net.binding.n_paths = required<std::uint64_t>(p, "n_paths", where);
    net.binding.steps = required<std::uint64_t>(p, "steps", where);
    net.binding.horizon = required<double>(p, "horizon", where);
    net.binding.sigma_prior = required<double>(p, "sigma_prior", where);
    const auto kind = required<std::uint32_t>(p, "kind", where);
    if (kind > 1) throw CorruptFileError(where + ": unknown path kind");
    net.binding.kind = static_cast<wmc::PathKind>(kind);
    net.net = detail::dense_from_json(doc.at("net"));
    if (net.net.output_size() != net.binding.n_paths) throw CorruptFileError(where + ": readout width != path count");
    return net;
}

} // namespace volwmc::wd
