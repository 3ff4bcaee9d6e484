#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "volwmc/bachelier.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/exotics.hpp"
#include "volwmc/market.hpp"
#include "volwmc/path_io.hpp"
#include "volwmc/pipeline.hpp"
#include "volwmc/random.hpp"
#include "volwmc/reports.hpp"
#include "volwmc/sabr.hpp"
#include "volwmc/vae.hpp"
#include "volwmc/weight_decoder.hpp"
#include "volwmc/wmc.hpp"

namespace fs = std::filesystem;
using namespace volwmc;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, numerical_error = 3 };

// Numeric rows of a CSV file with a header line; `columns` values per row.
std::vector<std::vector<std::string>> read_csv(const fs::path& file, std::size_t columns)
{
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open " + file.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (cells.size() != columns) {
            throw ConfigError(file.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                              " columns");
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

double to_double(const std::string& s, const fs::path& file)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(file.string() + ": not a number '" + s + "'");
    }
}

Eigen::VectorXd parse_vector(const std::string& text)
{
    std::vector<double> v;
    std::stringstream ss(text);
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(to_double(cell, "--z"));
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Writes to `path`, or stdout when it is empty.
void write_output(const std::string& path, const std::function<void(std::ostream&)>& body)
{
    std::ostringstream buf;
    buf << std::setprecision(12);
    body(buf);
    if (path.empty()) {
        std::cout << buf.str();
        return;
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << buf.str();
}

wmc::WeightVector load_bound_weights(const std::string& file, const wmc::PathSet& paths)
{
    if (file.empty()) return wmc::WeightVector::uniform(paths.n_paths());
    wmc::PathBinding binding;
    auto w = wmc::load_weights(file, &binding);
    if (!(binding == wmc::PathBinding::of(paths))) throw ConfigError(file + " was saved for a different path set");
    return w;
}

struct Cli {
    CLI::App app{"Volatility surface VAE and weighted Monte Carlo toolkit"};
    std::function<void()> action;

    // Registers a subcommand whose callback becomes the action to run.
    CLI::App* command(CLI::App* parent, const std::string& name, const std::string& help, std::function<void()> fn)
    {
        auto* c = parent->add_subcommand(name, help);
        c->callback([this, fn] { action = fn; });
        return c;
    }
};

void add_data(Cli& cli)
{
    auto* data = cli.app.add_subcommand("data", "Surface histories");
    data->require_subcommand(1);

    static std::size_t days = 1000;
    static std::uint64_t seed = 1;
    static std::string out;
    auto* synth = cli.command(data, "synth", "Write a synthetic history CSV", [] {
        market::save_history(market::synthetic_history(days, seed), out);
    });
    synth->add_option("--days", days, "Number of dates");
    synth->add_option("--seed", seed, "Random seed");
    synth->add_option("--out", out, "Output CSV")->required();

    static std::string in;
    static std::size_t window = 5;
    static std::string stats_out;
    auto* stats = cli.command(data, "stats", "Sliding-window dispersion per date", [] {
        const auto h = market::load_history(in);
        const auto rel = market::sliding_window_std(h, window, market::DispersionMode::Relative);
        const auto abs = market::sliding_window_std(h, window, market::DispersionMode::Absolute);
        write_output(stats_out, [&](std::ostream& o) {
            o << "date,std_relative,std_absolute\n";
            for (std::size_t i = 0; i < rel.size(); ++i) {
                o << market::format_date(h[i + window - 1].date) << ',' << rel[i] << ',' << abs[i] << '\n';
            }
        });
    });
    stats->add_option("--in", in, "History CSV")->required()->check(CLI::ExistingFile);
    stats->add_option("--window", window, "Window length");
    stats->add_option("--out", stats_out, "Output CSV (stdout by default)");
}

void add_price(Cli& cli)
{
    auto* price = cli.app.add_subcommand("price", "Bachelier pricing");
    price->require_subcommand(1);
    static double s0 = 0.0, k = 0.0, sigma = 0.0, t = 1.0, annuity = 1.0, premium = 0.0;
    static std::string flavor = "call";
    auto* vanilla = cli.command(price, "vanilla", "Option premium", [] {
        std::cout << std::setprecision(17)
                  << bachelier::price(s0, k, sigma, t, bachelier::parse_flavor(flavor.c_str()), annuity) << '\n';
    });
    auto* iv = cli.command(price, "implied-vol", "Normal implied vol of a premium", [] {
        std::cout << std::setprecision(17)
                  << bachelier::implied_vol(premium, s0, k, t, bachelier::parse_flavor(flavor.c_str()), annuity)
                  << '\n';
    });
    for (auto* c : {vanilla, iv}) {
        c->add_option("--s0", s0, "Forward rate");
        c->add_option("--k", k, "Strike rate")->required();
        c->add_option("--t", t, "Expiry in years");
        c->add_option("--annuity", annuity, "Annuity factor");
        c->add_option("--flavor", flavor, "call/payer or put/receiver");
    }
    vanilla->add_option("--sigma", sigma, "Normal vol")->required();
    iv->add_option("--price", premium, "Option premium")->required();
}

void add_vae(Cli& cli)
{
    auto* vae_cmd = cli.app.add_subcommand("vae", "Variational autoencoder");
    vae_cmd->require_subcommand(1);

    static std::string data, out;
    static vae::VaeConfig config;
    static double train_fraction = 0.7;
    static std::size_t n_validation = 100;
    auto* train = cli.command(vae_cmd, "train", "Train on the training block of a history", [] {
        const auto h = market::load_history(data);
        const auto split = market::chronological_split(h, train_fraction, n_validation, volwmc::stream_seed(config.seed, 1));
        const auto trained = vae::train_vae(split.train, split.validation, config);
        vae::save_model(trained.model, out);
        std::cout << "epochs " << trained.report.epochs_run << " best_epoch " << trained.report.best_epoch
                  << " train_mse " << trained.report.final_train_mse << '\n';
    });
    train->add_option("--data", data, "History CSV")->required()->check(CLI::ExistingFile);
    train->add_option("--latent-dim", config.latent_dim, "Latent dimension");
    train->add_option("--beta", config.beta, "KL weight");
    train->add_option("--lr", config.learning_rate, "Learning rate");
    train->add_option("--epochs", config.epochs, "Maximum epochs");
    train->add_option("--patience", config.patience, "Early-stopping patience");
    train->add_option("--seed", config.seed, "Random seed");
    train->add_option("--train-fraction", train_fraction, "Chronological train share");
    train->add_option("--n-validation", n_validation, "Validation dates drawn from the train block");
    train->add_option("--out", out, "Output checkpoint")->required();

    static std::string ckpt, obs, cal_out;
    auto* calibrate = cli.command(vae_cmd, "calibrate", "Fit latent coordinates to observed vols", [] {
        const auto model = vae::load_model(ckpt);
        std::vector<vae::Observation> observations;
        for (const auto& r : read_csv(obs, 3)) {
            observations.push_back({to_double(r[0], obs), to_double(r[1], obs), to_double(r[2], obs)});
        }
        const auto fit = vae::calibrate_latent(model, observations);
        write_output(cal_out, [&](std::ostream& o) {
            o << "dim,z\n";
            for (Eigen::Index i = 0; i < fit.z.size(); ++i) o << i << ',' << fit.z(i) << '\n';
        });
        std::cerr << "rmse " << fit.rmse << " converged " << fit.converged << '\n';
    });
    calibrate->add_option("--ckpt", ckpt, "VAE checkpoint")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--obs", obs, "CSV strike_offset,expiry,vol")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--out", cal_out, "Output CSV (stdout by default)");

    static std::size_t dim = 0;
    static std::string sweep_out;
    auto* sweep = cli.command(vae_cmd, "sweep", "Decoded surfaces along one latent axis", [] {
        const auto model = vae::load_model(ckpt);
        const auto entries = vae::latent_sweep(model, dim, vae::default_sweep_values());
        write_output(sweep_out, [&](std::ostream& o) {
            o << "dim,value,dK,T,vol,diff_vs_origin\n";
            for (const auto& e : entries) {
                const auto& g = e.surface.grid;
                for (std::size_t i = 0; i < g.n_expiries(); ++i) {
                    for (std::size_t j = 0; j < g.n_strikes(); ++j) {
                        o << dim << ',' << e.value << ',' << g.strike_offsets[j] << ',' << g.expiries[i] << ','
                          << e.surface.at(i, j) << ','
                          << e.diff_vs_origin(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
                    }
                }
            }
        });
    });
    sweep->add_option("--ckpt", ckpt, "VAE checkpoint")->required()->check(CLI::ExistingFile);
    sweep->add_option("--dim", dim, "Latent coordinate");
    sweep->add_option("--out", sweep_out, "Output CSV (stdout by default)");

    static std::size_t n = 10000;
    static double variance = 4.0;
    static std::uint64_t synth_seed = 1;
    static std::string synth_out;
    auto* synth = cli.command(vae_cmd, "synth", "Sample latent points and decode surfaces", [] {
        const auto model = vae::load_model(ckpt);
        const auto sample = vae::sample_synthetic_surfaces(model, n, variance, synth_seed);
        write_output(synth_out, [&](std::ostream& o) {
            o << "sample";
            for (std::size_t i = 0; i < model.latent_dim; ++i) o << ",z" << i;
            o << ",dK,T,vol\n";
            for (std::size_t s = 0; s < sample.surfaces.size(); ++s) {
                const auto& e = sample.surfaces[s];
                std::ostringstream prefix;
                prefix << std::setprecision(12) << s;
                for (Eigen::Index i = 0; i < e.z.size(); ++i) prefix << ',' << e.z(i);
                const auto& g = e.surface.grid;
                for (std::size_t i = 0; i < g.n_expiries(); ++i) {
                    for (std::size_t j = 0; j < g.n_strikes(); ++j) {
                        o << prefix.str() << ',' << g.strike_offsets[j] << ',' << g.expiries[i] << ','
                          << e.surface.at(i, j) << '\n';
                    }
                }
            }
        });
        std::cerr << "kept " << sample.surfaces.size() << " discarded " << sample.discarded << '\n';
    });
    synth->add_option("--ckpt", ckpt, "VAE checkpoint")->required()->check(CLI::ExistingFile);
    synth->add_option("--n", n, "Number of samples");
    synth->add_option("--variance", variance, "Sampling variance");
    synth->add_option("--seed", synth_seed, "Random seed");
    synth->add_option("--out", synth_out, "Output CSV (stdout by default)");
}

void add_wmc(Cli& cli)
{
    auto* wmc_cmd = cli.app.add_subcommand("wmc", "Weighted Monte Carlo");
    wmc_cmd->require_subcommand(1);

    static std::size_t nu = 4000, steps = 500;
    static double horizon = 5.0, sigma_prior = 0.005;
    static std::uint64_t seed = 1;
    static std::string out;
    auto* paths = cli.command(wmc_cmd, "paths", "Simulate Brownian prior paths", [] {
        wmc::save_paths(wmc::generate_brownian_paths(nu, horizon, steps, sigma_prior, seed), out);
    });
    paths->add_option("--nu", nu, "Number of paths");
    paths->add_option("--steps", steps, "Time steps");
    paths->add_option("--horizon", horizon, "Horizon in years");
    paths->add_option("--sigma-prior", sigma_prior, "Normal vol of the prior");
    paths->add_option("--seed", seed, "Random seed");
    paths->add_option("--out", out, "Output path file")->required();

    static std::string paths_file, targets, weights_out;
    auto* solve = cli.command(wmc_cmd, "solve", "Minimum-entropy weights matching option prices", [] {
        const auto set = wmc::load_paths(paths_file);
        const auto rows = read_csv(targets, 4);
        wmc::PayoffMatrix g;
        g.values.resize(static_cast<Eigen::Index>(set.n_paths()), static_cast<Eigen::Index>(rows.size()));
        Eigen::VectorXd c(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto flavor = bachelier::parse_flavor(rows[j][0].c_str());
            const double k = to_double(rows[j][1], targets);
            const double t = to_double(rows[j][2], targets);
            c(static_cast<Eigen::Index>(j)) = to_double(rows[j][3], targets);
            const auto col = set.values.col(static_cast<Eigen::Index>(set.time_index(t)));
            for (Eigen::Index i = 0; i < col.size(); ++i) {
                g.values(i, static_cast<Eigen::Index>(j)) =
                    flavor == bachelier::Flavor::Call ? std::max(col(i) - k, 0.0) : std::max(k - col(i), 0.0);
            }
            g.columns.push_back({flavor == bachelier::Flavor::Call ? wmc::ColumnKind::Call : wmc::ColumnKind::Put, k, t});
        }
        const auto result = wmc::solve_lagrange_dual(g, c);
        if (result.infeasible) throw NumericalError("a target price lies outside the range of its payoffs");
        if (!result.converged) throw NumericalError("dual solver did not converge");
        wmc::save_weights(result.weights, wmc::PathBinding::of(set), weights_out);
        std::cout << "iterations " << result.iterations << " max_residual " << result.max_residual << " entropy "
                  << result.entropy << '\n';
    });
    solve->add_option("--paths", paths_file, "Path file")->required()->check(CLI::ExistingFile);
    solve->add_option("--targets", targets, "CSV flavor,strike,expiry,price")->required()->check(CLI::ExistingFile);
    solve->add_option("--out", weights_out, "Output weight file")->required();

    static std::string weights_in, mart_out;
    auto* mart = cli.command(wmc_cmd, "mart-loss", "Martingale window residuals", [] {
        const auto set = wmc::load_paths(paths_file);
        const auto w = load_bound_weights(weights_in, set);
        const auto windows = wmc::martingale_windows(market::default_grid().expiries);
        const auto report = wmc::martingale_loss(set, w, windows);
        write_output(mart_out, [&](std::ostream& o) {
            o << "t1,t2,center,mass,residual\n";
            for (const auto& r : report.windows) {
                o << r.window.t1 << ',' << r.window.t2 << ',' << r.window.center << ',' << r.mass << ',';
                if (r.evaluated) o << r.residual;
                o << '\n';
            }
        });
        std::cerr << "relative_loss " << report.relative_loss << " skipped " << report.skipped << '\n';
    });
    mart->add_option("--paths", paths_file, "Path file")->required()->check(CLI::ExistingFile);
    mart->add_option("--weights", weights_in, "Weight file (uniform when omitted)");
    mart->add_option("--out", mart_out, "Output CSV (stdout by default)");
}

void add_wd(Cli& cli)
{
    auto* wd_cmd = cli.app.add_subcommand("wd", "Weight decoder");
    wd_cmd->require_subcommand(1);

    static std::string vae_file, paths_file, data, out;
    static wd::WdConfig config;
    static std::string parity = "parity-constrained";
    auto* train = cli.command(wd_cmd, "train", "Train on latents calibrated to every date of a history", [] {
        config.parity_mode = wd::parse_parity_mode(parity);
        const auto model = vae::load_model(vae_file);
        const auto set = wmc::load_paths(paths_file);
        const auto h = market::load_history(data);
        std::vector<Eigen::VectorXd> latents;
        for (const auto& s : h) {
            latents.push_back(vae::calibrate_latent(model, vae::observations_from(s), vae::encode(model, s).mu).z);
        }
        const auto ctx = wd::PricingContext::make(set, model.grid);
        const auto targets = wd::build_training_targets(model, latents, model.grid);
        const auto trained = wd::train_weight_decoder(set, ctx, targets, targets, config);
        wd::save_weight_decoder(trained.net, out);
        std::cout << "epochs " << trained.report.epochs_run << " best_epoch " << trained.report.best_epoch
                  << " validation_loss " << trained.report.best_validation_loss << '\n';
    });
    train->add_option("--vae", vae_file, "VAE checkpoint")->required()->check(CLI::ExistingFile);
    train->add_option("--paths", paths_file, "Path file")->required()->check(CLI::ExistingFile);
    train->add_option("--data", data, "History CSV")->required()->check(CLI::ExistingFile);
    train->add_option("--gamma", config.gamma, "Entropy weight");
    train->add_option("--lr", config.learning_rate, "Learning rate");
    train->add_option("--epochs", config.epochs, "Maximum epochs");
    train->add_option("--patience", config.patience, "Early-stopping patience");
    train->add_option("--parity-mode", parity, "parity-constrained or dual-payoff");
    train->add_option("--seed", config.seed, "Random seed");
    train->add_option("--out", out, "Output checkpoint")->required();

    static std::string ckpt, z_text, price_out;
    auto* price = cli.command(wd_cmd, "price", "Weighted prices and implied vols at a latent point", [] {
        config.parity_mode = wd::parse_parity_mode(parity);
        const auto net = wd::load_weight_decoder(ckpt);
        const auto set = wmc::load_paths(paths_file);
        const auto z = parse_vector(z_text);
        if (static_cast<std::size_t>(z.size()) != net.latent_dim()) throw ConfigError("--z has the wrong dimension");
        const auto ctx = wd::PricingContext::make(set, market::default_grid());
        const auto rec = wd::reconstruct_surface(wd::decode_weights(net, z, set), ctx, config.parity_mode);
        write_output(price_out, [&](std::ostream& o) {
            o << "dK,T,call,put,vol,failed\n";
            const auto& g = ctx.grid;
            for (std::size_t i = 0; i < g.n_expiries(); ++i) {
                for (std::size_t j = 0; j < g.n_strikes(); ++j) {
                    const auto n = static_cast<Eigen::Index>(g.node(i, j));
                    o << g.strike_offsets[j] << ',' << g.expiries[i] << ',' << rec.prices.calls(n) << ','
                      << rec.prices.puts(n) << ',' << rec.surface.at(i, j) << ',' << rec.failed[g.node(i, j)] << '\n';
                }
            }
        });
    });
    price->add_option("--ckpt", ckpt, "Weight decoder checkpoint")->required()->check(CLI::ExistingFile);
    price->add_option("--paths", paths_file, "Path file the decoder was trained on")->required()->check(CLI::ExistingFile);
    price->add_option("--z", z_text, "Latent point, comma separated")->required();
    price->add_option("--parity-mode", parity, "parity-constrained or dual-payoff");
    price->add_option("--out", price_out, "Output CSV (stdout by default)");
}

void add_sabr(Cli& cli)
{
    auto* sabr_cmd = cli.app.add_subcommand("sabr", "SABR benchmark");
    sabr_cmd->require_subcommand(1);

    static std::string smile;
    static double t = 5.0;
    auto* fit = cli.command(sabr_cmd, "fit", "Fit alpha, rho, volvol to a smile", [] {
        std::vector<sabr::SmilePoint> points;
        for (const auto& r : read_csv(smile, 2)) points.push_back({to_double(r[0], smile), to_double(r[1], smile)});
        const auto f = sabr::fit_smile(points, t);
        std::cout << std::setprecision(12) << "alpha,rho,volvol,rmse\n"
                  << f.params.alpha << ',' << f.params.rho << ',' << f.params.volvol << ',' << f.rmse << '\n';
    });
    fit->add_option("--smile", smile, "CSV strike_offset,vol")->required()->check(CLI::ExistingFile);
    fit->add_option("--t", t, "Expiry in years");

    static sabr::SabrParams p;
    static std::size_t n = 4000, steps = 500;
    static double horizon = 5.0;
    static std::uint64_t seed = 1;
    static std::string out;
    auto* sim = cli.command(sabr_cmd, "simulate", "Simulate SABR paths", [] {
        wmc::save_paths(sabr::simulate_paths(p, n, horizon, steps, seed), out);
    });
    sim->add_option("--alpha", p.alpha, "Initial vol")->required();
    sim->add_option("--rho", p.rho, "Correlation")->required();
    sim->add_option("--nu", p.volvol, "Vol of vol")->required();
    sim->add_option("--paths", n, "Number of paths");
    sim->add_option("--steps", steps, "Time steps");
    sim->add_option("--horizon", horizon, "Horizon in years");
    sim->add_option("--seed", seed, "Random seed");
    sim->add_option("--out", out, "Output path file")->required();
}

void add_exotic(Cli& cli)
{
    auto* exotic = cli.app.add_subcommand("exotic", "Path-dependent pricing");
    exotic->require_subcommand(1);
    static std::string paths_file, weights, out;
    static double k = 0.0, from = 0.01, to = 0.1, step = 0.005, t = 5.0;
    auto* sweep = cli.command(exotic, "barrier-sweep", "Up-and-out call prices over a barrier grid", [] {
        const auto set = wmc::load_paths(paths_file);
        const auto w = load_bound_weights(weights, set);
        const auto curve = exotics::barrier_sweep(set, w, k, exotics::barrier_grid(from, to, step), t);
        write_output(out, [&](std::ostream& o) {
            o << "barrier,price,std_error\n";
            for (const auto& pt : curve) o << pt.barrier << ',' << pt.price << ',' << pt.std_error << '\n';
        });
    });
    sweep->add_option("--paths", paths_file, "Path file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--weights", weights, "Weight file (uniform when omitted)");
    sweep->add_option("--k", k, "Strike");
    sweep->add_option("--b-from", from, "First barrier");
    sweep->add_option("--b-to", to, "Last barrier");
    sweep->add_option("--b-step", step, "Barrier step");
    sweep->add_option("--t", t, "Expiry in years");
    sweep->add_option("--out", out, "Output CSV (stdout by default)");
}

void add_run(Cli& cli)
{
    static std::string config, out;
    static bool resume = false, verbose = false;
    auto* run = cli.command(&cli.app, "run", "Run the full pipeline into a run directory", [] {
        pipeline::run_pipeline(pipeline::load_config(config), out, {resume, verbose});
        std::cout << (fs::path(out) / pipeline::artifact::manifest).string() << '\n';
    });
    run->add_option("--config", config, "Config JSON file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Run directory")->required();
    run->add_flag("--resume", resume, "Reuse finished stage artifacts");
    run->add_flag("-v,--verbose", verbose, "Print stage progress");

    static std::string run_dir, which, output;
    auto* report = cli.command(&cli.app, "report", "Emit figure data from a finished run", [] {
        if (which != "all") {
            if (output.empty()) {
                reports::emit_report(run_dir, which, std::cout);
            } else {
                reports::emit_report(run_dir, which, fs::path(output));
            }
            return;
        }
        const fs::path dir = output.empty() ? fs::path(run_dir) / "reports" : fs::path(output);
        fs::create_directories(dir);
        for (const auto& tag : reports::report_tags()) {
            reports::emit_report(run_dir, tag, dir / (tag + ".csv"));
            std::cout << (dir / (tag + ".csv")).string() << '\n';
        }
    });
    report->add_option("--run", run_dir, "Run directory")->required();
    report->add_option("--which", which, "Figure tag (fig2..fig14) or 'all'")->required();
    report->add_option("--out", output, "Output file (directory for 'all'); stdout by default");
}

} // namespace

int main(int argc, char** argv)
{
    Cli cli;
    cli.app.require_subcommand(1);
    add_data(cli);
    add_price(cli);
    add_vae(cli);
    add_wmc(cli);
    add_wd(cli);
    add_sabr(cli);
    add_exotic(cli);
    add_run(cli);

    try {
        cli.app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return cli.app.exit(e) == 0 ? ok : config_error;
    }

    try {
        if (cli.action) cli.action();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return numerical_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failure;
    }
    return ok;
}
