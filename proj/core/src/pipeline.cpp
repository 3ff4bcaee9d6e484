#include "volwmc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "json_io.hpp"
#include "run_artifacts.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/exotics.hpp"
#include "volwmc/path_io.hpp"
#include "volwmc/random.hpp"
#include "volwmc/sabr.hpp"

namespace volwmc::pipeline {

using detail::json;

namespace {

// ---------------------------------------------------------------- config

const json& section(const json& doc, const char* name)
{
    if (!doc.is_object() || !doc.contains(name)) throw ConfigError(std::string("missing config field '") + name + "'");
    const json& s = doc.at(name);
    if (!s.is_object()) throw ConfigError(std::string("config field '") + name + "' must be an object");
    return s;
}

template <typename T>
void field(const json& sec, const char* sec_name, const char* key, T& out)
{
    const std::string dotted = std::string(sec_name) + "." + key;
    if (!sec.contains(key)) throw ConfigError("missing config field '" + dotted + "'");
    const json& v = sec.at(key);
    if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("config field '" + dotted + "' must be a string");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
            throw ConfigError("config field '" + dotted + "' must be a non-negative integer");
        }
    } else {
        if (!v.is_number()) throw ConfigError("config field '" + dotted + "' must be a number");
    }
    out = v.get<T>();
}

std::uint64_t fnv1a(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

json config_json(const Config& c)
{
    return json{
        {"data",
         {{"source", c.data.source},
          {"path", c.data.path},
          {"n_days", c.data.n_days},
          {"train_fraction", c.data.train_fraction},
          {"n_validation", c.data.n_validation}}},
        {"vae",
         {{"latent_dim", c.vae.latent_dim},
          {"beta", c.vae.beta},
          {"lr", c.vae.lr},
          {"batch", c.vae.batch},
          {"epochs", c.vae.epochs},
          {"patience", c.vae.patience}}},
        {"finetune",
         {{"n_synthetic", c.finetune.n_synthetic},
          {"variance", c.finetune.variance},
          {"epochs", c.finetune.epochs},
          {"patience", c.finetune.patience},
          {"lr", c.finetune.lr},
          {"batch", c.finetune.batch}}},
        {"wmc",
         {{"nu", c.wmc.nu},
          {"steps", c.wmc.steps},
          {"horizon", c.wmc.horizon},
          {"sigma_prior", c.wmc.sigma_prior},
          {"mart_positions", c.wmc.mart_positions},
          {"mart_delta", c.wmc.mart_delta},
          {"noise_regenerations", c.wmc.noise_regenerations}}},
        {"wd",
         {{"gamma", c.wd.gamma},
          {"lr", c.wd.lr},
          {"batch", c.wd.batch},
          {"epochs", c.wd.epochs},
          {"patience", c.wd.patience},
          {"parity_mode", c.wd.parity_mode},
          {"parity_weight", c.wd.parity_weight},
          {"n_synthetic", c.wd.n_synthetic}}},
        {"sabr", {{"expiry", c.sabr.expiry}, {"paths", c.sabr.paths}, {"steps", c.sabr.steps}}},
        {"exotic",
         {{"strike", c.exotic.strike},
          {"b_from", c.exotic.b_from},
          {"b_to", c.exotic.b_to},
          {"b_step", c.exotic.b_step},
          {"expiry", c.exotic.expiry}}},
        {"seeds",
         {{"data", c.seeds.data},
          {"split", c.seeds.split},
          {"vae", c.seeds.vae},
          {"synthetic", c.seeds.synthetic},
          {"finetune", c.seeds.finetune},
          {"paths", c.seeds.paths},
          {"wd", c.seeds.wd},
          {"sabr", c.seeds.sabr}}}};
}

void validate(const Config& c)
{
    if (c.data.source != "synthetic" && c.data.source != "csv") {
        throw ConfigError("config field 'data.source' must be \"synthetic\" or \"csv\"");
    }
    if (c.data.source == "csv" && c.data.path.empty()) throw ConfigError("config field 'data.path' is empty");
    if (!(c.data.train_fraction > 0.0 && c.data.train_fraction < 1.0)) {
        throw ConfigError("config field 'data.train_fraction' must lie in (0, 1)");
    }
    if (c.vae.latent_dim == 0) throw ConfigError("config field 'vae.latent_dim' must be positive");
    if (c.wmc.nu < 2 || c.wmc.steps < 1) throw ConfigError("config fields 'wmc.nu'/'wmc.steps' too small");
    wd::parse_parity_mode(c.wd.parity_mode);
}

} // namespace

Config parse_config(const std::string& json_text)
{
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    Config c;
    const json& d = section(doc, "data");
    field(d, "data", "source", c.data.source);
    field(d, "data", "path", c.data.path);
    field(d, "data", "n_days", c.data.n_days);
    field(d, "data", "train_fraction", c.data.train_fraction);
    field(d, "data", "n_validation", c.data.n_validation);
    const json& v = section(doc, "vae");
    field(v, "vae", "latent_dim", c.vae.latent_dim);
    field(v, "vae", "beta", c.vae.beta);
    field(v, "vae", "lr", c.vae.lr);
    field(v, "vae", "batch", c.vae.batch);
    field(v, "vae", "epochs", c.vae.epochs);
    field(v, "vae", "patience", c.vae.patience);
    const json& f = section(doc, "finetune");
    field(f, "finetune", "n_synthetic", c.finetune.n_synthetic);
    field(f, "finetune", "variance", c.finetune.variance);
    field(f, "finetune", "epochs", c.finetune.epochs);
    field(f, "finetune", "patience", c.finetune.patience);
    field(f, "finetune", "lr", c.finetune.lr);
    field(f, "finetune", "batch", c.finetune.batch);
    const json& w = section(doc, "wmc");
    field(w, "wmc", "nu", c.wmc.nu);
    field(w, "wmc", "steps", c.wmc.steps);
    field(w, "wmc", "horizon", c.wmc.horizon);
    field(w, "wmc", "sigma_prior", c.wmc.sigma_prior);
    field(w, "wmc", "mart_positions", c.wmc.mart_positions);
    field(w, "wmc", "mart_delta", c.wmc.mart_delta);
    field(w, "wmc", "noise_regenerations", c.wmc.noise_regenerations);
    const json& x = section(doc, "wd");
    field(x, "wd", "gamma", c.wd.gamma);
    field(x, "wd", "lr", c.wd.lr);
    field(x, "wd", "batch", c.wd.batch);
    field(x, "wd", "epochs", c.wd.epochs);
    field(x, "wd", "patience", c.wd.patience);
    field(x, "wd", "parity_mode", c.wd.parity_mode);
    field(x, "wd", "parity_weight", c.wd.parity_weight);
    field(x, "wd", "n_synthetic", c.wd.n_synthetic);
    const json& s = section(doc, "sabr");
    field(s, "sabr", "expiry", c.sabr.expiry);
    field(s, "sabr", "paths", c.sabr.paths);
    field(s, "sabr", "steps", c.sabr.steps);
    const json& e = section(doc, "exotic");
    field(e, "exotic", "strike", c.exotic.strike);
    field(e, "exotic", "b_from", c.exotic.b_from);
    field(e, "exotic", "b_to", c.exotic.b_to);
    field(e, "exotic", "b_step", c.exotic.b_step);
    field(e, "exotic", "expiry", c.exotic.expiry);
    const json& k = section(doc, "seeds");
    field(k, "seeds", "data", c.seeds.data);
    field(k, "seeds", "split", c.seeds.split);
    field(k, "seeds", "vae", c.seeds.vae);
    field(k, "seeds", "synthetic", c.seeds.synthetic);
    field(k, "seeds", "finetune", c.seeds.finetune);
    field(k, "seeds", "paths", c.seeds.paths);
    field(k, "seeds", "wd", c.seeds.wd);
    field(k, "seeds", "sabr", c.seeds.sabr);
    validate(c);
    return c;
}

Config load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_to_json(const Config& config)
{
    return config_json(config).dump(2);
}

namespace {

using Clock = std::chrono::steady_clock;

class Runner {
public:
    Runner(const Config& c, std::filesystem::path dir, RunOptions o) : cfg_(c), dir_(std::move(dir)), opt_(o) {}

    void run()
    {
        std::filesystem::create_directories(dir_);
        const std::string cfg_text = config_json(cfg_).dump();
        manifest_ = json{{"format", "volwmc-run"},
                         {"version", 1},
                         {"library_version", "0.1.0"},
                         {"config_hash", hex(fnv1a(cfg_text))},
                         {"config", config_json(cfg_)},
                         {"status", "running"}};
        detail::write_json_file(config_json(cfg_), dir_ / artifact::config);
        try {
            stage("data", [&] { data(); });
            stage("vae", [&] { train_vae(); });
            stage("finetune", [&] { finetune(); });
            stage("latents", [&] { latents(); });
            stage("paths", [&] { paths(); });
            stage("weight_decoder", [&] { weight_decoder(); });
            stage("evaluation", [&] { evaluation(); });
            stage("sabr", [&] { sabr_and_barrier(); });
        } catch (const std::exception& e) {
            manifest_["status"] = "failed";
            manifest_["failed_stage"] = current_;
            manifest_["error"] = e.what();
            detail::write_json_file(manifest_, dir_ / artifact::manifest);
            throw;
        }
        manifest_["status"] = "ok";
        detail::write_json_file(manifest_, dir_ / artifact::manifest);
    }

private:
    template <typename F>
    void stage(const char* name, F&& body)
    {
        current_ = name;
        const auto t0 = Clock::now();
        body();
        if (opt_.verbose) {
            std::cerr << "[volwmc] " << name << " done in "
                      << std::chrono::duration<double>(Clock::now() - t0).count() << " s\n";
        }
    }

    bool reuse(const char* file) const { return opt_.resume && std::filesystem::exists(dir_ / file); }

    void data()
    {
        if (reuse(artifact::history)) {
            history_ = market::load_history(dir_ / artifact::history);
        } else {
            history_ = cfg_.data.source == "csv" ? market::load_history(cfg_.data.path)
                                                 : market::synthetic_history(cfg_.data.n_days, cfg_.seeds.data);
            market::save_history(history_, dir_ / artifact::history);
        }
        split_ = market::chronological_split(history_, cfg_.data.train_fraction, cfg_.data.n_validation, cfg_.seeds.split);
        detail::write_json_file(json{{"train", split_.train_index},
                                     {"validation", split_.validation_index},
                                     {"test", split_.test_index}},
                                dir_ / artifact::split);
        manifest_["data"] = {{"n_days", history_.size()},
                             {"n_train", split_.train.size()},
                             {"n_validation", split_.validation.size()},
                             {"n_test", split_.test.size()},
                             {"first_date", market::format_date(history_[0].date)},
                             {"last_date", market::format_date(history_[history_.size() - 1].date)}};
    }

    void train_vae()
    {
        if (reuse(artifact::vae) && reuse(artifact::stage_vae)) {
            vae_ = vae::load_model(dir_ / artifact::vae);
            manifest_["vae"] = detail::read_json_file(dir_ / artifact::stage_vae);
            return;
        }
        vae::VaeConfig vc;
        vc.latent_dim = cfg_.vae.latent_dim;
        vc.beta = cfg_.vae.beta;
        vc.learning_rate = cfg_.vae.lr;
        vc.batch_surfaces = cfg_.vae.batch;
        vc.epochs = cfg_.vae.epochs;
        vc.patience = cfg_.vae.patience;
        vc.seed = cfg_.seeds.vae;
        auto trained = vae::train_vae(split_.train, split_.validation, vc);
        vae_ = std::move(trained.model);
        const auto& r = trained.report;
        const json summary{{"epochs_run", r.epochs_run},
                           {"batch_updates", r.batch_updates},
                           {"best_epoch", r.best_epoch},
                           {"best_validation_mse", r.best_validation_mse},
                           {"final_train_mse", r.final_train_mse},
                           {"final_train_loss", r.final_train_loss},
                           {"diverged", r.diverged}};
        vae::save_model(vae_, dir_ / artifact::vae);
        detail::write_json_file(summary, dir_ / artifact::stage_vae);
        manifest_["vae"] = summary;
    }

    void finetune()
    {
        if (reuse(artifact::vae_finetuned) && reuse(artifact::stage_finetune)) {
            vae_ft_ = vae::load_model(dir_ / artifact::vae_finetuned);
            manifest_["finetune"] = detail::read_json_file(dir_ / artifact::stage_finetune);
            return;
        }
        const auto sample = vae::sample_synthetic_surfaces(vae_, cfg_.finetune.n_synthetic, cfg_.finetune.variance,
                                                           cfg_.seeds.synthetic);
        vae::FinetuneConfig fc;
        fc.epochs = cfg_.finetune.epochs;
        fc.patience = cfg_.finetune.patience;
        fc.learning_rate = cfg_.finetune.lr;
        fc.batch = cfg_.finetune.batch;
        fc.seed = cfg_.seeds.finetune;
        auto result = vae::finetune_encoder(vae_, sample.surfaces, fc);
        vae_ft_ = std::move(result.model);
        const auto& r = result.report;
        const json summary{{"n_synthetic", cfg_.finetune.n_synthetic},
                           {"discarded", sample.discarded},
                           {"epochs_run", r.epochs_run},
                           {"train_size", r.train_size},
                           {"holdout_size", r.holdout_size},
                           {"initial_holdout_latent_mse", r.initial_holdout_latent_mse},
                           {"best_holdout_latent_mse", r.best_holdout_latent_mse}};
        vae::save_model(vae_ft_, dir_ / artifact::vae_finetuned);
        detail::write_json_file(summary, dir_ / artifact::stage_finetune);
        manifest_["finetune"] = summary;
    }

    void latents()
    {
        const std::size_t n = history_.size();
        split_label_.assign(n, "train");
        for (auto i : split_.validation_index) split_label_[i] = "validation";
        for (auto i : split_.test_index) split_label_[i] = "test";
        lat_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& s = history_[i];
            LatentRecord& r = lat_[i];
            r.direct = vae::encode(vae_, s).mu;
            r.finetuned = vae::encode(vae_ft_, s).mu;
            const auto cal = vae::calibrate_latent(vae_ft_, vae::observations_from(s), r.finetuned);
            r.calibrated = cal.z;
            r.converged = cal.converged;
            r.mrae_direct = market::mrae(s, vae::decode_surface(vae_, r.direct, s.grid));
            r.mrae_finetuned = market::mrae(s, vae::decode_surface(vae_ft_, r.finetuned, s.grid));
            r.mrae_calibration = market::mrae(s, vae::decode_surface(vae_ft_, r.calibrated, s.grid));
        }
        json doc = json::array();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = lat_[i];
            doc.push_back({{"date", market::format_date(history_[i].date)},
                           {"split", split_label_[i]},
                           {"direct", to_vec(r.direct)},
                           {"finetuned", to_vec(r.finetuned)},
                           {"calibrated", to_vec(r.calibrated)},
                           {"calibration_converged", r.converged},
                           {"mrae_direct", r.mrae_direct},
                           {"mrae_finetuned", r.mrae_finetuned},
                           {"mrae_calibration", r.mrae_calibration}});
        }
        detail::write_json_file(doc, dir_ / artifact::latents);
    }

    void paths()
    {
        double sigma = cfg_.wmc.sigma_prior;
        if (!(sigma > 0.0)) sigma = mean_atm_vol(split_.train, 2.0);
        if (reuse(artifact::paths)) {
            paths_ = wmc::load_paths(dir_ / artifact::paths);
            const auto b = wmc::PathBinding::of(paths_);
            if (b.seed != cfg_.seeds.paths || b.n_paths != cfg_.wmc.nu || b.steps != cfg_.wmc.steps || b.sigma_prior != sigma) {
                throw ConfigError("existing " + std::string(artifact::paths) + " does not match the configuration");
            }
        } else {
            paths_ = wmc::generate_brownian_paths(cfg_.wmc.nu, cfg_.wmc.horizon, cfg_.wmc.steps, sigma, cfg_.seeds.paths);
            wmc::save_paths(paths_, dir_ / artifact::paths);
        }
        ctx_ = wd::PricingContext::make(paths_, history_[0].grid);
        manifest_["wmc"] = {{"sigma_prior", sigma}, {"nu", cfg_.wmc.nu}, {"steps", cfg_.wmc.steps}, {"horizon", cfg_.wmc.horizon}};
    }

    wd::WdConfig wd_config() const
    {
        wd::WdConfig wc;
        wc.gamma = cfg_.wd.gamma;
        wc.learning_rate = cfg_.wd.lr;
        wc.batch = cfg_.wd.batch;
        wc.epochs = cfg_.wd.epochs;
        wc.patience = cfg_.wd.patience;
        wc.parity_mode = wd::parse_parity_mode(cfg_.wd.parity_mode);
        wc.parity_weight = cfg_.wd.parity_weight;
        wc.seed = cfg_.seeds.wd;
        return wc;
    }

    void weight_decoder()
    {
        const wd::WdConfig wc = wd_config();
        if (reuse(artifact::weight_decoder) && reuse(artifact::stage_wd)) {
            wd_ = wd::load_weight_decoder(dir_ / artifact::weight_decoder);
            wd::check_binding(wd_, paths_);
            manifest_["wd"] = detail::read_json_file(dir_ / artifact::stage_wd);
            return;
        }
        std::vector<Eigen::VectorXd> train_latents;
        for (auto i : split_.train_index) train_latents.push_back(lat_[i].calibrated);
        std::vector<Eigen::VectorXd> all = train_latents;
        const auto extra = vae::sample_synthetic_surfaces(vae_ft_, cfg_.wd.n_synthetic, cfg_.finetune.variance,
                                                          stream_seed(cfg_.seeds.synthetic, 1));
        for (const auto& s : extra.surfaces) all.push_back(s.z);
        const auto grid = history_[0].grid;
        const auto targets = wd::build_training_targets(vae_ft_, all, grid);
        const auto validation = wd::build_training_targets(vae_ft_, train_latents, grid);
        auto trained = wd::train_weight_decoder(paths_, ctx_, targets, validation, wc);
        wd_ = std::move(trained.net);
        const auto& r = trained.report;
        const json summary{{"parity_mode", wd::to_string(wc.parity_mode)},
                           {"n_train_latents", targets.size()},
                           {"n_validation_latents", validation.size()},
                           {"epochs_run", r.epochs_run},
                           {"best_epoch", r.best_epoch},
                           {"best_validation_loss", r.best_validation_loss},
                           {"checkpoint_losses", r.checkpoint_losses},
                           {"max_parity_residual_validation", r.max_parity_residual}};
        wd::save_weight_decoder(wd_, dir_ / artifact::weight_decoder);
        detail::write_json_file(summary, dir_ / artifact::stage_wd);
        manifest_["wd"] = summary;
    }

    void evaluation()
    {
        const auto mode = wd::parse_parity_mode(cfg_.wd.parity_mode);
        const auto windows = wmc::martingale_windows(history_[0].grid.expiries, cfg_.wmc.mart_positions, -0.01, 0.01,
                                                     cfg_.wmc.mart_delta);
        const std::size_t n = history_.size();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        std::vector<double> mrae_wd(n), mart(n, nan);
        std::vector<std::size_t> failed(n);
        double max_parity = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto w = wd::decode_weights(wd_, lat_[i].calibrated, paths_);
            const auto rec = wd::reconstruct_surface(w, ctx_, mode, history_[i].date);
            mrae_wd[i] = market::mrae(history_[i], rec.surface);
            failed[i] = rec.n_failed;
            max_parity = std::max(max_parity, wd::max_parity_residual(rec.prices, ctx_));
            if (split_label_[i] == "test") mart[i] = wmc::martingale_loss(paths_, w, windows).relative_loss;
        }

        std::vector<double> floor_values;
        const auto uniform = wmc::WeightVector::uniform(cfg_.wmc.nu);
        for (std::size_t r = 0; r < cfg_.wmc.noise_regenerations; ++r) {
            const auto fresh = wmc::generate_brownian_paths(cfg_.wmc.nu, cfg_.wmc.horizon, cfg_.wmc.steps,
                                                            paths_.sigma_prior, stream_seed(cfg_.seeds.paths, r + 1));
            floor_values.push_back(wmc::martingale_loss(fresh, uniform, windows).relative_loss);
        }
        double floor_mean = 0.0;
        for (double v : floor_values) floor_mean += v;
        if (!floor_values.empty()) floor_mean /= static_cast<double>(floor_values.size());
        const double own_floor = wmc::martingale_loss(paths_, uniform, windows).relative_loss;

        const auto rel_std = market::sliding_window_std(history_, 5, market::DispersionMode::Relative);
        const auto abs_std = market::sliding_window_std(history_, 5, market::DispersionMode::Absolute);
        json per_date{{"date", json::array()},
                      {"split", json::array()},
                      {"mrae_direct", json::array()},
                      {"mrae_finetuned", json::array()},
                      {"mrae_calibration", json::array()},
                      {"mrae_wd", json::array()},
                      {"wd_failed_nodes", json::array()},
                      {"relative_mart_loss", json::array()},
                      {"sliding_std_relative", json::array()},
                      {"sliding_std_absolute", json::array()}};
        for (std::size_t i = 0; i < n; ++i) {
            per_date["date"].push_back(market::format_date(history_[i].date));
            per_date["split"].push_back(split_label_[i]);
            per_date["mrae_direct"].push_back(lat_[i].mrae_direct);
            per_date["mrae_finetuned"].push_back(lat_[i].mrae_finetuned);
            per_date["mrae_calibration"].push_back(lat_[i].mrae_calibration);
            per_date["mrae_wd"].push_back(mrae_wd[i]);
            per_date["wd_failed_nodes"].push_back(failed[i]);
            per_date["relative_mart_loss"].push_back(std::isnan(mart[i]) ? json(nullptr) : json(mart[i]));
            const bool has_std = i + 1 >= 5;
            per_date["sliding_std_relative"].push_back(has_std ? json(rel_std[i - 4]) : json(nullptr));
            per_date["sliding_std_absolute"].push_back(has_std ? json(abs_std[i - 4]) : json(nullptr));
        }
        manifest_["per_date"] = per_date;

        auto mean_over = [&](const std::vector<double>& v, const char* label) {
            double s = 0.0;
            std::size_t k = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (split_label_[i] == label) {
                    s += v[i];
                    ++k;
                }
            }
            return k ? s / static_cast<double>(k) : nan;
        };
        auto column = [&](double LatentRecord::*m) {
            std::vector<double> v(n);
            for (std::size_t i = 0; i < n; ++i) v[i] = lat_[i].*m;
            return v;
        };
        double mart_max = 0.0;
        for (double v : mart) {
            if (!std::isnan(v)) mart_max = std::max(mart_max, v);
        }
        const auto direct = column(&LatentRecord::mrae_direct);
        const auto ft = column(&LatentRecord::mrae_finetuned);
        const auto cal = column(&LatentRecord::mrae_calibration);
        manifest_["summary"] = {{"mrae_direct_train", mean_over(direct, "train")},
                                {"mrae_direct_test", mean_over(direct, "test")},
                                {"mrae_finetuned_train", mean_over(ft, "train")},
                                {"mrae_finetuned_test", mean_over(ft, "test")},
                                {"mrae_calibration_train", mean_over(cal, "train")},
                                {"mrae_calibration_test", mean_over(cal, "test")},
                                {"mrae_wd_train", mean_over(mrae_wd, "train")},
                                {"mrae_wd_test", mean_over(mrae_wd, "test")},
                                {"max_parity_residual", max_parity},
                                {"relative_mart_loss_test_max", mart_max},
                                {"noise_floor_mean", floor_mean},
                                {"noise_floor_own_paths", own_floor}};
        manifest_["noise_floor"] = floor_values;
    }

    void sabr_and_barrier()
    {
        // Pricing date: the last observation.
        const std::size_t idx = history_.size() - 1;
        const auto& s = history_[idx];
        const auto& g = s.grid;
        std::size_t ti = 0;
        for (std::size_t i = 0; i < g.n_expiries(); ++i) {
            if (std::abs(g.expiries[i] - cfg_.sabr.expiry) < std::abs(g.expiries[ti] - cfg_.sabr.expiry)) ti = i;
        }
        std::vector<sabr::SmilePoint> smile;
        for (std::size_t j = 0; j < g.n_strikes(); ++j) smile.push_back({g.strike_offsets[j], s.at(ti, j)});
        const auto fit = sabr::fit_smile(smile, g.expiries[ti]);

        wmc::PathSet sabr_paths;
        const bool have = reuse(artifact::sabr_paths);
        if (have) sabr_paths = wmc::load_paths(dir_ / artifact::sabr_paths);
        if (!have || sabr_paths.seed != cfg_.seeds.sabr || sabr_paths.sigma_prior != fit.params.alpha) {
            sabr_paths = sabr::simulate_paths(fit.params, cfg_.sabr.paths, cfg_.wmc.horizon, cfg_.sabr.steps, cfg_.seeds.sabr);
            wmc::save_paths(sabr_paths, dir_ / artifact::sabr_paths);
        }

        const auto weights = wd::decode_weights(wd_, lat_[idx].calibrated, paths_);
        const auto barriers = exotics::barrier_grid(cfg_.exotic.b_from, cfg_.exotic.b_to, cfg_.exotic.b_step);
        const auto wmc_curve = exotics::barrier_sweep(paths_, weights, cfg_.exotic.strike, barriers, cfg_.exotic.expiry);
        const auto sabr_curve = exotics::barrier_sweep(sabr_paths, wmc::WeightVector::uniform(sabr_paths.n_paths()),
                                                       cfg_.exotic.strike, barriers, cfg_.exotic.expiry);
        json curve{{"barrier", barriers}, {"price_wmc", json::array()}, {"se_wmc", json::array()},
                   {"price_sabr", json::array()}, {"se_sabr", json::array()}};
        for (std::size_t k = 0; k < barriers.size(); ++k) {
            curve["price_wmc"].push_back(wmc_curve[k].price);
            curve["se_wmc"].push_back(wmc_curve[k].std_error);
            curve["price_sabr"].push_back(sabr_curve[k].price);
            curve["se_sabr"].push_back(sabr_curve[k].std_error);
        }
        manifest_["barrier"] = curve;
        manifest_["sabr"] = {{"pricing_date", market::format_date(s.date)},
                             {"pricing_index", idx},
                             {"expiry", g.expiries[ti]},
                             {"alpha", fit.params.alpha},
                             {"rho", fit.params.rho},
                             {"volvol", fit.params.volvol},
                             {"rmse", fit.rmse}};

        const auto windows = wmc::martingale_windows(g.expiries, cfg_.wmc.mart_positions, -0.01, 0.01, cfg_.wmc.mart_delta);
        const auto uni = wmc::martingale_loss(paths_, wmc::WeightVector::uniform(paths_.n_paths()), windows);
        const auto trained = wmc::martingale_loss(paths_, weights, windows);
        json win{{"t1", json::array()}, {"t2", json::array()}, {"center", json::array()},
                 {"residual_uniform", json::array()}, {"residual_trained", json::array()}, {"mass_trained", json::array()}};
        for (std::size_t k = 0; k < windows.size(); ++k) {
            win["t1"].push_back(windows[k].t1);
            win["t2"].push_back(windows[k].t2);
            win["center"].push_back(windows[k].center);
            win["residual_uniform"].push_back(uni.windows[k].evaluated ? json(uni.windows[k].residual) : json(nullptr));
            win["residual_trained"].push_back(trained.windows[k].evaluated ? json(trained.windows[k].residual) : json(nullptr));
            win["mass_trained"].push_back(trained.windows[k].mass);
        }
        manifest_["windows"] = win;
    }

    static std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

    static double mean_atm_vol(const market::MarketHistory& h, double expiry)
    {
        const auto& g = h[0].grid;
        std::size_t ti = 0, kj = 0;
        for (std::size_t i = 0; i < g.n_expiries(); ++i) {
            if (std::abs(g.expiries[i] - expiry) < std::abs(g.expiries[ti] - expiry)) ti = i;
        }
        for (std::size_t j = 0; j < g.n_strikes(); ++j) {
            if (std::abs(g.strike_offsets[j]) < std::abs(g.strike_offsets[kj])) kj = j;
        }
        double sum = 0.0;
        for (const auto& s : h) sum += s.at(ti, kj);
        return sum / static_cast<double>(h.size());
    }

    const Config& cfg_;
    std::filesystem::path dir_;
    RunOptions opt_;
    json manifest_;
    std::string current_;

    market::MarketHistory history_;
    market::Split split_;
    std::vector<std::string> split_label_;
    vae::VaeModel vae_;
    vae::VaeModel vae_ft_;
    std::vector<LatentRecord> lat_;
    wmc::PathSet paths_;
    wd::PricingContext ctx_;
    wd::WeightDecoderNet wd_;
};

} // namespace

void run_pipeline(const Config& config, const std::filesystem::path& run_dir, const RunOptions& options)
{
    validate(config);
    Runner(config, run_dir, options).run();
}

} // namespace volwmc::pipeline
