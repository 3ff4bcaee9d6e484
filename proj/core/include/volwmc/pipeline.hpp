#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "volwmc/market.hpp"
#include "volwmc/vae.hpp"
#include "volwmc/weight_decoder.hpp"

namespace volwmc::pipeline {

struct DataConfig {
    std::string source = "synthetic"; // "synthetic" or "csv"
    std::string path;                 // csv source only
    std::size_t n_days = 1000;
    double train_fraction = 0.7;
    std::size_t n_validation = 100;
};

struct VaeSection {
    std::size_t latent_dim = 3;
    double beta = 5e-5;
    double lr = 1e-3;
    std::size_t batch = 32;
    std::size_t epochs = 1000;
    std::size_t patience = 200;
};

struct FinetuneSection {
    std::size_t n_synthetic = 10000;
    double variance = 4.0;
    std::size_t epochs = 300;
    std::size_t patience = 50;
    double lr = 1e-3;
    std::size_t batch = 32;
};

struct WmcSection {
    std::size_t nu = 4000;
    std::size_t steps = 500;
    double horizon = 5.0;
    double sigma_prior = 0.0; // <= 0: mean ATM 2Y vol of the training set
    std::size_t mart_positions = 20;
    double mart_delta = 0.001;
    std::size_t noise_regenerations = 50;
};

struct WdSection {
    double gamma = 1e-8;
    double lr = 0.01;
    std::size_t batch = 32;
    std::size_t epochs = 300;
    std::size_t patience = 50;
    std::string parity_mode = "parity-constrained";
    double parity_weight = 1.0;
    std::size_t n_synthetic = 500;
};

struct SabrSection {
    double expiry = 5.0;
    std::size_t paths = 4000;
    std::size_t steps = 500;
};

struct ExoticSection {
    double strike = 0.0;
    double b_from = 0.01;
    double b_to = 0.1;
    double b_step = 0.005;
    double expiry = 5.0;
};

struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t split = 2;
    std::uint64_t vae = 3;
    std::uint64_t synthetic = 4;
    std::uint64_t finetune = 5;
    std::uint64_t paths = 6;
    std::uint64_t wd = 7;
    std::uint64_t sabr = 8;
};

struct Config {
    DataConfig data;
    VaeSection vae;
    FinetuneSection finetune;
    WmcSection wmc;
    WdSection wd;
    SabrSection sabr;
    ExoticSection exotic;
    Seeds seeds;
};

// Every field is required; a missing or mistyped field raises ConfigError
// naming its dotted path.
Config parse_config(const std::string& json_text);
Config load_config(const std::filesystem::path& path);
std::string config_to_json(const Config& config);

struct RunOptions {
    bool resume = false; // reuse stage artifacts already present in the run directory
    bool verbose = false;
};

// Runs every stage, writing artifacts and manifest.json into `run_dir`.
// Stage failures are recorded in the manifest before the error propagates.
void run_pipeline(const Config& config, const std::filesystem::path& run_dir, const RunOptions& options = {});

// Names of the artifact files inside a run directory.
namespace artifact {
inline constexpr const char* config = "config.json";
inline constexpr const char* history = "history.csv";
inline constexpr const char* split = "split.json";
inline constexpr const char* vae = "vae.json";
inline constexpr const char* vae_finetuned = "vae_finetuned.json";
inline constexpr const char* stage_vae = "stage_vae.json";
inline constexpr const char* stage_finetune = "stage_finetune.json";
inline constexpr const char* latents = "latents.json";
inline constexpr const char* paths = "paths.bin";
inline constexpr const char* weight_decoder = "weight_decoder.json";
inline constexpr const char* stage_wd = "stage_wd.json";
inline constexpr const char* sabr_paths = "sabr_paths.bin";
inline constexpr const char* manifest = "manifest.json";
} // namespace artifact

} // namespace volwmc::pipeline
