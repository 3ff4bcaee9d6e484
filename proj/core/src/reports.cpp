#include "volwmc/reports.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>

#include "json_io.hpp"
#include "run_artifacts.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/market.hpp"
#include "volwmc/path_io.hpp"
#include "volwmc/pipeline.hpp"
#include "volwmc/sabr.hpp"
#include "volwmc/vae.hpp"
#include "volwmc/weight_decoder.hpp"

namespace volwmc::reports {

using detail::json;
namespace art = pipeline::artifact;

const std::vector<std::string>& report_tags()
{
    static const std::vector<std::string> tags{"fig2", "fig3", "fig4", "fig5", "fig6", "fig7",
                                               "fig9", "fig10", "fig11", "fig12", "fig13", "fig14"};
    return tags;
}

namespace {

constexpr double density_lo = -0.04;
constexpr double density_hi = 0.04;
constexpr std::size_t density_bins = 40;

class Run {
public:
    explicit Run(std::filesystem::path dir) : dir_(std::move(dir))
    {
        const auto m = dir_ / art::manifest;
        if (!std::filesystem::exists(m)) throw ConfigError("no " + std::string(art::manifest) + " in " + dir_.string());
        manifest_ = detail::read_json_file(m);
        if (manifest_.value("status", "") != "ok") throw ConfigError("run in " + dir_.string() + " did not finish");
    }

    const json& manifest() const { return manifest_; }

    const json& section(const char* key) const
    {
        if (!manifest_.contains(key)) throw CorruptFileError("manifest lacks '" + std::string(key) + "'");
        return manifest_.at(key);
    }

    std::filesystem::path file(const char* name) const
    {
        const auto p = dir_ / name;
        if (!std::filesystem::exists(p)) throw ConfigError("missing run artifact " + p.string());
        return p;
    }

    const market::MarketHistory& history()
    {
        if (!history_) history_ = market::load_history(file(art::history));
        return *history_;
    }
    const vae::VaeModel& base_vae()
    {
        if (!vae_) vae_ = vae::load_model(file(art::vae));
        return *vae_;
    }
    const vae::VaeModel& finetuned_vae()
    {
        if (!vae_ft_) vae_ft_ = vae::load_model(file(art::vae_finetuned));
        return *vae_ft_;
    }
    const std::vector<pipeline::LatentRecord>& latents()
    {
        if (!latents_) latents_ = pipeline::load_latents(file(art::latents));
        return *latents_;
    }
    const wmc::PathSet& paths()
    {
        if (!paths_) paths_ = wmc::load_paths(file(art::paths));
        return *paths_;
    }
    const wmc::PathSet& sabr_paths()
    {
        if (!sabr_paths_) sabr_paths_ = wmc::load_paths(file(art::sabr_paths));
        return *sabr_paths_;
    }
    const wd::WeightDecoderNet& weight_decoder()
    {
        if (!wd_) wd_ = wd::load_weight_decoder(file(art::weight_decoder));
        return *wd_;
    }
    std::size_t pricing_index() const { return section("sabr").at("pricing_index").get<std::size_t>(); }

private:
    std::filesystem::path dir_;
    json manifest_;
    std::optional<market::MarketHistory> history_;
    std::optional<vae::VaeModel> vae_;
    std::optional<vae::VaeModel> vae_ft_;
    std::optional<std::vector<pipeline::LatentRecord>> latents_;
    std::optional<wmc::PathSet> paths_;
    std::optional<wmc::PathSet> sabr_paths_;
    std::optional<wd::WeightDecoderNet> wd_;
};

void cell(std::ostream& out, const json& v)
{
    if (v.is_null()) return;
    if (v.is_string()) {
        out << v.get<std::string>();
    } else if (v.is_number_integer()) {
        out << v.get<long long>();
    } else {
        out << v.get<double>();
    }
}

void write_surface_rows(std::ostream& out, const std::string& prefix, const market::VolSurface& s,
                        const market::VolSurface* reference)
{
    for (std::size_t i = 0; i < s.grid.n_expiries(); ++i) {
        for (std::size_t j = 0; j < s.grid.n_strikes(); ++j) {
            out << prefix << s.grid.strike_offsets[j] << ',' << s.grid.expiries[i];
            if (reference) out << ',' << reference->at(i, j);
            out << ',' << s.at(i, j) << '\n';
        }
    }
}

void fig2(Run& run, std::ostream& out)
{
    const auto& lat = run.latents();
    const auto& h = run.history();
    std::optional<std::size_t> best, worst;
    for (std::size_t i = 0; i < lat.size(); ++i) {
        if (lat[i].split != "train") continue;
        if (!best || lat[i].mrae_direct < lat[*best].mrae_direct) best = i;
        if (!worst || lat[i].mrae_direct > lat[*worst].mrae_direct) worst = i;
    }
    if (!best) throw CorruptFileError("run has no training dates");
    out << "case,date,mrae,dK,T,vol_market,vol_reconstructed\n";
    for (auto [label, idx] : {std::pair{"best", *best}, std::pair{"worst", *worst}}) {
        const auto rec = vae::decode_surface(run.base_vae(), lat[idx].direct, h[idx].grid, h[idx].date);
        std::ostringstream prefix;
        prefix << std::setprecision(17) << label << ',' << lat[idx].date << ',' << lat[idx].mrae_direct << ',';
        write_surface_rows(out, prefix.str(), rec, &h[idx]);
    }
}

void fig3(Run& run, std::ostream& out)
{
    const auto& lat = run.latents();
    const auto& model = run.finetuned_vae();
    const std::size_t idx = run.pricing_index();
    out << "resolution,dK,T,vol\n";
    for (std::size_t n : {std::size_t{10}, std::size_t{25}, std::size_t{50}}) {
        const auto grid = market::refined_grid(model.grid, n);
        const auto s = vae::decode_surface(model, lat[idx].calibrated, grid);
        write_surface_rows(out, std::to_string(n) + ",", s, nullptr);
    }
}

void fig4(Run& run, std::ostream& out)
{
    const auto& model = run.base_vae();
    out << "dim,value,dK,T,vol,diff_vs_origin\n";
    for (std::size_t dim = 0; dim < model.latent_dim; ++dim) {
        for (const auto& e : vae::latent_sweep(model, dim, vae::default_sweep_values())) {
            const auto& g = e.surface.grid;
            for (std::size_t i = 0; i < g.n_expiries(); ++i) {
                for (std::size_t j = 0; j < g.n_strikes(); ++j) {
                    out << dim << ',' << e.value << ',' << g.strike_offsets[j] << ',' << g.expiries[i] << ','
                        << e.surface.at(i, j) << ','
                        << e.diff_vs_origin(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
                }
            }
        }
    }
}

void fig5(Run& run, std::ostream& out)
{
    const auto& lat = run.latents();
    const auto d = lat.empty() ? 0 : lat.front().calibrated.size();
    out << "date,split,method";
    for (Eigen::Index k = 0; k < d; ++k) out << ",z" << k;
    out << '\n';
    for (const auto& r : lat) {
        for (auto [method, z] : {std::pair{"direct", &r.direct}, std::pair{"finetuned", &r.finetuned},
                                 std::pair{"calibration", &r.calibrated}}) {
            out << r.date << ',' << r.split << ',' << method;
            for (Eigen::Index k = 0; k < d; ++k) out << ',' << (*z)(k);
            out << '\n';
        }
    }
}

void fig6(Run& run, std::ostream& out)
{
    out << "date,split,dim,z_calibration,z_finetuned\n";
    for (const auto& r : run.latents()) {
        for (Eigen::Index k = 0; k < r.calibrated.size(); ++k) {
            out << r.date << ',' << r.split << ',' << k << ',' << r.calibrated(k) << ',' << r.finetuned(k) << '\n';
        }
    }
}

void per_date_table(Run& run, std::ostream& out, const std::vector<std::pair<std::string, std::string>>& cols,
                    bool test_only = false)
{
    const json& pd = run.section("per_date");
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c].first;
    out << '\n';
    const std::size_t n = pd.at("date").size();
    for (std::size_t i = 0; i < n; ++i) {
        if (test_only && pd.at("split")[i] != "test") continue;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (c) out << ',';
            cell(out, pd.at(cols[c].second)[i]);
        }
        out << '\n';
    }
}

void fig7(Run& run, std::ostream& out)
{
    per_date_table(run, out,
                   {{"date", "date"},
                    {"split", "split"},
                    {"mrae_direct", "mrae_direct"},
                    {"mrae_finetuned", "mrae_finetuned"},
                    {"mrae_calibration", "mrae_calibration"},
                    {"sliding_std_relative", "sliding_std_relative"},
                    {"sliding_std_absolute", "sliding_std_absolute"}});
}

void fig9(Run& run, std::ostream& out)
{
    per_date_table(run, out,
                   {{"date", "date"},
                    {"split", "split"},
                    {"mrae_calibration", "mrae_calibration"},
                    {"mrae_wd", "mrae_wd"},
                    {"relative_std", "sliding_std_relative"}});
}

void fig10(Run& run, std::ostream& out)
{
    const auto& net = run.weight_decoder();
    const auto& paths = run.paths();
    const auto& lat = run.latents();
    const auto& grid = run.finetuned_vae().grid;
    const Eigen::VectorXd base = lat[run.pricing_index()].calibrated;
    out << "dim,value,expiry,bin_lo,bin_hi,mass\n";
    for (std::size_t dim = 0; dim < net.latent_dim(); ++dim) {
        const auto entries = wd::latent_sweep_densities(net, paths, dim, vae::default_sweep_values(), base, grid.expiries,
                                                        density_lo, density_hi, density_bins);
        for (const auto& e : entries) {
            for (std::size_t b = 0; b < e.histogram.mass.size(); ++b) {
                out << dim << ',' << e.value << ',' << e.expiry << ',' << e.histogram.edges[b] << ','
                    << e.histogram.edges[b + 1] << ',' << e.histogram.mass[b] << '\n';
            }
        }
    }
}

void fig11(Run& run, std::ostream& out)
{
    const json& w = run.section("windows");
    out << "t1,t2,center,residual_uniform,residual_trained,mass_trained\n";
    for (std::size_t k = 0; k < w.at("t1").size(); ++k) {
        bool first = true;
        for (const char* c : {"t1", "t2", "center", "residual_uniform", "residual_trained", "mass_trained"}) {
            if (!first) out << ',';
            first = false;
            cell(out, w.at(c)[k]);
        }
        out << '\n';
    }
}

void fig12(Run& run, std::ostream& out)
{
    const json& pd = run.section("per_date");
    const double floor = run.section("summary").at("noise_floor_mean").get<double>();
    out << "date,relative_mart_loss,noise_floor\n";
    for (std::size_t i = 0; i < pd.at("date").size(); ++i) {
        if (pd.at("split")[i] != "test") continue;
        out << pd.at("date")[i].get<std::string>() << ',';
        cell(out, pd.at("relative_mart_loss")[i]);
        out << ',' << floor << '\n';
    }
}

void fig13(Run& run, std::ostream& out)
{
    const auto& paths = run.paths();
    const auto& sabr_paths = run.sabr_paths();
    const auto& grid = run.finetuned_vae().grid;
    const std::size_t idx = run.pricing_index();
    const auto w = wd::decode_weights(run.weight_decoder(), run.latents()[idx].calibrated, paths);
    const auto uniform = wmc::WeightVector::uniform(sabr_paths.n_paths());
    out << "series,expiry,x,value\n";
    for (double t : grid.expiries) {
        const auto hw = wmc::risk_neutral_density(paths, w, t, density_lo, density_hi, density_bins);
        const auto hs = wmc::risk_neutral_density(sabr_paths, uniform, t, density_lo, density_hi, density_bins);
        for (std::size_t b = 0; b < density_bins; ++b) {
            const double mid = 0.5 * (hw.edges[b] + hw.edges[b + 1]);
            out << "density_wmc," << t << ',' << mid << ',' << hw.mass[b] << '\n';
            out << "density_sabr," << t << ',' << mid << ',' << hs.mass[b] << '\n';
        }
    }
    const json& sb = run.section("sabr");
    const sabr::SabrParams p{sb.at("alpha").get<double>(), sb.at("rho").get<double>(), sb.at("volvol").get<double>()};
    const double expiry = sb.at("expiry").get<double>();
    const auto& s = run.history()[idx];
    for (std::size_t i = 0; i < grid.n_expiries(); ++i) {
        if (grid.expiries[i] != expiry) continue;
        for (std::size_t j = 0; j < grid.n_strikes(); ++j) {
            const double k = grid.strike_offsets[j];
            out << "smile_market," << expiry << ',' << k << ',' << s.at(i, j) << '\n';
            out << "smile_sabr," << expiry << ',' << k << ',' << sabr::normal_vol(p, 0.0, k, expiry) << '\n';
        }
    }
}

void fig14(Run& run, std::ostream& out)
{
    const json& c = run.section("barrier");
    out << "barrier,price_wmc,price_sabr,se_wmc,se_sabr\n";
    for (std::size_t k = 0; k < c.at("barrier").size(); ++k) {
        bool first = true;
        for (const char* col : {"barrier", "price_wmc", "price_sabr", "se_wmc", "se_sabr"}) {
            if (!first) out << ',';
            first = false;
            cell(out, c.at(col)[k]);
        }
        out << '\n';
    }
}

} // namespace

void emit_report(const std::filesystem::path& run_dir, const std::string& tag, std::ostream& out)
{
    const auto& tags = report_tags();
    if (std::find(tags.begin(), tags.end(), tag) == tags.end()) {
        std::string list;
        for (const auto& t : tags) list += (list.empty() ? "" : ", ") + t;
        throw ConfigError("unknown report '" + tag + "' (available: " + list + ")");
    }
    Run run(run_dir);
    out << std::setprecision(12);
    if (tag == "fig2") fig2(run, out);
    else if (tag == "fig3") fig3(run, out);
    else if (tag == "fig4") fig4(run, out);
    else if (tag == "fig5") fig5(run, out);
    else if (tag == "fig6") fig6(run, out);
    else if (tag == "fig7") fig7(run, out);
    else if (tag == "fig9") fig9(run, out);
    else if (tag == "fig10") fig10(run, out);
    else if (tag == "fig11") fig11(run, out);
    else if (tag == "fig12") fig12(run, out);
    else if (tag == "fig13") fig13(run, out);
    else fig14(run, out);
}

void emit_report(const std::filesystem::path& run_dir, const std::string& tag, const std::filesystem::path& file)
{
    std::ostringstream buf;
    emit_report(run_dir, tag, buf);
    std::ofstream out(file);
    if (!out) throw ConfigError("cannot write " + file.string());
    out << buf.str();
}

} // namespace volwmc::reports
