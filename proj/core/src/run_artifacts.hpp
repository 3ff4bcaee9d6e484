#pragma once

// Internal records shared by the pipeline writer and the report reader.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json_io.hpp"

namespace volwmc::pipeline {

struct LatentRecord {
    std::string date;
    std::string split;
    Eigen::VectorXd direct;
    Eigen::VectorXd finetuned;
    Eigen::VectorXd calibrated;
    bool converged = false;
    double mrae_direct = 0.0;
    double mrae_finetuned = 0.0;
    double mrae_calibration = 0.0;
};

inline Eigen::VectorXd vector_from_json(const detail::json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<LatentRecord> load_latents(const std::filesystem::path& file)
{
    const auto doc = detail::read_json_file(file);
    std::vector<LatentRecord> out;
    try {
        for (const auto& e : doc) {
            LatentRecord r;
            r.date = e.at("date").get<std::string>();
            r.split = e.at("split").get<std::string>();
            r.direct = vector_from_json(e.at("direct"));
            r.finetuned = vector_from_json(e.at("finetuned"));
            r.calibrated = vector_from_json(e.at("calibrated"));
            r.converged = e.at("calibration_converged").get<bool>();
            r.mrae_direct = e.at("mrae_direct").get<double>();
            r.mrae_finetuned = e.at("mrae_finetuned").get<double>();
            r.mrae_calibration = e.at("mrae_calibration").get<double>();
            out.push_back(std::move(r));
        }
    } catch (const detail::json::exception& e) {
        throw CorruptFileError(file.string() + ": " + e.what());
    }
    return out;
}

} // namespace volwmc::pipeline
