#pragma once

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidcap/errors.hpp"

namespace vidcap {

// Every CLI run emits exactly one of these; the embedded config plus seed is
// enough to reproduce the run.
struct RunReport {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    nlohmann::json metrics;
    double wall_time_s = 0.0;
    std::vector<std::string> artifacts;

    nlohmann::json to_json() const {
        return {{"command", command}, {"config", config},           {"seed", seed},
                {"metrics", metrics}, {"wall_time_s", wall_time_s}, {"artifacts", artifacts}};
    }
};

inline void write_report(const RunReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << report.to_json().dump(2) << "\n";
}

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace vidcap
