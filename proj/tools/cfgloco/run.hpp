#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cli {

// State shared by every subcommand: where outputs go, the global seed and the
// resolved configuration text to persist.
struct RunContext {
    std::filesystem::path out_root = ".";
    std::uint64_t seed = 0;
    std::string command;
    std::string resolved_config;  // TOML, as CLI11 renders it
    bool quiet = false;

    // Relative outputs land under out_root; parent directories are created.
    std::filesystem::path output(const std::filesystem::path& p) const;
};

// Default output root: $CFGLOCO_OUT when set, else the working directory.
std::filesystem::path default_out_root();

class Manifest {
public:
    explicit Manifest(const RunContext& ctx);

    void input(const std::string& role, const std::filesystem::path& path);
    void output(const std::string& role, const std::filesystem::path& path);
    nlohmann::json& extra() { return extra_; }

    // Writes <first output>.manifest.json unless `path` is given.
    std::filesystem::path write(std::filesystem::path path = {}) const;

private:
    const RunContext& ctx_;
    std::vector<std::pair<std::string, std::filesystem::path>> inputs_;
    std::vector<std::pair<std::string, std::filesystem::path>> outputs_;
    nlohmann::json extra_ = nlohmann::json::object();
};

void say(const RunContext& ctx, const std::string& line);

}  // namespace cli
