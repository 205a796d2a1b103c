#include "run.hpp"

#include <cfgloco/container.hpp>
#include <cfgloco/errors.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace cli {

fs::path default_out_root() {
    if (const char* env = std::getenv("CFGLOCO_OUT"); env && *env) return env;
    return ".";
}

fs::path RunContext::output(const fs::path& p) const {
    fs::path full = p.is_absolute() ? p : out_root / p;
    if (full.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(full.parent_path(), ec);
        if (ec)
            throw std::runtime_error("cannot create output directory " + full.parent_path().string() + ": " +
                                     ec.message());
    }
    return full;
}

Manifest::Manifest(const RunContext& ctx) : ctx_(ctx) {}

void Manifest::input(const std::string& role, const fs::path& path) { inputs_.emplace_back(role, path); }
void Manifest::output(const std::string& role, const fs::path& path) { outputs_.emplace_back(role, path); }

fs::path Manifest::write(fs::path path) const {
    if (path.empty()) {
        if (outputs_.empty()) throw std::logic_error("manifest without outputs needs an explicit path");
        path = outputs_.front().second;
        path += ".manifest.json";
    }
    auto files = [](const auto& list) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& [role, p] : list)
            j.push_back({{"role", role}, {"path", p.string()}, {"sha256", cfgloco::sha256_file(p)}});
        return j;
    };
    nlohmann::json m;
    m["format"] = "cfgloco-manifest 1";
    m["command"] = ctx_.command;
    m["seed"] = ctx_.seed;
    m["config"] = ctx_.resolved_config;
    m["inputs"] = files(inputs_);
    m["outputs"] = files(outputs_);
    if (!extra_.empty()) m["results"] = extra_;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << m.dump(2) << '\n';
    return path;
}

void say(const RunContext& ctx, const std::string& line) {
    if (!ctx.quiet) std::cout << line << std::endl;
}

}  // namespace cli
