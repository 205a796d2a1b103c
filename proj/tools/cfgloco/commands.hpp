#pragma once

#include "run.hpp"

#include <CLI11.hpp>

namespace cli {

// Each adds a subcommand whose callback runs the command against `ctx`.
void add_collect(CLI::App& app, RunContext& ctx);
void add_train(CLI::App& app, RunContext& ctx);
void add_eval(CLI::App& app, RunContext& ctx);
void add_sample(CLI::App& app, RunContext& ctx);
void add_grad_check(CLI::App& app, RunContext& ctx);
void add_latency(CLI::App& app, RunContext& ctx);

// Snapshot of the parsed configuration (file values merged with flags).
void capture_config(const CLI::App& root, RunContext& ctx, const std::string& command);

std::vector<double> parse_list(const std::string& text);

}  // namespace cli
