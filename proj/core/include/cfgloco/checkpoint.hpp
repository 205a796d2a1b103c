#pragma once

#include <cfgloco/train.hpp>

#include <filesystem>
#include <string>

namespace cfgloco {

/// Writes model config, normalisation stats, sigma schedule, return scaling,
/// float weights, optimizer state and loss history.
void save_checkpoint(const TrainedModel& m, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the weight buffer.
std::string weights_hash(const TrainedModel& m);

}  // namespace cfgloco
