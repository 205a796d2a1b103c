#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace cfgloco {

/// Minimal CSV writer; fields containing separators or quotes are quoted.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

    void row(const std::vector<std::string>& fields);

private:
    std::ofstream out_;
    std::size_t width_;
};

/// Shortest round-trippable decimal form.
std::string fmt_double(double v);

}  // namespace cfgloco
