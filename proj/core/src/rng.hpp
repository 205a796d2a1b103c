#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace cfgloco::detail {

// seed_seq only consumes 32-bit words, so split every key.
inline std::mt19937_64 keyed_rng(std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    words.reserve(keys.size() * 2);
    for (auto k : keys) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

}  // namespace cfgloco::detail
