#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hml {

using Engine = std::mt19937_64;

// Seed for item `index` of the named sub-stream ("taskgen", "init", "eval",
// ...) under one root seed. Distinct (stream, index) pairs give unrelated
// seeds; the mapping is a pure function.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0);

inline Engine make_engine(std::uint64_t root, std::string_view stream, std::uint64_t index = 0) {
    return Engine(derive_seed(root, stream, index));
}

}  // namespace hml
