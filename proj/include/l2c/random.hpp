#pragma once

#include <cstdint>
#include <random>

#include "l2c/matrix.hpp"

namespace l2c {

using Rng = std::mt19937_64;

/// Matrix with i.i.d. N(0, stddev^2) entries, filled row-major.
Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

/// Independent sub-stream seed (splitmix64 over base and stream id).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace l2c
