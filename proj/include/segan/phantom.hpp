// Procedural piecewise-constant phantoms: ellipse/rectangle compositions on a
// flat background, the desk-scale stand-in for real MR slices.
#pragma once

#include <cstdint>
#include <vector>

#include "segan/tensor.hpp"

namespace segan::cli_io {

// One [side,side] image with pixels in [0.05, 0.95], at least three distinct
// intensity regions, deterministic per seed.
Tensor generate_phantom(int side, std::uint64_t seed);

// count images drawn from one seeded stream; requires side a power of two
// >= 16. Images are pairwise distinct by construction of their geometry.
std::vector<Tensor> generate_phantoms(int count, int side, std::uint64_t seed);

}  // namespace segan::cli_io
