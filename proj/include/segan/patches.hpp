// Disjoint equal-size patch grids and the Bernoulli pair-selection variables
// driving stochastic PCR.
#pragma once

#include <cstdint>
#include <vector>

#include "segan/autodiff.hpp"
#include "segan/tensor.hpp"

namespace segan::patches {

struct PatchPartition {
  int image_side = 0;
  int n_patches = 0;   // perfect square
  int grid = 0;        // sqrt(n_patches)
  int patch_side = 0;  // image_side / grid

  int row0(int patch_id) const { return (patch_id / grid) * patch_side; }
  int col0(int patch_id) const { return (patch_id % grid) * patch_side; }
};

// Rejects n_patches that are not perfect squares whose root divides the image
// side; the error message lists the admissible counts.
PatchPartition make_partition(int image_side, int n_patches);

// Row-major patch ordering; differentiable, so PCR gradients flow back into
// the generated image. Accepts [side,side] or [1,side,side]; patches come out
// as [1,patch_side,patch_side].
std::vector<Var> split(const Var& img, int n_patches);

// Exact inverse of split on pixel values.
Tensor reassemble(const PatchPartition& part, const std::vector<Tensor>& patch_list);

struct PairSelection {
  int n_patches = 0;
  double alpha_bar = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> alpha;  // one flag per unordered pair, i < j

  // position of pair (i,j) in the flattened upper triangle
  static std::size_t pair_index(int i, int j, int n) {
    return static_cast<std::size_t>(i) * n - static_cast<std::size_t>(i) * (i + 1) / 2 +
           (j - i - 1);
  }
  bool at(int i, int j) const { return alpha[pair_index(i, j, n_patches)] != 0; }
  std::size_t n_pairs() const { return alpha.size(); }
  int selected_count() const;
};

// Each of the N(N-1)/2 pairs is selected independently with probability
// alpha_bar; deterministic per seed.
PairSelection sample_pairs(int n_patches, double alpha_bar, std::uint64_t seed);
PairSelection all_pairs(int n_patches);

}  // namespace segan::patches
