#include "segan/patches.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "segan/rng.hpp"

namespace segan::patches {

PatchPartition make_partition(int image_side, int n_patches) {
  if (image_side < 1) throw std::invalid_argument("make_partition: empty image");
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_patches))));
  if (n_patches < 1 || grid * grid != n_patches || image_side % grid != 0) {
    std::ostringstream os;
    os << "make_partition: n_patches " << n_patches << " does not tile a "
       << image_side << "x" << image_side << " image; admissible counts:";
    for (int g = 1; g <= image_side; ++g)
      if (image_side % g == 0) os << ' ' << g * g;
    throw std::invalid_argument(os.str());
  }
  PatchPartition p;
  p.image_side = image_side;
  p.n_patches = n_patches;
  p.grid = grid;
  p.patch_side = image_side / grid;
  return p;
}

std::vector<Var> split(const Var& img, int n_patches) {
  Var x = img;
  if (x.value().rank() == 2) {
    x = reshape(x, {1, x.value().dim(0), x.value().dim(1)});
  }
  if (x.value().rank() != 3 || x.value().dim(0) != 1 ||
      x.value().dim(1) != x.value().dim(2)) {
    throw std::invalid_argument("split: expected a square single-channel image, got " +
                                img.value().shape_str());
  }
  const PatchPartition p = make_partition(x.value().dim(1), n_patches);
  std::vector<Var> out;
  out.reserve(n_patches);
  for (int id = 0; id < n_patches; ++id)
    out.push_back(crop_hw(x, p.row0(id), p.col0(id), p.patch_side, p.patch_side));
  return out;
}

Tensor reassemble(const PatchPartition& part, const std::vector<Tensor>& patch_list) {
  if (static_cast<int>(patch_list.size()) != part.n_patches) {
    throw std::invalid_argument("reassemble: expected " +
                                std::to_string(part.n_patches) + " patches, got " +
                                std::to_string(patch_list.size()));
  }
  Tensor img({part.image_side, part.image_side});
  const int ps = part.patch_side;
  for (int id = 0; id < part.n_patches; ++id) {
    const Tensor& patch = patch_list[id];
    if (patch.numel() != static_cast<Eigen::Index>(ps) * ps) {
      throw std::invalid_argument("reassemble: patch " + std::to_string(id) +
                                  " has wrong size " + patch.shape_str());
    }
    for (int r = 0; r < ps; ++r)
      for (int c = 0; c < ps; ++c)
        img[idx2(part.row0(id) + r, part.col0(id) + c, part.image_side)] =
            patch[idx2(r, c, ps)];
  }
  return img;
}

int PairSelection::selected_count() const {
  int k = 0;
  for (const auto b : alpha) k += b ? 1 : 0;
  return k;
}

PairSelection sample_pairs(int n_patches, double alpha_bar, std::uint64_t seed) {
  if (n_patches < 2) throw std::invalid_argument("sample_pairs: need n_patches >= 2");
  if (!(alpha_bar > 0.0) || alpha_bar > 1.0) {
    throw std::invalid_argument("sample_pairs: alpha_bar must be in (0,1]");
  }
  PairSelection s;
  s.n_patches = n_patches;
  s.alpha_bar = alpha_bar;
  s.seed = seed;
  const std::size_t n = static_cast<std::size_t>(n_patches) * (n_patches - 1) / 2;
  s.alpha.resize(n);
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) s.alpha[i] = rng.next_bernoulli(alpha_bar) ? 1 : 0;
  return s;
}

PairSelection all_pairs(int n_patches) {
  if (n_patches < 2) throw std::invalid_argument("all_pairs: need n_patches >= 2");
  PairSelection s;
  s.n_patches = n_patches;
  s.alpha_bar = 1.0;
  s.alpha.assign(static_cast<std::size_t>(n_patches) * (n_patches - 1) / 2, 1);
  return s;
}

}  // namespace segan::patches
