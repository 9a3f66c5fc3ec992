// Acquisition model: 2D orthonormal DFT, variable-density Gaussian sampling
// masks, noisy undersampling, and the zero-filled reconstruction baseline.
//
// Frequency-domain grids use standard DFT indexing (DC coefficient at [0,0]);
// fftshift/ifftshift move DC to/from the grid centre for masks built in the
// centred frame and for visualization.
#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "segan/tensor.hpp"

namespace segan::kspace {

using Cplx = std::complex<double>;
using KGrid = Eigen::Matrix<Cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Orthonormal 2D transforms (1/side scaling each way, so idft2(dft2(x)) == x).
// Power-of-two sides take the radix-2 path; anything else multiplies by the
// DFT matrix directly.
KGrid dft2(const KGrid& x);
KGrid dft2(const Tensor& img);  // rank-2 [side,side] real input
KGrid idft2(const KGrid& x);

KGrid fftshift(const KGrid& x);
KGrid ifftshift(const KGrid& x);

struct SamplingMask {
  int side = 0;
  double target_rate = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> selected;  // row-major, DC-at-origin frame

  bool at(int r, int c) const {
    return selected[static_cast<std::size_t>(r) * side + c] != 0;
  }
  int count() const;
  double achieved_rate() const;
};

// Variable-density mask: an exact round(rate*side^2) coefficients, drawn
// without replacement with weights from a Gaussian density (sigma = side/6)
// centred on DC, after unconditionally including the lowest-frequency square
// of side max(2, round(0.04*side*rate)).
SamplingMask make_gaussian_mask(int side, double rate, std::uint64_t seed);
SamplingMask full_mask(int side);

struct KSpaceSample {
  int side = 0;
  double noise_sigma = 0.0;
  SamplingMask mask;
  KGrid values;  // exactly zero wherever mask is false
};

// y = mask .* dft2(x) + mask .* xi, with xi complex Gaussian of per-component
// std noise_sigma, drawn deterministically from the seed at selected
// positions in row-major order.
KSpaceSample undersample(const Tensor& x, const SamplingMask& mask,
                         double noise_sigma, std::uint64_t seed);

// Magnitude of idft2(y), clamped to [0,1].
Tensor zero_fill(const KSpaceSample& y);

// Mask file: "MASK <side> <rate> <seed>" then side lines of '0'/'1'.
void save_mask(const SamplingMask& mask, const std::string& path);
SamplingMask load_mask(const std::string& path);

// K-space dump: "# KSPACE side=<n> sigma=<s>" comment, a "row,col,re,im"
// header, then one CSV line per selected coefficient.
void save_kspace(const KSpaceSample& sample, const std::string& path);
KSpaceSample load_kspace(const std::string& path);

}  // namespace segan::kspace
