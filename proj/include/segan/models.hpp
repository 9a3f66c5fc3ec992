// The SU-Net generator (multi-scale convolution units, U-shaped with skip
// concatenations) and the plain CNN discriminator, plus parameter
// initialization and the binary checkpoint format.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "segan/autodiff.hpp"
#include "segan/rng.hpp"
#include "segan/tensor.hpp"

namespace segan::models {

struct SuNetConfig {
  int n_units = 10;
  std::vector<int> kernel_sides = {2, 4, 6};
  int base_channels = 8;
  double leaky_slope = 0.2;
  int encoder_depth = 3;  // pooling steps on the way down (mirrored going up)
};

// Each unit: one same-padded convolution per kernel size (base_channels
// outputs each), channel concatenation, leaky ReLU. Units are arranged as an
// encoder (pool between units), a mirrored decoder (upsample + skip concat),
// and any units left over run at full resolution; a final 1x1 convolution
// plus sigmoid produces the [0,1] image.
class SuNet {
 public:
  SuNet(SuNetConfig cfg, std::uint64_t seed);

  Var forward(const Var& input) const;  // [1,side,side] or [side,side]

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const SuNetConfig& config() const { return cfg_; }
  // encoder/decoder stages actually used (bounded by the unit budget)
  int effective_depth() const { return depth_; }
  int unit_in_channels(int unit) const;

  void load_tensors(const std::map<std::string, Tensor>& named);
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

 private:
  SuNetConfig cfg_;
  int depth_;
  std::vector<Parameter> params_;
  Var unit_forward(int unit, const Var& h) const;
  const Parameter& at(const std::string& name) const;
};

struct DiscriminatorConfig {
  int n_conv_layers = 11;
  int kernel_side = 3;
  double leaky_slope = 0.2;
  bool use_norm = true;  // per-channel normalization between conv and ReLU
  std::vector<int> widths = {4, 4, 8, 8, 8, 16, 16, 16, 16, 16, 1};
};

// Conv(3x3, same) -> [norm] -> leaky ReLU per layer, spatial halving after
// layers 2, 4, 6, 8; the final layer's single channel is averaged and passed
// through a sigmoid, so scores always land in (0,1).
class Discriminator {
 public:
  // Normalization statistics source:
  //   train        - batch statistics, running averages updated (EMA 0.9)
  //   train_frozen - batch statistics, no state touched (generator steps)
  //   eval         - running averages (batch statistics until initialized)
  enum class Mode { train, train_frozen, eval };

  Discriminator(DiscriminatorConfig cfg, std::uint64_t seed);

  Var forward(const Var& img, Mode mode);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const DiscriminatorConfig& config() const { return cfg_; }

  void load_tensors(const std::map<std::string, Tensor>& named);
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

 private:
  DiscriminatorConfig cfg_;
  std::vector<Parameter> params_;
  std::vector<Tensor> running_mean_, running_var_;
  std::vector<std::uint8_t> stats_ready_;
  const Parameter& at(const std::string& name) const;
};

// Kaiming fan-in draw for convolution kernels, gain adjusted for the leaky
// slope: std = sqrt(2 / (1 + slope^2) / fan_in). Biases start at zero.
Tensor kaiming_conv(int c_out, int c_in, int kh, int kw, double slope,
                    SplitMix64& rng);

std::uint64_t fnv1a64(const std::string& text);

// Checkpoint: "SEGANCP1" magic, embedded config text with its FNV-1a digest,
// then named little-endian f64 tensors. Loading verifies the digest.
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

struct Checkpoint {
  std::string config_text;
  std::map<std::string, Tensor> tensors;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace segan::models
