// File formats and run configuration: flat little-endian raw images, 16-bit
// binary PGM, the key=value run config with verbatim echo, and the phantom
// dataset assembly shared by the train and eval commands.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segan/kspace.hpp"
#include "segan/models.hpp"
#include "segan/tensor.hpp"
#include "segan/trainer.hpp"

namespace segan::cli_io {

// Raw format: one ASCII line with the side, then side*side little-endian
// 8-byte reals, row-major. Round-trips bit-exactly.
void write_raw(const std::string& path, const Tensor& img);
Tensor read_raw(const std::string& path);

// Binary PGM (P5, maxval 65535, most significant byte first); pixels are
// clamped to [0,1] and quantized, so round trips are exact to 1/65535.
void write_pgm(const std::string& path, const Tensor& img);
Tensor read_pgm(const std::string& path);

// Every knob of a run as a flat key = value document ('#' starts a comment,
// unknown keys are rejected). `to_text` renders the effective config with
// full precision; parse(to_text()) reproduces the config exactly.
struct RunConfig {
  // training
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  int batch_size = 4;
  int n_disc_steps = 1;
  int total_iterations = 2000;
  std::uint64_t seed = 1;
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double lambda3 = 100.0;
  std::string correlation = "polynomial(2, 1, 1)";
  double alpha_bar = 0.1;
  int n_patches = 64;
  int eval_every = 100;
  int checkpoint_every = 500;
  double divergence_factor = 1000.0;
  // ssim
  int ssim_window = 7;
  double ssim_sigma = 1.5;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  // data
  int side = 32;
  int n_phantoms = 16;
  int n_val = 4;
  std::uint64_t phantom_seed = 7;
  double rate = 0.3;
  double noise_sigma = 0.0;
  std::uint64_t mask_seed = 3;
  // generator
  int gen_units = 10;
  std::vector<int> gen_kernels = {2, 4, 6};
  int gen_channels = 8;
  int gen_depth = 3;
  double leaky_slope = 0.2;
  // discriminator
  int disc_layers = 11;
  std::vector<int> disc_widths = {4, 4, 8, 8, 8, 16, 16, 16, 16, 16, 1};
  int disc_kernel = 3;
  std::string disc_norm = "auto";  // auto | batch | none

  static RunConfig parse_text(const std::string& text);
  static RunConfig parse_file(const std::string& path);
  std::string to_text() const;

  // Derived views. Model seeds are offset from the run seed so the three
  // streams (training loop, generator init, discriminator init) stay
  // independent: gen uses seed+1, disc uses seed+2.
  trainer::TrainConfig train_config() const;
  models::SuNetConfig gen_config() const;
  models::DiscriminatorConfig disc_config() const;  // resolves disc_norm=auto
};

// Phantoms, the sampling mask, and zero-filled inputs for one run. The last
// n_val phantoms are held out; per-item noise seeds are mask_seed + 101 +
// global item index.
struct Dataset {
  std::vector<trainer::TrainSample> train;
  std::vector<trainer::TrainSample> val;
  kspace::SamplingMask mask;
};
Dataset build_dataset(const RunConfig& cfg);

// One zero-filled sample for an externally supplied image, same noise-seed
// rule as build_dataset.
trainer::TrainSample make_sample(const Tensor& x, const kspace::SamplingMask& mask,
                                 double noise_sigma, std::uint64_t mask_seed,
                                 int item_index);

}  // namespace segan::cli_io
