#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "segan/cli.hpp"
#include "segan/io.hpp"
#include "segan/kspace.hpp"
#include "segan/phantom.hpp"
#include "segan/rng.hpp"
#include "segan/tensor.hpp"

using namespace segan;
using namespace segan::cli_io;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per binary run so reruns never see stale files.
const std::string& scratch() {
  static const std::string dir = [] {
    const std::string d = "/tmp/segan_test_io";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path_of(const std::string& name) { return scratch() + "/" + name; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  REQUIRE(out.good());
}

Tensor random_image(int side, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor t({side, side});
  for (Eigen::Index i = 0; i < t.numel(); ++i) t[i] = rng.next_double();
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(),
                     static_cast<std::size_t>(a.numel()) * sizeof(double)) == 0;
}

// Message of the std::invalid_argument thrown by `fn`, or "" if it ran clean.
template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::stringstream ss(slurp(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("raw images round-trip bit-exactly") {
  Tensor img = random_image(13, 41);
  img[0] = -3.25;             // negative values survive
  img[1] = 1e-308;            // tiny magnitudes survive
  img[2] = 12345.6789101112;  // no quantization anywhere
  const std::string p = path_of("roundtrip.raw");
  write_raw(p, img);
  const Tensor back = read_raw(p);
  CHECK(back.rank() == 2);
  CHECK(back.dim(0) == 13);
  CHECK(back.dim(1) == 13);
  CHECK(bitwise_equal(img, back));

  // header is a single ASCII side line followed by the flat payload
  const std::string blob = slurp(p);
  CHECK(blob.substr(0, 3) == "13\n");
  CHECK(blob.size() == 3 + 13 * 13 * 8);

  CHECK_THROWS_AS(write_raw(path_of("bad.raw"), Tensor({2, 3})),
                  std::invalid_argument);
  CHECK_THROWS_AS(write_raw(path_of("bad.raw"), Tensor({1, 4, 4})),
                  std::invalid_argument);
}

TEST_CASE("raw reader names expected and actual byte counts on truncation") {
  const std::string p = path_of("trunc.raw");
  write_raw(p, random_image(16, 7));
  const std::string blob = slurp(p);

  // drop the last 40 payload bytes
  spit(p, blob.substr(0, blob.size() - 40));
  std::string msg = error_of([&] { read_raw(p); });
  CHECK(contains(msg, "truncated"));
  CHECK(contains(msg, std::to_string(16 * 16 * 8)));        // expected
  CHECK(contains(msg, std::to_string(16 * 16 * 8 - 40)));   // actual

  // trailing garbage is just as much a corruption as truncation
  spit(p, blob + "xx");
  msg = error_of([&] { read_raw(p); });
  CHECK(contains(msg, std::to_string(16 * 16 * 8 + 2)));

  spit(p, "16");  // no newline at all
  CHECK(contains(error_of([&] { read_raw(p); }), "no header line"));
  spit(p, "sixteen\n" + blob.substr(3));
  CHECK(contains(error_of([&] { read_raw(p); }), "not an ASCII side"));
  spit(p, "16x\n" + blob.substr(3));
  CHECK(contains(error_of([&] { read_raw(p); }), "not an ASCII side"));
  spit(p, "0\n");
  CHECK(contains(error_of([&] { read_raw(p); }), "non-positive side"));
  CHECK_THROWS_AS(read_raw(path_of("no_such_file.raw")), std::invalid_argument);
}

TEST_CASE("pgm round-trips within one 16-bit quantization step") {
  const Tensor img = random_image(12, 77);
  const std::string p = path_of("roundtrip.pgm");
  write_pgm(p, img);
  const Tensor back = read_pgm(p);
  REQUIRE(back.shape() == img.shape());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < img.numel(); ++i)
    worst = std::max(worst, std::abs(img[i] - back[i]));
  CHECK(worst <= 0.5 / 65535.0 + 1e-15);

  // a second pass through the quantizer is the identity
  write_pgm(p, back);
  CHECK(bitwise_equal(back, read_pgm(p)));

  // out-of-range pixels clamp to the ends of the scale
  Tensor wild({2, 2});
  wild[0] = -3.0;
  wild[1] = 42.0;
  wild[2] = 0.0;
  wild[3] = 1.0;
  write_pgm(p, wild);
  const Tensor clamped = read_pgm(p);
  CHECK(clamped[0] == 0.0);
  CHECK(clamped[1] == 1.0);
  CHECK(clamped[2] == 0.0);
  CHECK(clamped[3] == 1.0);
}

TEST_CASE("pgm reader rejects foreign or damaged files") {
  const std::string p = path_of("damaged.pgm");
  write_pgm(p, random_image(8, 3));
  const std::string blob = slurp(p);

  spit(p, "P2" + blob.substr(2));
  CHECK(contains(error_of([&] { read_pgm(p); }), "not binary PGM"));

  spit(p, "P5\n8 8\n255\n" + std::string(64, '\0'));
  CHECK(contains(error_of([&] { read_pgm(p); }), "65535"));

  spit(p, blob.substr(0, blob.size() - 3));
  std::string msg = error_of([&] { read_pgm(p); });
  CHECK(contains(msg, "truncated"));
  CHECK(contains(msg, std::to_string(8 * 8 * 2)));
  CHECK(contains(msg, std::to_string(8 * 8 * 2 - 3)));

  spit(p, "P5\n8\n");
  CHECK(contains(error_of([&] { read_pgm(p); }), "header truncated"));
}

TEST_CASE("run config round-trips through its text form") {
  const RunConfig def;
  CHECK(RunConfig::parse_text(def.to_text()).to_text() == def.to_text());

  // exercise every field with a non-default value
  RunConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.adam_beta1 = 0.85;
  cfg.adam_beta2 = 0.995;
  cfg.adam_eps = 1e-9;
  cfg.weight_decay = 0.02;
  cfg.batch_size = 7;
  cfg.n_disc_steps = 2;
  cfg.total_iterations = 321;
  cfg.seed = 9876543210123456789ULL;
  cfg.lambda1 = 0.5;
  cfg.lambda2 = 2.25;
  cfg.lambda3 = 17.0;
  cfg.correlation = "combo(0.5*pearson, 0.5*gaussian(2))";
  cfg.alpha_bar = 0.375;
  cfg.n_patches = 25;
  cfg.eval_every = 13;
  cfg.checkpoint_every = 26;
  cfg.divergence_factor = 55.5;
  cfg.ssim_window = 9;
  cfg.ssim_sigma = 2.5;
  cfg.ssim_k1 = 0.02;
  cfg.ssim_k2 = 0.04;
  cfg.side = 64;
  cfg.n_phantoms = 5;
  cfg.n_val = 3;
  cfg.phantom_seed = 17;
  cfg.rate = 0.45;
  cfg.noise_sigma = 0.03;
  cfg.mask_seed = 23;
  cfg.gen_units = 4;
  cfg.gen_kernels = {3, 5, 7};
  cfg.gen_channels = 6;
  cfg.gen_depth = 2;
  cfg.leaky_slope = 0.1;
  cfg.disc_layers = 5;
  cfg.disc_widths = {2, 4, 8, 8, 1};
  cfg.disc_kernel = 5;
  cfg.disc_norm = "batch";

  const std::string text = cfg.to_text();
  const RunConfig back = RunConfig::parse_text(text);
  CHECK(back.to_text() == text);
  CHECK(back.seed == cfg.seed);
  CHECK(back.correlation == cfg.correlation);
  CHECK(back.gen_kernels == cfg.gen_kernels);
  CHECK(back.disc_widths == cfg.disc_widths);
  CHECK(back.learning_rate == cfg.learning_rate);  // %.17g is lossless
  CHECK(back.divergence_factor == cfg.divergence_factor);
}

TEST_CASE("run config tolerates comments, blank lines and loose spacing") {
  const RunConfig cfg = RunConfig::parse_text(
      "# a run shrunk for a quick look\n"
      "\n"
      "   side=16   # inline comment\n"
      "\tbatch_size\t=\t2\n"
      "correlation = gaussian( 0.5 )  \n"
      "gen_kernels = 2 , 3 ,4\n"
      "#side = 99\n");
  CHECK(cfg.side == 16);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.correlation == "gaussian( 0.5 )");
  CHECK(cfg.gen_kernels == std::vector<int>{2, 3, 4});
  CHECK(cfg.n_patches == 64);  // untouched keys keep their defaults
}

TEST_CASE("run config rejects broken documents with line diagnostics") {
  std::string msg =
      error_of([] { RunConfig::parse_text("side = 16\nlearning_rte = 1\n"); });
  CHECK(contains(msg, "unknown key 'learning_rte'"));
  CHECK(contains(msg, "line 2"));

  msg = error_of([] { RunConfig::parse_text("side = 16\n\nside = 32\n"); });
  CHECK(contains(msg, "duplicate key 'side'"));
  CHECK(contains(msg, "line 3"));

  msg = error_of([] { RunConfig::parse_text("side 16\n"); });
  CHECK(contains(msg, "line 1"));
  CHECK(contains(msg, "'key = value'"));

  msg = error_of([] { RunConfig::parse_text("side =\n"); });
  CHECK(contains(msg, "empty key or value"));

  msg = error_of([] { RunConfig::parse_text("rate = fast\n"); });
  CHECK(contains(msg, "'fast'"));
  CHECK(contains(msg, "not a number"));

  msg = error_of([] { RunConfig::parse_text("side = 16.5\n"); });
  CHECK(contains(msg, "not an integer"));

  msg = error_of([] { RunConfig::parse_text("seed = -4\n"); });
  CHECK(contains(msg, "not an unsigned integer"));

  msg = error_of([] { RunConfig::parse_text("gen_kernels = 2,x\n"); });
  CHECK(contains(msg, "not an integer"));

  msg = error_of([] { RunConfig::parse_text("disc_norm = sometimes\n"); });
  CHECK(contains(msg, "disc_norm"));

  // the correlation expression is validated at parse time, not at first use
  CHECK_THROWS_AS(RunConfig::parse_text("correlation = pearson(\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse_text("correlation = polynomial(0)\n"),
                  std::invalid_argument);
}

TEST_CASE("derived train, generator and discriminator configs mirror the run") {
  RunConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 3;
  cfg.lambda1 = 4.0;
  cfg.lambda2 = 5.0;
  cfg.lambda3 = 6.0;
  cfg.alpha_bar = 0.2;
  cfg.n_patches = 36;
  cfg.ssim_window = 5;
  cfg.gen_units = 4;
  cfg.gen_kernels = {2, 3};
  cfg.gen_channels = 4;
  cfg.gen_depth = 2;
  cfg.leaky_slope = 0.15;
  cfg.disc_layers = 5;
  cfg.disc_widths = {4, 4, 8, 8, 1};
  cfg.disc_kernel = 5;

  const auto t = cfg.train_config();
  CHECK(t.adam.learning_rate == 2e-3);
  CHECK(t.batch_size == 3);
  CHECK(t.weights.lambda1 == 4.0);
  CHECK(t.weights.lambda2 == 5.0);
  CHECK(t.weights.lambda3 == 6.0);
  CHECK(t.alpha_bar == 0.2);
  CHECK(t.n_patches == 36);
  CHECK(t.ssim.window_side == 5);

  const auto g = cfg.gen_config();
  CHECK(g.n_units == 4);
  CHECK(g.kernel_sides == std::vector<int>{2, 3});
  CHECK(g.base_channels == 4);
  CHECK(g.encoder_depth == 2);
  CHECK(g.leaky_slope == 0.15);

  const auto d = cfg.disc_config();
  CHECK(d.n_conv_layers == 5);
  CHECK(d.widths == std::vector<int>{4, 4, 8, 8, 1});
  CHECK(d.kernel_side == 5);
  CHECK(d.leaky_slope == 0.15);

  // auto normalization turns on once batches are big enough to carry stats
  CHECK_FALSE(cfg.disc_config().use_norm);  // batch_size 3
  cfg.batch_size = 8;
  CHECK(cfg.disc_config().use_norm);
  cfg.disc_norm = "none";
  CHECK_FALSE(cfg.disc_config().use_norm);
  cfg.disc_norm = "batch";
  cfg.batch_size = 1;
  CHECK(cfg.disc_config().use_norm);
}

TEST_CASE("dataset assembly holds out the tail and derives per-item noise") {
  RunConfig cfg;
  cfg.side = 16;
  cfg.n_phantoms = 5;
  cfg.n_val = 3;
  cfg.phantom_seed = 21;
  cfg.rate = 0.4;
  cfg.mask_seed = 6;
  cfg.noise_sigma = 0.05;

  const Dataset ds = build_dataset(cfg);
  REQUIRE(ds.train.size() == 5);
  REQUIRE(ds.val.size() == 3);
  CHECK(ds.mask.side == 16);
  CHECK(ds.mask.seed == 6);
  CHECK(ds.mask.target_rate == 0.4);

  // the split is by position: train gets the first phantoms, val the rest
  const auto phantoms = generate_phantoms(8, 16, 21);
  for (int i = 0; i < 5; ++i)
    CHECK(bitwise_equal(ds.train[static_cast<std::size_t>(i)].x,
                        phantoms[static_cast<std::size_t>(i)]));
  for (int i = 0; i < 3; ++i)
    CHECK(bitwise_equal(ds.val[static_cast<std::size_t>(i)].x,
                        phantoms[static_cast<std::size_t>(5 + i)]));

  // make_sample with the global item index reproduces each zf input exactly,
  // so an external caller can mirror any dataset item
  for (int i = 0; i < 3; ++i) {
    const auto mirror = make_sample(phantoms[static_cast<std::size_t>(5 + i)],
                                    ds.mask, 0.05, 6, 5 + i);
    CHECK(bitwise_equal(mirror.zf, ds.val[static_cast<std::size_t>(i)].zf));
  }
  // a wrong index draws a different noise stream
  const auto off = make_sample(phantoms[5], ds.mask, 0.05, 6, 4);
  CHECK_FALSE(bitwise_equal(off.zf, ds.val[0].zf));

  CHECK_THROWS_AS([&] {
    RunConfig bad = cfg;
    bad.n_phantoms = 0;
    build_dataset(bad);
  }(), std::invalid_argument);
}

TEST_CASE("mask subcommand is deterministic and mirrors the library") {
  const std::string p1 = path_of("mask_a.txt");
  const std::string p2 = path_of("mask_b.txt");
  REQUIRE(cli({"mask", "--side", "16", "--rate", "0.25", "--seed", "9",
               "--out", p1}) == 0);
  REQUIRE(cli({"mask", "--side", "16", "--rate", "0.25", "--seed", "9",
               "--out", p2}) == 0);
  CHECK(slurp(p1) == slurp(p2));

  const auto loaded = kspace::load_mask(p1);
  const auto direct = kspace::make_gaussian_mask(16, 0.25, 9);
  CHECK(loaded.side == direct.side);
  CHECK(loaded.seed == direct.seed);
  CHECK(loaded.selected == direct.selected);
}

TEST_CASE("phantom, undersample and zerofill chain like the library calls") {
  const std::string dir = path_of("pipeline");
  REQUIRE(cli({"phantom", "--count", "2", "--side", "16", "--seed", "5",
               "--out", dir}) == 0);
  REQUIRE(fs::exists(dir + "/phantom_000.raw"));
  REQUIRE(fs::exists(dir + "/phantom_001.raw"));
  const auto imgs = generate_phantoms(2, 16, 5);
  CHECK(bitwise_equal(read_raw(dir + "/phantom_000.raw"), imgs[0]));
  CHECK(bitwise_equal(read_raw(dir + "/phantom_001.raw"), imgs[1]));

  // the pgm variant writes the quantized twin
  REQUIRE(cli({"phantom", "--count", "1", "--side", "16", "--seed", "5",
               "--out", dir, "--format", "pgm"}) == 0);
  CHECK(fs::exists(dir + "/phantom_000.pgm"));

  const std::string mask_path = path_of("pipeline_mask.txt");
  REQUIRE(cli({"mask", "--side", "16", "--rate", "0.3", "--seed", "2", "--out",
               mask_path}) == 0);

  const std::string k_cli = path_of("pipeline_k.csv");
  REQUIRE(cli({"undersample", "--image", dir + "/phantom_000.raw", "--mask",
               mask_path, "--sigma", "0.02", "--noise-seed", "4", "--out",
               k_cli}) == 0);
  const std::string k_lib = path_of("pipeline_k_lib.csv");
  kspace::save_kspace(
      kspace::undersample(imgs[0], kspace::load_mask(mask_path), 0.02, 4),
      k_lib);
  CHECK(slurp(k_cli) == slurp(k_lib));

  const std::string z_cli = path_of("pipeline_zf.raw");
  REQUIRE(cli({"zerofill", "--kspace", k_cli, "--out", z_cli}) == 0);
  CHECK(bitwise_equal(read_raw(z_cli),
                      kspace::zero_fill(kspace::load_kspace(k_cli))));
}

TEST_CASE("eval reproduces the training run's final validation metrics") {
  const std::string run = path_of("run");
  const std::string config_path = path_of("run_config.txt");
  spit(config_path,
       "side = 16\n"
       "n_phantoms = 4\n"
       "n_val = 2\n"
       "batch_size = 2\n"
       "total_iterations = 6\n"
       "eval_every = 3\n"
       "checkpoint_every = 0\n"
       "n_patches = 16\n"
       "alpha_bar = 0.5\n"
       "ssim_window = 5\n"
       "gen_units = 3\n"
       "gen_kernels = 2,3\n"
       "gen_channels = 2\n"
       "gen_depth = 1\n"
       "disc_layers = 3\n"
       "disc_widths = 4,4,1\n"
       "noise_sigma = 0.01\n"
       "seed = 11\n");
  REQUIRE(cli({"train", "--config", config_path, "--out-dir", run}) == 0);

  // the echoed config is the canonical rendering of the parsed file
  CHECK(slurp(run + "/config.txt") ==
        RunConfig::parse_file(config_path).to_text());
  REQUIRE(fs::exists(run + "/checkpoint_final.ckpt"));
  REQUIRE(fs::exists(run + "/val_000.raw"));
  REQUIRE(fs::exists(run + "/val_001_zf.raw"));

  // metrics.csv: header then one row per evaluation, final row at iter 6
  const auto metric_lines = read_lines(run + "/metrics.csv");
  REQUIRE(metric_lines.size() == 3);
  CHECK(metric_lines[0] == "iter,nmse,psnr,ssim,lssm20,lssm40");
  const auto final_row = split_csv(metric_lines.back());
  REQUIRE(final_row.size() == 6);
  CHECK(final_row[0] == "6");

  // scoring the final checkpoint on the saved validation images must land on
  // the same numbers, digit for digit
  const std::string eval_csv = path_of("eval.csv");
  REQUIRE(cli({"eval", "--checkpoint", run + "/checkpoint_final.ckpt",
               "--dataset", run, "--out", eval_csv}) == 0);
  const auto eval_lines = read_lines(eval_csv);
  REQUIRE(eval_lines.size() == 6);  // digest, header, 2 items, mean, std
  CHECK(eval_lines[0].rfind("# config_digest=", 0) == 0);
  CHECK(eval_lines[1] == "item,nmse,ssim,psnr,lssm20,lssm40");
  const auto mean_row = split_csv(eval_lines[4]);
  REQUIRE(mean_row.size() == 6);
  REQUIRE(mean_row[0] == "mean");
  CHECK(mean_row[1] == final_row[1]);  // nmse
  CHECK(mean_row[3] == final_row[2]);  // psnr (column orders differ)
  CHECK(mean_row[2] == final_row[3]);  // ssim
  CHECK(mean_row[4] == final_row[4]);  // lssm20
  CHECK(mean_row[5] == final_row[5]);  // lssm40

  // without the *_zf.raw sidecar, eval rebuilds the zero-filled input from
  // the mask and the item-index rule -- same numbers for the first val image
  const std::string bare = path_of("bare_val");
  fs::create_directories(bare);
  fs::copy_file(run + "/val_000.raw", bare + "/val_000.raw");
  const std::string bare_csv = path_of("eval_bare.csv");
  REQUIRE(cli({"eval", "--checkpoint", run + "/checkpoint_final.ckpt",
               "--dataset", bare, "--out", bare_csv}) == 0);
  const auto bare_row = split_csv(read_lines(bare_csv)[2]);
  const auto item0_row = split_csv(eval_lines[2]);
  REQUIRE(bare_row.size() == 6);
  for (int c = 1; c < 6; ++c)
    CHECK(bare_row[static_cast<std::size_t>(c)] ==
          item0_row[static_cast<std::size_t>(c)]);

  // the regret subcommand consumes the run's training log
  const std::string regret_csv = path_of("regret_cli.csv");
  REQUIRE(cli({"regret", "--train-log", run + "/train_log.csv", "--out",
               regret_csv, "--constants", run + "/bound_constants.txt"}) == 0);
  const auto regret_lines = read_lines(regret_csv);
  REQUIRE(regret_lines.size() == 7);  // header + 6 iterations
  CHECK(regret_lines[0] == "T,C,C_star,R,avg_regret,bound");
}

TEST_CASE("cli exit codes separate usage, validation and missing inputs") {
  CHECK(cli({}) == 1);                       // a subcommand is required
  CHECK(cli({"frobnicate"}) == 1);           // unknown subcommand
  CHECK(cli({"eval"}) == 1);                 // missing required options
  CHECK(cli({"phantom", "--format", "bmp"}) == 1);
  CHECK(cli({"--help"}) == 0);

  // well-formed invocations that fail validation report code 2
  CHECK(cli({"zerofill", "--kspace", path_of("absent.csv")}) == 2);
  CHECK(cli({"eval", "--checkpoint", path_of("absent.ckpt"), "--dataset",
             scratch()}) == 2);
  const std::string bad_cfg = path_of("bad_config.txt");
  spit(bad_cfg, "side = 16\nlearning_rte = 1\n");
  CHECK(cli({"train", "--config", bad_cfg, "--out-dir", path_of("bad_run")}) ==
        2);

  // a filtered gradient run passes; an unmatched filter is an error
  CHECK(cli({"gradcheck", "--module", "loss/mse"}) == 0);
  CHECK(cli({"gradcheck", "--module", "no-such-check"}) == 2);
}
