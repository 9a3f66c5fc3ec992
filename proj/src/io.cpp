#include "segan/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "segan/correlation.hpp"
#include "segan/phantom.hpp"

namespace segan::cli_io {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f)
    fail("cannot open '" + path + "' for " +
         (mode[0] == 'r' ? "reading" : "writing"));
  return f;
}

std::string read_all(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f.get())) > 0) out.append(buf, n);
  return out;
}

void require_square(const Tensor& img, const char* what) {
  if (img.rank() != 2 || img.dim(0) < 1 || img.dim(0) != img.dim(1))
    fail(std::string(what) + ": expected a [side,side] image, got " +
         img.shape_str());
}

}  // namespace

// ---- raw images -------------------------------------------------------------

void write_raw(const std::string& path, const Tensor& img) {
  require_square(img, "write_raw");
  FilePtr f = open_file(path, "wb");
  std::fprintf(f.get(), "%d\n", img.dim(0));
  static_assert(sizeof(double) == 8);
  const auto n = static_cast<std::size_t>(img.numel());
  if (std::fwrite(img.data(), sizeof(double), n, f.get()) != n)
    fail("write_raw: short write to '" + path + "'");
}

Tensor read_raw(const std::string& path) {
  const std::string blob = read_all(path);
  const auto nl = blob.find('\n');
  if (nl == std::string::npos)
    fail("read_raw: '" + path + "' has no header line (byte offset 0)");
  int side = 0;
  try {
    std::size_t used = 0;
    side = std::stoi(blob.substr(0, nl), &used);
    if (used != nl) throw std::invalid_argument("");
  } catch (const std::exception&) {
    fail("read_raw: '" + path + "' header is not an ASCII side (byte offset 0)");
  }
  if (side < 1) fail("read_raw: non-positive side in '" + path + "'");
  const std::size_t expect = static_cast<std::size_t>(side) * side * 8;
  const std::size_t have = blob.size() - nl - 1;
  if (have != expect)
    fail("read_raw: '" + path + "' truncated: expected " +
         std::to_string(expect) + " payload bytes after offset " +
         std::to_string(nl + 1) + ", got " + std::to_string(have));
  Tensor img({side, side});
  std::memcpy(img.data(), blob.data() + nl + 1, expect);
  return img;
}

// ---- PGM ---------------------------------------------------------------------

void write_pgm(const std::string& path, const Tensor& img) {
  require_square(img, "write_pgm");
  FilePtr f = open_file(path, "wb");
  std::fprintf(f.get(), "P5\n%d %d\n65535\n", img.dim(1), img.dim(0));
  for (Eigen::Index i = 0; i < img.numel(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img[i]));
    const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
    const unsigned char b[2] = {static_cast<unsigned char>(q >> 8),
                                static_cast<unsigned char>(q & 0xff)};
    if (std::fwrite(b, 1, 2, f.get()) != 2)
      fail("write_pgm: short write to '" + path + "'");
  }
}

Tensor read_pgm(const std::string& path) {
  const std::string blob = read_all(path);
  std::size_t pos = 0;
  const auto token = [&]() -> std::string {
    while (pos < blob.size() &&
           std::isspace(static_cast<unsigned char>(blob[pos])))
      ++pos;
    const std::size_t start = pos;
    while (pos < blob.size() &&
           !std::isspace(static_cast<unsigned char>(blob[pos])))
      ++pos;
    if (start == pos)
      fail("read_pgm: '" + path + "' header truncated at byte offset " +
           std::to_string(start));
    return blob.substr(start, pos - start);
  };
  if (token() != "P5") fail("read_pgm: '" + path + "' is not binary PGM (P5)");
  // pull the tokens before converting so a short header keeps its own message
  const std::string ws = token(), hs = token(), ms = token();
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxval = std::stoi(ms);
  } catch (const std::exception&) {
    fail("read_pgm: '" + path + "' has a malformed header");
  }
  if (w < 1 || h < 1) fail("read_pgm: bad dimensions in '" + path + "'");
  if (maxval != 65535)
    fail("read_pgm: '" + path + "' must be 16-bit (maxval 65535), got " +
         std::to_string(maxval));
  ++pos;  // the single whitespace byte after maxval
  const std::size_t expect = static_cast<std::size_t>(w) * h * 2;
  const std::size_t have = blob.size() >= pos ? blob.size() - pos : 0;
  if (have != expect)
    fail("read_pgm: '" + path + "' truncated: expected " +
         std::to_string(expect) + " payload bytes after offset " +
         std::to_string(pos) + ", got " + std::to_string(have));
  Tensor img({h, w});
  for (Eigen::Index i = 0; i < img.numel(); ++i) {
    const auto hi = static_cast<unsigned char>(blob[pos + 2 * static_cast<std::size_t>(i)]);
    const auto lo = static_cast<unsigned char>(blob[pos + 2 * static_cast<std::size_t>(i) + 1]);
    img[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return img;
}

// ---- run config ----------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    fail("config: value '" + v + "' for key '" + key + "' is not a number");
  }
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return static_cast<int>(d);
  } catch (const std::exception&) {
    fail("config: value '" + v + "' for key '" + key + "' is not an integer");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    // stoull would wrap a leading minus around instead of rejecting it
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("");
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    fail("config: value '" + v + "' for key '" + key +
         "' is not an unsigned integer");
  }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_int(trim(part), key));
  if (out.empty()) fail("config: key '" + key + "' needs at least one integer");
  return out;
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::vector<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(line_no) +
           " is not a 'key = value' pair: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      fail("config: line " + std::to_string(line_no) +
           " has an empty key or value");
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      fail("config: duplicate key '" + key + "' (line " +
           std::to_string(line_no) + ")");
    seen.push_back(key);

    if (key == "learning_rate") cfg.learning_rate = parse_double(value, key);
    else if (key == "adam_beta1") cfg.adam_beta1 = parse_double(value, key);
    else if (key == "adam_beta2") cfg.adam_beta2 = parse_double(value, key);
    else if (key == "adam_eps") cfg.adam_eps = parse_double(value, key);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(value, key);
    else if (key == "batch_size") cfg.batch_size = parse_int(value, key);
    else if (key == "n_disc_steps") cfg.n_disc_steps = parse_int(value, key);
    else if (key == "total_iterations") cfg.total_iterations = parse_int(value, key);
    else if (key == "seed") cfg.seed = parse_u64(value, key);
    else if (key == "lambda1") cfg.lambda1 = parse_double(value, key);
    else if (key == "lambda2") cfg.lambda2 = parse_double(value, key);
    else if (key == "lambda3") cfg.lambda3 = parse_double(value, key);
    else if (key == "correlation") cfg.correlation = value;
    else if (key == "alpha_bar") cfg.alpha_bar = parse_double(value, key);
    else if (key == "n_patches") cfg.n_patches = parse_int(value, key);
    else if (key == "eval_every") cfg.eval_every = parse_int(value, key);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_int(value, key);
    else if (key == "divergence_factor") cfg.divergence_factor = parse_double(value, key);
    else if (key == "ssim_window") cfg.ssim_window = parse_int(value, key);
    else if (key == "ssim_sigma") cfg.ssim_sigma = parse_double(value, key);
    else if (key == "ssim_k1") cfg.ssim_k1 = parse_double(value, key);
    else if (key == "ssim_k2") cfg.ssim_k2 = parse_double(value, key);
    else if (key == "side") cfg.side = parse_int(value, key);
    else if (key == "n_phantoms") cfg.n_phantoms = parse_int(value, key);
    else if (key == "n_val") cfg.n_val = parse_int(value, key);
    else if (key == "phantom_seed") cfg.phantom_seed = parse_u64(value, key);
    else if (key == "rate") cfg.rate = parse_double(value, key);
    else if (key == "noise_sigma") cfg.noise_sigma = parse_double(value, key);
    else if (key == "mask_seed") cfg.mask_seed = parse_u64(value, key);
    else if (key == "gen_units") cfg.gen_units = parse_int(value, key);
    else if (key == "gen_kernels") cfg.gen_kernels = parse_int_list(value, key);
    else if (key == "gen_channels") cfg.gen_channels = parse_int(value, key);
    else if (key == "gen_depth") cfg.gen_depth = parse_int(value, key);
    else if (key == "leaky_slope") cfg.leaky_slope = parse_double(value, key);
    else if (key == "disc_layers") cfg.disc_layers = parse_int(value, key);
    else if (key == "disc_widths") cfg.disc_widths = parse_int_list(value, key);
    else if (key == "disc_kernel") cfg.disc_kernel = parse_int(value, key);
    else if (key == "disc_norm") {
      if (value != "auto" && value != "batch" && value != "none")
        fail("config: disc_norm must be auto, batch or none, got '" + value + "'");
      cfg.disc_norm = value;
    } else {
      fail("config: unknown key '" + key + "' (line " + std::to_string(line_no) + ")");
    }
  }
  // surface syntax errors early rather than at first use
  correlation::parse_corr(cfg.correlation);
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  return parse_text(read_all(path));
}

std::string RunConfig::to_text() const {
  char buf[128];
  std::string out;
  const auto putd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s = %.17g\n", key, v);
    out += buf;
  };
  const auto puti = [&](const char* key, long long v) {
    std::snprintf(buf, sizeof buf, "%s = %lld\n", key, v);
    out += buf;
  };
  const auto putu = [&](const char* key, std::uint64_t v) {
    std::snprintf(buf, sizeof buf, "%s = %llu\n", key,
                  static_cast<unsigned long long>(v));
    out += buf;
  };
  const auto puts = [&](const char* key, const std::string& v) {
    out += key;
    out += " = ";
    out += v;
    out += "\n";
  };
  putd("learning_rate", learning_rate);
  putd("adam_beta1", adam_beta1);
  putd("adam_beta2", adam_beta2);
  putd("adam_eps", adam_eps);
  putd("weight_decay", weight_decay);
  puti("batch_size", batch_size);
  puti("n_disc_steps", n_disc_steps);
  puti("total_iterations", total_iterations);
  putu("seed", seed);
  putd("lambda1", lambda1);
  putd("lambda2", lambda2);
  putd("lambda3", lambda3);
  puts("correlation", correlation);
  putd("alpha_bar", alpha_bar);
  puti("n_patches", n_patches);
  puti("eval_every", eval_every);
  puti("checkpoint_every", checkpoint_every);
  putd("divergence_factor", divergence_factor);
  puti("ssim_window", ssim_window);
  putd("ssim_sigma", ssim_sigma);
  putd("ssim_k1", ssim_k1);
  putd("ssim_k2", ssim_k2);
  puti("side", side);
  puti("n_phantoms", n_phantoms);
  puti("n_val", n_val);
  putu("phantom_seed", phantom_seed);
  putd("rate", rate);
  putd("noise_sigma", noise_sigma);
  putu("mask_seed", mask_seed);
  puti("gen_units", gen_units);
  puts("gen_kernels", join_ints(gen_kernels));
  puti("gen_channels", gen_channels);
  puti("gen_depth", gen_depth);
  putd("leaky_slope", leaky_slope);
  puti("disc_layers", disc_layers);
  puts("disc_widths", join_ints(disc_widths));
  puti("disc_kernel", disc_kernel);
  puts("disc_norm", disc_norm);
  return out;
}

trainer::TrainConfig RunConfig::train_config() const {
  trainer::TrainConfig t;
  t.adam.learning_rate = learning_rate;
  t.adam.beta1 = adam_beta1;
  t.adam.beta2 = adam_beta2;
  t.adam.eps = adam_eps;
  t.adam.weight_decay = weight_decay;
  t.batch_size = batch_size;
  t.n_disc_steps = n_disc_steps;
  t.total_iterations = total_iterations;
  t.seed = seed;
  t.weights = {lambda1, lambda2, lambda3};
  t.corr = correlation::parse_corr(correlation);
  t.alpha_bar = alpha_bar;
  t.n_patches = n_patches;
  t.ssim.window_side = ssim_window;
  t.ssim.gaussian_sigma = ssim_sigma;
  t.ssim.k1 = ssim_k1;
  t.ssim.k2 = ssim_k2;
  t.eval_every = eval_every;
  t.checkpoint_every = checkpoint_every;
  t.divergence_factor = divergence_factor;
  return t;
}

models::SuNetConfig RunConfig::gen_config() const {
  models::SuNetConfig g;
  g.n_units = gen_units;
  g.kernel_sides = gen_kernels;
  g.base_channels = gen_channels;
  g.leaky_slope = leaky_slope;
  g.encoder_depth = gen_depth;
  return g;
}

models::DiscriminatorConfig RunConfig::disc_config() const {
  models::DiscriminatorConfig d;
  d.n_conv_layers = disc_layers;
  d.kernel_side = disc_kernel;
  d.leaky_slope = leaky_slope;
  d.widths = disc_widths;
  // statistics over small batches are noise; auto turns normalization off
  d.use_norm = disc_norm == "batch" || (disc_norm == "auto" && batch_size >= 8);
  return d;
}

// ---- dataset -------------------------------------------------------------------

trainer::TrainSample make_sample(const Tensor& x, const kspace::SamplingMask& mask,
                                 double noise_sigma, std::uint64_t mask_seed,
                                 int item_index) {
  const std::uint64_t noise_seed =
      mask_seed + 101 + static_cast<std::uint64_t>(item_index);
  return {x, kspace::zero_fill(
                 kspace::undersample(x, mask, noise_sigma, noise_seed))};
}

Dataset build_dataset(const RunConfig& cfg) {
  if (cfg.n_phantoms < 1) fail("config: n_phantoms must be >= 1");
  if (cfg.n_val < 0) fail("config: n_val must be >= 0");
  Dataset ds;
  ds.mask = kspace::make_gaussian_mask(cfg.side, cfg.rate, cfg.mask_seed);
  const auto phantoms = generate_phantoms(cfg.n_phantoms + cfg.n_val, cfg.side,
                                          cfg.phantom_seed);
  for (int i = 0; i < static_cast<int>(phantoms.size()); ++i) {
    auto sample = make_sample(phantoms[static_cast<std::size_t>(i)], ds.mask,
                              cfg.noise_sigma, cfg.mask_seed, i);
    if (i < cfg.n_phantoms)
      ds.train.push_back(std::move(sample));
    else
      ds.val.push_back(std::move(sample));
  }
  return ds;
}

}  // namespace segan::cli_io
