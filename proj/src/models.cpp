#include "segan/models.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "segan/rng.hpp"

namespace segan::models {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("models: " + msg);
}

// [side,side] -> [1,side,side]; rank-3 single-channel passes through.
Var as_chw(const Var& x) {
  const auto& s = x.value().shape();
  if (s.size() == 2) return reshape(x, {1, s[0], s[1]});
  if (s.size() == 3) return x;
  fail("expected a [H,W] or [C,H,W] image, got shape " + x.value().shape_str());
}

std::string unit_param(int unit, int k, const char* leaf) {
  return "unit" + std::to_string(unit) + ".k" + std::to_string(k) + "." + leaf;
}

std::string layer_param(int layer, const char* leaf) {
  return "layer" + std::to_string(layer) + "." + leaf;
}

const Parameter& find_param(const std::vector<Parameter>& params,
                            const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p;
  fail("no parameter named '" + name + "'");
}

void load_into(std::vector<Parameter>& params,
               const std::map<std::string, Tensor>& named,
               const char* model_name) {
  if (named.size() != params.size())
    fail(std::string(model_name) + ": checkpoint holds " +
         std::to_string(named.size()) + " tensors, model has " +
         std::to_string(params.size()) + " parameters");
  for (auto& p : params) {
    auto it = named.find(p.name);
    if (it == named.end())
      fail(std::string(model_name) + ": checkpoint is missing tensor '" +
           p.name + "'");
    if (!(it->second.shape() == p.var.value().shape()))
      fail(std::string(model_name) + ": tensor '" + p.name + "' has shape " +
           it->second.shape_str() + ", expected " + p.var.value().shape_str());
    p.var.value() = it->second;
  }
}

}  // namespace

Tensor kaiming_conv(int c_out, int c_in, int kh, int kw, double slope,
                    SplitMix64& rng) {
  const double fan_in = static_cast<double>(c_in) * kh * kw;
  const double stddev = std::sqrt(2.0 / (1.0 + slope * slope) / fan_in);
  Tensor w({c_out, c_in, kh, kw});
  for (Eigen::Index i = 0; i < w.numel(); ++i) w[i] = stddev * rng.next_normal();
  return w;
}

// ---- SU-Net ---------------------------------------------------------------

SuNet::SuNet(SuNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.n_units < 2) fail("SU-Net needs at least 2 units");
  if (cfg_.base_channels < 1) fail("base_channels must be positive");
  if (cfg_.kernel_sides.empty()) fail("kernel_sides must be non-empty");
  for (int k : cfg_.kernel_sides)
    if (k < 1) fail("kernel sides must be positive");
  if (cfg_.encoder_depth < 0) fail("encoder_depth must be non-negative");
  if (!(cfg_.leaky_slope > 0.0 && cfg_.leaky_slope < 1.0))
    fail("leaky_slope must lie in (0,1)");

  // Each encoder stage needs a matching decoder unit plus the bottleneck, so
  // the usable depth is capped by the unit budget.
  depth_ = std::min(cfg_.encoder_depth, (cfg_.n_units - 1) / 2);

  SplitMix64 rng(seed);
  const int B = cfg_.base_channels;
  for (int u = 0; u < cfg_.n_units; ++u) {
    const int c_in = unit_in_channels(u);
    for (int k : cfg_.kernel_sides) {
      params_.push_back(
          {unit_param(u, k, "weight"),
           Var::leaf(kaiming_conv(B, c_in, k, k, cfg_.leaky_slope, rng)), true});
      params_.push_back({unit_param(u, k, "bias"), Var::leaf(Tensor::zeros({B})),
                         true});
    }
  }
  const int merged = B * static_cast<int>(cfg_.kernel_sides.size());
  params_.push_back(
      {"final.weight",
       Var::leaf(kaiming_conv(1, merged, 1, 1, cfg_.leaky_slope, rng)), true});
  params_.push_back({"final.bias", Var::leaf(Tensor::zeros({1})), true});
}

int SuNet::unit_in_channels(int unit) const {
  const int merged =
      cfg_.base_channels * static_cast<int>(cfg_.kernel_sides.size());
  if (unit == 0) return 1;
  // Decoder units see their upsampled input concatenated with a skip.
  if (unit > depth_ && unit <= 2 * depth_) return 2 * merged;
  return merged;
}

const Parameter& SuNet::at(const std::string& name) const {
  return find_param(params_, name);
}

Var SuNet::unit_forward(int unit, const Var& h) const {
  std::vector<Var> branches;
  branches.reserve(cfg_.kernel_sides.size());
  for (int k : cfg_.kernel_sides) {
    Var conv = conv2d(h, at(unit_param(unit, k, "weight")).var, 1, same_padding(k));
    branches.push_back(add_channel_bias(conv, at(unit_param(unit, k, "bias")).var));
  }
  Var merged = branches[0];
  for (std::size_t i = 1; i < branches.size(); ++i)
    merged = concat_channels(merged, branches[i]);
  return leaky_relu(merged, cfg_.leaky_slope);
}

Var SuNet::forward(const Var& input) const {
  Var h = as_chw(input);
  if (h.value().dim(0) != 1)
    fail("SU-Net takes single-channel images, got shape " +
         input.value().shape_str());
  const int div = 1 << depth_;
  if (h.value().dim(1) % div != 0 || h.value().dim(2) % div != 0)
    fail("image sides must be divisible by " + std::to_string(div) +
         " (one halving per encoder stage), got " + input.value().shape_str());

  std::vector<Var> skips;
  for (int u = 0; u < cfg_.n_units; ++u) {
    if (u >= 1 && u <= depth_) {
      skips.push_back(h);
      h = avg_pool2(h);
    } else if (u > depth_ && u <= 2 * depth_) {
      h = nearest_upsample2(h);
      h = concat_channels(h, skips.back());
      skips.pop_back();
    }
    h = unit_forward(u, h);
  }
  Var out = conv2d(h, at("final.weight").var, 1, 0);
  out = add_channel_bias(out, at("final.bias").var);
  out = sigmoid(out);
  // single-channel result, returned as a plain image
  return reshape(out, {out.value().dim(1), out.value().dim(2)});
}

void SuNet::load_tensors(const std::map<std::string, Tensor>& named) {
  load_into(params_, named, "SU-Net");
}

std::vector<std::pair<std::string, Tensor>> SuNet::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.name, p.var.value());
  return out;
}

// ---- Discriminator --------------------------------------------------------

Discriminator::Discriminator(DiscriminatorConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  if (cfg_.n_conv_layers < 1) fail("discriminator needs at least 1 layer");
  if (static_cast<int>(cfg_.widths.size()) != cfg_.n_conv_layers)
    fail("widths must list one channel count per conv layer (" +
         std::to_string(cfg_.n_conv_layers) + "), got " +
         std::to_string(cfg_.widths.size()));
  if (cfg_.widths.back() != 1)
    fail("the last conv layer must have width 1 (its mean is the score)");
  for (int w : cfg_.widths)
    if (w < 1) fail("layer widths must be positive");
  if (cfg_.kernel_side < 1) fail("kernel_side must be positive");
  if (!(cfg_.leaky_slope > 0.0 && cfg_.leaky_slope < 1.0))
    fail("leaky_slope must lie in (0,1)");

  SplitMix64 rng(seed);
  const int k = cfg_.kernel_side;
  int c_in = 1;
  for (int l = 0; l < cfg_.n_conv_layers; ++l) {
    const int c_out = cfg_.widths[static_cast<std::size_t>(l)];
    params_.push_back(
        {layer_param(l, "weight"),
         Var::leaf(kaiming_conv(c_out, c_in, k, k, cfg_.leaky_slope, rng)),
         true});
    params_.push_back(
        {layer_param(l, "bias"), Var::leaf(Tensor::zeros({c_out})), true});
    const bool normed = cfg_.use_norm && l + 1 < cfg_.n_conv_layers;
    if (normed) {
      params_.push_back(
          {layer_param(l, "gamma"), Var::leaf(Tensor::full({c_out}, 1.0)), true});
      params_.push_back(
          {layer_param(l, "beta"), Var::leaf(Tensor::zeros({c_out})), true});
    }
    running_mean_.push_back(Tensor::zeros({c_out}));
    running_var_.push_back(Tensor::full({c_out}, 1.0));
    stats_ready_.push_back(0);
    c_in = c_out;
  }
}

const Parameter& Discriminator::at(const std::string& name) const {
  return find_param(params_, name);
}

Var Discriminator::forward(const Var& img, Mode mode) {
  constexpr double kNormEps = 1e-5;
  Var h = as_chw(img);
  if (h.value().dim(0) != 1)
    fail("discriminator takes single-channel images, got shape " +
         img.value().shape_str());

  for (int l = 0; l < cfg_.n_conv_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    Var conv = conv2d(h, at(layer_param(l, "weight")).var, 1,
                      same_padding(cfg_.kernel_side));
    h = add_channel_bias(conv, at(layer_param(l, "bias")).var);
    if (l + 1 == cfg_.n_conv_layers) break;  // score head: no norm/activation

    if (cfg_.use_norm) {
      const Var& gamma = at(layer_param(l, "gamma")).var;
      const Var& beta = at(layer_param(l, "beta")).var;
      if (mode == Mode::eval && stats_ready_[li]) {
        h = channel_norm_fixed(h, gamma, beta, running_mean_[li],
                               running_var_[li], kNormEps);
      } else {
        if (mode == Mode::train) {
          Tensor mean_c, var_c;
          channel_stats(h.value(), mean_c, var_c);
          if (!stats_ready_[li]) {
            running_mean_[li] = mean_c;
            running_var_[li] = var_c;
            stats_ready_[li] = 1;
          } else {
            running_mean_[li].array() =
                0.9 * running_mean_[li].array() + 0.1 * mean_c.array();
            running_var_[li].array() =
                0.9 * running_var_[li].array() + 0.1 * var_c.array();
          }
        }
        h = channel_norm(h, gamma, beta, kNormEps);
      }
    }
    h = leaky_relu(h, cfg_.leaky_slope);
    // Halve the resolution after layers 2, 4, 6 and 8.
    const int one_based = l + 1;
    if (one_based % 2 == 0 && one_based <= 8 && one_based < cfg_.n_conv_layers)
      h = avg_pool2(h);
  }
  return sigmoid(mean(h));
}

void Discriminator::load_tensors(const std::map<std::string, Tensor>& named) {
  // Split the running statistics off, then hand the rest to the usual loader.
  std::map<std::string, Tensor> trainable;
  std::vector<const Tensor*> means(running_mean_.size(), nullptr);
  std::vector<const Tensor*> vars(running_var_.size(), nullptr);
  const Tensor* ready = nullptr;
  for (const auto& [name, t] : named) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    if (name == "norm.ready") {
      ready = &t;
    } else if (leaf == "running_mean" || leaf == "running_var") {
      if (name.rfind("layer", 0) != 0) fail("unexpected tensor '" + name + "'");
      const int l = std::stoi(name.substr(5, dot - 5));
      if (l < 0 || l >= cfg_.n_conv_layers)
        fail("running statistics for out-of-range layer in '" + name + "'");
      auto& slot = leaf == "running_mean" ? means : vars;
      slot[static_cast<std::size_t>(l)] = &t;
    } else {
      trainable.emplace(name, t);
    }
  }
  if (!ready || !means[0] || !vars[0])
    fail("discriminator checkpoint is missing normalization state");
  if (ready->numel() != cfg_.n_conv_layers)
    fail("norm.ready must hold one flag per layer");
  load_into(params_, trainable, "discriminator");
  for (int l = 0; l < cfg_.n_conv_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    if (!means[li] || !vars[li])
      fail("running statistics missing for layer " + std::to_string(l));
    if (means[li]->numel() != running_mean_[li].numel() ||
        vars[li]->numel() != running_var_[li].numel())
      fail("running statistics have the wrong width for layer " +
           std::to_string(l));
    running_mean_[li] = *means[li];
    running_var_[li] = *vars[li];
    stats_ready_[li] = (*ready)[l] != 0.0 ? 1 : 0;
  }
}

std::vector<std::pair<std::string, Tensor>> Discriminator::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : params_) out.emplace_back(p.name, p.var.value());
  Tensor ready({cfg_.n_conv_layers});
  for (int l = 0; l < cfg_.n_conv_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    out.emplace_back(layer_param(l, "running_mean"), running_mean_[li]);
    out.emplace_back(layer_param(l, "running_var"), running_var_[li]);
    ready[l] = stats_ready_[li] ? 1.0 : 0.0;
  }
  out.emplace_back("norm.ready", ready);
  return out;
}

// ---- checkpoints ----------------------------------------------------------

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'S', 'E', 'G', 'A', 'N', 'C', 'P', '1'};

void put_u64(std::FILE* f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  if (std::fwrite(b, 1, 8, f) != 8) fail("checkpoint write failed");
}

std::uint64_t get_u64(std::FILE* f) {
  unsigned char b[8];
  if (std::fread(b, 1, 8, f) != 8) fail("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) fail("cannot open '" + path + "' for writing");
  if (std::fwrite(kMagic, 1, 8, f.get()) != 8) fail("checkpoint write failed");
  put_u64(f.get(), config_text.size());
  if (!config_text.empty() &&
      std::fwrite(config_text.data(), 1, config_text.size(), f.get()) !=
          config_text.size())
    fail("checkpoint write failed");
  put_u64(f.get(), fnv1a64(config_text));
  put_u64(f.get(), tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(f.get(), name.size());
    if (std::fwrite(name.data(), 1, name.size(), f.get()) != name.size())
      fail("checkpoint write failed");
    put_u64(f.get(), t.shape().size());
    for (int d : t.shape()) put_u64(f.get(), static_cast<std::uint64_t>(d));
    static_assert(sizeof(double) == 8);
    const auto n = static_cast<std::size_t>(t.numel());
    if (n && std::fwrite(t.data(), sizeof(double), n, f.get()) != n)
      fail("checkpoint write failed");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) fail("cannot open '" + path + "' for reading");
  char magic[8];
  if (std::fread(magic, 1, 8, f.get()) != 8 ||
      std::memcmp(magic, kMagic, 8) != 0)
    fail("'" + path + "' is not a checkpoint (bad magic)");

  Checkpoint cp;
  const auto cfg_len = static_cast<std::size_t>(get_u64(f.get()));
  cp.config_text.resize(cfg_len);
  if (cfg_len &&
      std::fread(cp.config_text.data(), 1, cfg_len, f.get()) != cfg_len)
    fail("checkpoint truncated");
  const std::uint64_t digest = get_u64(f.get());
  if (digest != fnv1a64(cp.config_text))
    fail("config digest mismatch in '" + path +
         "': the embedded configuration was altered or corrupted");

  const auto n_tensors = static_cast<std::size_t>(get_u64(f.get()));
  for (std::size_t i = 0; i < n_tensors; ++i) {
    const auto name_len = static_cast<std::size_t>(get_u64(f.get()));
    std::string name(name_len, '\0');
    if (name_len && std::fread(name.data(), 1, name_len, f.get()) != name_len)
      fail("checkpoint truncated");
    const auto rank = static_cast<std::size_t>(get_u64(f.get()));
    if (rank > 8) fail("implausible tensor rank in checkpoint");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u64(f.get()));
    Tensor t(shape);
    const auto n = static_cast<std::size_t>(t.numel());
    if (n && std::fread(t.data(), sizeof(double), n, f.get()) != n)
      fail("checkpoint truncated");
    if (!cp.tensors.emplace(std::move(name), std::move(t)).second)
      fail("duplicate tensor name in checkpoint");
  }
  return cp;
}

}  // namespace segan::models
