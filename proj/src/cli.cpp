#include "segan/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "segan/analysis.hpp"
#include "segan/gradsuite.hpp"
#include "segan/io.hpp"
#include "segan/kspace.hpp"
#include "segan/models.hpp"
#include "segan/phantom.hpp"
#include "segan/trainer.hpp"

namespace segan::cli_io {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '" + path + "' for writing");
  out << text;
}

std::string item_name(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d%s", stem, i, ext);
  return buf;
}

// ---- phantom ---------------------------------------------------------------

int cmd_phantom(int count, int side, std::uint64_t seed, const std::string& out,
                const std::string& format) {
  fs::create_directories(out);
  const auto imgs = generate_phantoms(count, side, seed);
  for (int i = 0; i < static_cast<int>(imgs.size()); ++i) {
    const auto& img = imgs[static_cast<std::size_t>(i)];
    if (format == "pgm")
      write_pgm(out + "/" + item_name("phantom", i, ".pgm"), img);
    else
      write_raw(out + "/" + item_name("phantom", i, ".raw"), img);
  }
  std::printf("wrote %d phantom(s) to %s\n", count, out.c_str());
  return 0;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const RunConfig cfg = RunConfig::parse_file(config_path);
  const std::string text = cfg.to_text();
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/config.txt", text);

  Dataset ds = build_dataset(cfg);
  kspace::save_mask(ds.mask, out_dir + "/mask.txt");
  for (int i = 0; i < static_cast<int>(ds.val.size()); ++i) {
    const auto& s = ds.val[static_cast<std::size_t>(i)];
    write_raw(out_dir + "/" + item_name("val", i, ".raw"), s.x);
    write_raw(out_dir + "/" + item_name("val", i, "_zf.raw"), s.zf);
  }

  models::SuNet gen(cfg.gen_config(), cfg.seed + 1);
  models::Discriminator disc(cfg.disc_config(), cfg.seed + 2);
  const trainer::TrainOutput result = trainer::train_segan(
      ds.train, ds.val, cfg.train_config(), gen, disc, out_dir, text);

  if (!result.metrics.empty()) {
    const auto& m = result.metrics.back();
    std::printf(
        "iteration %d: nmse %.6g, psnr %.6g dB, ssim %.6g, "
        "20-lssm %.6g, 40-lssm %.6g\n",
        m.iter, m.mean.nmse, m.mean.psnr, m.mean.ssim, m.mean.lssm20,
        m.mean.lssm40);
  }
  std::printf("training artifacts in %s\n", out_dir.c_str());
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalStats {
  std::vector<analysis::MetricBundle> items;
  analysis::MetricBundle mean, sd;  // population standard deviation
};

EvalStats summarize(std::vector<analysis::MetricBundle> items) {
  EvalStats st;
  st.items = std::move(items);
  const double n = static_cast<double>(st.items.size());
  const auto each = [&](auto&& fn) {
    fn(&analysis::MetricBundle::nmse);
    fn(&analysis::MetricBundle::psnr);
    fn(&analysis::MetricBundle::ssim);
    fn(&analysis::MetricBundle::lssm20);
    fn(&analysis::MetricBundle::lssm40);
  };
  each([&](auto field) {
    double acc = 0.0;
    for (const auto& m : st.items) acc += m.*field;
    st.mean.*field = acc / n;
    double var = 0.0;
    for (const auto& m : st.items) {
      const double d = m.*field - st.mean.*field;
      var += d * d;
    }
    st.sd.*field = std::sqrt(var / n);
  });
  return st;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset,
             double rate_override, const std::string& out) {
  const models::Checkpoint cp = models::load_checkpoint(checkpoint);
  const RunConfig cfg = RunConfig::parse_text(cp.config_text);

  models::SuNet gen(cfg.gen_config(), cfg.seed + 1);
  std::map<std::string, Tensor> gen_tensors;
  for (const auto& [name, t] : cp.tensors)
    if (name.rfind("G.", 0) == 0) gen_tensors.emplace(name.substr(2), t);
  gen.load_tensors(gen_tensors);

  std::vector<std::string> images;
  for (const auto& entry : fs::directory_iterator(dataset)) {
    const std::string p = entry.path().string();
    if (entry.path().extension() != ".raw") continue;
    if (p.size() >= 7 && p.compare(p.size() - 7, 7, "_zf.raw") == 0) continue;
    images.push_back(p);
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) fail("no .raw images found in '" + dataset + "'");

  const double rate = rate_override > 0.0 ? rate_override : cfg.rate;
  kspace::SamplingMask mask;  // built lazily: unneeded when _zf files exist
  std::vector<analysis::MetricBundle> items;
  for (int i = 0; i < static_cast<int>(images.size()); ++i) {
    const auto& path = images[static_cast<std::size_t>(i)];
    const Tensor x = read_raw(path);
    Tensor zf;
    const std::string zf_path =
        path.substr(0, path.size() - 4) + "_zf.raw";
    if (fs::exists(zf_path)) {
      zf = read_raw(zf_path);
    } else {
      if (mask.side == 0) mask = kspace::make_gaussian_mask(x.dim(0), rate, cfg.mask_seed);
      // mirror training's val items, which sit after the training phantoms
      zf = make_sample(x, mask, cfg.noise_sigma, cfg.mask_seed,
                       cfg.n_phantoms + i)
               .zf;
    }
    Tensor g;
    {
      NoGradGuard ng;
      g = gen.forward(Var::constant(zf)).value();
    }
    losses::SsimConfig ssim_cfg = cfg.train_config().ssim;
    items.push_back(analysis::evaluate_pair(
        x, Tensor(x.shape(), g.array()), ssim_cfg,
        analysis::lssm_seed(cfg.seed, i)));
  }

  const EvalStats st = summarize(std::move(items));
  std::printf("%-6s %12s %12s %12s %12s %12s\n", "item", "NMSE", "SSIM", "PSNR",
              "20-LSSM", "40-LSSM");
  for (std::size_t i = 0; i < st.items.size(); ++i) {
    const auto& m = st.items[i];
    std::printf("%-6zu %12.6g %12.6g %12.6g %12.6g %12.6g\n", i, m.nmse, m.ssim,
                m.psnr, m.lssm20, m.lssm40);
  }
  const auto print_pm = [&](const char* label, double mu, double sd) {
    std::printf("%-8s %.6g ± %.6g\n", label, mu, sd);
  };
  std::printf("dataset mean ± std:\n");
  print_pm("NMSE", st.mean.nmse, st.sd.nmse);
  print_pm("SSIM", st.mean.ssim, st.sd.ssim);
  print_pm("PSNR", st.mean.psnr, st.sd.psnr);
  print_pm("20-LSSM", st.mean.lssm20, st.sd.lssm20);
  print_pm("40-LSSM", st.mean.lssm40, st.sd.lssm40);

  if (!out.empty()) {
    std::FILE* f = std::fopen(out.c_str(), "wb");
    if (!f) fail("cannot open '" + out + "' for writing");
    std::fprintf(f, "# config_digest=%016llx\n",
                 static_cast<unsigned long long>(models::fnv1a64(cp.config_text)));
    std::fprintf(f, "item,nmse,ssim,psnr,lssm20,lssm40\n");
    for (std::size_t i = 0; i < st.items.size(); ++i) {
      const auto& m = st.items[i];
      std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, m.nmse, m.ssim,
                   m.psnr, m.lssm20, m.lssm40);
    }
    std::fprintf(f, "mean,%.17g,%.17g,%.17g,%.17g,%.17g\n", st.mean.nmse,
                 st.mean.ssim, st.mean.psnr, st.mean.lssm20, st.mean.lssm40);
    std::fprintf(f, "std,%.17g,%.17g,%.17g,%.17g,%.17g\n", st.sd.nmse,
                 st.sd.ssim, st.sd.psnr, st.sd.lssm20, st.sd.lssm40);
    std::fclose(f);
  }
  return 0;
}

// ---- regret ------------------------------------------------------------------

int cmd_regret(const std::string& train_log, const std::string& constants_path,
               const std::string& out) {
  std::ifstream in(train_log, std::ios::binary);
  if (!in) fail("cannot open '" + train_log + "'");
  std::string header;
  if (!std::getline(in, header)) fail("'" + train_log + "' is empty");
  // find the sel_total column
  int sel_col = -1, col = 0;
  {
    std::stringstream hs(header);
    std::string name;
    while (std::getline(hs, name, ',')) {
      if (name == "sel_total") sel_col = col;
      ++col;
    }
  }
  if (sel_col < 0) fail("'" + train_log + "' has no sel_total column");
  std::vector<double> trace;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    for (int c = 0; std::getline(ls, cell, ','); ++c)
      if (c == sel_col) trace.push_back(std::stod(cell));
  }
  if (trace.empty()) fail("'" + train_log + "' holds no iterations");

  analysis::BoundConstants consts;
  const bool have_consts = !constants_path.empty();
  if (have_consts) consts = analysis::read_bound_constants(constants_path);
  const auto rows =
      analysis::regret_curve(trace, analysis::CStarMode::best_iterate, {},
                             have_consts ? &consts : nullptr);
  analysis::write_regret_csv(out, rows);
  const auto& last = rows.back();
  std::printf("T=%d  C=%.6g  C*=%.6g  R=%.6g  avg_regret=%.6g\n", last.T,
              last.C, last.C_star, last.R, last.avg_regret);
  return 0;
}

}  // namespace

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("segan");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli(static_cast<int>(argv.size()), argv.data());
}

int cli(int argc, const char* const* argv) {
  CLI::App app{"Compressed-sensing MRI reconstruction with a structure-enhanced GAN"};
  app.require_subcommand(1);

  // phantom
  auto* p_cmd = app.add_subcommand("phantom", "Generate a synthetic image dataset");
  int p_count = 16, p_side = 32;
  std::uint64_t p_seed = 7;
  std::string p_out = "phantoms", p_format = "raw";
  p_cmd->add_option("--count", p_count, "number of images");
  p_cmd->add_option("--side", p_side, "image side (power of two >= 16)");
  p_cmd->add_option("--seed", p_seed, "generator seed");
  p_cmd->add_option("--out", p_out, "output directory");
  p_cmd->add_option("--format", p_format, "raw or pgm")
      ->check(CLI::IsMember({"raw", "pgm"}));

  // mask
  auto* m_cmd = app.add_subcommand("mask", "Draw a variable-density sampling mask");
  int m_side = 32;
  double m_rate = 0.3;
  std::uint64_t m_seed = 3;
  std::string m_out = "mask.txt";
  m_cmd->add_option("--side", m_side, "mask side");
  m_cmd->add_option("--rate", m_rate, "sampling rate in (0,1]");
  m_cmd->add_option("--seed", m_seed, "mask seed");
  m_cmd->add_option("--out", m_out, "output file");

  // undersample
  auto* u_cmd = app.add_subcommand("undersample",
                                   "Apply a mask (plus optional noise) in k-space");
  std::string u_image, u_mask, u_out = "kspace.csv";
  double u_sigma = 0.0;
  std::uint64_t u_noise_seed = 0;
  u_cmd->add_option("--image", u_image, "input .raw image")->required();
  u_cmd->add_option("--mask", u_mask, "mask file")->required();
  u_cmd->add_option("--sigma", u_sigma, "complex noise std per component");
  u_cmd->add_option("--noise-seed", u_noise_seed, "noise stream seed");
  u_cmd->add_option("--out", u_out, "output k-space file");

  // zerofill
  auto* z_cmd = app.add_subcommand("zerofill", "Zero-filled reconstruction");
  std::string z_kspace, z_out = "zerofill.raw";
  z_cmd->add_option("--kspace", z_kspace, "input k-space file")->required();
  z_cmd->add_option("--out", z_out, "output .raw image");

  // train
  auto* t_cmd = app.add_subcommand("train", "Run the adversarial training loop");
  std::string t_config, t_out = "run";
  t_cmd->add_option("--config", t_config, "key = value config file")->required();
  t_cmd->add_option("--out-dir", t_out, "output directory");

  // eval
  auto* e_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  std::string e_ckpt, e_data, e_out;
  double e_rate = 0.0;
  e_cmd->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  e_cmd->add_option("--dataset", e_data, "directory of .raw images")->required();
  e_cmd->add_option("--rate", e_rate, "override the config's sampling rate");
  e_cmd->add_option("--out", e_out, "also write the table as CSV");

  // gradcheck
  auto* g_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::string g_module;
  g_cmd->add_option("--module", g_module, "substring filter, e.g. loss/pcr");

  // regret
  auto* r_cmd = app.add_subcommand("regret", "Regret report from a training log");
  std::string r_log, r_out = "regret.csv", r_consts;
  r_cmd->add_option("--train-log", r_log, "train_log.csv from a run")->required();
  r_cmd->add_option("--out", r_out, "output CSV");
  r_cmd->add_option("--constants", r_consts,
                    "bound_constants.txt to fill the bound column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (p_cmd->parsed()) return cmd_phantom(p_count, p_side, p_seed, p_out, p_format);
    if (m_cmd->parsed()) {
      kspace::save_mask(kspace::make_gaussian_mask(m_side, m_rate, m_seed), m_out);
      std::printf("wrote %s\n", m_out.c_str());
      return 0;
    }
    if (u_cmd->parsed()) {
      const Tensor img = read_raw(u_image);
      const auto mask = kspace::load_mask(u_mask);
      kspace::save_kspace(kspace::undersample(img, mask, u_sigma, u_noise_seed),
                          u_out);
      std::printf("wrote %s\n", u_out.c_str());
      return 0;
    }
    if (z_cmd->parsed()) {
      write_raw(z_out, kspace::zero_fill(kspace::load_kspace(z_kspace)));
      std::printf("wrote %s\n", z_out.c_str());
      return 0;
    }
    if (t_cmd->parsed()) return cmd_train(t_config, t_out);
    if (e_cmd->parsed()) return cmd_eval(e_ckpt, e_data, e_rate, e_out);
    if (g_cmd->parsed()) {
      const auto suite = gradsuite::run_gradient_suite(g_module);
      std::fputs(suite.report().c_str(), stdout);
      if (suite.checks.empty()) {
        std::printf("no checks match filter '%s'\n", g_module.c_str());
        return 2;
      }
      return suite.all_passed() ? 0 : 2;
    }
    if (r_cmd->parsed()) return cmd_regret(r_log, r_consts, r_out);
  } catch (const trainer::DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace segan::cli_io
