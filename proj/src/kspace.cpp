#include "segan/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "segan/rng.hpp"

namespace segan::kspace {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 transform on one line; sign -1 forward, +1 inverse.
// Unnormalized — callers apply the orthonormal 1/side factor once per axis
// pair (i.e. 1/side for the 2D transform).
void fft_line(Cplx* a, int n, int sign) {
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j |= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / len;
    const Cplx wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      Cplx w(1.0, 0.0);
      for (int j = 0; j < len / 2; ++j) {
        const Cplx u = a[i + j];
        const Cplx v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

KGrid transform2d(const KGrid& x, int sign) {
  if (x.rows() == 0 || x.cols() == 0) fail("dft2: empty grid");
  if (x.rows() != x.cols()) {
    fail("dft2: grid must be square, got " + std::to_string(x.rows()) + "x" +
         std::to_string(x.cols()));
  }
  const int n = static_cast<int>(x.rows());
  KGrid out = x;
  if (is_pow2(n)) {
    for (int r = 0; r < n; ++r) fft_line(out.data() + static_cast<Eigen::Index>(r) * n, n, sign);
    std::vector<Cplx> col(n);
    for (int c = 0; c < n; ++c) {
      for (int r = 0; r < n; ++r) col[r] = out(r, c);
      fft_line(col.data(), n, sign);
      for (int r = 0; r < n; ++r) out(r, c) = col[r];
    }
  } else {
    Eigen::MatrixXcd f(n, n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const double ang = sign * 2.0 * std::numbers::pi * j * k / n;
        f(j, k) = Cplx(std::cos(ang), std::sin(ang));
      }
    out = (f * (out.matrix() * f)).array();  // F X F, F symmetric
  }
  out *= 1.0 / n;  // orthonormal: 1/sqrt(n*n)
  return out;
}

int wrapped_coord(int i, int n) {
  // index -> signed frequency coordinate, DC = 0, range [-n/2, n/2)
  return (i + n / 2) % n - n / 2;
}

}  // namespace

KGrid dft2(const KGrid& x) { return transform2d(x, -1); }

KGrid dft2(const Tensor& img) {
  if (img.rank() != 2 || img.dim(0) != img.dim(1)) {
    fail("dft2: expected a square [side,side] image, got " + img.shape_str());
  }
  const int n = img.dim(0);
  KGrid g(n, n);
  for (Eigen::Index i = 0; i < img.numel(); ++i) g.data()[i] = Cplx(img[i], 0.0);
  return dft2(g);
}

KGrid idft2(const KGrid& x) { return transform2d(x, +1); }

KGrid fftshift(const KGrid& x) {
  const int n = static_cast<int>(x.rows());
  KGrid out(n, n);
  const int s = n / 2;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out((r + s) % n, (c + s) % n) = x(r, c);
  return out;
}

KGrid ifftshift(const KGrid& x) {
  const int n = static_cast<int>(x.rows());
  KGrid out(n, n);
  const int s = (n + 1) / 2;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out((r + s) % n, (c + s) % n) = x(r, c);
  return out;
}

int SamplingMask::count() const {
  int k = 0;
  for (const auto b : selected) k += b ? 1 : 0;
  return k;
}

double SamplingMask::achieved_rate() const {
  return static_cast<double>(count()) / (static_cast<double>(side) * side);
}

SamplingMask full_mask(int side) {
  SamplingMask m;
  m.side = side;
  m.target_rate = 1.0;
  m.selected.assign(static_cast<std::size_t>(side) * side, 1);
  return m;
}

SamplingMask make_gaussian_mask(int side, double rate, std::uint64_t seed) {
  if (side < 4) fail("make_gaussian_mask: side must be >= 4");
  if (!(rate > 0.0) || rate > 1.0) fail("make_gaussian_mask: rate must be in (0,1]");

  const int total = static_cast<int>(std::lround(rate * side * side));
  const int centre_side = std::max(2, static_cast<int>(std::lround(0.04 * side * rate)));
  if (centre_side * centre_side > total) {
    fail("make_gaussian_mask: rate " + std::to_string(rate) +
         " cannot cover the always-sampled " + std::to_string(centre_side) + "x" +
         std::to_string(centre_side) + " central block (" +
         std::to_string(centre_side * centre_side) + " > " + std::to_string(total) +
         " coefficients); raise the rate");
  }

  SamplingMask m;
  m.side = side;
  m.target_rate = rate;
  m.seed = seed;
  m.selected.assign(static_cast<std::size_t>(side) * side, 0);

  // lowest-frequency square, symmetric around DC in the centred frame
  const int lo = -(centre_side / 2);
  const int hi = lo + centre_side - 1;
  int taken = 0;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const int dr = wrapped_coord(r, side), dc = wrapped_coord(c, side);
      if (dr >= lo && dr <= hi && dc >= lo && dc <= hi) {
        m.selected[static_cast<std::size_t>(r) * side + c] = 1;
        ++taken;
      }
    }

  // Weighted sampling without replacement for the remainder: draw a key
  // log(u)/w per free position and keep the k largest (Efraimidis-Spirakis).
  const double sigma = side / 6.0;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  struct Entry {
    double key;
    int pos;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(side) * side - taken);
  SplitMix64 rng(seed);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const std::size_t pos = static_cast<std::size_t>(r) * side + c;
      const double u = rng.next_double_open();  // every position draws, so the
                                                // stream layout is fixed
      if (m.selected[pos]) continue;
      const int dr = wrapped_coord(r, side), dc = wrapped_coord(c, side);
      const double w =
          std::exp(-(static_cast<double>(dr) * dr + static_cast<double>(dc) * dc) * inv2s2);
      entries.push_back({std::log(u) / w, static_cast<int>(pos)});
    }
  const int remaining = total - taken;
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.key != b.key) return a.key > b.key;
    return a.pos < b.pos;
  });
  for (int i = 0; i < remaining; ++i) m.selected[entries[i].pos] = 1;
  return m;
}

KSpaceSample undersample(const Tensor& x, const SamplingMask& mask,
                         double noise_sigma, std::uint64_t seed) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1)) {
    fail("undersample: expected a square [side,side] image, got " + x.shape_str());
  }
  if (x.dim(0) != mask.side) {
    fail("undersample: image side " + std::to_string(x.dim(0)) +
         " does not match mask side " + std::to_string(mask.side));
  }
  if (noise_sigma < 0.0) fail("undersample: noise_sigma must be >= 0");

  KSpaceSample y;
  y.side = mask.side;
  y.noise_sigma = noise_sigma;
  y.mask = mask;
  y.values = dft2(x);
  SplitMix64 rng(seed);
  for (int r = 0; r < y.side; ++r)
    for (int c = 0; c < y.side; ++c) {
      if (!mask.at(r, c)) {
        y.values(r, c) = Cplx(0.0, 0.0);
      } else if (noise_sigma > 0.0) {
        const double re = rng.next_normal();
        const double im = rng.next_normal();
        y.values(r, c) += Cplx(noise_sigma * re, noise_sigma * im);
      }
    }
  return y;
}

Tensor zero_fill(const KSpaceSample& y) {
  if (y.side < 1) fail("zero_fill: invalid sample");
  const KGrid img = idft2(y.values);
  Tensor out({y.side, y.side});
  for (Eigen::Index i = 0; i < out.numel(); ++i) {
    out[i] = std::clamp(std::abs(img.data()[i]), 0.0, 1.0);
  }
  return out;
}

void save_mask(const SamplingMask& mask, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("save_mask: cannot open " + path);
  char head[96];
  std::snprintf(head, sizeof(head), "MASK %d %.17g %llu\n", mask.side,
                mask.target_rate, static_cast<unsigned long long>(mask.seed));
  f << head;
  for (int r = 0; r < mask.side; ++r) {
    for (int c = 0; c < mask.side; ++c) f << (mask.at(r, c) ? '1' : '0');
    f << '\n';
  }
}

SamplingMask load_mask(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("load_mask: cannot open " + path);
  std::string tag;
  SamplingMask m;
  unsigned long long seed = 0;
  if (!(f >> tag >> m.side >> m.target_rate >> seed) || tag != "MASK" || m.side < 1) {
    fail("load_mask: malformed header in " + path);
  }
  m.seed = seed;
  m.selected.assign(static_cast<std::size_t>(m.side) * m.side, 0);
  std::string line;
  std::getline(f, line);  // rest of header line
  for (int r = 0; r < m.side; ++r) {
    if (!std::getline(f, line) || static_cast<int>(line.size()) < m.side) {
      fail("load_mask: truncated at row " + std::to_string(r) + " of " + path);
    }
    for (int c = 0; c < m.side; ++c) {
      if (line[c] != '0' && line[c] != '1') {
        fail("load_mask: invalid character in row " + std::to_string(r));
      }
      m.selected[static_cast<std::size_t>(r) * m.side + c] = line[c] == '1' ? 1 : 0;
    }
  }
  return m;
}

void save_kspace(const KSpaceSample& sample, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("save_kspace: cannot open " + path);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "# KSPACE side=%d sigma=%.17g\n", sample.side,
                sample.noise_sigma);
  f << buf << "row,col,re,im\n";
  for (int r = 0; r < sample.side; ++r)
    for (int c = 0; c < sample.side; ++c) {
      if (!sample.mask.at(r, c)) continue;
      const Cplx v = sample.values(r, c);
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", r, c, v.real(), v.imag());
      f << buf;
    }
}

KSpaceSample load_kspace(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("load_kspace: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) fail("load_kspace: empty file " + path);
  KSpaceSample s;
  if (std::sscanf(line.c_str(), "# KSPACE side=%d sigma=%lf", &s.side,
                  &s.noise_sigma) != 2 ||
      s.side < 1) {
    fail("load_kspace: malformed header in " + path);
  }
  if (!std::getline(f, line) || line != "row,col,re,im") {
    fail("load_kspace: missing column header in " + path);
  }
  s.values = KGrid::Zero(s.side, s.side);
  s.mask.side = s.side;
  s.mask.selected.assign(static_cast<std::size_t>(s.side) * s.side, 0);
  int n_rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    int r = 0, c = 0;
    double re = 0.0, im = 0.0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &r, &c, &re, &im) != 4 ||
        r < 0 || r >= s.side || c < 0 || c >= s.side) {
      fail("load_kspace: malformed row " + std::to_string(n_rows) + " in " + path);
    }
    s.values(r, c) = Cplx(re, im);
    s.mask.selected[static_cast<std::size_t>(r) * s.side + c] = 1;
    ++n_rows;
  }
  s.mask.target_rate = s.mask.achieved_rate();
  return s;
}

}  // namespace segan::kspace
