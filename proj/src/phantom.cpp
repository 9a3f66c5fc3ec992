#include "segan/phantom.hpp"

#include <cmath>
#include <stdexcept>

#include "segan/rng.hpp"

namespace segan::cli_io {

namespace {

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t, value;
};

struct Rect {
  double r0, c0, r1, c1, value;
};

void paint(Tensor& img, const Ellipse& e) {
  const int side = img.dim(0);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const double dy = r - e.cy, dx = c - e.cx;
      const double u = (dx * e.cos_t + dy * e.sin_t) / e.a;
      const double v = (-dx * e.sin_t + dy * e.cos_t) / e.b;
      if (u * u + v * v <= 1.0) img[idx2(r, c, side)] = e.value;
    }
}

void paint(Tensor& img, const Rect& q) {
  const int side = img.dim(0);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      if (r >= q.r0 && r <= q.r1 && c >= q.c0 && c <= q.c1)
        img[idx2(r, c, side)] = q.value;
    }
}

Tensor draw_one(int side, SplitMix64& rng) {
  Tensor img = Tensor::full({side, side}, 0.05 + 0.15 * rng.next_double());

  // intensities spread across [0.3, 0.93] with jitter, visited in a
  // seed-dependent rotation so region contrasts stay well separated
  const double levels[5] = {0.30, 0.46, 0.62, 0.78, 0.93};
  const std::uint64_t rot = rng.next_below(5);

  const int n_ellipses = 2 + static_cast<int>(rng.next_below(3));  // 2..4
  for (int i = 0; i < n_ellipses; ++i) {
    Ellipse e;
    e.cx = side * (0.2 + 0.6 * rng.next_double());
    e.cy = side * (0.2 + 0.6 * rng.next_double());
    e.a = side * (0.10 + 0.25 * rng.next_double());
    e.b = side * (0.10 + 0.25 * rng.next_double());
    const double theta = 2.0 * 3.14159265358979323846 * rng.next_double();
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    e.value = levels[(rot + i) % 5] + 0.02 * (rng.next_double() - 0.5);
    paint(img, e);
  }
  const int n_rects = 1 + static_cast<int>(rng.next_below(2));  // 1..2
  for (int i = 0; i < n_rects; ++i) {
    Rect q;
    const double h = side * (0.10 + 0.20 * rng.next_double());
    const double w = side * (0.10 + 0.20 * rng.next_double());
    q.r0 = side * (0.15 + 0.55 * rng.next_double());
    q.c0 = side * (0.15 + 0.55 * rng.next_double());
    q.r1 = q.r0 + h;
    q.c1 = q.c0 + w;
    q.value = levels[(rot + n_ellipses + i) % 5] + 0.02 * (rng.next_double() - 0.5);
    paint(img, q);
  }
  return img;
}

}  // namespace

Tensor generate_phantom(int side, std::uint64_t seed) {
  if (side < 16) throw std::invalid_argument("generate_phantom: side must be >= 16");
  SplitMix64 rng(seed);
  return draw_one(side, rng);
}

std::vector<Tensor> generate_phantoms(int count, int side, std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("generate_phantoms: count must be >= 0");
  if (side < 16 || (side & (side - 1)) != 0) {
    throw std::invalid_argument(
        "generate_phantoms: side must be a power of two >= 16");
  }
  std::vector<Tensor> out;
  out.reserve(count);
  SplitMix64 rng(seed);
  for (int i = 0; i < count; ++i) out.push_back(draw_one(side, rng));
  return out;
}

}  // namespace segan::cli_io
