// Independent reference implementations used to cross-check the library.
// Everything here is deliberately naive (direct formulas, quadruple loops,
// O(N^2) transforms) and shares no code with src/.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "segan/autodiff.hpp"
#include "segan/tensor.hpp"

namespace oracle {

// Direct quadruple-loop cross-correlation with asymmetric padding.
inline segan::Tensor conv2d_naive(const segan::Tensor& input,
                                  const segan::Tensor& kernel, int stride,
                                  segan::Pad4 pad) {
  const int C_in = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int C_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int OH = (H + pad.top + pad.bottom - kh) / stride + 1;
  const int OW = (W + pad.left + pad.right - kw) / stride + 1;
  segan::Tensor out({C_out, OH, OW});
  for (int co = 0; co < C_out; ++co)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        double acc = 0.0;
        for (int ci = 0; ci < C_in; ++ci)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const int ih = oh * stride - pad.top + i;
              const int iw = ow * stride - pad.left + j;
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
              acc += input[segan::idx3(ci, ih, iw, H, W)] *
                     kernel[segan::idx4(co, ci, i, j, C_in, kh, kw)];
            }
        out[segan::idx3(co, oh, ow, OH, OW)] = acc;
      }
  return out;
}

inline segan::Tensor conv2d_naive(const segan::Tensor& input,
                                  const segan::Tensor& kernel, int stride,
                                  int padding) {
  segan::Pad4 p;
  p.top = p.bottom = p.left = p.right = padding;
  return conv2d_naive(input, kernel, stride, p);
}

// Direct O(N^2) double-sum DFT with orthonormal scaling, sign -1 forward.
inline std::vector<std::complex<double>> dft2_naive(
    const std::vector<std::complex<double>>& x, int side, int sign) {
  const double norm = 1.0 / std::sqrt(static_cast<double>(side) * side);
  std::vector<std::complex<double>> out(static_cast<std::size_t>(side) * side);
  for (int u = 0; u < side; ++u)
    for (int v = 0; v < side; ++v) {
      std::complex<double> acc(0.0, 0.0);
      for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
          const double ang = sign * 2.0 * M_PI *
                             (static_cast<double>(u) * r / side +
                              static_cast<double>(v) * c / side);
          acc += x[static_cast<std::size_t>(r) * side + c] *
                 std::complex<double>(std::cos(ang), std::sin(ang));
        }
      out[static_cast<std::size_t>(u) * side + v] = norm * acc;
    }
  return out;
}

// Pearson correlation straight from the statistics textbook formula,
// with the same epsilon guard the library documents.
inline double pearson_naive(const std::vector<double>& p,
                            const std::vector<double>& q) {
  const double n = static_cast<double>(p.size());
  double mp = 0.0, mq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mq += q[i];
  }
  mp /= n;
  mq /= n;
  double num = 0.0, dp = 0.0, dq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    num += (p[i] - mp) * (q[i] - mq);
    dp += (p[i] - mp) * (p[i] - mp);
    dq += (q[i] - mq) * (q[i] - mq);
  }
  return num / (std::sqrt(dp) * std::sqrt(dq) + 1e-8);
}

inline double gaussian_kernel_naive(const std::vector<double>& p,
                                    const std::vector<double>& q, double sigma) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d2 += (p[i] - q[i]) * (p[i] - q[i]);
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

inline double polynomial_kernel_naive(const std::vector<double>& p,
                                      const std::vector<double>& q, int degree,
                                      double offset, double scale) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * q[i];
  return std::pow(scale * dot / static_cast<double>(p.size()) + offset, degree);
}

// Brute-force PCR over all unordered pairs: mean squared difference of the
// per-pair correlations between reference and reconstruction.
inline double pcr_naive(const std::vector<std::vector<double>>& x_patches,
                        const std::vector<std::vector<double>>& g_patches,
                        const std::function<double(const std::vector<double>&,
                                                   const std::vector<double>&)>& f) {
  const std::size_t n = x_patches.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = f(x_patches[i], x_patches[j]) - f(g_patches[i], g_patches[j]);
      acc += d * d;
    }
  return acc / (static_cast<double>(n) * (n - 1) / 2.0);
}

// Windowed SSIM, recomputed one interior window at a time: Gaussian-weighted
// local moments, then the standard two-factor formula, averaged over every
// position where the window fits entirely inside the image.
inline double ssim_naive(const segan::Tensor& x, const segan::Tensor& g, int window,
                         double sigma, double k1, double k2, double range) {
  const int H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
  std::vector<double> win(static_cast<std::size_t>(window) * window);
  const double c = (window - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < window; ++i)
    for (int j = 0; j < window; ++j) {
      const double v =
          std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
      win[static_cast<std::size_t>(i) * window + j] = v;
      total += v;
    }
  for (double& v : win) v /= total;

  const double c1 = k1 * range * k1 * range;
  const double c2 = k2 * range * k2 * range;
  double acc = 0.0;
  int count = 0;
  for (int r = 0; r + window <= H; ++r)
    for (int col = 0; col + window <= W; ++col) {
      double mx = 0.0, my = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          const double w = win[static_cast<std::size_t>(i) * window + j];
          const double a = x[static_cast<std::size_t>(r + i) * W + (col + j)];
          const double b = g[static_cast<std::size_t>(r + i) * W + (col + j)];
          mx += w * a;
          my += w * b;
          xx += w * a * a;
          yy += w * b * b;
          xy += w * a * b;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
      acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / count;
}

// Two-player objective straight from the min-max formula, clamp included.
inline double adversarial_d_naive(const std::vector<double>& d_real,
                                  const std::vector<double>& d_fake) {
  const auto clamp = [](double v) {
    return std::min(std::max(v, 1e-7), 1.0 - 1e-7);
  };
  double lr = 0.0, lf = 0.0;
  for (double v : d_real) lr += std::log(clamp(v));
  for (double v : d_fake) lf += std::log(1.0 - clamp(v));
  return -lr / static_cast<double>(d_real.size()) -
         lf / static_cast<double>(d_fake.size());
}

inline double nmse_naive(const segan::Tensor& x, const segan::Tensor& g) {
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < x.numel(); ++i) {
    num += (x[i] - g[i]) * (x[i] - g[i]);
    den += x[i] * x[i];
  }
  return std::sqrt(num) / std::sqrt(den);
}

inline double psnr_naive(const segan::Tensor& x, const segan::Tensor& g,
                         double peak) {
  double mse = 0.0;
  for (Eigen::Index i = 0; i < x.numel(); ++i)
    mse += (x[i] - g[i]) * (x[i] - g[i]);
  mse /= static_cast<double>(x.numel());
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace oracle
