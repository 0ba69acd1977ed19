// Independent reference implementations used by the unit and acceptance
// tests. They favour obviousness over speed and share no code with the
// library beyond the plain data types.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "stoneseg/annotations.hpp"
#include "stoneseg/image.hpp"
#include "stoneseg/nn/tensor.hpp"

namespace oracle {

using stoneseg::BinaryMask;
using stoneseg::GrayImage;
using stoneseg::Vertex;
using Rational = boost::multiprecision::cpp_rational;

/// Between-class variance argmax with exact rationals; ties keep the smallest
/// t. Returns nullopt when no threshold splits the pixels into two classes.
inline std::optional<int> otsu(const GrayImage& img) {
  std::array<long, 256> hist{};
  for (Eigen::Index i = 0; i < img.size(); ++i) ++hist[img.data()[i]];
  const long total = static_cast<long>(img.size());
  std::optional<int> best;
  Rational best_var = -1;
  for (int t = 0; t < 256; ++t) {
    long n0 = 0;
    long s0 = 0;
    long s1 = 0;
    for (int v = 0; v < 256; ++v) {
      if (v <= t) {
        n0 += hist[v];
        s0 += static_cast<long>(v) * hist[v];
      } else {
        s1 += static_cast<long>(v) * hist[v];
      }
    }
    const long n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const Rational w0(n0, total);
    const Rational w1(n1, total);
    const Rational mu0(s0, n0);
    const Rational mu1(s1, n1);
    const Rational var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best = t;
    }
  }
  return best;
}

/// W. R. Franklin's PNPOLY even-odd test.
inline bool point_in_polygon(const std::vector<Vertex>& poly, double px, double py) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i].x, yi = poly[i].y, xj = poly[j].x, yj = poly[j].y;
    if (((yi > py) != (yj > py)) && (px < (xj - xi) * (py - yi) / (yj - yi) + xi)) inside = !inside;
  }
  return inside;
}

/// Pixel (x, y) is set when its centre is inside any polygon.
inline BinaryMask rasterize(const std::vector<std::vector<Vertex>>& polys, int width, int height) {
  BinaryMask m = BinaryMask::Zero(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (const auto& p : polys) {
        if (point_in_polygon(p, x + 0.5, y + 0.5)) m(y, x) = 1;
      }
    }
  }
  return m;
}

/// Star-shaped polygon (sorted angles around a centre), hence simple.
/// With `snap` the vertices land on the half-pixel grid so edges pass
/// exactly through pixel centres.
inline std::vector<Vertex> random_simple_polygon(std::mt19937_64& rng, int n, int width, int height, bool snap) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> angles(static_cast<std::size_t>(n));
  for (;;) {
    for (double& a : angles) a = unit(rng) * 2.0 * std::numbers::pi;
    std::sort(angles.begin(), angles.end());
    bool distinct = true;
    for (int i = 1; i < n; ++i) distinct &= angles[i] - angles[i - 1] > 1e-3;
    if (distinct) break;
  }
  const double cx = width * (0.3 + 0.4 * unit(rng));
  const double cy = height * (0.3 + 0.4 * unit(rng));
  const double rmax = 0.5 * std::min(width, height);
  std::vector<Vertex> poly;
  for (double a : angles) {
    const double r = rmax * (0.15 + 0.85 * unit(rng));
    double x = std::clamp(cx + r * std::cos(a), 0.0, static_cast<double>(width));
    double y = std::clamp(cy + r * std::sin(a), 0.0, static_cast<double>(height));
    if (snap) {
      x = std::round(x * 2.0) / 2.0;
      y = std::round(y * 2.0) / 2.0;
    }
    poly.push_back({x, y});
  }
  return poly;
}

struct Component {
  long pixels = 0;
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

/// 8-connected components by breadth-first flood fill, in raster order of
/// each component's first pixel.
inline std::vector<Component> components(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  std::vector<char> seen(static_cast<std::size_t>(w) * h, 0);
  std::vector<Component> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x) || seen[static_cast<std::size_t>(y) * w + x]) continue;
      Component c{0, x, y, x, y};
      std::deque<std::pair<int, int>> queue{{x, y}};
      seen[static_cast<std::size_t>(y) * w + x] = 1;
      while (!queue.empty()) {
        const auto [px, py] = queue.front();
        queue.pop_front();
        ++c.pixels;
        c.x_min = std::min(c.x_min, px);
        c.x_max = std::max(c.x_max, px);
        c.y_min = std::min(c.y_min, py);
        c.y_max = std::max(c.y_max, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h || !mask(ny, nx)) continue;
            char& s = seen[static_cast<std::size_t>(ny) * w + nx];
            if (!s) {
              s = 1;
              queue.push_back({nx, ny});
            }
          }
        }
      }
      out.push_back(c);
    }
  }
  return out;
}

/// P(score of a random positive > score of a random negative), ties 1/2.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
  long long twice_wins = 0;
  for (double p : pos) {
    for (double n : neg) twice_wins += p > n ? 2 : (p == n ? 1 : 0);
  }
  return static_cast<double>(static_cast<long double>(twice_wins) /
                             (2.0L * static_cast<long double>(pos.size()) * static_cast<long double>(neg.size())));
}

/// Batches of `batch` drawn from `length` examples, counted one at a time.
inline long long steps_by_counting(long long length, long long batch, long long epochs) {
  long long batches = 0;
  for (long long start = 0; start < length; start += batch) ++batches;
  return batches * epochs;
}

/// |a - n| / max(|a|, |n|, floor), maximised over elements.
inline double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

/// Central differences of a scalar function over every entry of `x`.
inline Eigen::VectorXd numeric_gradient(stoneseg::nn::Tensor<double>& x, const std::function<double()>& f,
                                        double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.values()[i];
    x.values()[i] = keep + h;
    const double up = f();
    x.values()[i] = keep - h;
    const double down = f();
    x.values()[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace oracle
