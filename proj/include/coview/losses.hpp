#pragma once

// Segmentation cross-entropy and the elementwise generalized contrastive loss.
// Both are plain sums over every element (no averaging) and are templated so
// that gradient checks can run at double precision.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>

#include "coview/error.hpp"

namespace coview {

inline constexpr double kProbEpsilon = 1e-7;

// L = -sum( S log p + (1-S) log(1-p) ), p clamped to [eps, 1-eps].
// grad (optional, same length) receives dL/dp; zero where the clamp is active.
template <std::floating_point T>
T seg_loss(std::span<const T> probs_fg, std::span<const uint8_t> gt, std::span<T> grad = {}) {
  require(probs_fg.size() == gt.size(), ErrorKind::Shape,
          "seg_loss: " + std::to_string(probs_fg.size()) + " probabilities vs " +
              std::to_string(gt.size()) + " labels");
  require(grad.empty() || grad.size() == probs_fg.size(), ErrorKind::Shape,
          "seg_loss: gradient buffer size");
  const T eps = static_cast<T>(kProbEpsilon);
  T loss = 0;
  for (size_t i = 0; i < probs_fg.size(); ++i) {
    const T raw = probs_fg[i];
    const T p = std::clamp(raw, eps, T(1) - eps);
    const bool fg = gt[i] != 0;
    loss -= fg ? std::log(p) : std::log1p(-p);
    if (!grad.empty()) {
      const bool clamped = raw < eps || raw > T(1) - eps;
      grad[i] = clamped ? T(0) : (fg ? -T(1) / p : T(1) / (T(1) - p));
    }
  }
  return loss;
}

// Elementwise contrastive loss over a batch of N embeddings of `item_size`
// elements each: y (a-b)^2 + (1-y) max(m - |a-b|, 0)^2 summed over everything.
template <std::floating_point T>
T contrastive_loss(std::span<const T> a, std::span<const T> b, std::span<const int> labels,
                   T margin, std::span<T> grad_a = {}, std::span<T> grad_b = {}) {
  require(a.size() == b.size(), ErrorKind::Shape,
          "contrastive_loss: embedding sizes " + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()));
  require(!labels.empty() && a.size() % labels.size() == 0, ErrorKind::Shape,
          "contrastive_loss: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(a.size()) + " elements");
  require(margin > 0, ErrorKind::Parameter, "contrastive_loss: margin must be positive");
  require(grad_a.empty() || grad_a.size() == a.size(), ErrorKind::Shape, "grad_a size");
  require(grad_b.empty() || grad_b.size() == b.size(), ErrorKind::Shape, "grad_b size");
  const size_t item = a.size() / labels.size();
  T loss = 0;
  for (size_t n = 0; n < labels.size(); ++n) {
    const int y = labels[n];
    require(y == 0 || y == 1, ErrorKind::Parameter, "contrastive_loss: labels must be 0 or 1");
    for (size_t j = n * item; j < (n + 1) * item; ++j) {
      const T d = a[j] - b[j];
      T g = 0;
      if (y == 1) {
        loss += d * d;
        g = 2 * d;
      } else {
        const T gap = margin - std::abs(d);
        if (gap > 0) {
          loss += gap * gap;
          const T sign = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
          g = -2 * gap * sign;
        }
      }
      if (!grad_a.empty()) grad_a[j] = g;
      if (!grad_b.empty()) grad_b[j] = -g;
    }
  }
  return loss;
}

// Sum of squared elementwise differences.
template <std::floating_point T>
T squared_distance(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), ErrorKind::Shape,
          "pair_distance: sizes " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  T s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace coview
