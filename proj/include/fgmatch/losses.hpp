// SPDX-License-Identifier: Apache-2.0
//
// Hinge-based triplet objectives over similarity scores.
//
// Coarse (in-batch, both directions), summed over ordered pairs i != j:
//   [a + S(v_i, t_j) - S(v_i, t_i)]_+  +  [a + S(v_j, t_i) - S(v_i, t_i)]_+
// Fine-grained (image anchor, one positive caption, N negatives):
//   sum_i sum_j [a + S(v_i, neg_ij) - S(v_i, pos_i)]_+
//
// Neither loss is normalized by batch size. The subgradient of [x]_+ at 0 is 0.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fgmatch/errors.hpp"
#include "fgmatch/numcore.hpp"

namespace fgmatch {

struct LossConfig {
  double margin = 0.2;

  void validate() const {
    if (!(margin >= 0.0)) throw UsageError("loss margin must be nonnegative");
  }
};

/// Coarse triplet loss of a B x B score matrix (B >= 2). When `grad` is given
/// it receives dL/dS with the same shape.
inline double coarse_triplet_loss(const ScoreMatrix& scores, double margin, ScoreMatrix* grad = nullptr) {
  LossConfig{margin}.validate();
  const std::size_t b = scores.rows();
  if (scores.cols() != b) throw UsageError("coarse triplet loss: score matrix must be square");
  if (b < 2) throw UsageError("coarse triplet loss: batch size must be at least 2");
  if (grad) *grad = ScoreMatrix(b, b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double pos = scores(i, i);
    double row = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double caption_term = margin + scores(i, j) - pos;  // v_i against rival caption t_j
      const double image_term = margin + scores(j, i) - pos;    // t_i against rival image v_j
      if (caption_term > 0.0) {
        row += caption_term;
        if (grad) {
          (*grad)(i, j) += 1.0;
          (*grad)(i, i) -= 1.0;
        }
      }
      if (image_term > 0.0) {
        row += image_term;
        if (grad) {
          (*grad)(j, i) += 1.0;
          (*grad)(i, i) -= 1.0;
        }
      }
    }
    total += row;
  }
  return total;
}

/// Scores of one fine-grained item: its positive and its negatives.
struct VocabScores {
  double positive = 0.0;
  std::vector<double> negatives;
};

/// Fine-grained triplet loss. When `grad` is given it receives dL/dscore per
/// item in the same layout as `items`.
inline double finegrained_triplet_loss(std::span<const VocabScores> items, double margin,
                                       std::vector<VocabScores>* grad = nullptr) {
  LossConfig{margin}.validate();
  if (grad) grad->assign(items.size(), VocabScores{});
  double total = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.negatives.empty()) throw UsageError("fine-grained triplet loss: item without negatives");
    if (grad) (*grad)[i].negatives.assign(it.negatives.size(), 0.0);
    double item_loss = 0.0;
    for (std::size_t j = 0; j < it.negatives.size(); ++j) {
      const double term = margin + it.negatives[j] - it.positive;
      if (term > 0.0) {
        item_loss += term;
        if (grad) {
          (*grad)[i].negatives[j] += 1.0;
          (*grad)[i].positive -= 1.0;
        }
      }
    }
    total += item_loss;
  }
  return total;
}

/// Single-item convenience overload.
inline double finegrained_triplet_loss(double positive, std::span<const double> negatives, double margin) {
  VocabScores item{positive, {negatives.begin(), negatives.end()}};
  return finegrained_triplet_loss(std::span<const VocabScores>(&item, 1), margin);
}

}  // namespace fgmatch
