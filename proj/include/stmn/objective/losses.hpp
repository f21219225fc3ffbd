#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <set>
#include <string>
#include <vector>

#include "stmn/errors.hpp"
#include "stmn/numerics/ops.hpp"
#include "stmn/scene/superpoints.hpp"

namespace stmn::objective {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceSmooth = 1e-6;
inline constexpr double kScoreGate = 0.5;

struct LossWeights {
  double bce = 1.0;
  double dice = 1.0;
  double rel = 5.0;
  double score = 0.5;
};

struct GroundTruth {
  std::vector<double> point_mask;   // N_p, 0/1
  std::vector<double> sp_mask;      // N_s, 0/1
  std::vector<double> relevance;    // N_s, 0/1
};

namespace detail {

inline Tensor as_row(const Tensor& t) { return t.rows() == 1 ? t : transpose(t); }

inline Tensor label_row(const std::vector<double>& y, std::size_t n, const char* op) {
  if (y.size() != n) {
    throw ShapeError(std::string(op) + ": " + std::to_string(n) + " predictions for " + std::to_string(y.size()) +
                     " labels");
  }
  return Tensor::matrix(1, n, y);
}

}  // namespace detail

// Mean binary cross-entropy of probabilities p against 0/1 labels.
inline Tensor bce_loss(const Tensor& probs, const std::vector<double>& labels) {
  const Tensor p = clamp(detail::as_row(probs), kProbClamp, 1.0 - kProbClamp);
  const Tensor y = detail::label_row(labels, p.size(), "bce_loss");
  const Tensor one_minus_y = Tensor::matrix(1, p.size(), std::vector<double>(p.size(), 1.0));
  const Tensor pos = mul(y, log(p));
  const Tensor neg = mul(sub(one_minus_y, y), log(add_scalar(scale(p, -1.0), 1.0)));
  return scale(mean(add(pos, neg)), -1.0);
}

inline Tensor dice_loss(const Tensor& probs, const std::vector<double>& labels) {
  const Tensor p = detail::as_row(probs);
  const Tensor y = detail::label_row(labels, p.size(), "dice_loss");
  const Tensor inter = add_scalar(scale(sum(mul(p, y)), 2.0), kDiceSmooth);
  const Tensor total = add_scalar(add(sum(p), sum(y)), kDiceSmooth);
  return add_scalar(scale(div(inter, total), -1.0), 1.0);
}

// s_r ranges over (0, N_w); it is normalized by N_w before the cross-entropy.
inline Tensor rel_loss(const Tensor& s_r, std::size_t n_words, const std::vector<double>& labels) {
  if (n_words == 0) throw ValidationError("rel_loss: expression has no words");
  return bce_loss(scale(s_r, 1.0 / static_cast<double>(n_words)), labels);
}

inline Tensor score_loss(const Tensor& score, double iou) {
  if (!(iou > kScoreGate)) return scale(score, 0.0);
  return abs(add_scalar(score, -iou));
}

struct LossComponents {
  Tensor bce, dice, rel, score;
};

inline Tensor total_loss(const LossComponents& c, const LossWeights& w) {
  return add(add(scale(c.bce, w.bce), scale(c.dice, w.dice)), add(scale(c.rel, w.rel), scale(c.score, w.score)));
}

// Intersection over union of two 0/1 masks; two empty masks count as identical.
inline double mask_iou(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("mask_iou: masks of length " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] > 0.5, y = b[i] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::vector<double> binarize(std::span<const double> probs, double threshold = 0.5) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1.0 : 0.0;
  return out;
}

// A superpoint is relevant when the majority category of its points is mentioned.
inline std::vector<double> relevance_labels(const scene::SuperpointPartition& partition,
                                            const std::vector<int>& point_category, const std::set<int>& mentioned) {
  std::vector<double> out(partition.count(), 0.0);
  for (std::size_t s = 0; s < partition.count(); ++s) {
    std::map<int, std::size_t> tally;
    for (auto p : partition.cells[s]) ++tally[point_category[p]];
    auto best = tally.begin();
    for (auto it = tally.begin(); it != tally.end(); ++it)
      if (it->second > best->second) best = it;
    out[s] = mentioned.contains(best->first) ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace stmn::objective
