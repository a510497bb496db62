#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "last/network.hpp"

namespace last {

// Every loss returns its value and, when asked, the gradient with respect to
// its inputs. Templates are instantiated for float (training) and double
// (gradient checks).

/// Mean over frames of the per-frame L1 distance between feature maps.
/// `d_reconstruction` (if given) receives dL/dT*; sign(0) is taken as 0.
template <typename S>
S reconstruction_loss(const SpatialFeatureSequence<S>& reconstruction, const SpatialFeatureSequence<S>& target,
                      Matrix<S>* d_reconstruction = nullptr) {
  if (reconstruction.values.rows() != target.values.rows() ||
      reconstruction.values.cols() != target.values.cols() || reconstruction.frames != target.frames)
    throw std::invalid_argument("reconstruction_loss: shape mismatch");
  if (target.frames <= 0) throw std::invalid_argument("reconstruction_loss: empty sequence");
  const S n = static_cast<S>(target.frames);
  Matrix<S> diff = reconstruction.values - target.values;
  if (d_reconstruction) *d_reconstruction = diff.unaryExpr([n](S v) { return v > 0 ? S(1) / n : (v < 0 ? S(-1) / n : S(0)); });
  return diff.cwiseAbs().sum() / n;
}

/// (a . b) / max(|a| |b|, eps)
template <typename S>
S cosine_sim(const RowVector<S>& a, const RowVector<S>& b, S eps = S(1e-8), RowVector<S>* d_a = nullptr,
             RowVector<S>* d_b = nullptr) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_sim: dimension mismatch");
  const S na = a.norm(), nb = b.norm();
  const S dot = a.dot(b);
  const S denom = na * nb;
  if (denom > eps) {
    const S s = dot / denom;
    if (d_a) *d_a = b / denom - (na > 0 ? s / (na * na) : S(0)) * a;
    if (d_b) *d_b = a / denom - (nb > 0 ? s / (nb * nb) : S(0)) * b;
    return s;
  }
  if (d_a) *d_a = b / eps;
  if (d_b) *d_b = a / eps;
  return dot / eps;
}

/// One anchor's term: -log( e^{s+/tau} / (e^{s+/tau} + sum_k e^{s_k/tau}) ),
/// evaluated with a shifted log-sum-exp.
template <typename S>
S contrastive_anchor_loss(S positive, const std::vector<S>& negatives, S tau) {
  if (!(tau > 0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  S mx = positive / tau;
  for (S s : negatives) mx = std::max(mx, s / tau);
  S denom = std::exp(positive / tau - mx);
  for (S s : negatives) denom += std::exp(s / tau - mx);
  return mx + std::log(denom) - positive / tau;
}

/// Contrastive loss over a batch in which every video id appears exactly
/// twice. For each of the 2M anchors the positive is the other clip of the
/// same video and the negatives are all clips of the other M-1 videos:
///   l = -log( e^{s+/tau} / (e^{s+/tau} + sum_neg e^{s-/tau}) )
/// The result is the mean over anchors.
template <typename S>
S contrastive_loss(const std::vector<RowVector<S>>& embeddings, const std::vector<std::string>& video_ids, S tau,
                   S eps = S(1e-8), std::vector<RowVector<S>>* d_embeddings = nullptr) {
  const std::size_t n = embeddings.size();
  if (video_ids.size() != n) throw std::invalid_argument("contrastive_loss: ids and embeddings differ in length");
  if (!(tau > 0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < n; ++i) by_video[video_ids[i]].push_back(i);
  for (const auto& [id, idx] : by_video)
    if (idx.size() != 2)
      throw std::invalid_argument("contrastive_loss: video '" + id + "' has " + std::to_string(idx.size()) +
                                  " clips in the batch, expected 2");
  if (by_video.size() < 2) throw std::invalid_argument("contrastive_loss: need at least 2 videos per batch");

  std::vector<std::size_t> positive(n);
  for (const auto& [id, idx] : by_video) {
    positive[idx[0]] = idx[1];
    positive[idx[1]] = idx[0];
  }

  // Pairwise similarities and their input gradients.
  std::vector<std::vector<S>> sim(n, std::vector<S>(n, S(0)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sim[i][j] = sim[j][i] = cosine_sim(embeddings[i], embeddings[j], eps);

  std::vector<std::vector<S>> d_sim(n, std::vector<S>(n, S(0)));
  S total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = positive[i];
    std::vector<S> negatives;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i && video_ids[k] != video_ids[i]) negatives.push_back(sim[i][k]);
    const S term = contrastive_anchor_loss(sim[i][p], negatives, tau);
    const S lse = term + sim[i][p] / tau;  // log-sum-exp over the positive and all negatives
    total += term;
    if (d_embeddings) {
      d_sim[i][p] += (std::exp(sim[i][p] / tau - lse) - S(1)) / tau;
      for (std::size_t k = 0; k < n; ++k)
        if (k != i && video_ids[k] != video_ids[i]) d_sim[i][k] += std::exp(sim[i][k] / tau - lse) / tau;
    }
  }
  const S mean = total / static_cast<S>(n);

  if (d_embeddings) {
    d_embeddings->assign(n, RowVector<S>::Zero(embeddings.front().size()));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const S w = (d_sim[i][j] + d_sim[j][i]) / static_cast<S>(n);
        if (w == S(0)) continue;
        RowVector<S> d_a, d_b;
        cosine_sim(embeddings[i], embeddings[j], eps, &d_a, &d_b);
        (*d_embeddings)[i] += w * d_a;
        (*d_embeddings)[j] += w * d_b;
      }
    }
  }
  return mean;
}

/// Mean two-class softmax cross-entropy. Rows of `logits` are (real, fake).
template <typename S>
S classification_loss(const Matrix<S>& logits, const std::vector<int>& labels, Matrix<S>* d_logits = nullptr) {
  if (logits.rows() == 0) throw std::invalid_argument("classification_loss: empty batch");
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || logits.cols() != 2)
    throw std::invalid_argument("classification_loss: logits/labels shape mismatch");
  const S batch = static_cast<S>(logits.rows());
  if (d_logits) d_logits->resize(logits.rows(), 2);
  S total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y != 0 && y != 1)
      throw std::invalid_argument("classification_loss: label " + std::to_string(y) + " outside {0,1}");
    const S mx = std::max(logits(r, 0), logits(r, 1));
    const S lse = mx + std::log(std::exp(logits(r, 0) - mx) + std::exp(logits(r, 1) - mx));
    total += lse - logits(r, y);
    if (d_logits) {
      for (int k = 0; k < 2; ++k) (*d_logits)(r, k) = (std::exp(logits(r, k) - lse) - (k == y ? S(1) : S(0))) / batch;
    }
  }
  return total / batch;
}

/// Probability of the fake class.
template <typename S>
S fake_probability(const RowVector<S>& logits) {
  const S mx = std::max(logits(0), logits(1));
  const S e0 = std::exp(logits(0) - mx), e1 = std::exp(logits(1) - mx);
  return e1 / (e0 + e1);
}

/// lambda * L_cls + (1 - lambda) * L_rec
inline double last_loss(double cls, double rec, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("last_loss: lambda must lie in [0, 1]");
  return lambda * cls + (1.0 - lambda) * rec;
}

/// lambda1 * L_con + lambda2 * L_rec
inline double init_loss(double con, double rec, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("init_loss: weights must be non-negative");
  return lambda1 * con + lambda2 * rec;
}

}  // namespace last
