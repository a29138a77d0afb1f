#pragma once

#include "fmcw/core.hpp"
#include "fmcw/embed_cluster.hpp"
#include "fmcw/toy_head.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <vector>

namespace fmcw {

struct SupConParams {
  double temperature = 0.1;
  bool normalize_features = true;

  void validate() const;
};

struct LossWeights {
  double lambda_ins = 0.01;
  double lambda_var = 0.01;

  void validate() const;
};

struct LossConfig {
  SupConParams supcon;
  LossWeights weights;
  double reg_weight = 1e-4;  // L2 penalty on head parameters
  bool mean_reduce = false;  // average instead of sum in L_obj, L_ins, L_var
};

template <typename Scalar>
struct LossBreakdown {
  Scalar sc = 0, ins = 0, var = 0, obj = 0, reg = 0, total = 0;
};

/// Weighted sum L_SC + lambda_ins L_ins + lambda_var L_var + L_obj + L_reg.
/// Throws Error on a non-finite component.
double total_loss(const LossBreakdown<double>& c, const LossWeights& w);

/// exp(-|x - c|^2 / (2 r^2)) with c the instance centroid and r its RMS
/// radius; 0 for background, 1 for a singleton instance.
Eigen::VectorXd objectness_target(const Eigen::MatrixXd& positions, std::span<const std::uint32_t> instance);

template <typename Derived>
typename Derived::Scalar loss_objectness(const Eigen::MatrixBase<Derived>& o_hat,
                                         const Eigen::MatrixBase<Derived>& o) {
  if (o_hat.size() != o.size()) throw Error("loss_objectness: length mismatch");
  return (o_hat - o).squaredNorm();
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar loss_instance(const Eigen::MatrixBase<DerivedA>& p_hat,
                                        const Eigen::MatrixBase<DerivedB>& membership) {
  if (p_hat.rows() != membership.rows() || p_hat.cols() != membership.cols())
    throw Error("loss_instance: shape mismatch");
  return (p_hat - membership.template cast<typename DerivedA::Scalar>()).squaredNorm();
}

/// Sum over instance points of |var_i - mean var of the instance|^2.
template <typename Derived>
typename Derived::Scalar loss_variance_smooth(const Eigen::MatrixBase<Derived>& var,
                                              std::span<const std::uint32_t> instance) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<std::size_t>(var.rows()) != instance.size()) throw Error("loss_variance_smooth: length mismatch");
  std::map<std::uint32_t, std::pair<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>, std::size_t>> mean;
  for (std::size_t i = 0; i < instance.size(); ++i) {
    if (instance[i] == 0) continue;
    auto [it, fresh] = mean.try_emplace(instance[i], Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(var.cols()), 0);
    it->second.first += var.row(static_cast<Eigen::Index>(i));
    ++it->second.second;
  }
  for (auto& [id, m] : mean) m.first /= Scalar(m.second);
  Scalar loss(0);
  for (std::size_t i = 0; i < instance.size(); ++i)
    if (instance[i] != 0) loss += (var.row(static_cast<Eigen::Index>(i)) - mean.at(instance[i]).first).squaredNorm();
  return loss;
}

/// Elementwise max over member rows, L2-normalized when `normalize`.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> pool_cluster_feature(const Eigen::MatrixBase<Derived>& members,
                                                                                 bool normalize) {
  if (members.rows() == 0) throw Error("pool_cluster_feature: empty cluster");
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> z = members.colwise().maxCoeff().transpose();
  if (normalize) z /= z.norm();
  return z;
}

/// Supervised contrastive loss over pooled cluster features (one row each).
/// Anchors without positives are skipped. Throws with fewer than 2 clusters.
template <typename Derived>
typename Derived::Scalar loss_supcon(const Eigen::MatrixBase<Derived>& z, std::span<const std::uint32_t> ids,
                                     const SupConParams& params) {
  using Scalar = typename Derived::Scalar;
  using std::exp;
  using std::log;
  const auto m = static_cast<std::size_t>(z.rows());
  if (m < 2) throw Error("loss_supcon needs at least 2 clusters");
  if (ids.size() != m) throw Error("loss_supcon: length mismatch");
  const Scalar t(params.temperature);
  Scalar loss(0);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t positives = 0;
    for (std::size_t p = 0; p < m; ++p) positives += p != i && ids[p] == ids[i];
    if (positives == 0) continue;
    std::vector<Scalar> s(m);
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t a = 0; a < m; ++a) {
      if (a == i) continue;
      s[a] = z.row(static_cast<Eigen::Index>(i)).dot(z.row(static_cast<Eigen::Index>(a))) / t;
      top = std::max(top, s[a]);
    }
    Scalar denom(0);
    for (std::size_t a = 0; a < m; ++a)
      if (a != i) denom += exp(s[a] - top);
    const Scalar log_denom = top + log(denom);
    Scalar sum(0);
    for (std::size_t p = 0; p < m; ++p)
      if (p != i && ids[p] == ids[i]) sum += s[p] - log_denom;
    loss -= sum / Scalar(positives);
  }
  return loss;
}

// One training window: per-point features and ground truth, plus the derived
// targets every loss needs.
struct TrainBatch {
  Eigen::MatrixXd features;                // N x F
  Eigen::MatrixXd positions;               // N x 3, compensated window coordinates
  std::vector<std::uint32_t> instance;     // per point, 0 = background
  std::vector<int> slot;                   // frame slot per point

  Eigen::VectorXd objectness;              // targets
  std::vector<std::uint32_t> instance_ids; // distinct non-zero ids, ascending
  std::vector<int> instance_index;         // per point, index into instance_ids or -1
  std::vector<Eigen::Index> centers;       // per instance: member closest to the centroid
  std::vector<std::vector<Eigen::Index>> clusters;  // members of each (instance, slot) group
  std::vector<std::uint32_t> cluster_instance;

  std::size_t size() const { return instance.size(); }
};

TrainBatch make_batch(Eigen::MatrixXd features, Eigen::MatrixXd positions, std::vector<std::uint32_t> instance,
                      std::vector<int> slot);

/// All loss components of the head on one batch, evaluated in Scalar
/// precision.
template <typename Scalar>
LossBreakdown<Scalar> compute_losses(const HeadArch& arch, const VecX<Scalar>& theta, const TrainBatch& batch,
                                     const LossConfig& cfg) {
  using std::exp;
  const MatX<Scalar> x = batch.features.cast<Scalar>();
  const auto f = head_forward<Scalar>(arch, theta, x);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto k = static_cast<Eigen::Index>(batch.instance_ids.size());
  LossBreakdown<Scalar> l;

  const VecX<Scalar> o = batch.objectness.cast<Scalar>();
  l.obj = loss_objectness(f.objectness, o);

  MatX<Scalar> p_hat(n, k), member = MatX<Scalar>::Zero(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index c = batch.centers[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < n; ++i)
      p_hat(i, j) = assoc_prob(f.embedding.row(c), f.variance.row(c), f.embedding.row(i));
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (batch.instance_index[static_cast<std::size_t>(i)] >= 0)
      member(i, batch.instance_index[static_cast<std::size_t>(i)]) = Scalar(1);
  l.ins = k > 0 ? loss_instance(p_hat, member) : Scalar(0);

  l.var = loss_variance_smooth(f.variance, batch.instance);

  if (cfg.mean_reduce) {
    std::size_t moving = 0;
    for (auto id : batch.instance) moving += id != 0;
    if (n > 0) l.obj /= Scalar(n);
    if (n > 0 && k > 0) l.ins /= Scalar(n * k);
    if (moving > 0) l.var /= Scalar(moving);
  }

  const std::size_t m = batch.clusters.size();
  if (m >= 2) {
    MatX<Scalar> z(static_cast<Eigen::Index>(m), arch.embed_dim);
    for (std::size_t c = 0; c < m; ++c) {
      MatX<Scalar> rows(static_cast<Eigen::Index>(batch.clusters[c].size()), arch.embed_dim);
      for (std::size_t r = 0; r < batch.clusters[c].size(); ++r)
        rows.row(static_cast<Eigen::Index>(r)) = f.embedding.row(batch.clusters[c][r]);
      z.row(static_cast<Eigen::Index>(c)) = pool_cluster_feature(rows, cfg.supcon.normalize_features).transpose();
    }
    l.sc = loss_supcon(z, batch.cluster_instance, cfg.supcon);
  }

  l.reg = Scalar(cfg.reg_weight) * theta.squaredNorm();
  l.total = l.sc + Scalar(cfg.weights.lambda_ins) * l.ins + Scalar(cfg.weights.lambda_var) * l.var + l.obj + l.reg;
  return l;
}

struct LossGradients {
  LossBreakdown<double> loss;
  Eigen::VectorXd sc, ins, var, obj, reg, total;
};

/// Analytic gradients of every loss component w.r.t. the head parameters.
/// Max pooling routes its gradient to the argmax member (lowest index on
/// ties).
LossGradients loss_gradients(const HeadArch& arch, const Eigen::VectorXd& theta, const TrainBatch& batch,
                             const LossConfig& cfg);

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  LossConfig loss;
};

struct TrainResult {
  ToyHeadParams head;
  std::vector<double> epoch_loss;  // mean total loss over the batches of each epoch
  std::vector<double> epoch_sc;    // mean L_SC per epoch
};

/// Plain gradient descent, one batch per step, batches visited in a seeded
/// shuffled order each epoch. Epoch curves are measured before each epoch's
/// updates, plus one final entry after training. Throws Error when no batch
/// holds two clusters.
TrainResult train_toy_head(const ToyHeadParams& init, std::span<const TrainBatch> batches, const TrainConfig& cfg,
                           const std::function<void(int, double)>& on_epoch = {});

/// Mean L_SC of the head over the batches.
double mean_supcon(const ToyHeadParams& head, std::span<const TrainBatch> batches, const SupConParams& params);

struct CosineMargin {
  double positive = 0.0;  // mean cosine similarity of same-instance cluster pairs
  double negative = 0.0;  // mean over different-instance pairs
  double margin() const { return positive - negative; }
};
CosineMargin cosine_margin(const ToyHeadParams& head, std::span<const TrainBatch> batches);

}  // namespace fmcw
