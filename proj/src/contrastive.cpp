#include "fmcw/contrastive.hpp"

#include <numeric>
#include <random>
#include <set>

namespace fmcw {

void SupConParams::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("supcon temperature must be > 0");
}

void LossWeights::validate() const {
  if (!(lambda_ins >= 0.0) || !(lambda_var >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

double total_loss(const LossBreakdown<double>& c, const LossWeights& w) {
  for (double v : {c.sc, c.ins, c.var, c.obj, c.reg})
    if (!std::isfinite(v)) throw Error("non-finite loss component");
  return c.sc + w.lambda_ins * c.ins + w.lambda_var * c.var + c.obj + c.reg;
}

Eigen::VectorXd objectness_target(const Eigen::MatrixXd& positions, std::span<const std::uint32_t> instance) {
  const auto n = static_cast<Eigen::Index>(instance.size());
  if (positions.rows() != n) throw Error("objectness_target: length mismatch");
  std::map<std::uint32_t, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < n; ++i)
    if (instance[static_cast<std::size_t>(i)] != 0) members[instance[static_cast<std::size_t>(i)]].push_back(i);
  Eigen::VectorXd o = Eigen::VectorXd::Zero(n);
  for (const auto& [id, idx] : members) {
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(positions.cols());
    for (auto i : idx) c += positions.row(i);
    c /= static_cast<double>(idx.size());
    double r2 = 0.0;
    for (auto i : idx) r2 += (positions.row(i) - c).squaredNorm();
    r2 /= static_cast<double>(idx.size());
    for (auto i : idx) o(i) = r2 > 0.0 ? std::exp(-(positions.row(i) - c).squaredNorm() / (2.0 * r2)) : 1.0;
  }
  return o;
}

TrainBatch make_batch(Eigen::MatrixXd features, Eigen::MatrixXd positions, std::vector<std::uint32_t> instance,
                      std::vector<int> slot) {
  const auto n = static_cast<Eigen::Index>(instance.size());
  if (features.rows() != n || positions.rows() != n || slot.size() != instance.size())
    throw Error("make_batch: inconsistent lengths");
  TrainBatch b;
  b.features = std::move(features);
  b.positions = std::move(positions);
  b.instance = std::move(instance);
  b.slot = std::move(slot);
  b.objectness = objectness_target(b.positions, b.instance);

  std::set<std::uint32_t> ids(b.instance.begin(), b.instance.end());
  ids.erase(0);
  b.instance_ids.assign(ids.begin(), ids.end());
  std::map<std::uint32_t, int> index;
  for (std::size_t k = 0; k < b.instance_ids.size(); ++k) index[b.instance_ids[k]] = static_cast<int>(k);
  b.instance_index.assign(b.instance.size(), -1);
  for (std::size_t i = 0; i < b.instance.size(); ++i)
    if (b.instance[i] != 0) b.instance_index[i] = index[b.instance[i]];

  // Center proxy: the member nearest to the instance centroid.
  b.centers.resize(b.instance_ids.size());
  for (std::size_t k = 0; k < b.instance_ids.size(); ++k) {
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(b.positions.cols());
    std::size_t m = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (b.instance_index[static_cast<std::size_t>(i)] == static_cast<int>(k)) {
        c += b.positions.row(i);
        ++m;
      }
    c /= static_cast<double>(m);
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (b.instance_index[static_cast<std::size_t>(i)] != static_cast<int>(k)) continue;
      const double d = (b.positions.row(i) - c).squaredNorm();
      if (d < best) {
        best = d;
        b.centers[k] = i;
      }
    }
  }

  std::map<std::pair<std::uint32_t, int>, std::size_t> group;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto id = b.instance[static_cast<std::size_t>(i)];
    if (id == 0) continue;
    auto [it, fresh] = group.try_emplace({id, b.slot[static_cast<std::size_t>(i)]}, b.clusters.size());
    if (fresh) {
      b.clusters.emplace_back();
      b.cluster_instance.push_back(id);
    }
    b.clusters[it->second].push_back(i);
  }
  return b;
}

LossGradients loss_gradients(const HeadArch& arch, const Eigen::VectorXd& theta, const TrainBatch& batch,
                             const LossConfig& cfg) {
  const auto f = head_forward<double>(arch, theta, batch.features);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto k = static_cast<Eigen::Index>(batch.instance_ids.size());
  const int d = arch.embed_dim;
  const Eigen::Index out_dim = arch.output_dim();
  std::size_t moving = 0;
  for (auto id : batch.instance) moving += id != 0;
  const double obj_scale = cfg.mean_reduce && n > 0 ? 1.0 / static_cast<double>(n) : 1.0;
  const double ins_scale = cfg.mean_reduce && n > 0 && k > 0 ? 1.0 / static_cast<double>(n * k) : 1.0;
  const double var_scale = cfg.mean_reduce && moving > 0 ? 1.0 / static_cast<double>(moving) : 1.0;

  LossGradients g;
  LossBreakdown<double>& l = g.loss;

  // Objectness.
  Eigen::MatrixXd d_obj = Eigen::MatrixXd::Zero(n, out_dim);
  {
    const Eigen::ArrayXd diff = f.objectness - batch.objectness;
    l.obj = obj_scale * diff.square().sum();
    d_obj.col(2 * d) = (obj_scale * 2.0 * diff * f.objectness.array() * (1.0 - f.objectness.array())).matrix();
  }

  // Instance association against the center proxies.
  Eigen::MatrixXd d_ins = Eigen::MatrixXd::Zero(n, out_dim);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index c = batch.centers[static_cast<std::size_t>(j)];
    const Eigen::RowVectorXd e_c = f.embedding.row(c);
    const Eigen::RowVectorXd var_c = f.variance.row(c);
    const Eigen::RowVectorXd inv = var_c.cwiseInverse();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = assoc_prob(e_c, var_c, f.embedding.row(i));
      const double m = batch.instance_index[static_cast<std::size_t>(i)] == static_cast<int>(j) ? 1.0 : 0.0;
      l.ins += ins_scale * (p - m) * (p - m);
      const double gp = ins_scale * 2.0 * (p - m);
      const Eigen::RowVectorXd diff = f.embedding.row(i) - e_c;
      const Eigen::RowVectorXd de = gp * p * diff.cwiseProduct(inv);
      d_ins.block(i, 0, 1, d) -= de;
      d_ins.block(c, 0, 1, d) += de;
      d_ins.block(c, d, 1, d) +=
          (gp * p * 0.5 * (diff.cwiseProduct(diff).cwiseProduct(inv).array() - 1.0)).matrix();
    }
  }

  // Variance smoothness.
  Eigen::MatrixXd d_var = Eigen::MatrixXd::Zero(n, out_dim);
  {
    std::vector<Eigen::RowVectorXd> mean(static_cast<std::size_t>(k), Eigen::RowVectorXd::Zero(d));
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int idx = batch.instance_index[static_cast<std::size_t>(i)];
      if (idx < 0) continue;
      mean[static_cast<std::size_t>(idx)] += f.variance.row(i);
      ++count[static_cast<std::size_t>(idx)];
    }
    for (std::size_t q = 0; q < mean.size(); ++q) mean[q] /= static_cast<double>(count[q]);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int idx = batch.instance_index[static_cast<std::size_t>(i)];
      if (idx < 0) continue;
      const Eigen::RowVectorXd dev = f.variance.row(i) - mean[static_cast<std::size_t>(idx)];
      l.var += var_scale * dev.squaredNorm();
      // The instance mean's own dependence cancels: deviations sum to zero.
      d_var.block(i, d, 1, d) = var_scale * 2.0 * dev.cwiseProduct(f.variance.row(i));
    }
  }

  // Supervised contrastive loss over pooled cluster features.
  Eigen::MatrixXd d_sc = Eigen::MatrixXd::Zero(n, out_dim);
  const std::size_t m = batch.clusters.size();
  if (m >= 2) {
    const double t = cfg.supcon.temperature;
    Eigen::MatrixXd u(static_cast<Eigen::Index>(m), d), z(static_cast<Eigen::Index>(m), d);
    std::vector<std::vector<Eigen::Index>> arg(m, std::vector<Eigen::Index>(static_cast<std::size_t>(d)));
    for (std::size_t c = 0; c < m; ++c) {
      for (int q = 0; q < d; ++q) {
        Eigen::Index best = batch.clusters[c].front();
        for (Eigen::Index i : batch.clusters[c])
          if (f.embedding(i, q) > f.embedding(best, q)) best = i;
        arg[c][static_cast<std::size_t>(q)] = best;
        u(static_cast<Eigen::Index>(c), q) = f.embedding(best, q);
      }
      const double norm = u.row(static_cast<Eigen::Index>(c)).norm();
      z.row(static_cast<Eigen::Index>(c)) =
          cfg.supcon.normalize_features ? Eigen::RowVectorXd(u.row(static_cast<Eigen::Index>(c)) / norm)
                                        : Eigen::RowVectorXd(u.row(static_cast<Eigen::Index>(c)));
    }
    const Eigen::MatrixXd s = z * z.transpose() / t;
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), d);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t positives = 0;
      for (std::size_t p = 0; p < m; ++p) positives += p != i && batch.cluster_instance[p] == batch.cluster_instance[i];
      if (positives == 0) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < m; ++a)
        if (a != i) top = std::max(top, s(ii, static_cast<Eigen::Index>(a)));
      double denom = 0.0;
      for (std::size_t a = 0; a < m; ++a)
        if (a != i) denom += std::exp(s(ii, static_cast<Eigen::Index>(a)) - top);
      const double log_denom = top + std::log(denom);
      double sum = 0.0;
      for (std::size_t a = 0; a < m; ++a) {
        if (a == i) continue;
        const auto aa = static_cast<Eigen::Index>(a);
        const bool pos = batch.cluster_instance[a] == batch.cluster_instance[i];
        if (pos) sum += s(ii, aa) - log_denom;
        const double gs = std::exp(s(ii, aa) - log_denom) - (pos ? 1.0 / static_cast<double>(positives) : 0.0);
        dz.row(ii) += gs * z.row(aa) / t;
        dz.row(aa) += gs * z.row(ii) / t;
      }
      l.sc -= sum / static_cast<double>(positives);
    }
    for (std::size_t c = 0; c < m; ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      Eigen::RowVectorXd du = dz.row(cc);
      if (cfg.supcon.normalize_features) {
        const double norm = u.row(cc).norm();
        du = (du - z.row(cc) * z.row(cc).dot(du)) / norm;
      }
      for (int q = 0; q < d; ++q) d_sc(arg[c][static_cast<std::size_t>(q)], q) += du(q);
    }
  }

  l.reg = cfg.reg_weight * theta.squaredNorm();
  l.total = total_loss(l, cfg.weights);

  g.obj = head_backward<double>(arch, theta, f, d_obj);
  g.ins = head_backward<double>(arch, theta, f, d_ins);
  g.var = head_backward<double>(arch, theta, f, d_var);
  g.sc = head_backward<double>(arch, theta, f, d_sc);
  g.reg = 2.0 * cfg.reg_weight * theta;
  g.total = g.sc + cfg.weights.lambda_ins * g.ins + cfg.weights.lambda_var * g.var + g.obj + g.reg;
  return g;
}

namespace {

bool has_pair(std::span<const TrainBatch> batches) {
  for (const auto& b : batches)
    if (b.clusters.size() >= 2) return true;
  return false;
}

}  // namespace

TrainResult train_toy_head(const ToyHeadParams& init, std::span<const TrainBatch> batches, const TrainConfig& cfg,
                           const std::function<void(int, double)>& on_epoch) {
  cfg.loss.supcon.validate();
  cfg.loss.weights.validate();
  if (cfg.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (!has_pair(batches)) throw Error("training data holds no window with two instance clusters");
  for (const auto& b : batches)
    if (b.features.cols() != init.arch.input_dim) throw Error("batch features do not match the head input size");

  TrainResult r;
  r.head = init;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(batches.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0, sc = 0.0;
    for (std::size_t b : order) {
      const auto g = loss_gradients(r.head.arch, r.head.theta, batches[b], cfg.loss);
      total += g.loss.total;
      sc += g.loss.sc;
      r.head.theta -= cfg.learning_rate * g.total;
    }
    r.epoch_loss.push_back(total / static_cast<double>(batches.size()));
    r.epoch_sc.push_back(sc / static_cast<double>(batches.size()));
    if (on_epoch) on_epoch(epoch, r.epoch_loss.back());
    if (!r.head.theta.allFinite()) throw Error("training diverged (non-finite parameters); lower the learning rate");
  }
  double total = 0.0, sc = 0.0;
  for (const auto& b : batches) {
    const auto l = compute_losses<double>(r.head.arch, r.head.theta, b, cfg.loss);
    total += l.total;
    sc += l.sc;
  }
  r.epoch_loss.push_back(total / static_cast<double>(batches.size()));
  r.epoch_sc.push_back(sc / static_cast<double>(batches.size()));
  return r;
}

double mean_supcon(const ToyHeadParams& head, std::span<const TrainBatch> batches, const SupConParams& params) {
  LossConfig cfg;
  cfg.supcon = params;
  double sum = 0.0;
  for (const auto& b : batches) sum += compute_losses<double>(head.arch, head.theta, b, cfg).sc;
  return batches.empty() ? 0.0 : sum / static_cast<double>(batches.size());
}

CosineMargin cosine_margin(const ToyHeadParams& head, std::span<const TrainBatch> batches) {
  double pos = 0.0, neg = 0.0;
  std::size_t np = 0, nn = 0;
  for (const auto& b : batches) {
    if (b.clusters.size() < 2) continue;
    const auto out = run_head(head, b.features);
    std::vector<Eigen::VectorXd> z;
    for (const auto& members : b.clusters) {
      Eigen::MatrixXd rows(static_cast<Eigen::Index>(members.size()), head.arch.embed_dim);
      for (std::size_t r = 0; r < members.size(); ++r) rows.row(static_cast<Eigen::Index>(r)) = out.embedding.row(members[r]);
      z.push_back(pool_cluster_feature(rows, true));
    }
    for (std::size_t i = 0; i < z.size(); ++i)
      for (std::size_t j = i + 1; j < z.size(); ++j) {
        const double c = z[i].dot(z[j]);
        if (b.cluster_instance[i] == b.cluster_instance[j]) {
          pos += c;
          ++np;
        } else {
          neg += c;
          ++nn;
        }
      }
  }
  CosineMargin m;
  m.positive = np ? pos / static_cast<double>(np) : 0.0;
  m.negative = nn ? neg / static_cast<double>(nn) : 0.0;
  return m;
}

}  // namespace fmcw
