#include "fmcw/embed_cluster.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>
#include <unordered_map>

namespace fmcw {

void ClusterInferParams::validate() const {
  if (!(p_threshold > 0.0)) throw ConfigError("infer.p_threshold must be > 0");
  if (!(overlap_threshold > 0.0 && overlap_threshold <= 1.0))
    throw ConfigError("infer.overlap_threshold must lie in (0, 1]");
  if (max_instances < 1) throw ConfigError("infer.max_instances must be >= 1");
}

HeadOutputs HeadOutputs::from_points(std::span<const PointHeadOutput> points) {
  HeadOutputs h;
  const auto n = static_cast<Eigen::Index>(points.size());
  const Eigen::Index d = points.empty() ? 0 : points[0].embedding.size();
  h.embedding.resize(n, d);
  h.variance.resize(n, d);
  h.objectness.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    if (p.embedding.size() != d || p.variance.size() != d) throw Error("head outputs differ in dimension");
    h.embedding.row(i) = p.embedding.transpose();
    h.variance.row(i) = p.variance.transpose();
    h.objectness(i) = p.objectness;
  }
  return h;
}

VolumeAssignment cluster_volume(const HeadOutputs& head, const ClusterInferParams& params) {
  const auto n = static_cast<Eigen::Index>(head.size());
  if (head.embedding.rows() != n || head.variance.rows() != n || head.variance.cols() != head.embedding.cols())
    throw Error("head outputs have inconsistent shapes");
  VolumeAssignment out;
  out.instance.assign(static_cast<std::size_t>(n), -1);

  // Candidates in peeling order: objectness descending, index ascending.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return head.objectness(a) > head.objectness(b); });

  std::vector<Eigen::Index> remaining = order;
  while (!remaining.empty()) {
    if (static_cast<std::size_t>(out.count) >= params.max_instances) throw Error("fragmented clustering");
    const Eigen::Index c = remaining.front();
    const int k = out.count++;
    out.instance[static_cast<std::size_t>(c)] = k;
    const auto e_c = head.embedding.row(c);
    const auto var_c = head.variance.row(c);
    std::vector<Eigen::Index> rest;
    rest.reserve(remaining.size());
    for (std::size_t r = 1; r < remaining.size(); ++r) {
      const Eigen::Index j = remaining[r];
      if (assoc_prob(e_c, var_c, head.embedding.row(j)) > params.p_threshold)
        out.instance[static_cast<std::size_t>(j)] = k;
      else
        rest.push_back(j);
    }
    remaining = std::move(rest);
  }
  return out;
}

VolumeAssignment drop_small_instances(const VolumeAssignment& a, std::size_t min_points) {
  std::vector<std::size_t> size(static_cast<std::size_t>(a.count), 0);
  for (int k : a.instance)
    if (k >= 0) ++size[static_cast<std::size_t>(k)];
  std::vector<int> remap(static_cast<std::size_t>(a.count), -1);
  VolumeAssignment out;
  out.instance.assign(a.instance.size(), -1);
  for (std::size_t i = 0; i < a.instance.size(); ++i) {
    const int k = a.instance[i];
    if (k < 0 || size[static_cast<std::size_t>(k)] < min_points) continue;
    int& r = remap[static_cast<std::size_t>(k)];
    if (r < 0) r = out.count++;
    out.instance[i] = r;
  }
  return out;
}

std::vector<int> greedy_overlap_match(const Eigen::MatrixXd& overlap, double threshold) {
  std::vector<std::tuple<double, Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index r = 0; r < overlap.rows(); ++r)
    for (Eigen::Index c = 0; c < overlap.cols(); ++c)
      if (overlap(r, c) >= threshold) pairs.emplace_back(-overlap(r, c), r, c);
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> match(static_cast<std::size_t>(overlap.rows()), -1);
  std::vector<char> used(static_cast<std::size_t>(overlap.cols()), 0);
  for (const auto& [neg, r, c] : pairs) {
    if (match[static_cast<std::size_t>(r)] >= 0 || used[static_cast<std::size_t>(c)]) continue;
    match[static_cast<std::size_t>(r)] = static_cast<int>(c);
    used[static_cast<std::size_t>(c)] = 1;
  }
  return match;
}

std::vector<std::uint32_t> associate_volumes(const WindowLabels& prev, std::span<const PointId> cur_point_ids,
                                             const VolumeAssignment& cur, double overlap_threshold, IdSource& ids) {
  if (cur_point_ids.size() != cur.instance.size()) throw Error("associate_volumes: size mismatch");
  std::vector<std::uint32_t> out(static_cast<std::size_t>(cur.count), 0);

  std::set<std::uint32_t> prev_frames, cur_frames;
  for (auto id : prev.point_ids) prev_frames.insert(point_id_frame(id));
  for (auto id : cur_point_ids) cur_frames.insert(point_id_frame(id));
  auto shared = [&](PointId id) {
    const auto f = point_id_frame(id);
    return prev_frames.count(f) && cur_frames.count(f);
  };

  // Previous ids and sizes restricted to shared frames.
  std::unordered_map<PointId, std::uint32_t> prev_label;
  std::map<std::uint32_t, std::size_t> prev_size;
  for (std::size_t i = 0; i < prev.point_ids.size(); ++i) {
    if (prev.ids[i] == 0 || !shared(prev.point_ids[i])) continue;
    prev_label[prev.point_ids[i]] = prev.ids[i];
    ++prev_size[prev.ids[i]];
  }
  std::vector<std::uint32_t> columns;
  std::map<std::uint32_t, Eigen::Index> column_of;
  for (const auto& [id, size] : prev_size) {
    column_of[id] = static_cast<Eigen::Index>(columns.size());
    columns.push_back(id);
  }

  std::vector<std::size_t> cur_size(static_cast<std::size_t>(cur.count), 0);
  Eigen::MatrixXd inter = Eigen::MatrixXd::Zero(cur.count, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < cur_point_ids.size(); ++i) {
    const int k = cur.instance[i];
    if (k < 0 || !shared(cur_point_ids[i])) continue;
    ++cur_size[static_cast<std::size_t>(k)];
    auto it = prev_label.find(cur_point_ids[i]);
    if (it != prev_label.end()) inter(k, column_of[it->second]) += 1.0;
  }
  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(inter.rows(), inter.cols());
  for (Eigen::Index r = 0; r < inter.rows(); ++r)
    for (Eigen::Index c = 0; c < inter.cols(); ++c) {
      if (inter(r, c) == 0.0) continue;
      const double uni = static_cast<double>(cur_size[static_cast<std::size_t>(r)] +
                                             prev_size[columns[static_cast<std::size_t>(c)]]) -
                         inter(r, c);
      overlap(r, c) = inter(r, c) / uni;
    }

  const auto match = greedy_overlap_match(overlap, overlap_threshold);
  for (int k = 0; k < cur.count; ++k) {
    const int m = match[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(k)] = m >= 0 ? columns[static_cast<std::size_t>(m)] : ids.allocate();
  }
  return out;
}

}  // namespace fmcw
