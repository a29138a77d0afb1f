#pragma once

#include "fmcw/core.hpp"
#include "fmcw/embed_cluster.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace fmcw {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Per-point input features, computed in compensated window coordinates.
struct FeatureSpec {
  bool use_velocity = true;  // "xyz+v" when true, "xyz" otherwise
  double r_near = 1.5;       // neighborhood radii, m
  double r_far = 4.0;

  int dim() const { return use_velocity ? 12 : 10; }
};

// Fully connected tanh network: features -> [embedding D | log-variance D |
// objectness logit].
struct HeadArch {
  int input_dim = 12;
  std::vector<int> hidden{32, 32};
  int embed_dim = 8;

  int output_dim() const { return 2 * embed_dim + 1; }
  std::size_t param_count() const;
  bool operator==(const HeadArch&) const = default;
};

struct ToyHeadParams {
  HeadArch arch;
  FeatureSpec features;
  Eigen::VectorXd theta;  // flat weights and biases, layer by layer (W column-major, then b)
};

/// Small random weights; embedding outputs start near zero and the
/// log-variance bias at -log(2 pi) so the Eq. 1 peak density starts at 1.
ToyHeadParams init_toy_head(const HeadArch& arch, const FeatureSpec& features, std::uint64_t seed);

template <typename Scalar>
struct HeadForward {
  std::vector<MatX<Scalar>> activations;  // [0] = input, then one per hidden layer
  MatX<Scalar> out;                       // N x output_dim, raw
  MatX<Scalar> embedding;                 // N x D
  MatX<Scalar> variance;                  // N x D
  VecX<Scalar> objectness;                // N, sigmoid of the logit
};

template <typename Scalar>
HeadForward<Scalar> head_forward(const HeadArch& arch, const VecX<Scalar>& theta, const MatX<Scalar>& x) {
  using std::exp;
  using std::tanh;
  if (x.cols() != arch.input_dim) throw Error("head input has " + std::to_string(x.cols()) + " features, expected " +
                                              std::to_string(arch.input_dim));
  if (static_cast<std::size_t>(theta.size()) != arch.param_count()) throw Error("head parameter count mismatch");
  HeadForward<Scalar> f;
  f.activations.push_back(x);
  Eigen::Index offset = 0;
  int in = arch.input_dim;
  auto layer = [&](const MatX<Scalar>& a, int out) {
    const Eigen::Map<const MatX<Scalar>> w(theta.data() + offset, in, out);
    offset += static_cast<Eigen::Index>(in) * out;
    const Eigen::Map<const VecX<Scalar>> b(theta.data() + offset, out);
    offset += out;
    in = out;
    MatX<Scalar> z = a * w;
    z.rowwise() += b.transpose();
    return z;
  };
  for (int h : arch.hidden) f.activations.push_back(layer(f.activations.back(), h).array().tanh().matrix());
  f.out = layer(f.activations.back(), arch.output_dim());
  const int d = arch.embed_dim;
  f.embedding = f.out.leftCols(d);
  f.variance = f.out.middleCols(d, d).array().exp().matrix();
  f.objectness = (Scalar(1) / (Scalar(1) + (-f.out.col(2 * d).array()).exp())).matrix();
  return f;
}

/// Gradient of a loss w.r.t. theta given its gradient w.r.t. the raw outputs.
template <typename Scalar>
VecX<Scalar> head_backward(const HeadArch& arch, const VecX<Scalar>& theta, const HeadForward<Scalar>& f,
                           const MatX<Scalar>& d_out) {
  VecX<Scalar> grad = VecX<Scalar>::Zero(theta.size());
  std::vector<int> sizes{arch.input_dim};
  for (int h : arch.hidden) sizes.push_back(h);
  sizes.push_back(arch.output_dim());
  std::vector<Eigen::Index> offsets;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    offsets.push_back(offset);
    offset += static_cast<Eigen::Index>(sizes[l]) * sizes[l + 1] + sizes[l + 1];
  }
  MatX<Scalar> delta = d_out;
  for (std::size_t l = offsets.size(); l-- > 0;) {
    const int in = sizes[l], out = sizes[l + 1];
    const MatX<Scalar>& a = f.activations[l];
    Eigen::Map<MatX<Scalar>> gw(grad.data() + offsets[l], in, out);
    Eigen::Map<VecX<Scalar>> gb(grad.data() + offsets[l] + static_cast<Eigen::Index>(in) * out, out);
    gw.noalias() = a.transpose() * delta;
    gb = delta.colwise().sum().transpose();
    if (l == 0) break;
    const Eigen::Map<const MatX<Scalar>> w(theta.data() + offsets[l], in, out);
    MatX<Scalar> back = delta * w.transpose();
    delta = (back.array() * (Scalar(1) - a.array().square())).matrix();
  }
  return grad;
}

/// Runs the head in double precision and packages the outputs.
HeadOutputs run_head(const ToyHeadParams& head, const Eigen::MatrixXd& features);

nlohmann::json head_to_json(const ToyHeadParams& head);
ToyHeadParams head_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const ToyHeadParams& head, const nlohmann::json& extra = {});
ToyHeadParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fmcw
