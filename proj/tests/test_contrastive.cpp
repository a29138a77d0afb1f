#include <doctest.h>

#include "gradient_oracle.hpp"

#include <filesystem>
#include <numbers>
#include <random>
#include <unistd.h>

using namespace fmcw;
using namespace grad_oracle;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("objectness_target: Gaussian of centroid distance") {
  Eigen::MatrixXd pos(5, 3);
  pos << 0, 0, 0,  //
      2, 0, 0,     //
      1, 0, 0,     //
      9, 9, 9,     //
      4, 4, 4;
  const std::vector<std::uint32_t> inst{1, 1, 1, 0, 2};
  const auto o = objectness_target(pos, inst);
  // Instance 1: centroid (1,0,0), r^2 = (1 + 1 + 0)/3 = 2/3.
  CHECK(o(2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(o(0) == doctest::Approx(std::exp(-1.0 / (2.0 * 2.0 / 3.0))).epsilon(1e-12));
  CHECK(o(1) == doctest::Approx(o(0)).epsilon(1e-12));
  CHECK(o(3) == 0.0);
  CHECK(o(4) == 1.0);  // singleton

  // A point at distance r_I gets e^-0.5.
  Eigen::MatrixXd sym(2, 3);
  sym << -1, 0, 0, 1, 0, 0;  // centroid 0, r = 1
  const std::vector<std::uint32_t> two{3, 3};
  const auto s = objectness_target(sym, two);
  CHECK(s(0) == doctest::Approx(0.6065306597126334).epsilon(1e-12));
}

TEST_CASE("loss_objectness examples") {
  CHECK(loss_objectness(vec({0.2, 0.7}), vec({0.2, 0.7})) == 0.0);
  CHECK(loss_objectness(vec({1, 0}), vec({0, 1})) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(loss_objectness(vec({0.5, 0.3, 0.0}), vec({0.0, 0.3, 0.5})) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS(loss_objectness(vec({1, 0}), vec({1})));
}

TEST_CASE("loss_instance examples") {
  Eigen::MatrixXd p(1, 1), m(1, 1);
  p << 0.4;
  m << 1;
  CHECK(loss_instance(p, m) == doctest::Approx(0.36).epsilon(1e-12));
  const Eigen::MatrixXd half = Eigen::MatrixXd::Constant(2, 2, 0.5);
  CHECK(loss_instance(half, Eigen::MatrixXd::Identity(2, 2)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(loss_instance(Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 3)) == 0.0);
  CHECK_THROWS(loss_instance(half, Eigen::MatrixXd::Identity(3, 3)));
}

TEST_CASE("pool_cluster_feature examples") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 0, 0, 1;
  const auto raw = pool_cluster_feature(m, false);
  CHECK(raw(0) == 1.0);
  CHECK(raw(1) == 1.0);
  const auto z = pool_cluster_feature(m, true);
  CHECK(z(0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(z(1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  Eigen::MatrixXd one(1, 2);
  one << 3, 4;
  const auto s = pool_cluster_feature(one, true);
  CHECK(s(0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(s(1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_THROWS(pool_cluster_feature(Eigen::MatrixXd(0, 2), true));
}

TEST_CASE("loss_supcon examples") {
  SupConParams unit{1.0, true};
  SUBCASE("two clusters of one instance") {
    Eigen::MatrixXd z(2, 2);
    z << 1, 0, 0.6, 0.8;
    const std::vector<std::uint32_t> ids{4, 4};
    CHECK(std::abs(loss_supcon(z, ids, unit)) < 1e-15);
  }
  SUBCASE("orthogonal {1,1,2}") {
    const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(3, 3);
    const std::vector<std::uint32_t> ids{1, 1, 2};
    CHECK(loss_supcon(z, ids, unit) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("aligned positive, orthogonal negative") {
    Eigen::MatrixXd z(3, 2);
    z << 1, 0, 1, 0, 0, 1;
    const std::vector<std::uint32_t> ids{1, 1, 2};
    const double expect = 2.0 * -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(loss_supcon(z, ids, unit) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::abs(loss_supcon(z, ids, unit) - 0.62652) < 1e-5);
  }
  SUBCASE("errors") {
    const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(1, 2);
    const std::vector<std::uint32_t> ids{1};
    CHECK_THROWS(loss_supcon(z, ids, unit));
  }
}

TEST_CASE("loss_supcon: non-negative and permutation invariant") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> id(1, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + trial % 7;
    Eigen::MatrixXd z(m, 4);
    std::vector<std::uint32_t> ids(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      for (int k = 0; k < 4; ++k) z(i, k) = g(rng);
      z.row(i).normalize();
      ids[static_cast<std::size_t>(i)] = id(rng);
    }
    const double l = loss_supcon(z, ids, SupConParams{});
    CHECK(l >= 0.0);
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd zp(m, 4);
    std::vector<std::uint32_t> ip(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      zp.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
      ip[static_cast<std::size_t>(i)] = ids[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    CHECK(loss_supcon(zp, ip, SupConParams{}) == doctest::Approx(l).epsilon(1e-12));
  }
}

TEST_CASE("loss_supcon decreases as positives align") {
  // Anchor pair rotates toward each other; the negative stays orthogonal.
  double last = std::numeric_limits<double>::infinity();
  const std::vector<std::uint32_t> ids{1, 1, 2};
  for (double angle = 1.5; angle >= 0.0; angle -= 0.1) {
    Eigen::MatrixXd z(3, 3);
    z << 1, 0, 0, std::cos(angle), std::sin(angle), 0, 0, 0, 1;
    const double l = loss_supcon(z, ids, SupConParams{});
    CHECK(l < last);
    last = l;
  }
}

TEST_CASE("loss_variance_smooth examples") {
  Eigen::MatrixXd v(2, 1);
  v << 1, 3;
  const std::vector<std::uint32_t> inst{5, 5};
  CHECK(loss_variance_smooth(v, inst) == doctest::Approx(2.0).epsilon(1e-12));
  const std::vector<std::uint32_t> bg{0, 0};
  CHECK(loss_variance_smooth(v, bg) == 0.0);
  Eigen::MatrixXd eq(3, 2);
  eq << 1, 2, 1, 2, 7, 7;
  const std::vector<std::uint32_t> two{1, 1, 2};
  CHECK(loss_variance_smooth(eq, two) == 0.0);
}

TEST_CASE("total_loss examples") {
  LossBreakdown<double> c;
  CHECK(total_loss(c, LossWeights{}) == 0.0);
  c.sc = 1;
  c.ins = 10;
  c.var = 10;
  c.obj = 1;
  CHECK(total_loss(c, LossWeights{}) == doctest::Approx(2.2).epsilon(1e-12));
  c.reg = 0.5;
  CHECK(total_loss(c, LossWeights{0.0, 0.0}) == doctest::Approx(2.5).epsilon(1e-12));
  c.var = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(total_loss(c, LossWeights{}));
  c.var = std::numeric_limits<double>::infinity();
  CHECK_THROWS(total_loss(c, LossWeights{}));
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS((SupConParams{0.0, true}.validate()), ConfigError);
  CHECK_THROWS_AS((SupConParams{-1.0, true}.validate()), ConfigError);
  CHECK_THROWS_AS((LossWeights{-0.1, 0.0}.validate()), ConfigError);
  CHECK_NOTHROW(LossWeights{}.validate());
}

TEST_CASE("make_batch derives targets") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 2), pos(6, 3);
  pos << 0, 0, 0, 1, 0, 0, 2.2, 0, 0, 50, 0, 0, 10, 0, 0, 10, 1, 0;
  const std::vector<std::uint32_t> inst{7, 7, 7, 0, 3, 3};
  const std::vector<int> slot{0, 1, 1, 0, 0, 0};
  const auto b = make_batch(x, pos, inst, slot);
  CHECK(b.instance_ids == std::vector<std::uint32_t>{3, 7});
  CHECK(b.instance_index == std::vector<int>{1, 1, 1, -1, 0, 0});
  REQUIRE(b.centers.size() == 2);
  CHECK(b.centers[0] == 4);  // tie between 4 and 5: first wins
  CHECK(b.centers[1] == 1);  // centroid x = 1.0667
  REQUIRE(b.clusters.size() == 3);
  CHECK(b.clusters[0] == std::vector<Eigen::Index>{0});
  CHECK(b.clusters[1] == std::vector<Eigen::Index>{1, 2});
  CHECK(b.clusters[2] == std::vector<Eigen::Index>{4, 5});
  CHECK(b.cluster_instance == std::vector<std::uint32_t>{7, 7, 3});
  CHECK_THROWS(make_batch(x, pos, std::vector<std::uint32_t>{1}, slot));
}

TEST_CASE("head: init, forward shapes and output ranges") {
  HeadArch arch;
  const auto h = init_toy_head(arch, FeatureSpec{}, 1);
  CHECK(static_cast<std::size_t>(h.theta.size()) == arch.param_count());
  CHECK(arch.param_count() == 12 * 32 + 32 + 32 * 32 + 32 + 32 * 17 + 17);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 3.0);
  Eigen::MatrixXd x(50, 12);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  const auto out = run_head(h, x);
  CHECK(out.embedding.rows() == 50);
  CHECK(out.embedding.cols() == 8);
  CHECK((out.variance.array() > 0.0).all());
  CHECK((out.objectness.array() > 0.0).all());
  CHECK((out.objectness.array() < 1.0).all());
  // Initial log-variance near -log(2 pi): Eq. 1 peak near 1 per dimension.
  CHECK(out.variance.mean() == doctest::Approx(1.0 / (2.0 * std::numbers::pi)).epsilon(0.2));
  CHECK_THROWS(run_head(h, Eigen::MatrixXd::Zero(3, 11)));
  CHECK(init_toy_head(arch, FeatureSpec{}, 1).theta == h.theta);
  CHECK(init_toy_head(arch, FeatureSpec{}, 2).theta != h.theta);
}

TEST_CASE("checkpoint round trip") {
  HeadArch arch;
  arch.hidden = {16, 8};
  arch.embed_dim = 4;
  arch.input_dim = 10;
  FeatureSpec fs;
  fs.use_velocity = false;
  fs.r_far = 3.5;
  const auto h = init_toy_head(arch, fs, 9);
  const auto dir = std::filesystem::temp_directory_path() / ("fmcw_ckpt_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto path = dir / "head.json";
  save_checkpoint(path, h, {{"supcon", {{"temperature", 0.1}}}});
  const auto back = load_checkpoint(path);
  CHECK(back.arch == arch);
  CHECK(back.features.use_velocity == false);
  CHECK(back.features.r_far == 3.5);
  CHECK(back.theta == h.theta);  // bit exact through JSON doubles

  auto j = head_to_json(h);
  j["version"] = 99;
  CHECK_THROWS_AS(head_from_json(j), DataError);
  j = head_to_json(h);
  j["params"].erase(0);
  CHECK_THROWS_AS(head_from_json(j), DataError);
  j = head_to_json(h);
  j["features"]["use_velocity"] = true;
  CHECK_THROWS_AS(head_from_json(j), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradients match long double finite differences for every component") {
  HeadArch arch;
  arch.input_dim = 6;
  arch.hidden = {16, 16};
  arch.embed_dim = 4;
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 3; ++trial) {
    auto head = init_toy_head(arch, FeatureSpec{}, 100 + static_cast<std::uint64_t>(trial));
    // Enlarge the output layer so every term has a visible gradient.
    head.theta *= 3.0;
    const auto b = random_batch(rng, arch.input_dim, 40, 3, 3);
    for (bool mean_reduce : {false, true}) {
      LossConfig cfg;
      cfg.mean_reduce = mean_reduce;
      const auto err = max_fd_errors(arch, head.theta, b, cfg);
      for (int c = 0; c < 6; ++c) {
        INFO("component ", kNames[c], " mean_reduce ", mean_reduce, " trial ", trial);
        CHECK(err[static_cast<std::size_t>(c)] < 1e-4);
      }
    }
  }
}

TEST_CASE("gradients: unnormalized pooling and temperature 1") {
  HeadArch arch;
  arch.input_dim = 5;
  arch.hidden = {8};
  arch.embed_dim = 3;
  std::mt19937_64 rng(8);
  const auto head = init_toy_head(arch, FeatureSpec{}, 4);
  const auto b = random_batch(rng, arch.input_dim, 30, 2, 4);
  LossConfig cfg;
  cfg.supcon = {1.0, false};
  CHECK(max_fd_error(arch, head.theta * 2.0, b, cfg, 0) < 1e-4);
  CHECK(max_fd_error(arch, head.theta * 2.0, b, cfg, 5) < 1e-4);
}

TEST_CASE("gradient of the L2 term is exactly 2 w theta") {
  HeadArch arch;
  arch.input_dim = 4;
  arch.hidden = {5};
  arch.embed_dim = 2;
  std::mt19937_64 rng(1);
  const auto head = init_toy_head(arch, FeatureSpec{}, 3);
  const auto b = random_batch(rng, 4, 12, 2, 2);
  LossConfig cfg;
  cfg.reg_weight = 0.37;
  const auto g = loss_gradients(arch, head.theta, b, cfg);
  CHECK(g.reg == Eigen::VectorXd(2.0 * 0.37 * head.theta));
}

TEST_CASE("loss_gradients agrees with compute_losses") {
  HeadArch arch;
  arch.input_dim = 6;
  arch.hidden = {8, 8};
  arch.embed_dim = 4;
  std::mt19937_64 rng(77);
  const auto head = init_toy_head(arch, FeatureSpec{}, 5);
  const auto b = random_batch(rng, 6, 50, 4, 3);
  LossConfig cfg;
  const auto g = loss_gradients(arch, head.theta, b, cfg);
  const auto l = compute_losses<double>(arch, head.theta, b, cfg);
  CHECK(g.loss.sc == doctest::Approx(l.sc).epsilon(1e-12));
  CHECK(g.loss.ins == doctest::Approx(l.ins).epsilon(1e-12));
  CHECK(g.loss.var == doctest::Approx(l.var).epsilon(1e-12));
  CHECK(g.loss.obj == doctest::Approx(l.obj).epsilon(1e-12));
  CHECK(g.loss.total == doctest::Approx(l.total).epsilon(1e-12));
}

TEST_CASE("gradient is zero for parameters the loss ignores") {
  // An input column of zeros leaves its first-layer weights without effect.
  HeadArch arch;
  arch.input_dim = 3;
  arch.hidden = {4};
  arch.embed_dim = 2;
  std::mt19937_64 rng(3);
  auto b = random_batch(rng, 3, 20, 2, 2);
  b.features.col(1).setZero();
  const auto head = init_toy_head(arch, FeatureSpec{}, 2);
  LossConfig cfg;
  cfg.reg_weight = 0.0;
  const auto g = loss_gradients(arch, head.theta, b, cfg);
  for (int h = 0; h < 4; ++h) CHECK(g.total(h * 3 + 1) == 0.0);
}

TEST_CASE("train_toy_head: zero learning rate keeps parameters") {
  HeadArch arch;
  arch.input_dim = 4;
  arch.hidden = {6};
  arch.embed_dim = 3;
  std::mt19937_64 rng(6);
  std::vector<TrainBatch> batches;
  for (int i = 0; i < 3; ++i) batches.push_back(random_batch(rng, 4, 20, 2, 2));
  const auto head = init_toy_head(arch, FeatureSpec{}, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  const auto r = train_toy_head(head, batches, cfg);
  CHECK(r.head.theta == head.theta);
  CHECK(r.epoch_loss.size() == 4);
}

TEST_CASE("train_toy_head: deterministic and decreasing on a separable toy") {
  HeadArch arch;
  arch.input_dim = 4;
  arch.hidden = {16};
  arch.embed_dim = 4;
  // Features carry the instance id, so separation is learnable.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<TrainBatch> batches;
  for (int w = 0; w < 6; ++w) {
    const int n = 40;
    Eigen::MatrixXd x(n, 4), pos(n, 3);
    std::vector<std::uint32_t> inst(n);
    std::vector<int> slot(n);
    for (int i = 0; i < n; ++i) {
      const int id = 1 + i % 3;
      inst[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(id);
      slot[static_cast<std::size_t>(i)] = (i / 3) % 2;
      for (int k = 0; k < 4; ++k) x(i, k) = (k == id ? 1.0 : 0.0) + g(rng);
      for (int k = 0; k < 3; ++k) pos(i, k) = 4.0 * id + g(rng);
    }
    batches.push_back(make_batch(x, pos, inst, slot));
  }
  const auto head = init_toy_head(arch, FeatureSpec{}, 1);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 0.02;
  const auto a = train_toy_head(head, batches, cfg);
  const auto b = train_toy_head(head, batches, cfg);
  CHECK(a.head.theta == b.head.theta);
  CHECK(a.epoch_sc.back() < 0.5 * a.epoch_sc.front());
  CHECK(cosine_margin(a.head, batches).margin() >= 0.3);
}

TEST_CASE("train_toy_head: no instance pair is an error") {
  HeadArch arch;
  arch.input_dim = 2;
  arch.hidden = {3};
  arch.embed_dim = 2;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 2), pos = Eigen::MatrixXd::Zero(4, 3);
  std::vector<TrainBatch> batches{make_batch(x, pos, {1, 1, 0, 0}, {0, 0, 0, 0})};
  CHECK_THROWS(train_toy_head(init_toy_head(arch, FeatureSpec{}, 1), batches, TrainConfig{}));
}
