#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "tpower/attack.hpp"
#include "tpower/rng.hpp"
#include "tpower/train.hpp"

using namespace tpower;

namespace {

Vec random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<Vec> random_matrix(Rng& rng, std::size_t m, std::size_t n) {
  std::vector<Vec> rows(m);
  for (auto& r : rows) r = random_vec(rng, n);
  return rows;
}

Eigen::MatrixXd to_eigen(const std::vector<Vec>& rows) {
  Eigen::MatrixXd M(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[0].size(); ++j) M(i, j) = rows[i][j];
  return M;
}

double cosine(const Vec& a, const Eigen::VectorXd& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b(static_cast<Eigen::Index>(i));
    na += a[i] * a[i];
    nb += b(static_cast<Eigen::Index>(i)) * b(static_cast<Eigen::Index>(i));
  }
  return dot / std::sqrt(na * nb);
}

// Matrix with orthogonal factors and a prescribed singular spectrum. A clear
// leading gap keeps the instance inside the truncated power method's
// convergence region; flat spectra have near-degenerate subset optima where
// no iterative method can be expected to pick the winner.
std::vector<Vec> gapped_spectrum_matrix(Rng& rng, int m, int n) {
  Eigen::MatrixXd A(m, m), B(n, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) A(i, j) = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) B(i, j) = rng.uniform(-1.0, 1.0);
  Eigen::MatrixXd Q1 = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
  Eigen::MatrixXd Q2 = Eigen::HouseholderQR<Eigen::MatrixXd>(B).householderQ();
  Eigen::VectorXd s(n);
  for (int i = 0; i < n; ++i) s(i) = (i == 0) ? 1.0 : rng.uniform(0.05, 0.6);
  Eigen::MatrixXd M = Q1.leftCols(n) * s.asDiagonal() * Q2.transpose();
  std::vector<Vec> rows(static_cast<std::size_t>(m), Vec(static_cast<std::size_t>(n)));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = M(i, j);
  return rows;
}

AttackConfig dense22_config(std::size_t blocks, int n_steps, std::uint64_t seed) {
  AttackConfig cfg;
  cfg.n_steps = n_steps;
  cfg.init_truncation = 1.0;
  cfg.top_k = static_cast<int>(blocks);
  cfg.patch_size = 1;
  cfg.reduction_steps = std::max(1, n_steps / 10);
  cfg.q = NormExponent(2.0);
  cfg.p = NormExponent(2.0);
  cfg.seed = seed;
  return cfg;
}

Model tiny_conv_model(std::uint64_t seed) {
  std::vector<Layer> layers;
  layers.push_back(make_conv(2, 3, 3, 1, 1));
  layers.push_back(ReLU{});
  layers.push_back(MaxPool{2});
  layers.push_back(Flatten{});
  layers.push_back(make_dense(48, 4));
  Model m({8, 8, 2}, std::move(layers), 4);
  init_he_uniform(m, seed);
  return m;
}

}  // namespace

TEST_CASE("cardinality schedule frozen values") {
  CHECK(cardinality_schedule(10, 10, 100, 10, 10) == 10);
  // 100^0.1 = 1.5849, 1000 / 1.5849 = 630.96 -> 630.
  CHECK(cardinality_schedule(1000, 10, 100, 10, 10) == 630);
  CHECK(cardinality_schedule(1000, 10, 100, 10, 20) == 630);
  CHECK_THROWS_AS(cardinality_schedule(5, 10, 100, 10, 10), InvalidKError);
  CHECK_THROWS_AS(cardinality_schedule(100, 10, 100, 10, 15), Error);
}

TEST_CASE("cardinality schedule reaches top_k for a moderate gap") {
  // Simulation oracle: floor effects close the gap exactly within
  // n_steps / reduction_steps events for this start.
  std::size_t k = 20;
  for (int s = 10; s <= 100; s += 10) k = cardinality_schedule(k, 10, 100, 10, s);
  CHECK(k == 10);
  // And top_k is a fixed point afterwards.
  CHECK(cardinality_schedule(k, 10, 100, 10, 10) == 10);
}

TEST_CASE("config validation") {
  AttackConfig cfg;
  cfg.n_steps = 50;
  cfg.reduction_steps = 10;
  cfg.top_k = 3;
  validate_config(cfg, 10);
  auto expect_bad = [](AttackConfig c, std::size_t blocks) {
    CHECK_THROWS_AS(validate_config(c, blocks), ConfigError);
  };
  { AttackConfig c = cfg; c.n_steps = 0; expect_bad(c, 10); }
  { AttackConfig c = cfg; c.init_truncation = 0.0; expect_bad(c, 10); }
  { AttackConfig c = cfg; c.init_truncation = 1.5; expect_bad(c, 10); }
  { AttackConfig c = cfg; c.top_k = 0; expect_bad(c, 10); }
  { AttackConfig c = cfg; c.top_k = 11; expect_bad(c, 10); }
  { AttackConfig c = cfg; c.patch_size = 0; expect_bad(c, 10); }
  { AttackConfig c = cfg; c.reduction_steps = 60; expect_bad(c, 10); }
  { AttackConfig c = cfg; c.q = NormExponent::infinity(); expect_bad(c, 10); }
  { AttackConfig c = cfg; c.p = NormExponent(1.0); expect_bad(c, 10); }
  { AttackConfig c = cfg; c.magnitude = 0.0; expect_bad(c, 10); }
}

TEST_CASE("dense p=q=2 attack matches the SVD oracle") {
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<Vec> rows = random_matrix(rng, 8, 12);
    BatchJacobian batch(std::vector<LinearOperator>{operator_from_matrix(rows)});
    SparsityPattern pat = SparsityPattern::singletons(12);
    Perturbation pert =
        tpower_loop(batch, pat, dense22_config(12, 3000, 7 + static_cast<std::uint64_t>(rep)));

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(rows), Eigen::ComputeFullV);
    Eigen::VectorXd v0 = svd.matrixV().col(0);
    CHECK(std::abs(cosine(pert.eps.data, v0)) >= 0.999);

    const double sigma0 = svd.singularValues()(0);
    const double rayleigh = std::sqrt(pert.objective_trace.back());
    CHECK(std::abs(rayleigh - sigma0) <= 1e-6 * sigma0);
    CHECK(std::abs(lp_norm(pert.eps.data, NormExponent(2.0)) - 1.0) <= 1e-9);
    CHECK(pert.support.size() == 12);
  }
}

TEST_CASE("rank-1 planted support is recovered exactly") {
  Rng rng(5);
  const std::size_t n = 10, m = 6, k = 3;
  // v supported on singleton blocks {1, 4, 7}.
  Vec v(n, 0.0);
  v[1] = 0.6;
  v[4] = -0.64;
  v[7] = 0.48;  // unit 2-norm
  Vec u = random_vec(rng, m);
  const double sigma = 3.0;
  std::vector<Vec> rows(m, Vec(n, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) rows[i][j] = sigma * u[i] * v[j];

  BatchJacobian batch(std::vector<LinearOperator>{operator_from_matrix(rows)});
  AttackConfig cfg = dense22_config(n, 200, 3);
  cfg.top_k = static_cast<int>(k);
  Perturbation pert = tpower_loop(batch, SparsityPattern::singletons(n), cfg);

  CHECK(pert.support == std::vector<std::size_t>{1, 4, 7});
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += pert.eps.data[j] * v[j];
  CHECK(std::abs(std::abs(dot) - 1.0) <= 1e-9);
}

TEST_CASE("sparse p=q=2 attack approaches the brute-force subset optimum") {
  Rng rng(77);
  int good = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<Vec> rows = gapped_spectrum_matrix(rng, 12, 10);
    Eigen::MatrixXd M = to_eigen(rows);

    // Oracle: best restricted leading singular value over all 2-subsets.
    double best = 0.0;
    for (int a = 0; a < 10; ++a)
      for (int b = a + 1; b < 10; ++b) {
        Eigen::MatrixXd sub(12, 2);
        sub.col(0) = M.col(a);
        sub.col(1) = M.col(b);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(sub);
        best = std::max(best, svd.singularValues()(0));
      }
    const double best_obj = best * best;

    BatchJacobian batch(std::vector<LinearOperator>{operator_from_matrix(rows)});
    AttackConfig cfg = dense22_config(10, 400, static_cast<std::uint64_t>(trial));
    cfg.top_k = 2;
    cfg.init_truncation = 1.0;
    cfg.reduction_steps = 40;
    Perturbation pert = tpower_loop(batch, SparsityPattern::singletons(10), cfg);

    const double got = pert.objective_trace.back();
    CHECK(got <= best_obj * (1.0 + 1e-9));
    CHECK(pert.support.size() <= 2);
    if (got >= 0.95 * best_obj) ++good;
  }
  CHECK(good >= 18);
}

TEST_CASE("objective trace is monotone for p=q=2 at fixed cardinality") {
  Rng rng(13);
  for (int rep = 0; rep < 3; ++rep) {
    std::vector<Vec> r1 = random_matrix(rng, 7, 9), r2 = random_matrix(rng, 5, 9);
    BatchJacobian batch(std::vector<LinearOperator>{operator_from_matrix(r1),
                                                    operator_from_matrix(r2)});
    AttackConfig cfg = dense22_config(9, 60, static_cast<std::uint64_t>(rep));
    cfg.top_k = 4;
    cfg.init_truncation = 4.0 / 9.0;  // k fixed at top_k from the start
    Perturbation pert = tpower_loop(batch, SparsityPattern::singletons(9), cfg);
    for (std::size_t i = 1; i < pert.objective_trace.size(); ++i) {
      CHECK(pert.objective_trace[i] >= pert.objective_trace[i - 1] - 1e-9);
    }
  }
}

TEST_CASE("sign symmetry of the iteration") {
  Rng rng(21);
  for (double qv : {2.0, 3.0}) {
    std::vector<Vec> rows = random_matrix(rng, 6, 8);
    BatchJacobian batch(std::vector<LinearOperator>{operator_from_matrix(rows)});
    AttackConfig cfg = dense22_config(8, 40, 1);
    cfg.q = NormExponent(qv);
    cfg.top_k = 3;
    Vec e0 = random_vec(rng, 8);
    Vec neg(e0.size());
    for (std::size_t i = 0; i < e0.size(); ++i) neg[i] = -e0[i];
    LoopOptions opt_pos, opt_neg;
    opt_pos.initial_eps = e0;
    opt_neg.initial_eps = neg;
    Perturbation a = tpower_loop(batch, SparsityPattern::singletons(8), cfg, opt_pos);
    Perturbation b = tpower_loop(batch, SparsityPattern::singletons(8), cfg, opt_neg);
    REQUIRE(a.eps.size() == b.eps.size());
    for (std::size_t i = 0; i < a.eps.size(); ++i) CHECK(a.eps.data[i] == -b.eps.data[i]);
  }
}

TEST_CASE("attack on a conv model meets its invariants") {
  Model m = tiny_conv_model(9);
  Rng rng(3);
  std::vector<Tensor> batch;
  for (int i = 0; i < 6; ++i)
    batch.emplace_back(Shape{8, 8, 2}, random_vec(rng, 128, 0.0, 1.0));

  for (int patch : {1, 2}) {
    AttackConfig cfg;
    cfg.n_steps = 30;
    cfg.init_truncation = 1.0;
    cfg.top_k = 3;
    cfg.patch_size = patch;
    cfg.reduction_steps = 5;
    cfg.q = NormExponent(1.0);
    cfg.p = NormExponent::infinity();
    cfg.layer = "relu1";
    cfg.seed = 11;
    Perturbation pert = tpower_attack(m, batch, cfg, "A");
    CHECK(pert.eps.shape == Shape{8, 8, 2});
    CHECK(std::abs(lp_norm(pert.eps.data, NormExponent::infinity()) - 1.0) <= 1e-9);
    CHECK(pert.support.size() <= 3);
    CHECK(pert.source_model_id == "A");
    // Nonzeros confined to support blocks.
    for (std::size_t id = 0; id < pert.pattern.block_count(); ++id) {
      const bool active = std::find(pert.support.begin(), pert.support.end(), id) !=
                          pert.support.end();
      for (std::size_t idx : pert.pattern.block(id)) {
        if (!active) CHECK(pert.eps.data[idx] == 0.0);
      }
    }
    // Determinism.
    Perturbation again = tpower_attack(m, batch, cfg, "A");
    for (std::size_t i = 0; i < pert.eps.size(); ++i)
      CHECK(pert.eps.data[i] == again.eps.data[i]);
    CHECK(pert.objective_trace == again.objective_trace);
  }
}

TEST_CASE("sv attack equals tpower at full cardinality, bit-identically") {
  Model m = tiny_conv_model(2);
  Rng rng(8);
  std::vector<Tensor> batch;
  for (int i = 0; i < 4; ++i)
    batch.emplace_back(Shape{8, 8, 2}, random_vec(rng, 128, 0.0, 1.0));

  Perturbation sv = sv_attack(m, batch, "maxpool2", NormExponent(2.0),
                              NormExponent::infinity(), 20, 5, "A");
  AttackConfig cfg;
  cfg.n_steps = 20;
  cfg.init_truncation = 1.0;
  cfg.top_k = 64;  // 8x8 pixel blocks
  cfg.patch_size = 1;
  cfg.reduction_steps = 2;
  cfg.q = NormExponent(2.0);
  cfg.p = NormExponent::infinity();
  cfg.layer = "maxpool2";
  cfg.seed = 5;
  Perturbation tp = tpower_attack(m, batch, cfg, "A");

  REQUIRE(sv.eps.size() == tp.eps.size());
  for (std::size_t i = 0; i < sv.eps.size(); ++i)
    CHECK(sv.eps.data[i] == tp.eps.data[i]);
  CHECK(sv.objective_trace == tp.objective_trace);
  CHECK(sv.support.size() == 64);  // dense: every block active
}

TEST_CASE("degenerate operator raises after one restart") {
  std::vector<Vec> zero(4, Vec(5, 0.0));
  BatchJacobian batch(std::vector<LinearOperator>{operator_from_matrix(zero)});
  AttackConfig cfg = dense22_config(5, 10, 1);
  CHECK_THROWS_AS(tpower_loop(batch, SparsityPattern::singletons(5), cfg),
                  DegenerateIterateError);
}

TEST_CASE("restart recovers when only the first init lies in the kernel") {
  // Build a rank-1 operator whose row space is orthogonal to the seeded
  // initial iterate: the first pass collapses, the reseeded one succeeds.
  const std::uint64_t seed = 42;
  Rng init_rng(seed);
  Vec e0(3);
  for (double& x : e0) x = init_rng.uniform(-1.0, 1.0);
  e0 = renormalize_step(e0, NormExponent(2.0));
  // Row r orthogonal to e0.
  Vec r = {e0[1], -e0[0], 0.0};
  BatchJacobian batch(std::vector<LinearOperator>{operator_from_matrix({r})});
  AttackConfig cfg = dense22_config(3, 15, seed);
  Perturbation pert = tpower_loop(batch, SparsityPattern::singletons(3), cfg);
  CHECK(std::abs(lp_norm(pert.eps.data, NormExponent(2.0)) - 1.0) <= 1e-9);
  CHECK(pert.objective_trace.back() > 0.0);
}

TEST_CASE("sgd layer maximization baseline") {
  Rng rng(19);
  // Single linear layer: ascent must align with the leading right singular
  // vector, the same direction the power method finds.
  std::vector<Vec> rows = random_matrix(rng, 6, 5);
  Vec flat;
  for (const Vec& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  Model lin({5}, {Dense{Tensor({6, 5}, flat), Tensor::zeros({6})}}, 6);
  std::vector<Tensor> batch = {Tensor({5}, random_vec(rng, 5))};

  Perturbation pert = sgd_layer_max_attack(lin, batch, "dense0", NormExponent(2.0),
                                           NormExponent(2.0), 1.0, 300, 0.05, 3, "L");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(rows), Eigen::ComputeFullV);
  Eigen::VectorXd v0 = svd.matrixV().col(0);
  CHECK(std::abs(cosine(pert.eps.data, v0)) >= 0.99);
  // Ascent trace is monotone for a small step on the quadratic objective.
  for (std::size_t i = 1; i < pert.objective_trace.size(); ++i)
    CHECK(pert.objective_trace[i] >= pert.objective_trace[i - 1] - 1e-9);
  CHECK(lp_norm(pert.eps.data, NormExponent(2.0)) <= 1.0 + 1e-9);

  // lr = 0 keeps the projected initialization.
  Perturbation frozen = sgd_layer_max_attack(lin, batch, "dense0", NormExponent(2.0),
                                             NormExponent(2.0), 0.5, 40, 0.0, 9, "L");
  Rng replay(9);
  Vec want(5);
  for (double& x : want) x = replay.uniform(-1.0, 1.0);
  const double n2 = lp_norm(want, NormExponent(2.0));
  if (n2 > 0.5) {
    for (double& x : want) x *= 0.5 / n2;
  }
  for (double& x : want) x /= 0.5;
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(frozen.eps.data[i] == want[i]);

  CHECK_THROWS_AS(sgd_layer_max_attack(lin, batch, "dense0", NormExponent(2.0),
                                       NormExponent(3.0), 1.0, 5, 0.1, 1, "L"),
                  UnsupportedExponentError);
}
