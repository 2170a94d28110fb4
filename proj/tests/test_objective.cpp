#include <doctest.h>

#include <cmath>

#include "declutr/error.hpp"
#include "declutr/objective.hpp"
#include "declutr/prng.hpp"
#include "test_support.hpp"

using namespace declutr;
namespace ts = test_support;

namespace {

Eigen::MatrixXd random_vectors(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
  Eigen::VectorXd u(2), v(2);
  u << 3, 4;
  v << -3, -4;
  CHECK(cosine_sim(u, u) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_sim(u, v) == doctest::Approx(-1.0).epsilon(1e-12));
  Eigen::VectorXd e1(2), e2(2);
  e1 << 1, 0;
  e2 << 0, 1;
  CHECK(cosine_sim(e1, e2) == 0.0);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(cosine_sim(zero, u), NumericError);
}

TEST_CASE("mean positive embedding") {
  Eigen::MatrixXd one(1, 3);
  one << 1, 2, 3;
  CHECK(mean_positive_embedding(one) == one.row(0).transpose());

  Eigen::MatrixXd two(2, 2);
  two << 2, 0, 0, 2;
  Eigen::VectorXd expect(2);
  expect << 1, 1;
  CHECK(mean_positive_embedding(two) == expect);

  // Antipodal positives collapse to zero and are rejected downstream.
  Eigen::MatrixXd anti(2, 2);
  anti << 1, 0, -1, 0;
  Eigen::VectorXd collapsed = mean_positive_embedding(anti);
  CHECK(collapsed.norm() == 0.0);
  EmbeddingSet set;
  set.vectors.resize(4, 2);
  set.vectors << 1, 0, 0, 1, 1, 1, 0, 0;  // last row is the collapsed one
  set.temperature = 1.0;
  CHECK_THROWS_AS(nt_xent_pair(set, 1, 3), NumericError);
}

TEST_CASE("all-identical embeddings give log(2AN-1) per pair term") {
  EmbeddingSet set;
  set.temperature = 5e-2;
  set.vectors = Eigen::MatrixXd::Ones(4, 6);
  for (int i = 1; i <= 4; ++i)
    for (int j = 1; j <= 4; ++j)
      if (i != j) CHECK(nt_xent_pair(set, i, j) == std::log(3.0));
}

TEST_CASE("hand-evaluated pair term: one similar pair among orthogonal vectors") {
  // sim(e1, e3) = 1, everything else orthogonal, tau = 1:
  // ell(1,3) = -log(e / (e + 2)) = log(1 + 2/e).
  EmbeddingSet set;
  set.temperature = 1.0;
  set.vectors = Eigen::MatrixXd::Zero(4, 4);
  set.vectors(0, 0) = 1.0;
  set.vectors(2, 0) = 1.0;
  set.vectors(1, 1) = 1.0;
  set.vectors(3, 2) = 1.0;
  const double expected = std::log1p(2.0 / std::exp(1.0));
  CHECK(nt_xent_pair(set, 1, 3) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("stabilized pair term equals the naive oracle") {
  Rng rng(31);
  for (double tau : {1.0, 0.5, 5e-2}) {
    for (int trial = 0; trial < 50; ++trial) {
      EmbeddingSet set;
      set.temperature = tau;
      set.vectors = random_vectors(rng, 6, 16);
      for (int i = 1; i <= 6; ++i) {
        for (int j = 1; j <= 6; ++j) {
          if (i == j) continue;
          const double got = nt_xent_pair(set, i, j);
          const double oracle = ts::naive_nt_xent(set.vectors, tau, i, j);
          CHECK(std::abs(got - oracle) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("pair terms are never negative and vanish only when 2AN = 2") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    EmbeddingSet set;
    set.temperature = 0.1;
    set.vectors = random_vectors(rng, 4, 8);
    for (int i = 1; i <= 4; ++i)
      for (int j = 1; j <= 4; ++j)
        if (i != j) CHECK(nt_xent_pair(set, i, j) >= 0.0);
  }
  EmbeddingSet tiny;
  tiny.temperature = 0.1;
  tiny.vectors = random_vectors(rng, 2, 8);
  CHECK(nt_xent_pair(tiny, 1, 2) == 0.0);
  CHECK(contrastive_loss(tiny) == 0.0);
}

TEST_CASE("raising sim(i, j) alone strictly lowers the pair term") {
  Rng rng(35);
  Eigen::MatrixXd sims = Eigen::MatrixXd::Zero(6, 6);
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b) sims(a, b) = a == b ? 1.0 : rng.uniform() * 0.5;
  double prev = nt_xent_pair_from_sims(sims, 0.1, 1, 4);
  for (double bump = 0.55; bump <= 0.95; bump += 0.1) {
    sims(0, 3) = bump;
    const double cur = nt_xent_pair_from_sims(sims, 0.1, 1, 4);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("degenerate and invalid pair arguments") {
  EmbeddingSet set;
  set.temperature = 1.0;
  set.vectors = Eigen::MatrixXd::Identity(4, 4);
  CHECK_THROWS_AS(nt_xent_pair(set, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(nt_xent_pair(set, 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(nt_xent_pair(set, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(nt_xent_pair_from_sims(Eigen::MatrixXd::Identity(4, 4), 0.0, 1, 2),
                  std::invalid_argument);
}

TEST_CASE("contrastive loss: degenerate, symmetric and brute-force cases") {
  Rng rng(37);

  EmbeddingSet degenerate;  // A = N = 1
  degenerate.temperature = 5e-2;
  degenerate.vectors = random_vectors(rng, 2, 8);
  CHECK(contrastive_loss(degenerate) == 0.0);

  EmbeddingSet identical;  // A = 1, N = 2, all embeddings equal
  identical.temperature = 5e-2;
  identical.vectors = Eigen::MatrixXd::Constant(4, 8, 0.3);
  CHECK(contrastive_loss(identical) == 4.0 * std::log(3.0));

  for (int an : {2, 3, 4, 6}) {
    for (int trial = 0; trial < 30; ++trial) {
      EmbeddingSet set;
      set.temperature = 5e-2;
      set.vectors = random_vectors(rng, 2 * an, 12);
      CHECK(std::abs(contrastive_loss(set) - ts::brute_force_contrastive(set.vectors, 5e-2)) < 1e-10);
    }
  }
}

TEST_CASE("scaling any single embedding leaves every pair term unchanged") {
  Rng rng(39);
  EmbeddingSet set;
  set.temperature = 5e-2;
  set.vectors = random_vectors(rng, 6, 10);
  const double base = contrastive_loss(set);
  for (int r = 0; r < 6; ++r) {
    EmbeddingSet scaled = set;
    scaled.vectors.row(r) *= 7.25;
    CHECK(std::abs(contrastive_loss(scaled) - base) < 1e-10);
    for (int j = 1; j <= 6; ++j)
      if (j != r + 1) CHECK(std::abs(nt_xent_pair(scaled, r + 1, j) - nt_xent_pair(set, r + 1, j)) < 1e-10);
  }
}

TEST_CASE("permuting documents with consistent relabeling keeps the loss") {
  // A=1, N=3: swapping documents 1 and 3 permutes anchor rows and their
  // mean-positive rows identically.
  Rng rng(41);
  EmbeddingSet set;
  set.temperature = 5e-2;
  set.vectors = random_vectors(rng, 6, 8);
  EmbeddingSet permuted = set;
  permuted.vectors.row(0) = set.vectors.row(2);
  permuted.vectors.row(2) = set.vectors.row(0);
  permuted.vectors.row(3) = set.vectors.row(5);
  permuted.vectors.row(5) = set.vectors.row(3);
  CHECK(std::abs(contrastive_loss(set) - contrastive_loss(permuted)) < 1e-10);
}

TEST_CASE("contrastive gradient matches central finite differences") {
  Rng rng(43);
  EmbeddingSet set;
  set.temperature = 5e-2;
  set.vectors = random_vectors(rng, 6, 5);
  const ContrastiveResult res = contrastive_loss_with_grad(set);
  CHECK(std::abs(res.loss - contrastive_loss(set)) < 1e-12);

  const double h = 1e-6;
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 5; ++c) {
      EmbeddingSet plus = set, minus = set;
      plus.vectors(r, c) += h;
      minus.vectors(r, c) -= h;
      const double numeric = (contrastive_loss(plus) - contrastive_loss(minus)) / (2 * h);
      CHECK(ts::rel_close(res.grad(r, c), numeric, 1e-6));
    }
  }
}

TEST_CASE("mlm loss: uniform logits, margins, and order invariance") {
  const int v = 50;
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Zero(3, v);
  std::vector<int> labels = {4, 9, 11};
  CHECK(mlm_loss(uniform, labels) == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));

  // One-hot-correct logits: loss = log1p((V-1) e^-gap), vanishing with the margin.
  const int big_v = 10000;
  auto margin_loss = [&](double gap) {
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(1, big_v);
    logits(0, 7) = gap;
    return mlm_loss(logits, std::vector<int>{7});
  };
  double prev = margin_loss(1.0);
  for (double gap : {2.0, 5.0, 10.0, 20.0, 30.0}) {
    const double cur = margin_loss(gap);
    CHECK(cur < prev);
    CHECK(cur == doctest::Approx(std::log1p((big_v - 1) * std::exp(-gap))).epsilon(1e-9));
    prev = cur;
  }
  CHECK(margin_loss(20.0) < 1e-4);
  CHECK(margin_loss(30.0) < 1e-8);

  // Permuting masked-position order leaves the mean unchanged.
  Rng rng(45);
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(4, 8);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c) logits(r, c) = rng.normal();
  std::vector<int> lab = {1, 3, 5, 7};
  Eigen::MatrixXd shuffled(4, 8);
  const int order[4] = {2, 0, 3, 1};
  std::vector<int> lab_shuffled(4);
  for (int r = 0; r < 4; ++r) {
    shuffled.row(r) = logits.row(order[r]);
    lab_shuffled[static_cast<size_t>(r)] = lab[static_cast<size_t>(order[r])];
  }
  CHECK(mlm_loss(logits, lab) == doctest::Approx(mlm_loss(shuffled, lab_shuffled)).epsilon(1e-14));

  CHECK_THROWS_AS(mlm_loss(Eigen::MatrixXd(0, 5), std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("mlm gradient matches finite differences") {
  Rng rng(47);
  Eigen::MatrixXd logits(3, 7);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 7; ++c) logits(r, c) = rng.normal();
  std::vector<int> labels = {2, 0, 6};
  const MlmLossResult res = mlm_loss_with_grad(logits, labels);
  CHECK(res.loss == doctest::Approx(mlm_loss(logits, labels)).epsilon(1e-14));
  const double h = 1e-6;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 7; ++c) {
      Eigen::MatrixXd plus = logits, minus = logits;
      plus(r, c) += h;
      minus(r, c) -= h;
      const double numeric = (mlm_loss(plus, labels) - mlm_loss(minus, labels)) / (2 * h);
      CHECK(ts::rel_close(res.dlogits(r, c), numeric, 1e-6));
    }
  }
}

TEST_CASE("combined loss is the plain sum") {
  CHECK(combined_loss(0.0, 2.5) == 2.5);
  CHECK(combined_loss(2.5, 0.0) == 2.5);
  CHECK(combined_loss(1.5, 2.5) == 4.0);
  CHECK_THROWS_AS(combined_loss(std::nan(""), 1.0), NumericError);
  CHECK_THROWS_AS(combined_loss(1.0, std::numeric_limits<double>::infinity()), NumericError);
}
