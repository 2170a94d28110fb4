#include "declutr/objective.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "declutr/error.hpp"

namespace declutr {

void EmbeddingSet::validate() const {
  const auto rows = vectors.rows();
  if (rows < 2 || rows % 2 != 0)
    throw std::invalid_argument("embedding set must hold 2AN vectors (got " + std::to_string(rows) + ")");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!vectors.row(r).allFinite()) throw NumericError("embedding " + std::to_string(r + 1) + " is not finite");
    if (vectors.row(r).norm() == 0.0) throw NumericError("embedding " + std::to_string(r + 1) + " has zero norm");
  }
}

double cosine_sim(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw NumericError("cosine similarity of a zero-norm vector");
  return u.dot(v) / (nu * nv);
}

Eigen::VectorXd mean_positive_embedding(const Eigen::MatrixXd& positive_pooled) {
  if (positive_pooled.rows() < 1) throw std::invalid_argument("mean_positive_embedding: need P >= 1 rows");
  return positive_pooled.colwise().mean();
}

namespace {

Eigen::MatrixXd cosine_matrix(const Eigen::MatrixXd& vectors) {
  Eigen::VectorXd norms = vectors.rowwise().norm();
  Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * vectors;
  return unit * unit.transpose();
}

}  // namespace

double nt_xent_pair_from_sims(const Eigen::MatrixXd& sims, double temperature, int i, int j) {
  const int total = static_cast<int>(sims.rows());
  if (i < 1 || i > total || j < 1 || j > total) throw std::invalid_argument("nt_xent_pair: index out of range");
  if (i == j) throw std::invalid_argument("nt_xent_pair: i must differ from j");
  if (!(temperature > 0.0)) throw std::invalid_argument("nt_xent_pair: temperature must be > 0");
  if (total == 2) return 0.0;  // degenerate: denominator equals the numerator

  const int qi = i - 1;
  double max_z = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < total; ++k) {
    if (k == qi) continue;
    max_z = std::max(max_z, sims(qi, k) / temperature);
  }
  double denom = 0.0;
  for (int k = 0; k < total; ++k) {
    if (k == qi) continue;
    denom += std::exp(sims(qi, k) / temperature - max_z);
  }
  // log(denom) - (z_j - max): exact log(2AN-1) when all similarities tie.
  return std::log(denom) - (sims(qi, j - 1) / temperature - max_z);
}

double nt_xent_pair(const EmbeddingSet& set, int i, int j) {
  set.validate();
  return nt_xent_pair_from_sims(cosine_matrix(set.vectors), set.temperature, i, j);
}

double contrastive_loss(const EmbeddingSet& set) {
  set.validate();
  const int an = set.an();
  if (an == 1) return 0.0;  // 2AN == 2
  const Eigen::MatrixXd sims = cosine_matrix(set.vectors);
  double loss = 0.0;
  for (int i = 1; i <= an; ++i) {
    loss += nt_xent_pair_from_sims(sims, set.temperature, i, i + an) +
            nt_xent_pair_from_sims(sims, set.temperature, i + an, i);
  }
  return loss;
}

ContrastiveResult contrastive_loss_with_grad(const EmbeddingSet& set) {
  set.validate();
  ContrastiveResult res;
  res.grad = Eigen::MatrixXd::Zero(set.vectors.rows(), set.vectors.cols());
  const int an = set.an();
  if (an == 1) {
    res.degenerate = true;
    return res;
  }

  const int total = 2 * an;
  const double tau = set.temperature;
  Eigen::VectorXd norms = set.vectors.rowwise().norm();
  Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * set.vectors;
  Eigen::MatrixXd sims = unit * unit.transpose();

  // d loss / d sims, accumulated over the 2AN pair terms. Row q collects the
  // softmax weights of the term whose query slot is q.
  Eigen::MatrixXd dsims = Eigen::MatrixXd::Zero(total, total);
  auto add_term = [&](int i, int j) {
    const int qi = i - 1;
    double max_z = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < total; ++k)
      if (k != qi) max_z = std::max(max_z, sims(qi, k) / tau);
    double denom = 0.0;
    for (int k = 0; k < total; ++k)
      if (k != qi) denom += std::exp(sims(qi, k) / tau - max_z);
    res.loss += std::log(denom) - (sims(qi, j - 1) / tau - max_z);
    for (int k = 0; k < total; ++k) {
      if (k == qi) continue;
      const double p = std::exp(sims(qi, k) / tau - max_z) / denom;
      dsims(qi, k) += p / tau;
    }
    dsims(qi, j - 1) -= 1.0 / tau;
  };
  for (int i = 1; i <= an; ++i) {
    add_term(i, i + an);
    add_term(i + an, i);
  }

  // Backprop through sims(q, k) = unit_q . unit_k, then through the row
  // normalization unit_r = e_r / |e_r|.
  Eigen::MatrixXd dunit = Eigen::MatrixXd::Zero(total, set.vectors.cols());
  for (int q = 0; q < total; ++q) {
    for (int k = 0; k < total; ++k) {
      const double g = dsims(q, k);
      if (g == 0.0) continue;
      dunit.row(q) += g * unit.row(k);
      dunit.row(k) += g * unit.row(q);
    }
  }
  for (int r = 0; r < total; ++r) {
    const double dot = dunit.row(r).dot(unit.row(r));
    res.grad.row(r) = (dunit.row(r) - dot * unit.row(r)) / norms(r);
  }
  return res;
}

namespace {

void check_mlm_inputs(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw std::invalid_argument("mlm_loss: zero masked positions");
  if (static_cast<size_t>(logits.rows()) != labels.size())
    throw std::invalid_argument("mlm_loss: labels/logits row mismatch");
  for (size_t r = 0; r < labels.size(); ++r)
    if (labels[r] < 0 || labels[r] >= logits.cols())
      throw std::invalid_argument("mlm_loss: label id out of range");
}

}  // namespace

double mlm_loss(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  check_mlm_inputs(logits, labels);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double max_z = logits.row(r).maxCoeff();
    const double lse = max_z + std::log((logits.row(r).array() - max_z).exp().sum());
    total += lse - logits(r, labels[static_cast<size_t>(r)]);
  }
  return total / static_cast<double>(logits.rows());
}

MlmLossResult mlm_loss_with_grad(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  check_mlm_inputs(logits, labels);
  MlmLossResult res;
  res.dlogits.resize(logits.rows(), logits.cols());
  const double inv_m = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double max_z = logits.row(r).maxCoeff();
    Eigen::ArrayXd ex = (logits.row(r).array() - max_z).exp();
    const double denom = ex.sum();
    res.loss += max_z + std::log(denom) - logits(r, labels[static_cast<size_t>(r)]);
    res.dlogits.row(r) = (ex / denom).matrix() * inv_m;
    res.dlogits(r, labels[static_cast<size_t>(r)]) -= inv_m;
  }
  res.loss *= inv_m;
  return res;
}

double combined_loss(double l_contrastive, double l_mlm) {
  if (!std::isfinite(l_contrastive) || !std::isfinite(l_mlm))
    throw NumericError("combined_loss: non-finite component");
  return l_contrastive + l_mlm;
}

}  // namespace declutr
