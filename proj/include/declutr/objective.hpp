#pragma once

#include <Eigen/Dense>
#include <span>

namespace declutr {

/// The 2AN contrastive embeddings of one minibatch: rows 1..AN are anchor
/// embeddings, rows AN+1..2AN are the mean positive embeddings, with the
/// softmax temperature attached.
struct EmbeddingSet {
  Eigen::MatrixXd vectors;  // 2AN x d
  double temperature = 5e-2;

  int an() const { return static_cast<int>(vectors.rows()) / 2; }

  /// Checks 2AN even/nonzero, temperature > 0, rows finite and nonzero.
  void validate() const;
};

/// Exact cosine similarity; throws on a zero-norm input.
double cosine_sim(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

/// Componentwise mean of the P pooled positive embeddings (rows of
/// `positive_pooled`).
Eigen::VectorXd mean_positive_embedding(const Eigen::MatrixXd& positive_pooled);

/// One NT-Xent pair term from a precomputed similarity matrix. `i` and `j`
/// are 1-based slots; the denominator runs over every k != i (k = j is
/// included). Stabilized by max-subtraction inside the log-sum-exp.
double nt_xent_pair_from_sims(const Eigen::MatrixXd& sims, double temperature, int i, int j);

/// ell(i, j) over the embedding set (cosine similarities computed
/// internally). 1-based indices.
double nt_xent_pair(const EmbeddingSet& set, int i, int j);

struct ContrastiveResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;    // d loss / d vectors, 2AN x d
  bool degenerate = false; // 2AN == 2: loss is 0 by construction
};

/// Sum over i = 1..AN of ell(i, i+AN) + ell(i+AN, i). The 2AN = 2 case is
/// degenerate (exactly 0) and reported rather than raised so single-document
/// smoke runs go through.
double contrastive_loss(const EmbeddingSet& set);

ContrastiveResult contrastive_loss_with_grad(const EmbeddingSet& set);

struct MlmLossResult {
  double loss = 0.0;
  Eigen::MatrixXd dlogits;  // same shape as logits
};

/// Softmax cross-entropy at the masked positions, averaged over all masked
/// positions in the batch. `logits` is (positions x V), `labels` the original
/// token ids.
double mlm_loss(const Eigen::MatrixXd& logits, std::span<const int> labels);

MlmLossResult mlm_loss_with_grad(const Eigen::MatrixXd& logits, std::span<const int> labels);

/// L = L_contrastive + L_MLM. Throws NumericError when either is non-finite.
double combined_loss(double l_contrastive, double l_mlm);

}  // namespace declutr
