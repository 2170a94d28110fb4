#pragma once

#include <Eigen/Dense>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "declutr/corpus.hpp"
#include "declutr/encoder.hpp"

namespace declutr {

struct EmbedResult {
  Eigen::MatrixXd rows;     // one embedding per input text
  std::vector<uint8_t> ok;  // 0 = text empty after tokenization (row is NaN)
};

/// Inference-time embedding: tokenize, truncate to the model's max positions,
/// encode, mean-pool. No span sampling; output is independent of batch_size.
EmbedResult embed_texts(const EncoderParams& params, const Vocab& vocab,
                        std::span<const std::string> texts, int batch_size = 32,
                        bool normalize = false);

/// Spearman rank correlation with average (fractional) ranks for ties.
/// Throws on length mismatch, fewer than two points, or constant input.
double spearman(std::span<const double> x, std::span<const double> y);

/// Spearman of cosine(a_i, b_i) against gold scores, rows paired.
double sts_spearman(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::span<const double> gold);

struct StsPair {
  std::string text1;
  std::string text2;
  double gold = 0.0;
};

/// Fraction of rows whose nearest other row (cosine, ties broken by lower
/// row index) shares their label.
double knn_precision_at1(const Eigen::MatrixXd& embeddings, std::span<const int> labels);

enum class TaskKind { accuracy, accuracy_and_f1, spearman, mean_spearman, recall_at_k_set };

/// One evaluation task result in one of the reporting shapes an aggregate
/// score is computed from.
struct TaskReport {
  std::string name;
  TaskKind kind = TaskKind::accuracy;
  std::vector<double> values;  // 1, 2, 1, 1 or 6 entries depending on kind

  double score() const;  // the task's contribution to the average
  void validate() const;

  nlohmann::json to_json() const;
  static TaskReport from_json(const nlohmann::json& j);
};

std::vector<TaskReport> load_task_reports(const std::string& path);

/// Embeds both sides of each pair and correlates cosine similarity with gold.
TaskReport sts_evaluate(const EncoderParams& params, const Vocab& vocab, std::span<const StsPair> pairs,
                        int batch_size = 32, const std::string& task_name = "sts");

/// Multinomial logistic regression on frozen embeddings: full-batch gradient
/// descent, fixed 500 iterations, L2 regularization. Reports test accuracy;
/// test labels absent from training count as errors.
TaskReport train_linear_probe(const Eigen::MatrixXd& train_emb, std::span<const int> train_labels,
                              const Eigen::MatrixXd& test_emb, std::span<const int> test_labels,
                              double l2 = 1e-3, const std::string& task_name = "probe");

/// Unweighted mean of per-task scores: Spearman kinds use the correlation,
/// accuracy+F1 averages the two, recall@K averages the six recalls.
double aggregate_downstream(std::span<const TaskReport> reports,
                            const std::set<std::string>& exclude_names = {});

/// Arithmetic mean of probing accuracies.
double aggregate_probing(std::span<const double> accuracies);

}  // namespace declutr
