#include "declutr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "declutr/error.hpp"
#include "declutr/objective.hpp"
#include "declutr/sampler.hpp"

namespace declutr {

EmbedResult embed_texts(const EncoderParams& params, const Vocab& vocab,
                        std::span<const std::string> texts, int batch_size, bool normalize) {
  if (batch_size < 1) throw std::invalid_argument("embed_texts: batch_size must be >= 1");
  const int max_len = params.config.max_positions;
  const Eigen::Index d = params.config.d_model;

  EmbedResult out;
  out.rows = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(texts.size()), d,
                                       std::numeric_limits<double>::quiet_NaN());
  out.ok.assign(texts.size(), 0);

  std::vector<std::vector<int>> pending;
  std::vector<size_t> pending_rows;
  auto flush = [&]() {
    if (pending.empty()) return;
    PaddedBatch padded = pad_sequences(pending, Vocab::kPad);
    auto embs = encode_tokens(params, padded.ids, padded.mask);
    for (size_t i = 0; i < pending.size(); ++i) {
      Eigen::VectorXd pooled = mean_pool(embs[i], padded.mask.row(static_cast<Eigen::Index>(i)));
      if (normalize) {
        const double n = pooled.norm();
        if (n > 0.0) pooled /= n;
      }
      out.rows.row(static_cast<Eigen::Index>(pending_rows[i])) = pooled.transpose();
      out.ok[pending_rows[i]] = 1;
    }
    pending.clear();
    pending_rows.clear();
  };

  for (size_t i = 0; i < texts.size(); ++i) {
    std::vector<int> ids = tokenize(texts[i], vocab);
    if (ids.empty()) {
      std::fprintf(stderr, "warning: text %zu is empty after tokenization, emitting NaN row\n", i);
      continue;
    }
    if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<size_t>(max_len));
    pending.push_back(std::move(ids));
    pending_rows.push_back(i);
    if (static_cast<int>(pending.size()) == batch_size) flush();
  }
  flush();
  return out;
}

namespace {

// Average (fractional) ranks, 1-based; ties share the mean of their ranks.
std::vector<double> fractional_ranks(std::span<const double> x) {
  const size_t n = x.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("correlation of a constant sequence is undefined");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  const std::vector<double> rx = fractional_ranks(x);
  const std::vector<double> ry = fractional_ranks(y);
  return pearson(rx, ry);
}

double sts_spearman(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::span<const double> gold) {
  if (a.rows() != b.rows() || static_cast<size_t>(a.rows()) != gold.size())
    throw std::invalid_argument("sts_spearman: row counts mismatch");
  std::vector<double> predicted(static_cast<size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    predicted[static_cast<size_t>(i)] = cosine_sim(a.row(i).transpose(), b.row(i).transpose());
  return spearman(predicted, gold);
}

TaskReport sts_evaluate(const EncoderParams& params, const Vocab& vocab, std::span<const StsPair> pairs,
                        int batch_size, const std::string& task_name) {
  if (pairs.size() < 2) throw std::invalid_argument("sts_evaluate: need at least two pairs");
  std::vector<std::string> lhs, rhs;
  std::vector<double> gold;
  for (const auto& p : pairs) {
    lhs.push_back(p.text1);
    rhs.push_back(p.text2);
    gold.push_back(p.gold);
  }
  EmbedResult ea = embed_texts(params, vocab, lhs, batch_size);
  EmbedResult eb = embed_texts(params, vocab, rhs, batch_size);
  for (size_t i = 0; i < pairs.size(); ++i)
    if (!ea.ok[i] || !eb.ok[i]) throw DataError("sts_evaluate: pair " + std::to_string(i) + " has empty text");
  return TaskReport{task_name, TaskKind::spearman, {sts_spearman(ea.rows, eb.rows, gold)}};
}

double knn_precision_at1(const Eigen::MatrixXd& embeddings, std::span<const int> labels) {
  const Eigen::Index n = embeddings.rows();
  if (n < 2) throw std::invalid_argument("knn_precision_at1: need at least two rows");
  if (static_cast<size_t>(n) != labels.size()) throw std::invalid_argument("knn_precision_at1: label count mismatch");
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) std::fprintf(stderr, "warning: single-label retrieval is trivially 1.0\n");

  Eigen::VectorXd norms = embeddings.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i)
    if (norms(i) == 0.0) throw NumericError("knn_precision_at1: zero-norm row " + std::to_string(i));
  Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * embeddings;
  Eigen::MatrixXd sims = unit * unit.transpose();

  int hits = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = -1;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (sims(i, j) > best_sim) {  // strict: ties keep the lower index
        best_sim = sims(i, j);
        best = j;
      }
    }
    if (labels[static_cast<size_t>(best)] == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

TaskReport train_linear_probe(const Eigen::MatrixXd& train_emb, std::span<const int> train_labels,
                              const Eigen::MatrixXd& test_emb, std::span<const int> test_labels,
                              double l2, const std::string& task_name) {
  if (static_cast<size_t>(train_emb.rows()) != train_labels.size())
    throw std::invalid_argument("probe: train label count mismatch");
  if (static_cast<size_t>(test_emb.rows()) != test_labels.size())
    throw std::invalid_argument("probe: test label count mismatch");
  if (train_emb.cols() != test_emb.cols()) throw std::invalid_argument("probe: dim mismatch");

  const std::set<int> train_classes(train_labels.begin(), train_labels.end());
  if (train_classes.size() < 2) throw std::invalid_argument("probe: need at least two training classes");
  std::vector<int> classes(train_classes.begin(), train_classes.end());
  const int k = static_cast<int>(classes.size());
  auto class_index = [&](int label) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), label);
    return it != classes.end() && *it == label ? static_cast<int>(it - classes.begin()) : -1;
  };

  const Eigen::Index n = train_emb.rows();
  const Eigen::Index d = train_emb.cols();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);

  constexpr int kIterations = 500;
  constexpr double kLearningRate = 0.5;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 0; it < kIterations; ++it) {
    Eigen::MatrixXd logits = (train_emb * w).rowwise() + b;
    Eigen::MatrixXd probs(n, k);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::ArrayXd ex = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
      probs.row(r) = (ex / ex.sum()).matrix();
    }
    for (Eigen::Index r = 0; r < n; ++r)
      probs(r, class_index(train_labels[static_cast<size_t>(r)])) -= 1.0;
    Eigen::MatrixXd dw = train_emb.transpose() * probs * inv_n + l2 * w;
    Eigen::RowVectorXd db = probs.colwise().sum() * inv_n;
    w -= kLearningRate * dw;
    b -= kLearningRate * db;
  }

  int correct = 0;
  size_t unseen = 0;
  Eigen::MatrixXd logits = (test_emb * w).rowwise() + b;
  for (Eigen::Index r = 0; r < test_emb.rows(); ++r) {
    const int truth = class_index(test_labels[static_cast<size_t>(r)]);
    if (truth < 0) {
      ++unseen;
      continue;  // counted as an error
    }
    Eigen::Index pred;
    logits.row(r).maxCoeff(&pred);
    if (static_cast<int>(pred) == truth) ++correct;
  }
  if (unseen > 0)
    std::fprintf(stderr, "warning: %zu test rows carry labels absent from training (counted as errors)\n", unseen);
  const double accuracy = static_cast<double>(correct) / static_cast<double>(test_emb.rows());
  return TaskReport{task_name, TaskKind::accuracy, {accuracy}};
}

namespace {

const char* kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::accuracy: return "accuracy";
    case TaskKind::accuracy_and_f1: return "accuracyAndF1";
    case TaskKind::spearman: return "spearman";
    case TaskKind::mean_spearman: return "meanSpearman";
    case TaskKind::recall_at_k_set: return "recallAtKSet";
  }
  return "?";
}

TaskKind kind_from_name(const std::string& s) {
  if (s == "accuracy") return TaskKind::accuracy;
  if (s == "accuracyAndF1") return TaskKind::accuracy_and_f1;
  if (s == "spearman") return TaskKind::spearman;
  if (s == "meanSpearman") return TaskKind::mean_spearman;
  if (s == "recallAtKSet") return TaskKind::recall_at_k_set;
  throw DataError("unknown task report kind '" + s + "'");
}

size_t expected_values(TaskKind k) {
  switch (k) {
    case TaskKind::accuracy_and_f1: return 2;
    case TaskKind::recall_at_k_set: return 6;
    default: return 1;
  }
}

}  // namespace

void TaskReport::validate() const {
  if (values.size() != expected_values(kind))
    throw DataError("task report '" + name + "': kind " + kind_name(kind) + " expects " +
                    std::to_string(expected_values(kind)) + " values, got " + std::to_string(values.size()));
  for (double v : values)
    if (!std::isfinite(v)) throw DataError("task report '" + name + "': non-finite value");
}

double TaskReport::score() const {
  validate();
  switch (kind) {
    case TaskKind::accuracy:
    case TaskKind::spearman:
    case TaskKind::mean_spearman:
      return values[0];
    case TaskKind::accuracy_and_f1:
      return (values[0] + values[1]) / 2.0;
    case TaskKind::recall_at_k_set: {
      double sum = 0.0;
      for (double v : values) sum += v;
      return sum / static_cast<double>(values.size());
    }
  }
  return 0.0;
}

nlohmann::json TaskReport::to_json() const {
  validate();
  nlohmann::json j = {{"name", name}, {"kind", kind_name(kind)}};
  switch (kind) {
    case TaskKind::accuracy: j["accuracy"] = values[0]; break;
    case TaskKind::accuracy_and_f1:
      j["accuracy"] = values[0];
      j["f1"] = values[1];
      break;
    case TaskKind::spearman: j["spearman"] = values[0]; break;
    case TaskKind::mean_spearman: j["meanSpearman"] = values[0]; break;
    case TaskKind::recall_at_k_set: j["recalls"] = values; break;
  }
  return j;
}

TaskReport TaskReport::from_json(const nlohmann::json& j) {
  TaskReport r;
  r.name = j.at("name").get<std::string>();
  r.kind = kind_from_name(j.at("kind").get<std::string>());
  try {
    switch (r.kind) {
      case TaskKind::accuracy: r.values = {j.at("accuracy").get<double>()}; break;
      case TaskKind::accuracy_and_f1:
        r.values = {j.at("accuracy").get<double>(), j.at("f1").get<double>()};
        break;
      case TaskKind::spearman: r.values = {j.at("spearman").get<double>()}; break;
      case TaskKind::mean_spearman: r.values = {j.at("meanSpearman").get<double>()}; break;
      case TaskKind::recall_at_k_set: r.values = j.at("recalls").get<std::vector<double>>(); break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("task report '" + r.name + "': " + e.what());
  }
  r.validate();
  return r;
}

std::vector<TaskReport> load_task_reports(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read reports file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("reports file " + path + ": " + e.what());
  }
  if (!j.is_array()) throw DataError("reports file must hold a JSON array of task reports");
  std::vector<TaskReport> out;
  for (const auto& item : j) out.push_back(TaskReport::from_json(item));
  return out;
}

double aggregate_downstream(std::span<const TaskReport> reports, const std::set<std::string>& exclude_names) {
  double sum = 0.0;
  size_t count = 0;
  for (const auto& r : reports) {
    if (exclude_names.count(r.name)) continue;
    sum += r.score();
    ++count;
  }
  if (count == 0) throw DataError("aggregate_downstream: no reports left after exclusion");
  return sum / static_cast<double>(count);
}

double aggregate_probing(std::span<const double> accuracies) {
  if (accuracies.empty()) throw std::invalid_argument("aggregate_probing: empty input");
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  return sum / static_cast<double>(accuracies.size());
}

}  // namespace declutr
