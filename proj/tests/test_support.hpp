#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace test_support {

inline std::string fresh_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("declutr_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// JSONL corpus with ids d0, d1, ...
inline std::string write_jsonl_corpus(const std::string& dir, const std::vector<std::string>& texts) {
  std::string body;
  for (size_t i = 0; i < texts.size(); ++i)
    body += nlohmann::json{{"id", "d" + std::to_string(i)}, {"text", texts[i]}}.dump() + "\n";
  const std::string path = dir + "/corpus.jsonl";
  write_file(path, body);
  return path;
}

/// Scalar, loop-based NT-Xent evaluation straight off the printed formula
/// (no stabilization): the independent oracle for the vectorized path.
inline double naive_nt_xent(const Eigen::MatrixXd& vectors, double tau, int i, int j) {
  const int total = static_cast<int>(vectors.rows());
  auto cosine = [&](int a, int b) {
    double dot = 0, na = 0, nb = 0;
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
      dot += vectors(a, c) * vectors(b, c);
      na += vectors(a, c) * vectors(a, c);
      nb += vectors(b, c) * vectors(b, c);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double denom = 0.0;
  for (int k = 1; k <= total; ++k)
    if (k != i) denom += std::exp(cosine(i - 1, k - 1) / tau);
  return -std::log(std::exp(cosine(i - 1, j - 1) / tau) / denom);
}

/// Brute-force L_contrastive: sum over i of ell(i, i+AN) + ell(i+AN, i).
inline double brute_force_contrastive(const Eigen::MatrixXd& vectors, double tau) {
  const int an = static_cast<int>(vectors.rows()) / 2;
  if (an == 1) return 0.0;
  double loss = 0.0;
  for (int i = 1; i <= an; ++i)
    loss += naive_nt_xent(vectors, tau, i, i + an) + naive_nt_xent(vectors, tau, i + an, i);
  return loss;
}

inline bool rel_close(double analytic, double numeric, double tol, double zero_floor = 1e-10) {
  const double aa = std::abs(analytic);
  const double an = std::abs(numeric);
  if (aa < zero_floor && an < zero_floor) return true;
  return std::abs(analytic - numeric) / std::max(aa, an) < tol;
}

}  // namespace test_support
