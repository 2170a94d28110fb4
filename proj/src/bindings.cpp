#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "declutr/checkpoint.hpp"
#include "declutr/corpus.hpp"
#include "declutr/error.hpp"
#include "declutr/evalkit.hpp"
#include "declutr/objective.hpp"
#include "declutr/runconfig.hpp"
#include "declutr/sampler.hpp"
#include "declutr/synthetic.hpp"
#include "declutr/trainer.hpp"

namespace py = pybind11;
using namespace declutr;

namespace {

Eigen::MatrixXd matrix_from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("expected at least one row");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw std::invalid_argument("ragged embedding rows");
    for (size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

std::vector<std::vector<double>> rows_from_matrix(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(static_cast<size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out[static_cast<size_t>(r)].resize(static_cast<size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<size_t>(r)][static_cast<size_t>(c)] = m(r, c);
  }
  return out;
}

RunConfig resolve_config(const std::string& profile, const std::string& config_json) {
  RunConfig cfg = profile_config(profile);
  if (!config_json.empty()) apply_config_json(cfg, nlohmann::json::parse(config_json));
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_declutr, m) {
  m.doc() = "Contrastive sentence-embedding trainer and evaluation kit";
  m.attr("__version__") = "0.1.0";

  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<Vocab>(m, "Vocab")
      .def_static("build", &build_vocab, py::arg("corpus_path"), py::arg("min_freq") = 1,
                  py::arg("max_size") = 50000)
      .def_static("load", &Vocab::load_tsv, py::arg("path"))
      .def_static("from_tokens", &Vocab::from_tokens, py::arg("tokens"))
      .def("save", &Vocab::save_tsv, py::arg("path"))
      .def("__len__", &Vocab::size)
      .def("fingerprint", &Vocab::fingerprint)
      .def("contains", &Vocab::contains, py::arg("token"))
      .def("id_of", &Vocab::id_of, py::arg("token"))
      .def("token_of", &Vocab::token_of, py::arg("id"))
      .def("tokenize", [](const Vocab& v, const std::string& text) { return tokenize(text, v); },
           py::arg("text"))
      .def("detokenize",
           [](const Vocab& v, const std::vector<int>& ids) { return detokenize(ids, v); },
           py::arg("ids"));

  m.def("split_surface_tokens", &split_surface_tokens, py::arg("text"));

  m.def(
      "gen_synthetic",
      [](const std::string& out, int topics, int docs, int doc_len, int words_per_topic, uint64_t seed) {
        SyntheticSpec spec{topics, docs, doc_len, words_per_topic, seed};
        write_synthetic_corpus(spec, out);
      },
      py::arg("out"), py::arg("topics") = 8, py::arg("docs") = 256, py::arg("doc_len") = 512,
      py::arg("words_per_topic") = 50, py::arg("seed") = 0);

  m.def(
      "sample_pairs",
      [](const std::string& corpus_path, const std::string& vocab_path, int count, uint64_t seed,
         const std::string& profile, const std::string& config_json) {
        const RunConfig cfg = resolve_config(profile, config_json);
        const Vocab vocab = Vocab::load_tsv(vocab_path);
        const IngestResult ingest =
            ingest_documents(corpus_path, vocab, cfg.sampler.min_eligible_tokens());
        if (ingest.store.empty()) throw DataError("no eligible documents");
        Rng doc_pick = Rng::stream(seed, "sample-docs", 0);
        py::list records;
        int emitted = 0;
        for (uint64_t round = 0; emitted < count; ++round) {
          const Document& doc = ingest.store.at(doc_pick.uniform_below(ingest.store.size()));
          Rng rng = Rng::for_document(seed, doc.id, round);
          for (const SpanSpec& anchor : sample_anchors(rng, doc, cfg.sampler)) {
            for (const SpanSpec& pos : sample_positives(rng, doc, anchor, cfg.sampler)) {
              if (emitted >= count) break;
              py::dict rec;
              rec["view"] = view_name(classify_view(anchor, pos));
              rec["anchor"] = detokenize(
                  std::span<const int>(doc.tokens.data() + anchor.start, static_cast<size_t>(anchor.len())),
                  vocab);
              rec["positive"] = detokenize(
                  std::span<const int>(doc.tokens.data() + pos.start, static_cast<size_t>(pos.len())), vocab);
              rec["docId"] = doc.id;
              records.append(rec);
              ++emitted;
            }
          }
        }
        return records;
      },
      py::arg("corpus_path"), py::arg("vocab_path"), py::arg("count") = 5, py::arg("seed") = 0,
      py::arg("profile") = "paper-defaults", py::arg("config_json") = "");

  m.def(
      "train",
      [](const std::string& corpus_path, const std::string& vocab_path, const std::string& out_dir,
         const std::string& profile, const std::string& config_json, std::optional<uint64_t> seed,
         const std::string& objective, std::optional<int64_t> total_steps, bool deterministic) {
        RunConfig cfg = resolve_config(profile, config_json);
        if (seed) cfg.train.seed = *seed;
        if (!objective.empty()) cfg.train.objective = objective_mode_from_string(objective);
        if (total_steps) cfg.train.total_steps_override = *total_steps;
        if (deterministic) cfg.train.deterministic = true;
        const Vocab vocab = Vocab::load_tsv(vocab_path);
        const IngestResult ingest =
            ingest_documents(corpus_path, vocab, cfg.sampler.min_eligible_tokens());
        const TrainResult result =
            train(ingest.store, vocab, cfg.sampler, cfg.encoder, cfg.train, out_dir);
        py::dict out;
        out["checkpoint"] = result.checkpoint_path;
        out["metrics"] = result.metrics_path;
        out["steps"] = result.steps;
        return out;
      },
      py::arg("corpus_path"), py::arg("vocab_path"), py::arg("out_dir"),
      py::arg("profile") = "paper-defaults", py::arg("config_json") = "",
      py::arg("seed") = std::nullopt, py::arg("objective") = "", py::arg("total_steps") = std::nullopt,
      py::arg("deterministic") = false);

  m.def(
      "embed_texts",
      [](const std::string& checkpoint_path, const std::string& vocab_path,
         const std::vector<std::string>& texts, int batch_size, bool normalize) {
        const Vocab vocab = Vocab::load_tsv(vocab_path);
        const LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path, vocab.fingerprint());
        const EmbedResult result = embed_texts(ckpt.params, vocab, texts, batch_size, normalize);
        py::dict out;
        out["embeddings"] = rows_from_matrix(result.rows);
        out["ok"] = std::vector<bool>(result.ok.begin(), result.ok.end());
        return out;
      },
      py::arg("checkpoint_path"), py::arg("vocab_path"), py::arg("texts"), py::arg("batch_size") = 32,
      py::arg("normalize") = false);

  m.def(
      "spearman",
      [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); },
      py::arg("x"), py::arg("y"));

  m.def(
      "knn_precision_at1",
      [](const std::vector<std::vector<double>>& embeddings, const std::vector<int>& labels) {
        return knn_precision_at1(matrix_from_rows(embeddings), labels);
      },
      py::arg("embeddings"), py::arg("labels"));

  m.def(
      "train_linear_probe",
      [](const std::vector<std::vector<double>>& train_emb, const std::vector<int>& train_labels,
         const std::vector<std::vector<double>>& test_emb, const std::vector<int>& test_labels,
         double l2) {
        const TaskReport report = train_linear_probe(matrix_from_rows(train_emb), train_labels,
                                                     matrix_from_rows(test_emb), test_labels, l2);
        py::dict out;
        out["name"] = report.name;
        out["kind"] = "accuracy";
        out["accuracy"] = report.score();
        return out;
      },
      py::arg("train_embeddings"), py::arg("train_labels"), py::arg("test_embeddings"),
      py::arg("test_labels"), py::arg("l2") = 1e-3);

  m.def(
      "contrastive_loss",
      [](const std::vector<std::vector<double>>& vectors, double temperature) {
        EmbeddingSet set;
        set.vectors = matrix_from_rows(vectors);
        set.temperature = temperature;
        return contrastive_loss(set);
      },
      py::arg("vectors"), py::arg("temperature") = 5e-2);

  m.def(
      "nt_xent_pair",
      [](const std::vector<std::vector<double>>& vectors, double temperature, int i, int j) {
        EmbeddingSet set;
        set.vectors = matrix_from_rows(vectors);
        set.temperature = temperature;
        return nt_xent_pair(set, i, j);
      },
      py::arg("vectors"), py::arg("temperature"), py::arg("i"), py::arg("j"));

  m.def("stlr_learning_rate", &stlr_learning_rate, py::arg("step"), py::arg("total_steps"),
        py::arg("cut_frac") = 0.1, py::arg("lr_max") = 5e-5, py::arg("ratio") = 32.0);

  m.def(
      "aggregate_reports",
      [](const std::string& path, const std::vector<std::string>& exclude) {
        const auto reports = load_task_reports(path);
        return aggregate_downstream(reports, {exclude.begin(), exclude.end()});
      },
      py::arg("path"), py::arg("exclude") = std::vector<std::string>{});

  m.def(
      "profile_config",
      [](const std::string& profile) { return run_config_to_json(profile_config(profile)).dump(); },
      py::arg("profile") = "paper-defaults");
}
