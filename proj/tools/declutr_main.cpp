#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "declutr/checkpoint.hpp"
#include "declutr/corpus.hpp"
#include "declutr/error.hpp"
#include "declutr/evalkit.hpp"
#include "declutr/runconfig.hpp"
#include "declutr/sampler.hpp"
#include "declutr/synthetic.hpp"
#include "declutr/trainer.hpp"

namespace {

using namespace declutr;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

Eigen::MatrixXd read_embedding_tsv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError("embedding file is empty: " + path);
  Eigen::MatrixXd m;
  for (size_t r = 0; r < lines.size(); ++r) {
    const auto cols = split_tabs(lines[r]);
    if (r == 0) m.resize(static_cast<Eigen::Index>(lines.size()), static_cast<Eigen::Index>(cols.size()));
    if (static_cast<Eigen::Index>(cols.size()) != m.cols())
      throw DataError(path + ":" + std::to_string(r + 1) + ": inconsistent column count");
    for (size_t c = 0; c < cols.size(); ++c) {
      try {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::stod(cols[c]);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(r + 1) + ": bad float '" + cols[c] + "'");
      }
    }
  }
  return m;
}

struct ConfigFlags {
  std::string profile = "paper-defaults";
  std::string config_path;

  RunConfig resolve() const {
    RunConfig cfg = profile_config(profile);
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    return cfg;
  }
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--profile", flags.profile, "Base profile: paper-defaults or desk-scale")
      ->check(CLI::IsMember({"paper-defaults", "desk-scale"}));
  cmd->add_option("--config", flags.config_path, "JSON config file overriding the profile");
}

int run_build_vocab(const std::string& corpus, const std::string& out, int min_freq, int max_size) {
  Vocab vocab = build_vocab(corpus, min_freq, max_size);
  vocab.save_tsv(out);
  std::printf("vocab: %d tokens (fingerprint %s) -> %s\n", vocab.size(), vocab.fingerprint().c_str(),
              out.c_str());
  return 0;
}

int run_gen_synthetic(const SyntheticSpec& spec, const std::string& out) {
  write_synthetic_corpus(spec, out);
  std::printf("synthetic corpus: %d docs x %d tokens, %d topics -> %s (labels: %s.labels.tsv)\n",
              spec.docs, spec.doc_len, spec.topics, out.c_str(), out.c_str());
  return 0;
}

int run_sample(const std::string& corpus_path, const std::string& vocab_path, int count, uint64_t seed,
               const ConfigFlags& flags, const std::string& out_path) {
  RunConfig cfg = flags.resolve();
  Vocab vocab = Vocab::load_tsv(vocab_path);
  IngestResult ingest = ingest_documents(corpus_path, vocab, cfg.sampler.min_eligible_tokens());
  if (ingest.store.empty())
    throw DataError("sample: no eligible documents (need >= " +
                    std::to_string(cfg.sampler.min_eligible_tokens()) + " tokens)");

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot write: " + out_path);
    out = &file;
  }

  Rng doc_pick = Rng::stream(seed, "sample-docs", 0);
  int emitted = 0;
  for (uint64_t round = 0; emitted < count; ++round) {
    const auto& doc = ingest.store.at(doc_pick.uniform_below(ingest.store.size()));
    Rng rng = Rng::for_document(seed, doc.id, round);
    for (const SpanSpec& anchor : sample_anchors(rng, doc, cfg.sampler)) {
      for (const SpanSpec& pos : sample_positives(rng, doc, anchor, cfg.sampler)) {
        if (emitted >= count) break;
        const std::span<const int> anchor_ids(doc.tokens.data() + anchor.start,
                                              static_cast<size_t>(anchor.len()));
        const std::span<const int> pos_ids(doc.tokens.data() + pos.start, static_cast<size_t>(pos.len()));
        nlohmann::json rec = {{"view", view_name(classify_view(anchor, pos))},
                              {"anchor", detokenize(anchor_ids, vocab)},
                              {"positive", detokenize(pos_ids, vocab)},
                              {"docId", doc.id}};
        *out << rec.dump() << '\n';
        ++emitted;
      }
    }
  }
  return 0;
}

int run_train(const std::string& corpus_path, const std::string& vocab_path, const std::string& out_dir,
              const ConfigFlags& flags, std::optional<uint64_t> seed, const std::string& objective,
              std::optional<int64_t> total_steps, bool deterministic, const std::string& loss_reduction,
              bool print_config) {
  RunConfig cfg = flags.resolve();
  if (seed) cfg.train.seed = *seed;
  if (!objective.empty()) cfg.train.objective = objective_mode_from_string(objective);
  if (total_steps) cfg.train.total_steps_override = *total_steps;
  if (deterministic) cfg.train.deterministic = true;
  if (!loss_reduction.empty())
    cfg.train.loss_reduction = loss_reduction == "mean" ? LossReduction::mean : LossReduction::sum;

  if (print_config) {
    std::cout << run_config_to_json(cfg).dump(2) << '\n';
    return 0;
  }

  Vocab vocab = Vocab::load_tsv(vocab_path);
  IngestResult ingest = ingest_documents(corpus_path, vocab, cfg.sampler.min_eligible_tokens());
  std::fprintf(stderr, "ingested %zu documents (%zu dropped below %d tokens)\n", ingest.store.size(),
               ingest.dropped, cfg.sampler.min_eligible_tokens());
  TrainResult result = train(ingest.store, vocab, cfg.sampler, cfg.encoder, cfg.train, out_dir);
  std::printf("trained %lld steps -> %s (metrics: %s)\n", static_cast<long long>(result.steps),
              result.checkpoint_path.c_str(), result.metrics_path.c_str());
  return 0;
}

int run_embed(const std::string& checkpoint_path, const std::string& vocab_path,
              const std::string& input_path, const std::string& out_path, bool normalize, int batch_size) {
  Vocab vocab = Vocab::load_tsv(vocab_path);
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path, vocab.fingerprint());
  const std::vector<std::string> texts = read_lines(input_path);
  if (texts.empty()) throw DataError("embed: input file has no lines: " + input_path);
  EmbedResult result = embed_texts(ckpt.params, vocab, texts, batch_size, normalize);

  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write: " + out_path);
  for (Eigen::Index r = 0; r < result.rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < result.rows.cols(); ++c) {
      if (c) out << '\t';
      out << format_double(result.rows(r, c));
    }
    out << '\n';
  }
  return 0;
}

int run_eval_sts(const std::string& emb_pairs_path, const std::string& checkpoint_path,
                 const std::string& vocab_path, const std::string& pairs_path, int batch_size) {
  double rho;
  if (!emb_pairs_path.empty()) {
    // TSV rows: gold, then 2d floats (embedding 1 followed by embedding 2).
    Eigen::MatrixXd raw = read_embedding_tsv(emb_pairs_path);
    if (raw.cols() < 3 || (raw.cols() - 1) % 2 != 0)
      throw DataError("eval-sts: expected columns gold + 2*d embedding floats");
    const Eigen::Index d = (raw.cols() - 1) / 2;
    std::vector<double> gold(static_cast<size_t>(raw.rows()));
    for (Eigen::Index r = 0; r < raw.rows(); ++r) gold[static_cast<size_t>(r)] = raw(r, 0);
    rho = sts_spearman(raw.middleCols(1, d), raw.middleCols(1 + d, d), gold);
  } else {
    if (checkpoint_path.empty() || vocab_path.empty() || pairs_path.empty())
      throw DataError("eval-sts: pass --emb-pairs, or --checkpoint/--vocab/--pairs");
    Vocab vocab = Vocab::load_tsv(vocab_path);
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path, vocab.fingerprint());
    std::vector<StsPair> pairs;
    const auto lines = read_lines(pairs_path);
    for (size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto cols = split_tabs(lines[i]);
      if (cols.size() != 3)
        throw DataError(pairs_path + ":" + std::to_string(i + 1) + ": expected text1<TAB>text2<TAB>gold");
      pairs.push_back(StsPair{cols[0], cols[1], std::stod(cols[2])});
    }
    rho = sts_evaluate(ckpt.params, vocab, pairs, batch_size).values[0];
  }
  std::printf("%.6f\n", rho);
  return 0;
}

int run_eval_retrieval(const std::string& emb_path, const std::string& labels_path) {
  Eigen::MatrixXd emb = read_embedding_tsv(emb_path);
  const auto lines = read_lines(labels_path);
  std::vector<std::string> names;
  for (const auto& l : lines)
    if (!l.empty()) names.push_back(l);
  if (static_cast<Eigen::Index>(names.size()) != emb.rows())
    throw DataError("eval-retrieval: label count does not match embedding rows");
  std::vector<int> labels;
  std::map<std::string, int> intern;
  for (const auto& n : names) labels.push_back(intern.emplace(n, static_cast<int>(intern.size())).first->second);
  std::printf("%.6f\n", knn_precision_at1(emb, labels));
  return 0;
}

int run_eval_aggregate(const std::string& reports_path, const std::vector<std::string>& exclude) {
  const auto reports = load_task_reports(reports_path);
  const std::set<std::string> exclude_set(exclude.begin(), exclude.end());
  std::printf("%.2f\n", aggregate_downstream(reports, exclude_set));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("DECLUTR_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"contrastive sentence-embedding trainer and evaluation kit"};
  app.require_subcommand(1);

  // build-vocab
  std::string bv_corpus, bv_out;
  int bv_min_freq = 1, bv_max_size = 50000;
  auto* bv = app.add_subcommand("build-vocab", "Build a frequency-ranked vocabulary from a JSONL corpus");
  bv->add_option("--corpus", bv_corpus, "JSONL corpus, one {\"id\",\"text\"} per line")->required();
  bv->add_option("--out", bv_out, "Output vocab TSV path")->required();
  bv->add_option("--min-freq", bv_min_freq, "Minimum token frequency");
  bv->add_option("--max-size", bv_max_size, "Maximum vocab size incl. specials");

  // gen-synthetic
  SyntheticSpec syn;
  std::string syn_out;
  auto* gs = app.add_subcommand("gen-synthetic", "Generate a k-topic synthetic corpus with disjoint pools");
  gs->add_option("--out", syn_out, "Output corpus JSONL path")->required();
  gs->add_option("--topics", syn.topics, "Number of topics");
  gs->add_option("--docs", syn.docs, "Number of documents");
  gs->add_option("--doc-len", syn.doc_len, "Tokens per document");
  gs->add_option("--words-per-topic", syn.words_per_topic, "Vocabulary pool size per topic");
  gs->add_option("--seed", syn.seed, "Generator seed");

  // sample
  std::string sm_corpus, sm_vocab, sm_out;
  int sm_count = 5;
  uint64_t sm_seed = 0;
  ConfigFlags sm_flags;
  auto* sm = app.add_subcommand("sample", "Emit sampled anchor/positive span pairs as JSONL");
  sm->add_option("--corpus", sm_corpus)->required();
  sm->add_option("--vocab", sm_vocab)->required();
  sm->add_option("-n,--num", sm_count, "Number of records");
  sm->add_option("--seed", sm_seed);
  sm->add_option("--out", sm_out, "Output path (default stdout)");
  add_config_flags(sm, sm_flags);

  // train
  std::string tr_corpus, tr_vocab, tr_out, tr_objective, tr_loss_reduction;
  ConfigFlags tr_flags;
  std::optional<uint64_t> tr_seed;
  std::optional<int64_t> tr_total_steps;
  bool tr_deterministic = false, tr_print_config = false;
  auto* tr = app.add_subcommand("train", "Run the contrastive + MLM training loop");
  tr->add_option("--corpus", tr_corpus)->required();
  tr->add_option("--vocab", tr_vocab)->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--seed", tr_seed);
  tr->add_option("--objective", tr_objective)
      ->check(CLI::IsMember({"contrastive+mlm", "contrastive-only", "mlm-only"}));
  tr->add_option("--total-steps", tr_total_steps, "Run exactly this many optimizer steps");
  tr->add_option("--loss-reduction", tr_loss_reduction, "Contrastive reduction: sum (default) or mean")
      ->check(CLI::IsMember({"sum", "mean"}));
  tr->add_flag("--deterministic", tr_deterministic, "Byte-stable metrics output");
  tr->add_flag("--print-config", tr_print_config, "Dump the effective config JSON and exit");
  add_config_flags(tr, tr_flags);

  // embed
  std::string em_ckpt, em_vocab, em_input, em_out;
  bool em_normalize = false;
  int em_batch = 32;
  auto* em = app.add_subcommand("embed", "Embed one text per input line to TSV");
  em->add_option("--checkpoint", em_ckpt)->required();
  em->add_option("--vocab", em_vocab)->required();
  em->add_option("--input", em_input, "Text file, one text per line")->required();
  em->add_option("--out", em_out, "Output TSV path")->required();
  em->add_flag("--normalize", em_normalize, "L2-normalize each embedding");
  em->add_option("--batch-size", em_batch);

  // eval-sts
  std::string es_emb_pairs, es_ckpt, es_vocab, es_pairs;
  int es_batch = 32;
  auto* es = app.add_subcommand("eval-sts", "Spearman of cosine similarity vs gold scores");
  es->add_option("--emb-pairs", es_emb_pairs, "TSV: gold then 2*d embedding floats per line");
  es->add_option("--checkpoint", es_ckpt);
  es->add_option("--vocab", es_vocab);
  es->add_option("--pairs", es_pairs, "TSV: text1<TAB>text2<TAB>gold");
  es->add_option("--batch-size", es_batch);

  // eval-retrieval
  std::string er_emb, er_labels;
  auto* er = app.add_subcommand("eval-retrieval", "Nearest-neighbour precision@1 by cosine");
  er->add_option("--emb", er_emb, "Embedding TSV (one row per item)")->required();
  er->add_option("--labels", er_labels, "One label per line")->required();

  // eval-aggregate
  std::string ea_reports;
  std::vector<std::string> ea_exclude;
  auto* ea = app.add_subcommand("eval-aggregate", "Average score over a JSON list of task reports");
  ea->add_option("--reports", ea_reports)->required();
  ea->add_option("--exclude", ea_exclude, "Task names to leave out");

  try {
    app.parse(argc, argv);
    if (bv->parsed()) return run_build_vocab(bv_corpus, bv_out, bv_min_freq, bv_max_size);
    if (gs->parsed()) return run_gen_synthetic(syn, syn_out);
    if (sm->parsed()) return run_sample(sm_corpus, sm_vocab, sm_count, sm_seed, sm_flags, sm_out);
    if (tr->parsed())
      return run_train(tr_corpus, tr_vocab, tr_out, tr_flags, tr_seed, tr_objective, tr_total_steps,
                       tr_deterministic, tr_loss_reduction, tr_print_config);
    if (em->parsed()) return run_embed(em_ckpt, em_vocab, em_input, em_out, em_normalize, em_batch);
    if (es->parsed()) return run_eval_sts(es_emb_pairs, es_ckpt, es_vocab, es_pairs, es_batch);
    if (er->parsed()) return run_eval_retrieval(er_emb, er_labels);
    if (ea->parsed()) return run_eval_aggregate(ea_reports, ea_exclude);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n\n", e.what());
    std::cerr << app.help();
    return 1;
  } catch (const declutr::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const declutr::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
