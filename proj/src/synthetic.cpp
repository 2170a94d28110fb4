#include "declutr/synthetic.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "declutr/error.hpp"
#include "declutr/prng.hpp"

namespace declutr {

void SyntheticSpec::validate() const {
  if (topics < 1) throw std::invalid_argument("synthetic: topics must be >= 1");
  if (docs < 1) throw std::invalid_argument("synthetic: docs must be >= 1");
  if (doc_len < 1) throw std::invalid_argument("synthetic: doc_len must be >= 1");
  if (words_per_topic < 1) throw std::invalid_argument("synthetic: words_per_topic must be >= 1");
}

std::vector<SyntheticDoc> gen_synthetic_docs(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<SyntheticDoc> out;
  out.reserve(static_cast<size_t>(spec.docs));
  for (int d = 0; d < spec.docs; ++d) {
    const int topic = d % spec.topics;  // balanced assignment
    Rng rng = Rng::stream(spec.seed, "synthetic-doc", static_cast<uint64_t>(d));
    std::string text;
    text.reserve(static_cast<size_t>(spec.doc_len) * 8);
    for (int t = 0; t < spec.doc_len; ++t) {
      const auto word = rng.uniform_below(static_cast<uint64_t>(spec.words_per_topic));
      if (t) text += ' ';
      text += 't' + std::to_string(topic) + 'w' + std::to_string(word);
    }
    char id[32];
    std::snprintf(id, sizeof(id), "t%02d-d%05d", topic, d);
    out.push_back(SyntheticDoc{id, std::move(text), topic});
  }
  return out;
}

void write_synthetic_corpus(const SyntheticSpec& spec, const std::string& out_jsonl_path) {
  const auto docs = gen_synthetic_docs(spec);
  std::ofstream corpus(out_jsonl_path, std::ios::binary | std::ios::trunc);
  if (!corpus) throw DataError("cannot write corpus file: " + out_jsonl_path);
  std::ofstream labels(out_jsonl_path + ".labels.tsv", std::ios::binary | std::ios::trunc);
  if (!labels) throw DataError("cannot write labels file: " + out_jsonl_path + ".labels.tsv");
  for (const auto& d : docs) {
    corpus << nlohmann::json{{"id", d.id}, {"text", d.text}}.dump() << '\n';
    labels << d.id << '\t' << d.topic << '\n';
  }
}

}  // namespace declutr
