#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace declutr {

/// Synthetic k-topic corpus: k disjoint vocabulary pools, each document drawn
/// from exactly one pool. Chance retrieval precision is exactly 1/k.
struct SyntheticSpec {
  int topics = 8;
  int docs = 256;
  int doc_len = 512;          // tokens per document
  int words_per_topic = 50;   // disjoint surface vocabulary per topic
  uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDoc {
  std::string id;
  std::string text;
  int topic = 0;
};

std::vector<SyntheticDoc> gen_synthetic_docs(const SyntheticSpec& spec);

/// Writes the corpus as JSONL plus a "<out>.labels.tsv" sidecar
/// (doc id <TAB> topic).
void write_synthetic_corpus(const SyntheticSpec& spec, const std::string& out_jsonl_path);

}  // namespace declutr
