#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace declutr {

/// Token <-> id mapping with three fixed specials (PAD=0, UNK=1, MASK=2).
/// Immutable after construction; non-special ids occupy [3, size()).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kNumSpecial = 3;

  /// Assigns ids 3.. to `tokens` in the given order. Tokens must be unique,
  /// non-empty and lowercase surface forms.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  static Vocab load_tsv(const std::string& path);
  void save_tsv(const std::string& path) const;

  /// TSV serialization: `token<TAB>id`, sorted by id, specials first.
  std::string to_tsv() const;

  /// FNV-1a 64 of the TSV bytes, as 16 hex digits.
  std::string fingerprint() const;

  int size() const { return static_cast<int>(id_to_token_.size()); }

  /// Id for a surface token, or kUnk when absent.
  int id_of(std::string_view token) const;

  bool contains(std::string_view token) const;

  /// Surface form; specials render as "<pad>", "<unk>", "<mask>".
  const std::string& token_of(int id) const;

 private:
  Vocab() = default;

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Splits raw text into lowercased surface tokens: Unicode-whitespace
/// separation, then leading/trailing ASCII punctuation detached as
/// standalone tokens. Pure and deterministic.
std::vector<std::string> split_surface_tokens(std::string_view text);

/// Frequency-ranked vocabulary over a JSONL corpus ({"id","text"} per line).
/// Keeps the <= max_size-3 most frequent tokens with frequency >= min_freq;
/// ties broken by lexicographic token order.
Vocab build_vocab(const std::string& corpus_path, int min_freq, int max_size);

/// Text -> ids under `vocab`; out-of-vocabulary tokens map to UNK.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab);

/// Ids -> space-joined surface tokens. Throws on id >= vocab size.
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

struct Document {
  std::string id;
  std::vector<int> tokens;

  int n() const { return static_cast<int>(tokens.size()); }
};

/// Ordered, immutable collection of tokenized documents.
class DocumentStore {
 public:
  DocumentStore() = default;
  DocumentStore(std::vector<Document> docs, std::string source_path, std::string vocab_fingerprint);

  size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& at(size_t i) const { return docs_.at(i); }
  const std::vector<Document>& documents() const { return docs_; }
  const std::string& source_path() const { return source_path_; }
  const std::string& vocab_fingerprint() const { return vocab_fingerprint_; }

 private:
  std::vector<Document> docs_;
  std::string source_path_;
  std::string vocab_fingerprint_;
};

struct IngestResult {
  DocumentStore store;
  size_t dropped = 0;  // documents below the token-count threshold
};

/// Reads a JSONL corpus, tokenizes every document and drops those shorter
/// than `min_doc_tokens`. Malformed lines and duplicate ids abort the run.
IngestResult ingest_documents(const std::string& path, const Vocab& vocab, int min_doc_tokens);

}  // namespace declutr
