#include "declutr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "declutr/error.hpp"
#include "declutr/prng.hpp"
#include <nlohmann/json.hpp>

namespace declutr {

namespace {

const char* kSpecialSurface[Vocab::kNumSpecial] = {"<pad>", "<unk>", "<mask>"};

bool is_unicode_space(uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

// Decodes one UTF-8 codepoint at `i`, advancing `i`. Invalid bytes are
// treated as single opaque characters.
uint32_t next_codepoint(std::string_view s, size_t& i) {
  const unsigned char c0 = static_cast<unsigned char>(s[i]);
  size_t len = 1;
  uint32_t cp = c0;
  if ((c0 & 0x80u) == 0) {
    len = 1;
  } else if ((c0 & 0xE0u) == 0xC0u) {
    len = 2;
    cp = c0 & 0x1Fu;
  } else if ((c0 & 0xF0u) == 0xE0u) {
    len = 3;
    cp = c0 & 0x0Fu;
  } else if ((c0 & 0xF8u) == 0xF0u) {
    len = 4;
    cp = c0 & 0x07u;
  } else {
    ++i;
    return c0;
  }
  if (i + len > s.size()) {
    ++i;
    return c0;
  }
  for (size_t k = 1; k < len; ++k) {
    const unsigned char ck = static_cast<unsigned char>(s[i + k]);
    if ((ck & 0xC0u) != 0x80u) {
      ++i;
      return c0;
    }
    cp = (cp << 6) | (ck & 0x3Fu);
  }
  i += len;
  return cp;
}

bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Splits one whitespace-delimited chunk into leading puncts, core, trailing
// puncts, each emitted as its own token.
void emit_chunk(std::string_view chunk, std::vector<std::string>& out) {
  size_t lo = 0;
  size_t hi = chunk.size();
  std::vector<std::string> leading;
  while (lo < hi && is_ascii_punct(chunk[lo])) {
    leading.emplace_back(1, chunk[lo]);
    ++lo;
  }
  std::vector<std::string> trailing;
  while (hi > lo && is_ascii_punct(chunk[hi - 1])) {
    trailing.emplace_back(1, chunk[hi - 1]);
    --hi;
  }
  for (auto& t : leading) out.push_back(std::move(t));
  if (hi > lo) out.push_back(ascii_lower(chunk.substr(lo, hi - lo)));
  for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) out.push_back(std::move(*it));
}

}  // namespace

std::vector<std::string> split_surface_tokens(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  size_t chunk_begin = 0;
  bool in_chunk = false;
  while (i < text.size()) {
    const size_t at = i;
    const uint32_t cp = next_codepoint(text, i);
    if (is_unicode_space(cp)) {
      if (in_chunk) {
        emit_chunk(text.substr(chunk_begin, at - chunk_begin), out);
        in_chunk = false;
      }
    } else if (!in_chunk) {
      chunk_begin = at;
      in_chunk = true;
    }
  }
  if (in_chunk) emit_chunk(text.substr(chunk_begin), out);
  return out;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  v.id_to_token_.reserve(tokens.size() + kNumSpecial);
  for (const char* s : kSpecialSurface) v.id_to_token_.emplace_back(s);
  for (const auto& tok : tokens) {
    if (tok.empty()) throw DataError("vocab: empty token");
    const int id = static_cast<int>(v.id_to_token_.size());
    if (!v.token_to_id_.emplace(tok, id).second) throw DataError("vocab: duplicate token '" + tok + "'");
    v.id_to_token_.push_back(tok);
  }
  return v;
}

int Vocab::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) throw DataError("vocab: id " + std::to_string(id) + " out of range (V=" + std::to_string(size()) + ")");
  return id_to_token_[static_cast<size_t>(id)];
}

std::string Vocab::to_tsv() const {
  std::string out;
  for (int id = 0; id < size(); ++id) {
    out += id_to_token_[static_cast<size_t>(id)];
    out += '\t';
    out += std::to_string(id);
    out += '\n';
  }
  return out;
}

void Vocab::save_tsv(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write vocab file: " + path);
  f << to_tsv();
}

Vocab Vocab::load_tsv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  int expected_id = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("vocab file: missing tab in line " + std::to_string(expected_id + 1));
    const std::string tok = line.substr(0, tab);
    int id;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw DataError("vocab file: bad id in line " + std::to_string(expected_id + 1));
    }
    if (id != expected_id) throw DataError("vocab file: ids must be consecutive from 0");
    if (expected_id < kNumSpecial) {
      if (tok != kSpecialSurface[expected_id])
        throw DataError("vocab file: row " + std::to_string(expected_id) + " must be the special '" + kSpecialSurface[expected_id] + "'");
    } else {
      tokens.push_back(tok);
    }
    ++expected_id;
  }
  if (expected_id < kNumSpecial) throw DataError("vocab file: fewer than 3 rows");
  return from_tokens(tokens);
}

std::string Vocab::fingerprint() const {
  const uint64_t h = fnv1a64(to_tsv());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

namespace {

// Shared JSONL reader; calls fn(line_number, id, text).
template <typename Fn>
void for_each_jsonl_doc(const std::string& path, Fn&& fn) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read corpus file: " + path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON line: " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_string() || !j["text"].is_string())
      throw DataError(path + ":" + std::to_string(line_no) + ": expected {\"id\": str, \"text\": str}");
    fn(line_no, j["id"].get<std::string>(), j["text"].get<std::string>());
  }
}

}  // namespace

Vocab build_vocab(const std::string& corpus_path, int min_freq, int max_size) {
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  if (max_size < 4) throw std::invalid_argument("build_vocab: max_size must be >= 4");

  std::unordered_map<std::string, uint64_t> freq;
  for_each_jsonl_doc(corpus_path, [&](size_t, const std::string&, const std::string& text) {
    for (auto& tok : split_surface_tokens(text)) ++freq[tok];
  });

  std::vector<std::pair<std::string, uint64_t>> ranked;
  ranked.reserve(freq.size());
  for (auto& kv : freq) {
    if (kv.second >= static_cast<uint64_t>(min_freq)) ranked.emplace_back(kv.first, kv.second);
  }
  if (ranked.empty()) throw DataError("build_vocab: no token reaches min_freq=" + std::to_string(min_freq) + " in " + corpus_path);

  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  const size_t keep = std::min(ranked.size(), static_cast<size_t>(max_size - Vocab::kNumSpecial));
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocab::from_tokens(tokens);
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (auto& tok : split_surface_tokens(text)) ids.push_back(vocab.id_of(tok));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token_of(ids[i]);
  }
  return out;
}

DocumentStore::DocumentStore(std::vector<Document> docs, std::string source_path, std::string vocab_fingerprint)
    : docs_(std::move(docs)), source_path_(std::move(source_path)), vocab_fingerprint_(std::move(vocab_fingerprint)) {}

IngestResult ingest_documents(const std::string& path, const Vocab& vocab, int min_doc_tokens) {
  std::vector<Document> docs;
  std::unordered_set<std::string> seen_ids;
  size_t dropped = 0;
  for_each_jsonl_doc(path, [&](size_t line_no, const std::string& id, const std::string& text) {
    if (!seen_ids.insert(id).second)
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate document id '" + id + "'");
    Document d{id, tokenize(text, vocab)};
    if (d.n() < min_doc_tokens) {
      ++dropped;
      return;
    }
    docs.push_back(std::move(d));
  });
  return IngestResult{DocumentStore(std::move(docs), path, vocab.fingerprint()), dropped};
}

}  // namespace declutr
