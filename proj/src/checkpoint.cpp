#include "declutr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "declutr/error.hpp"

namespace declutr {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'L', 'U', 'T', 'R', 'C', 'K'};
constexpr uint32_t kFormatVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>(v >> (8 * i));
  out.write(buf, 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>(v >> (8 * i));
  out.write(buf, 8);
}

uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw DataError("checkpoint: truncated header");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw DataError("checkpoint: truncated header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

// Tensor payloads are row-major float32, little-endian.
void write_tensor_payload(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(out, bits);
    }
  }
}

Eigen::MatrixXd read_tensor_payload(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const uint32_t bits = read_u32(in);
      float f;
      std::memcpy(&f, &bits, 4);
      m(r, c) = static_cast<double>(f);
    }
  }
  return m;
}

}  // namespace

void write_container(const std::string& path, const TensorContainer& container) {
  nlohmann::json manifest = container.meta;
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, tensor] : container.tensors) {
    dir.push_back({{"name", name},
                   {"rows", tensor.rows()},
                   {"cols", tensor.cols()},
                   {"offset", offset}});
    offset += static_cast<uint64_t>(tensor.size()) * 4;
  }
  manifest["tensors"] = std::move(dir);
  const std::string manifest_bytes = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kFormatVersion);
  write_u64(out, manifest_bytes.size());
  out.write(manifest_bytes.data(), static_cast<std::streamsize>(manifest_bytes.size()));
  for (const auto& [name, tensor] : container.tensors) write_tensor_payload(out, tensor);
  if (!out) throw DataError("write failed: " + path);
}

TensorContainer read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw DataError("checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != kFormatVersion)
    throw DataError("checkpoint: format version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kFormatVersion) + ")");
  const uint64_t manifest_len = read_u64(in);
  std::string manifest_bytes(manifest_len, '\0');
  in.read(manifest_bytes.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw DataError("checkpoint: truncated manifest in " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: bad manifest JSON: " + std::string(e.what()));
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw DataError("checkpoint: manifest missing tensor directory");

  TensorContainer out;
  for (const auto& entry : manifest["tensors"]) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    out.tensors.emplace_back(entry.at("name").get<std::string>(), read_tensor_payload(in, rows, cols));
    if (!in) throw DataError("checkpoint: truncated tensor payload in " + path);
  }
  in.peek();
  if (!in.eof()) throw DataError("checkpoint: trailing bytes in " + path);
  manifest.erase("tensors");
  out.meta = std::move(manifest);
  return out;
}

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return {{"d_model", cfg.d_model},     {"layers", cfg.layers},
          {"heads", cfg.heads},         {"d_ff", cfg.d_ff},
          {"max_positions", cfg.max_positions}, {"vocab_size", cfg.vocab_size},
          {"dropout", cfg.dropout}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.d_model = j.value("d_model", cfg.d_model);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.d_ff = j.value("d_ff", cfg.d_ff);
  cfg.max_positions = j.value("max_positions", cfg.max_positions);
  cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
  cfg.dropout = j.value("dropout", cfg.dropout);
  return cfg;
}

void save_checkpoint(const EncoderParams& params, const std::string& vocab_fingerprint,
                     const std::string& path) {
  TensorContainer c;
  c.meta = {{"kind", "encoder"},
            {"config", encoder_config_to_json(params.config)},
            {"step", params.step},
            {"vocab_fingerprint", vocab_fingerprint}};
  for (const Param* p : params.all()) c.tensors.emplace_back(p->name, p->w);
  write_container(path, c);
}

LoadedCheckpoint load_checkpoint(const std::string& path, const std::string& expected_vocab_fingerprint) {
  TensorContainer c = read_container(path);
  if (c.meta.value("kind", "") != "encoder") throw DataError("checkpoint: not an encoder checkpoint: " + path);

  LoadedCheckpoint out;
  out.params = EncoderParams::build(encoder_config_from_json(c.meta.at("config")));
  out.params.step = c.meta.value("step", int64_t{0});
  out.vocab_fingerprint = c.meta.value("vocab_fingerprint", "");
  if (!expected_vocab_fingerprint.empty() && out.vocab_fingerprint != expected_vocab_fingerprint)
    throw DataError("checkpoint: vocab fingerprint mismatch (checkpoint " + out.vocab_fingerprint +
                    ", supplied vocab " + expected_vocab_fingerprint + ")");

  auto live = out.params.all();
  if (live.size() != c.tensors.size()) throw DataError("checkpoint: tensor count mismatch vs manifest config");
  for (size_t i = 0; i < live.size(); ++i) {
    auto& [name, data] = c.tensors[i];
    if (name != live[i]->name) throw DataError("checkpoint: unexpected tensor '" + name + "' (wanted '" + live[i]->name + "')");
    if (data.rows() != live[i]->w.rows() || data.cols() != live[i]->w.cols())
      throw DataError("checkpoint: shape mismatch for tensor '" + name + "'");
    live[i]->w = std::move(data);
  }
  return out;
}

}  // namespace declutr
