#pragma once

// Model bundle: the on-disk interchange format for one model or checkpoint.
//
//   manifest.json      shapes, flags, native dtype, tensor file names
//   activations.f32    N x d final (post-LayerNorm) hidden states
//   unembedding.f32    V x d
//   ln_weight.f32      d        (optional)
//   ln_bias.f32        d        (optional)
//   mlp_down.f32       d x h    (optional)
//   layer_<i>.f32      N x d    (optional, i = 0..L-1)
//   samples.jsonl      {"context_id": ..., "ground_truth_token_id": t}
//   vocab.tsv          id <TAB> string <TAB> corpus_frequency
//
// Tensors are row-major little-endian float32.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "odtk/core.hpp"
#include "odtk/io.hpp"

namespace odtk {

namespace fs = std::filesystem;

struct TensorFiles {
  std::string activations = "activations.f32";
  std::string unembedding = "unembedding.f32";
  std::string ln_weight = "ln_weight.f32";
  std::string ln_bias = "ln_bias.f32";
  std::string mlp_down = "mlp_down.f32";
  std::vector<std::string> layers; // defaults to layer_<i>.f32
  std::string samples = "samples.jsonl";
  std::string vocab = "vocab.tsv";

  friend bool operator==(const TensorFiles &, const TensorFiles &) = default;
};

struct Manifest {
  std::string model_name;
  std::string checkpoint_step;
  std::size_t hidden_dim = 0;
  std::size_t vocab_size = 0;
  std::size_t mlp_dim = 0;
  std::size_t n_samples = 0;
  std::size_t n_layers = 0;
  std::string dtype = "float32";
  bool has_ln_weight = false;
  bool has_ln_bias = false;
  bool has_mlp_down = false;
  bool has_layers = false;
  TensorFiles files;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  friend bool operator==(const Manifest &, const Manifest &) = default;
};

struct SampleTable {
  std::vector<std::size_t> ground_truth;
  std::vector<std::string> context_id;
  // Argmax recorded by the exporting framework, when the exporter provides it.
  std::optional<std::vector<std::size_t>> reference_prediction;

  std::size_t size() const noexcept { return ground_truth.size(); }
  friend bool operator==(const SampleTable &, const SampleTable &) = default;
};

struct VocabTable {
  std::vector<std::string> surface;
  std::vector<double> corpus_frequency;

  std::size_t size() const noexcept { return surface.size(); }
  friend bool operator==(const VocabTable &, const VocabTable &) = default;
};

struct ModelBundle {
  Manifest manifest;
  MatrixF activations;
  MatrixF unembedding;
  std::optional<std::vector<float>> ln_weight;
  std::optional<std::vector<float>> ln_bias;
  std::optional<MatrixF> mlp_down;
  std::vector<MatrixF> layers;
  SampleTable samples;
  VocabTable vocab;

  std::size_t n() const noexcept { return activations.rows(); }
  std::size_t d() const noexcept { return activations.cols(); }
  std::size_t v() const noexcept { return unembedding.rows(); }

  friend bool operator==(const ModelBundle &, const ModelBundle &) = default;
};

// ---------------------------------------------------------------------------
// vocab.tsv escaping

inline std::string escape_tsv(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    switch (c) {
    case '\\': out += "\\\\"; break;
    case '\t': out += "\\t"; break;
    case '\n': out += "\\n"; break;
    case '\r': out += "\\r"; break;
    default:
      if (c < 0x20 || c == 0x7F)
        out += fmt::format("\\x{:02X}", c);
      else
        out += static_cast<char>(c);
    }
  }
  return out;
}

inline std::string unescape_tsv(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    require(i + 1 < s.size(), ErrorKind::InvalidRecord,
            "dangling escape in vocab string");
    const char e = s[++i];
    switch (e) {
    case '\\': out += '\\'; break;
    case 't': out += '\t'; break;
    case 'n': out += '\n'; break;
    case 'r': out += '\r'; break;
    case 'x': {
      require(i + 2 < s.size(), ErrorKind::InvalidRecord, "truncated \\x escape");
      unsigned value = 0;
      const char *first = s.data() + i + 1;
      const auto [ptr, ec] = std::from_chars(first, first + 2, value, 16);
      require(ec == std::errc() && ptr == first + 2, ErrorKind::InvalidRecord,
              "bad \\x escape");
      out += static_cast<char>(value);
      i += 2;
      break;
    }
    default:
      throw Error(ErrorKind::InvalidRecord,
                  std::string("unknown escape \\") + e + " in vocab string");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// validation

namespace detail {

inline void check_finite(std::span<const float> values, std::string_view name,
                         std::vector<std::string> &diag) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      diag.push_back(fmt::format("{}: non-finite value at flat index {}", name, i));
      return;
    }
  }
}

inline void check_shape(const MatrixF &m, std::size_t rows, std::size_t cols,
                        std::string_view name, std::vector<std::string> &diag) {
  if (m.rows() != rows || m.cols() != cols)
    diag.push_back(fmt::format("{}: shape {}x{} does not match manifest {}x{}",
                               name, m.rows(), m.cols(), rows, cols));
}

inline void check_optional(bool flag, bool present, std::string_view name,
                           std::vector<std::string> &diag) {
  if (flag && !present)
    diag.push_back(fmt::format("{}: manifest flag set but tensor missing", name));
  if (!flag && present)
    diag.push_back(fmt::format("{}: tensor present but manifest flag unset", name));
}

} // namespace detail

/// Checks every bundle invariant; returns human-readable diagnostics (empty
/// iff the bundle is valid).
inline std::vector<std::string> validate_bundle(const ModelBundle &b) {
  std::vector<std::string> diag;
  const Manifest &m = b.manifest;
  const std::size_t n = m.n_samples, d = m.hidden_dim, v = m.vocab_size;

  if (n == 0) diag.emplace_back("manifest: n_samples must be >= 1");
  if (d == 0) diag.emplace_back("manifest: hidden_dim must be >= 1");
  if (v == 0) diag.emplace_back("manifest: vocab_size must be >= 1");

  detail::check_shape(b.activations, n, d, "activations", diag);
  detail::check_shape(b.unembedding, v, d, "unembedding", diag);
  detail::check_finite(b.activations.values(), "activations", diag);
  detail::check_finite(b.unembedding.values(), "unembedding", diag);

  detail::check_optional(m.has_ln_weight, b.ln_weight.has_value(), "ln_weight", diag);
  detail::check_optional(m.has_ln_bias, b.ln_bias.has_value(), "ln_bias", diag);
  detail::check_optional(m.has_mlp_down, b.mlp_down.has_value(), "mlp_down", diag);
  detail::check_optional(m.has_layers, !b.layers.empty(), "layers", diag);

  if (b.ln_weight) {
    if (b.ln_weight->size() != d)
      diag.push_back(fmt::format("ln_weight: length {} does not match hidden_dim {}",
                                 b.ln_weight->size(), d));
    detail::check_finite(*b.ln_weight, "ln_weight", diag);
  }
  if (b.ln_bias) {
    if (b.ln_bias->size() != d)
      diag.push_back(fmt::format("ln_bias: length {} does not match hidden_dim {}",
                                 b.ln_bias->size(), d));
    detail::check_finite(*b.ln_bias, "ln_bias", diag);
  }
  if (b.mlp_down) {
    detail::check_shape(*b.mlp_down, d, m.mlp_dim, "mlp_down", diag);
    detail::check_finite(b.mlp_down->values(), "mlp_down", diag);
  }
  if (!b.layers.empty() && b.layers.size() != m.n_layers)
    diag.push_back(fmt::format("layers: {} present, manifest declares {}",
                               b.layers.size(), m.n_layers));
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    const auto name = fmt::format("layer_{}", i);
    detail::check_shape(b.layers[i], n, d, name, diag);
    detail::check_finite(b.layers[i].values(), name, diag);
  }

  if (b.samples.ground_truth.size() != n || b.samples.context_id.size() != n)
    diag.push_back(fmt::format("samples: {} records, manifest declares {}",
                               b.samples.ground_truth.size(), n));
  for (std::size_t i = 0; i < b.samples.ground_truth.size(); ++i) {
    if (b.samples.ground_truth[i] >= v)
      diag.push_back(fmt::format("sample {}: token id out of range ({} >= {})", i,
                                 b.samples.ground_truth[i], v));
  }
  if (b.samples.reference_prediction) {
    const auto &ref = *b.samples.reference_prediction;
    if (ref.size() != b.samples.ground_truth.size())
      diag.emplace_back("samples: reference_prediction present on only some records");
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (ref[i] >= v)
        diag.push_back(fmt::format("sample {}: reference prediction out of range", i));
  }

  if (b.vocab.surface.size() != v || b.vocab.corpus_frequency.size() != v)
    diag.push_back(fmt::format("vocab: {} entries, manifest declares {}",
                               b.vocab.surface.size(), v));
  for (std::size_t t = 0; t < b.vocab.corpus_frequency.size(); ++t) {
    const double f = b.vocab.corpus_frequency[t];
    if (!(f >= 0.0) || !std::isfinite(f))
      diag.push_back(fmt::format("vocab {}: corpus frequency must be finite and >= 0", t));
  }
  return diag;
}

// ---------------------------------------------------------------------------
// manifest (de)serialization

inline nlohmann::ordered_json manifest_to_json(const Manifest &m) {
  nlohmann::ordered_json j;
  j["format"] = "odtk-bundle";
  j["format_version"] = 1;
  j["model_name"] = m.model_name;
  j["checkpoint_step"] = m.checkpoint_step;
  j["hidden_dim"] = m.hidden_dim;
  j["vocab_size"] = m.vocab_size;
  j["mlp_dim"] = m.mlp_dim;
  j["n_samples"] = m.n_samples;
  j["n_layers"] = m.n_layers;
  j["dtype"] = m.dtype;
  j["has_ln_weight"] = m.has_ln_weight;
  j["has_ln_bias"] = m.has_ln_bias;
  j["has_mlp_down"] = m.has_mlp_down;
  j["has_layers"] = m.has_layers;
  auto &f = j["files"];
  f["activations"] = m.files.activations;
  f["unembedding"] = m.files.unembedding;
  if (m.has_ln_weight) f["ln_weight"] = m.files.ln_weight;
  if (m.has_ln_bias) f["ln_bias"] = m.files.ln_bias;
  if (m.has_mlp_down) f["mlp_down"] = m.files.mlp_down;
  if (m.has_layers) f["layers"] = m.files.layers;
  f["samples"] = m.files.samples;
  f["vocab"] = m.files.vocab;
  j["metadata"] = m.metadata;
  return j;
}

namespace detail {

template <class T>
T manifest_field(const nlohmann::json &j, const char *key) {
  if (!j.contains(key))
    throw Error(ErrorKind::BadManifest, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw Error(ErrorKind::BadManifest, std::string("field '") + key + "' has wrong type");
  }
}

template <class T>
T manifest_field_or(const nlohmann::json &j, const char *key, T fallback) {
  return j.contains(key) ? manifest_field<T>(j, key) : fallback;
}

inline std::string step_label(const nlohmann::json &j) {
  if (!j.contains("checkpoint_step") || j["checkpoint_step"].is_null())
    return "";
  const auto &s = j["checkpoint_step"];
  if (s.is_string()) return s.get<std::string>();
  if (s.is_number_integer()) return std::to_string(s.get<long long>());
  throw Error(ErrorKind::BadManifest, "field 'checkpoint_step' has wrong type");
}

} // namespace detail

inline Manifest manifest_from_json(const nlohmann::json &j) {
  if (!j.is_object())
    throw Error(ErrorKind::BadManifest, "manifest is not a JSON object");
  Manifest m;
  m.model_name = detail::manifest_field_or<std::string>(j, "model_name", "");
  m.checkpoint_step = detail::step_label(j);
  m.hidden_dim = detail::manifest_field<std::size_t>(j, "hidden_dim");
  m.vocab_size = detail::manifest_field<std::size_t>(j, "vocab_size");
  m.n_samples = detail::manifest_field<std::size_t>(j, "n_samples");
  m.mlp_dim = detail::manifest_field_or<std::size_t>(j, "mlp_dim", 0);
  m.n_layers = detail::manifest_field_or<std::size_t>(j, "n_layers", 0);
  m.dtype = detail::manifest_field_or<std::string>(j, "dtype", "float32");
  m.has_ln_weight = detail::manifest_field_or<bool>(j, "has_ln_weight", false);
  m.has_ln_bias = detail::manifest_field_or<bool>(j, "has_ln_bias", false);
  m.has_mlp_down = detail::manifest_field_or<bool>(j, "has_mlp_down", false);
  m.has_layers = detail::manifest_field_or<bool>(j, "has_layers", false);
  if (m.has_mlp_down && m.mlp_dim == 0)
    throw Error(ErrorKind::BadManifest, "field 'mlp_dim' required when has_mlp_down");
  if (m.has_layers && m.n_layers == 0)
    throw Error(ErrorKind::BadManifest, "field 'n_layers' required when has_layers");

  if (j.contains("files")) {
    const auto &f = j["files"];
    if (!f.is_object())
      throw Error(ErrorKind::BadManifest, "field 'files' must be an object");
    auto &t = m.files;
    t.activations = detail::manifest_field_or<std::string>(f, "activations", t.activations);
    t.unembedding = detail::manifest_field_or<std::string>(f, "unembedding", t.unembedding);
    t.ln_weight = detail::manifest_field_or<std::string>(f, "ln_weight", t.ln_weight);
    t.ln_bias = detail::manifest_field_or<std::string>(f, "ln_bias", t.ln_bias);
    t.mlp_down = detail::manifest_field_or<std::string>(f, "mlp_down", t.mlp_down);
    t.layers = detail::manifest_field_or<std::vector<std::string>>(f, "layers", {});
    t.samples = detail::manifest_field_or<std::string>(f, "samples", t.samples);
    t.vocab = detail::manifest_field_or<std::string>(f, "vocab", t.vocab);
  }
  if (m.has_layers && m.files.layers.empty())
    for (std::size_t i = 0; i < m.n_layers; ++i)
      m.files.layers.push_back(fmt::format("layer_{}.f32", i));
  if (m.has_layers && m.files.layers.size() != m.n_layers)
    throw Error(ErrorKind::BadManifest, "field 'files.layers' length differs from n_layers");
  if (j.contains("metadata"))
    m.metadata = nlohmann::ordered_json(j["metadata"]);
  return m;
}

// ---------------------------------------------------------------------------
// loading

namespace detail {

inline std::vector<float> read_tensor(const fs::path &dir, const std::string &file,
                                      std::size_t rows, std::size_t cols) {
  const fs::path path = dir / file;
  if (!fs::exists(path))
    throw Error(ErrorKind::MissingFile, path.string());
  const std::string bytes = io::read_text(path);
  const std::size_t expected = rows * cols * 4;
  if (bytes.size() != expected) {
    const std::size_t row_bytes = cols * 4;
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("{} holds {} bytes ({} rows of {}), manifest declares {}x{}",
                            file, bytes.size(),
                            row_bytes ? static_cast<double>(bytes.size()) / row_bytes : 0.0,
                            cols, rows, cols));
  }
  auto values = io::decode_f32(bytes);
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw Error(ErrorKind::NonFiniteValue,
                  fmt::format("{} entry ({}, {})", file, cols ? i / cols : 0,
                              cols ? i % cols : 0));
  return values;
}

inline SampleTable read_samples(const fs::path &dir, const std::string &file,
                                std::size_t expected) {
  const fs::path path = dir / file;
  if (!fs::exists(path))
    throw Error(ErrorKind::MissingFile, path.string());
  std::istringstream in(io::read_text(path));
  SampleTable s;
  std::vector<std::size_t> ref;
  std::size_t with_ref = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
      throw Error(ErrorKind::InvalidRecord,
                  fmt::format("{} line {}: {}", file, lineno, e.what()));
    }
    const auto gt = rec.find("ground_truth_token_id");
    if (gt == rec.end() || !gt->is_number_integer() || gt->get<long long>() < 0)
      throw Error(ErrorKind::InvalidRecord,
                  fmt::format("{} line {}: ground_truth_token_id must be a nonnegative integer",
                              file, lineno));
    s.ground_truth.push_back(gt->get<std::size_t>());
    const auto ctx = rec.find("context_id");
    if (ctx == rec.end() || ctx->is_null())
      s.context_id.push_back(std::to_string(s.ground_truth.size() - 1));
    else if (ctx->is_string())
      s.context_id.push_back(ctx->get<std::string>());
    else
      s.context_id.push_back(ctx->dump());
    const auto rp = rec.find("reference_prediction");
    if (rp != rec.end() && rp->is_number_integer() && rp->get<long long>() >= 0) {
      ref.push_back(rp->get<std::size_t>());
      ++with_ref;
    } else {
      ref.push_back(0);
    }
  }
  if (s.ground_truth.size() != expected)
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("{} holds {} records, manifest declares {}", file,
                            s.ground_truth.size(), expected));
  if (with_ref == expected && expected > 0)
    s.reference_prediction = std::move(ref);
  else if (with_ref != 0)
    throw Error(ErrorKind::InvalidRecord,
                fmt::format("{}: reference_prediction present on {} of {} records", file,
                            with_ref, expected));
  return s;
}

inline VocabTable read_vocab(const fs::path &dir, const std::string &file,
                             std::size_t expected) {
  const fs::path path = dir / file;
  if (!fs::exists(path))
    throw Error(ErrorKind::MissingFile, path.string());
  std::istringstream in(io::read_text(path));
  VocabTable v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("id\t", 0) == 0) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw Error(ErrorKind::InvalidRecord,
                  fmt::format("{} line {}: expected 3 tab-separated fields", file, lineno));
    std::size_t id = 0;
    double freq = 0.0;
    try {
      std::size_t used = 0;
      id = std::stoull(line.substr(0, t1), &used);
      if (used != t1) throw std::invalid_argument("id");
      const std::string fstr = line.substr(t2 + 1);
      freq = std::stod(fstr, &used);
      if (used != fstr.size()) throw std::invalid_argument("freq");
    } catch (const std::exception &) {
      throw Error(ErrorKind::InvalidRecord,
                  fmt::format("{} line {}: malformed id or frequency", file, lineno));
    }
    if (id != v.surface.size())
      throw Error(ErrorKind::InvalidRecord,
                  fmt::format("{} line {}: id {} out of order (expected {})", file,
                              lineno, id, v.surface.size()));
    v.surface.push_back(unescape_tsv(std::string_view(line).substr(t1 + 1, t2 - t1 - 1)));
    v.corpus_frequency.push_back(freq);
  }
  if (v.surface.size() != expected)
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("{} holds {} tokens, manifest declares {}", file,
                            v.surface.size(), expected));
  return v;
}

} // namespace detail

/// Loads and eagerly validates a bundle directory.
inline ModelBundle load_bundle(const fs::path &dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath))
    throw Error(ErrorKind::MissingFile, mpath.string());
  nlohmann::json mj;
  try {
    mj = nlohmann::json::parse(io::read_text(mpath));
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorKind::BadManifest, std::string("manifest.json: ") + e.what());
  }
  ModelBundle b;
  b.manifest = manifest_from_json(mj);
  const Manifest &m = b.manifest;
  const std::size_t n = m.n_samples, d = m.hidden_dim, v = m.vocab_size;

  b.activations = MatrixF(n, d, detail::read_tensor(dir, m.files.activations, n, d));
  b.unembedding = MatrixF(v, d, detail::read_tensor(dir, m.files.unembedding, v, d));
  if (m.has_ln_weight) b.ln_weight = detail::read_tensor(dir, m.files.ln_weight, 1, d);
  if (m.has_ln_bias) b.ln_bias = detail::read_tensor(dir, m.files.ln_bias, 1, d);
  if (m.has_mlp_down)
    b.mlp_down = MatrixF(d, m.mlp_dim, detail::read_tensor(dir, m.files.mlp_down, d, m.mlp_dim));
  if (m.has_layers)
    for (const auto &f : m.files.layers)
      b.layers.emplace_back(n, d, detail::read_tensor(dir, f, n, d));
  b.samples = detail::read_samples(dir, m.files.samples, n);
  b.vocab = detail::read_vocab(dir, m.files.vocab, v);

  const auto diag = validate_bundle(b);
  if (!diag.empty())
    throw Error(ErrorKind::InvalidRecord, diag.front());
  return b;
}

/// Writes a bundle directory; each file is replaced atomically.
inline void save_bundle(const ModelBundle &b, const fs::path &dir) {
  fs::create_directories(dir);
  Manifest m = b.manifest;
  if (m.has_layers && m.files.layers.empty())
    for (std::size_t i = 0; i < m.n_layers; ++i)
      m.files.layers.push_back(fmt::format("layer_{}.f32", i));

  io::write_atomic(dir / m.files.activations, io::encode_f32(b.activations.values()));
  io::write_atomic(dir / m.files.unembedding, io::encode_f32(b.unembedding.values()));
  if (b.ln_weight) io::write_atomic(dir / m.files.ln_weight, io::encode_f32(*b.ln_weight));
  if (b.ln_bias) io::write_atomic(dir / m.files.ln_bias, io::encode_f32(*b.ln_bias));
  if (b.mlp_down) io::write_atomic(dir / m.files.mlp_down, io::encode_f32(b.mlp_down->values()));
  for (std::size_t i = 0; i < b.layers.size() && i < m.files.layers.size(); ++i)
    io::write_atomic(dir / m.files.layers[i], io::encode_f32(b.layers[i].values()));

  std::string samples;
  for (std::size_t i = 0; i < b.samples.size(); ++i) {
    nlohmann::ordered_json rec;
    rec["context_id"] = b.samples.context_id[i];
    rec["ground_truth_token_id"] = b.samples.ground_truth[i];
    if (b.samples.reference_prediction)
      rec["reference_prediction"] = (*b.samples.reference_prediction)[i];
    samples += rec.dump();
    samples += '\n';
  }
  io::write_atomic(dir / m.files.samples, samples);

  std::string vocab = "id\tstring\tcorpus_frequency\n";
  for (std::size_t t = 0; t < b.vocab.size(); ++t)
    vocab += fmt::format("{}\t{}\t{}\n", t, escape_tsv(b.vocab.surface[t]),
                         b.vocab.corpus_frequency[t]);
  io::write_atomic(dir / m.files.vocab, vocab);

  io::write_atomic(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

} // namespace odtk
