// SPDX-License-Identifier: Apache-2.0
//
// On-disk layout of a checkpoint directory:
//   manifest.json  format version, encoder config, ordered vocabulary, label
//                  set, and a tensor directory (name, shape, byte offset)
//   params.bin     every tensor as little-endian float32, row-major, at the
//                  offsets listed in the manifest
// Tensor names are prefixed "encoder/", "momentum/" (momentum objective
// only) and "head/" (fine-tuned checkpoints only).
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tckit/classifier_head.hpp"
#include "tckit/corpus.hpp"
#include "tckit/encoder.hpp"
#include "tckit/error.hpp"
#include "tckit/tokenizer.hpp"

namespace tckit {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "params.bin";

struct Checkpoint {
  Vocab vocab;
  LabelSet labels;
  std::string objective = "mlm";
  EncoderParams encoder;
  std::optional<EncoderParams> momentum_encoder;
  std::optional<ClassifierHead> head;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
          {"dropout_rate", c.dropout_rate}, {"layer_norm_eps", c.layer_norm_eps}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.validate();
  return c;
}

namespace detail {

inline void write_f32(std::ostream& out, const Matrix& m) {
  std::vector<char> buf(static_cast<std::size_t>(m.size()) * 4);
  for (Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i]));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(buf.data() + 4 * i, &bits, 4);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Matrix read_f32(const std::string& blob, std::size_t offset, Index rows, Index cols) {
  const std::size_t bytes = static_cast<std::size_t>(rows * cols) * 4;
  if (offset + bytes > blob.size()) throw Error("checkpoint blob is truncated");
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, blob.data() + offset + 4 * static_cast<std::size_t>(i), 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

// Zero-filled parameters with the shapes init_params would produce.
inline EncoderParams shaped_params(const EncoderConfig& cfg) {
  EncoderParams p = init_params(cfg, 0);
  visit_tensors([](const std::string&, Matrix& m) { m.setZero(); }, p);
  return p;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir / kBlobFile, std::ios::binary | std::ios::trunc);
  if (!blob) throw Error("cannot write checkpoint blob in " + dir.string());
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  const auto put = [&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    detail::write_f32(blob, m);
    offset += static_cast<std::size_t>(m.size()) * 4;
  };
  visit_tensors([&](const std::string& n, const Matrix& m) { put("encoder/" + n, m); }, ck.encoder);
  if (ck.momentum_encoder) {
    visit_tensors([&](const std::string& n, const Matrix& m) { put("momentum/" + n, m); }, *ck.momentum_encoder);
  }
  if (ck.head) {
    put("head/weight", ck.head->weight);
    put("head/bias", ck.head->bias);
  }
  blob.close();
  if (!blob) throw Error("failed writing checkpoint blob in " + dir.string());

  nlohmann::json manifest = {
      {"format_version", kCheckpointFormatVersion},
      {"config", to_json(ck.encoder.config)},
      {"vocab", ck.vocab.tokens()},
      {"labels", ck.labels.labels()},
      {"mask_span", ck.labels.mask_span()},
      {"objective", ck.objective},
      {"blob", kBlobFile},
      {"tensors", tensors},
  };
  std::ofstream out(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2, ' ', false) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / kManifestFile, std::ios::binary);
  if (!mf) throw Error("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format_version", 0) != kCheckpointFormatVersion) {
    throw Error("unsupported checkpoint format version");
  }
  std::ifstream bf(dir / manifest.value("blob", std::string(kBlobFile)), std::ios::binary);
  if (!bf) throw Error("checkpoint blob missing in " + dir.string());
  std::stringstream ss;
  ss << bf.rdbuf();
  const std::string blob = ss.str();

  Checkpoint ck;
  try {
    const EncoderConfig cfg = encoder_config_from_json(manifest.at("config"));
    ck.vocab = Vocab::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    if (ck.vocab.size() != cfg.vocab_size) throw Error("checkpoint vocab size disagrees with config");
    ck.labels = LabelSet(manifest.at("labels").get<std::vector<std::string>>());
    ck.objective = manifest.at("objective").get<std::string>();

    std::map<std::string, Matrix> tensors;
    for (const auto& t : manifest.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<Index>>();
      if (shape.size() != 2) throw Error("checkpoint tensor shape must be 2-D");
      tensors.emplace(t.at("name").get<std::string>(),
                      detail::read_f32(blob, t.at("offset").get<std::size_t>(), shape[0], shape[1]));
    }
    const auto fill = [&](const std::string& prefix) {
      EncoderParams p = detail::shaped_params(cfg);
      visit_tensors(
          [&](const std::string& n, Matrix& m) {
            auto it = tensors.find(prefix + n);
            if (it == tensors.end()) throw Error("checkpoint is missing tensor " + prefix + n);
            if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
              throw Error("checkpoint tensor " + prefix + n + " has the wrong shape");
            }
            m = it->second;
          },
          p);
      return p;
    };
    ck.encoder = fill("encoder/");
    if (tensors.contains("momentum/mlm.bias")) ck.momentum_encoder = fill("momentum/");
    if (tensors.contains("head/weight")) {
      ClassifierHead h{tensors.at("head/weight"), tensors.at("head/bias")};
      if (h.weight.rows() != static_cast<Index>(cfg.d_model) ||
          h.weight.cols() != static_cast<Index>(ck.labels.size()) || h.bias.cols() != h.weight.cols()) {
        throw Error("checkpoint classifier head has the wrong shape");
      }
      ck.head = std::move(h);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

}  // namespace tckit
