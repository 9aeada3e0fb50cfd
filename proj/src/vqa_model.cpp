// SPDX-License-Identifier: Apache-2.0
#include "qebench/vqa_model.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "qebench/digest.hpp"
#include "qebench/errors.hpp"
#include "qebench/ops.hpp"

namespace qebench {

namespace op = ops;

void VqaConfig::validate() const {
  encoder.validate();
  if (vocab == 0) throw ConfigError("vqa: empty vocabulary");
  if (answers == 0) throw ConfigError("vqa: empty answer space");
  if (d_v == 0) throw ConfigError("vqa: image feature width must be positive");
  if (padding_id >= vocab) {
    throw ConfigError("vqa: padding id " + std::to_string(padding_id) +
                      " outside vocabulary of " + std::to_string(vocab));
  }
}

std::string VqaConfig::canonical() const {
  std::ostringstream out;
  out << "answers=" << answers << "\n";
  out << "d_v=" << d_v << "\n";
  out << "padding_id=" << padding_id << "\n";
  out << "vocab=" << vocab << "\n";
  out << encoder.canonical();
  return out.str();
}

std::string VqaConfig::digest() const { return text_digest(canonical()); }

VqaModel::VqaModel(VqaConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(init_seed);
  register_encoder_params(store_, cfg_.encoder, cfg_.vocab, cfg_.padding_id,
                          rng);
  const std::size_t dq = cfg_.encoder.d_q, dv = cfg_.d_v;
  auto glorot = [&rng](std::size_t fin, std::size_t fout) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fin + fout));
    return [&rng, limit] { return rng.uniform(-limit, limit); };
  };
  store_.create("img.pq", {dq, dq}, glorot(dq, dq));
  store_.create("img.pv", {dv, dq}, glorot(dv, dq));
  store_.create("img.wv", {dq}, glorot(dq, 1));
  store_.create("img.proj.w", {dv, dq}, glorot(dv, dq));
  store_.create("img.proj.b", {dq});
  store_.create("clf.w1", {dq, dq}, glorot(dq, dq));
  store_.create("clf.b1", {dq});
  store_.create("clf.w2", {dq, cfg_.answers}, glorot(dq, cfg_.answers));
  store_.create("clf.b2", {cfg_.answers});
}

Tensor attend_image(const Tensor& q, const Tensor& image_feats,
                    const ParameterStore& store, Tensor* weights_out) {
  if (image_feats.ndim() != 2 || image_feats.dim(0) == 0) {
    throw DataError("attend: need a nonempty [m x d_v] feature matrix");
  }
  Tensor q_proj = op::apply_linear(q, store.get("img.pq"));        // [dq]
  Tensor v_proj = op::apply_linear(image_feats, store.get("img.pv"));
  Tensor joint = op::leaky_relu(op::add_rowvec(v_proj, q_proj), kLeakySlope);
  Tensor scores = op::matvec(joint, store.get("img.wv"));          // [m]
  Tensor weights = op::softmax(scores);
  if (weights_out) *weights_out = weights.detached();
  return op::vecmat(weights, image_feats);                         // [d_v]
}

Tensor fuse_predict(const Tensor& q, const Tensor& attended,
                    const ParameterStore& store) {
  Tensor v_q = op::apply_affine(attended, store.get("img.proj.w"),
                                store.get("img.proj.b"));
  Tensor fused = op::mul(q, v_q);
  Tensor hidden = op::leaky_relu(
      op::apply_affine(fused, store.get("clf.w1"), store.get("clf.b1")),
      kLeakySlope);
  return op::apply_affine(hidden, store.get("clf.w2"), store.get("clf.b2"));
}

Tensor VqaModel::logits(const TokenSequence& tokens, const Tensor& image_feats,
                        std::vector<AttentionRecord>* question_attention,
                        Tensor* image_attention) const {
  if (image_feats.ndim() != 2 || image_feats.dim(1) != cfg_.d_v) {
    throw DimensionError("vqa: image features must be [m x " +
                         std::to_string(cfg_.d_v) + "]");
  }
  EncodedQuestion enc = encode(tokens, cfg_.encoder, store_, cfg_.padding_id);
  if (question_attention) *question_attention = std::move(enc.attention);
  Tensor attended = attend_image(enc.vector, image_feats, store_,
                                 image_attention);
  return fuse_predict(enc.vector, attended, store_);
}

std::size_t VqaModel::argmax_lowest(const Tensor& logits) {
  if (logits.ndim() != 1 || logits.size() == 0) {
    throw DimensionError("argmax: need a nonempty vector");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits.at(i) > logits.at(best)) best = i;
  }
  return best;
}

std::size_t VqaModel::predict(const TokenSequence& tokens,
                              const Tensor& image_feats) const {
  return argmax_lowest(logits(tokens, image_feats));
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr const char* kMagic = "QEBCKPT1";

std::string read_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) {
    throw IoError(std::string("checkpoint: truncated before ") + what);
  }
  return line;
}

std::size_t parse_count(const std::string& s, const char* what) {
  try {
    return static_cast<std::size_t>(std::stoull(s));
  } catch (...) {
    throw IoError(std::string("checkpoint: bad ") + what + " field '" + s +
                  "'");
  }
}

}  // namespace

void save_checkpoint(std::ostream& out, const std::string& config_text,
                     const ParameterStore& store) {
  out << kMagic << "\n";
  out << text_digest(config_text) << "\n";
  out << config_text.size() << "\n";
  out.write(config_text.data(),
            static_cast<std::streamsize>(config_text.size()));
  out << "\n" << store.count() << "\n";
  for (const auto& name : store.names()) {
    const Tensor& p = store.get(name);
    out << name << "\n";
    out << p.ndim();
    for (std::size_t i = 0; i < p.ndim(); ++i) out << " " << p.dim(i);
    out << "\n";
    out.write(reinterpret_cast<const char*>(p.data()),
              static_cast<std::streamsize>(p.size() * sizeof(double)));
    out << "\n";
  }
  if (!out) throw IoError("checkpoint: write failed");
}

CheckpointData read_checkpoint(std::istream& in) {
  if (read_line(in, "magic") != kMagic) {
    throw IoError("checkpoint: bad magic");
  }
  const std::string digest = read_line(in, "digest");
  const std::size_t cfg_len = parse_count(read_line(in, "length"), "length");
  std::string config_text(cfg_len, '\0');
  in.read(config_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw IoError("checkpoint: truncated config text");
  if (text_digest(config_text) != digest) {
    throw IoError("checkpoint: config digest mismatch");
  }
  read_line(in, "config terminator");
  const std::size_t count = parse_count(read_line(in, "count"), "count");
  CheckpointData data;
  data.config_text = config_text;
  for (std::size_t pi = 0; pi < count; ++pi) {
    const std::string name = read_line(in, "param name");
    std::istringstream dims(read_line(in, "param shape"));
    std::size_t ndim = 0;
    dims >> ndim;
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) {
      if (!(dims >> d)) throw IoError("checkpoint: bad shape for " + name);
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated values for " + name);
    read_line(in, "value terminator");
    data.params.emplace_back(name, std::move(t));
  }
  return data;
}

void load_into(ParameterStore& store, const CheckpointData& data) {
  if (data.params.size() != store.count()) {
    throw DataError("checkpoint: holds " + std::to_string(data.params.size()) +
                    " params, store expects " + std::to_string(store.count()));
  }
  for (std::size_t i = 0; i < data.params.size(); ++i) {
    const auto& [name, tensor] = data.params[i];
    if (store.names()[i] != name) {
      throw DataError("checkpoint: param order mismatch at '" + name + "'");
    }
    Tensor& dst = store.get(name);
    if (dst.shape() != tensor.shape()) {
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    }
    for (std::size_t j = 0; j < dst.size(); ++j) dst.at(j) = tensor.at(j);
  }
}

}  // namespace qebench
