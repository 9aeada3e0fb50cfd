// SPDX-License-Identifier: Apache-2.0
#include "qebench/world.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string_view>

#include "qebench/errors.hpp"
#include "qebench/rng.hpp"

namespace qebench {

namespace {

const char* const kTypeNames[kTypeCount] = {"what-color", "what-shape",
                                            "what-size", "is-before"};

// First index whose CDF bucket contains u; numeric slack at the top of the
// CDF falls back to the last positive-mass entry so a degenerate (rho = 1)
// distribution never leaks an impossible answer.
std::size_t draw_categorical(Rng& rng, const std::vector<double>& dist) {
  double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_positive = dist.size();
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] > 0.0) last_positive = i;
    cum += dist[i];
    if (u < cum) return i;
  }
  if (last_positive == dist.size()) {
    throw DataError("categorical draw over a zero-mass distribution");
  }
  return last_positive;
}

void check_distribution(const std::vector<double>& dist, std::size_t want,
                        std::size_t majority, const char* label,
                        std::size_t type) {
  auto fail = [&](const std::string& why) {
    throw ConfigError(std::string(label) + " distribution for type " +
                      std::to_string(type) + " " + why);
  };
  if (dist.size() != want) fail("has the wrong arity");
  double sum = 0.0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < 0.0) fail("has a negative or non-finite entry");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-9) fail("does not sum to 1");
  if (majority >= dist.size()) fail("designates an out-of-range majority");
  for (double p : dist) {
    if (p > dist[majority] + 1e-12) fail("gives the majority sub-maximal mass");
  }
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::id_test: return "id-test";
    case Split::ood_test: return "ood-test";
  }
  throw DomainError("unknown split");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "id-test") return Split::id_test;
  if (s == "ood-test") return Split::ood_test;
  throw ConfigError("unknown split '" + s + "'");
}

void WorldSpec::validate() const {
  if (object_count < 2) throw ConfigError("need at least two objects");
  if (shapes.size() != object_count) {
    throw ConfigError("shape values must match the object count (shapes tile "
                      "each image as a permutation)");
  }
  if (colors.size() != object_count) {
    throw ConfigError("color values must match the object count");
  }
  if (sizes.size() < 2) throw ConfigError("need at least two size values");
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
    throw ConfigError("noise sigma must be finite and non-negative");
  }
  if (!std::isfinite(order_skew) || order_skew < 0.0 || order_skew > 1.0) {
    throw ConfigError("order skew must lie in [0, 1]");
  }
  if (type_mix.size() != kTypeCount) {
    throw ConfigError("type mix must have one entry per question type");
  }
  double sum = 0.0;
  for (double p : type_mix) {
    if (!std::isfinite(p) || p < 0.0) {
      throw ConfigError("type mix entries must be finite and non-negative");
    }
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("type mix must sum to 1");
}

std::string WorldSpec::token_name(std::size_t id) const {
  if (id == pad_token()) return "<pad>";
  if (id >= 1 && id <= kTypeCount) return kTypeNames[id - 1];
  if (id >= color_token(0) && id < color_token(0) + colors.size()) {
    return colors[id - color_token(0)];
  }
  if (id >= shape_token(0) && id < shape_token(0) + shapes.size()) {
    return shapes[id - shape_token(0)];
  }
  if (id == filler_token()) return "thing";
  throw LookupError("token id " + std::to_string(id) + " out of range");
}

std::size_t WorldSpec::type_answer_base(QType t) const {
  switch (t) {
    case QType::what_color: return 0;
    case QType::what_shape: return colors.size();
    case QType::what_size: return colors.size() + shapes.size();
    case QType::is_before: return colors.size() + shapes.size() + sizes.size();
  }
  throw DomainError("unknown question type");
}

std::size_t WorldSpec::type_answer_count(QType t) const {
  switch (t) {
    case QType::what_color: return colors.size();
    case QType::what_shape: return shapes.size();
    case QType::what_size: return sizes.size();
    case QType::is_before: return 2;
  }
  throw DomainError("unknown question type");
}

std::string WorldSpec::answer_name(std::size_t id) const {
  if (id < colors.size()) return colors[id];
  id -= colors.size();
  if (id < shapes.size()) return shapes[id];
  id -= shapes.size();
  if (id < sizes.size()) return sizes[id];
  id -= sizes.size();
  if (id == 0) return "yes";
  if (id == 1) return "no";
  throw LookupError("answer id out of range");
}

PriorSpec PriorSpec::shifted(const WorldSpec& world, double rho) {
  world.validate();
  PriorSpec p;
  p.rho = rho;
  p.train_dist.resize(kTypeCount);
  p.ood_dist.resize(kTypeCount);
  p.train_majority.assign(kTypeCount, 0);
  p.ood_majority.assign(kTypeCount, 1);
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    const std::size_t k = world.type_answer_count(static_cast<QType>(t));
    if (!std::isfinite(rho) || rho < 1.0 / static_cast<double>(k) - 1e-12 ||
        rho > 1.0) {
      throw ConfigError("rho must lie in [1/" + std::to_string(k) +
                        ", 1] for type " + std::to_string(t));
    }
    const double rest = (1.0 - rho) / static_cast<double>(k - 1);
    std::vector<double> train(k, rest), ood(k, rest);
    train[0] = rho;  // train majority: first answer of the type's list
    ood[1] = rho;    // ood majority: cyclic shift by one
    p.train_dist[t] = std::move(train);
    p.ood_dist[t] = std::move(ood);
  }
  p.validate(world);
  return p;
}

void PriorSpec::validate(const WorldSpec& world) const {
  world.validate();
  if (train_dist.size() != kTypeCount || ood_dist.size() != kTypeCount ||
      train_majority.size() != kTypeCount || ood_majority.size() != kTypeCount) {
    throw ConfigError("prior spec must cover every question type");
  }
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    const std::size_t k = world.type_answer_count(static_cast<QType>(t));
    check_distribution(train_dist[t], k, train_majority[t], "train", t);
    check_distribution(ood_dist[t], k, ood_majority[t], "ood", t);
    if (train_majority[t] == ood_majority[t]) {
      throw ConfigError("train and ood majorities coincide for type " +
                        std::to_string(t));
    }
  }
}

const std::vector<double>& PriorSpec::dist_for(Split s, std::size_t type) const {
  if (type >= kTypeCount) throw DomainError("question type out of range");
  return s == Split::ood_test ? ood_dist[type] : train_dist[type];
}

std::size_t PriorSpec::majority_for(Split s, std::size_t type) const {
  if (type >= kTypeCount) throw DomainError("question type out of range");
  return s == Split::ood_test ? ood_majority[type] : train_majority[type];
}

const std::vector<SyntheticSample>& Dataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::id_test: return id_test;
    case Split::ood_test: return ood_test;
  }
  throw DomainError("unknown split");
}

namespace {

// The draw order below is part of the on-disk contract: type, answer, shape
// permutation, color permutation, sizes, referent choice, rendering order,
// noise seed. Reordering any draw changes every downstream byte.
SyntheticSample make_sample(const WorldSpec& w, const PriorSpec& p, Split split,
                            Rng& rng) {
  SyntheticSample s;
  s.split = split;
  s.type = draw_categorical(rng, w.type_mix);
  const QType t = static_cast<QType>(s.type);
  const std::size_t local = draw_categorical(rng, p.dist_for(split, s.type));
  s.answer = w.type_answer_base(t) + local;

  const std::size_t m = w.object_count;
  std::vector<std::size_t> shape_of(m), color_of(m), size_of(m);
  std::iota(shape_of.begin(), shape_of.end(), 0);
  std::iota(color_of.begin(), color_of.end(), 0);
  rng.shuffle(shape_of);
  rng.shuffle(color_of);
  for (auto& z : size_of) z = rng.index(w.sizes.size());

  auto position_of = [](const std::vector<std::size_t>& v, std::size_t value) {
    return static_cast<std::size_t>(
        std::find(v.begin(), v.end(), value) - v.begin());
  };

  std::size_t ref_word = 0;
  if (t == QType::is_before) {
    std::size_t sa = rng.index(m);
    std::size_t sb = rng.index(m - 1);
    if (sb >= sa) ++sb;  // uniform distinct pair of shape values
    const std::size_t i = position_of(shape_of, sa);
    const std::size_t j = position_of(shape_of, sb);
    const bool want_yes = local == 0;
    if ((i < j) != want_yes) {
      std::swap(shape_of[i], shape_of[j]);
      std::swap(color_of[i], color_of[j]);
      std::swap(size_of[i], size_of[j]);
    }
    s.tokens = {w.type_token(t), w.shape_token(sa), w.shape_token(sb)};
  } else {
    const std::size_t r = rng.index(m);
    switch (t) {
      case QType::what_color:
        std::swap(color_of[r], color_of[position_of(color_of, local)]);
        ref_word = w.shape_token(shape_of[r]);
        break;
      case QType::what_shape:
        std::swap(shape_of[r], shape_of[position_of(shape_of, local)]);
        ref_word = w.color_token(color_of[r]);
        break;
      case QType::what_size:
        size_of[r] = local;
        ref_word = w.shape_token(shape_of[r]);
        break;
      case QType::is_before: break;
    }
    // The word-order cue: straight rendering tracks the split's own majority
    // answer, so the association it carries changes between train and ood.
    const std::size_t maj = p.majority_for(split, s.type);
    const double p_straight = local == maj ? w.order_skew : 1.0 - w.order_skew;
    const bool straight = rng.uniform() < p_straight;
    s.tokens.assign(kAttrQuestionLen, w.filler_token());
    s.tokens[0] = w.type_token(t);
    s.tokens[straight ? kStraightSlot : kSwappedSlot] = ref_word;
  }
  s.noise_seed = rng.next_u64();

  s.objects.resize(m);
  for (std::size_t o = 0; o < m; ++o) {
    s.objects[o] = ObjectSpec{color_of[o], shape_of[o], size_of[o]};
  }
  return s;
}

}  // namespace

Dataset generate_dataset(const WorldSpec& world, const PriorSpec& priors,
                         const GenCounts& counts, std::uint64_t seed) {
  world.validate();
  priors.validate(world);
  if (counts.train < 1 || counts.id_test < 1 || counts.ood_test < 1) {
    throw DomainError("every split count must be at least 1");
  }
  Dataset data;
  const Split splits[kSplitCount] = {Split::train, Split::id_test,
                                     Split::ood_test};
  const std::size_t sizes[kSplitCount] = {counts.train, counts.id_test,
                                          counts.ood_test};
  std::vector<SyntheticSample>* out[kSplitCount] = {&data.train, &data.id_test,
                                                    &data.ood_test};
  for (std::size_t sp = 0; sp < kSplitCount; ++sp) {
    const std::uint64_t split_seed = mix_seed(seed, sp);
    out[sp]->reserve(sizes[sp]);
    for (std::size_t i = 0; i < sizes[sp]; ++i) {
      // Stream keyed by (seed, split, index): generation order never matters.
      Rng rng(mix_seed(split_seed, i));
      out[sp]->push_back(make_sample(world, priors, splits[sp], rng));
    }
  }
  return data;
}

Tensor image_features(const WorldSpec& world, const SyntheticSample& sample) {
  const std::size_t m = world.object_count;
  const std::size_t dv = world.feature_dim();
  if (sample.objects.size() != m) {
    throw DataError("sample carries the wrong object count");
  }
  std::vector<double> values(m * dv, 0.0);
  Rng noise(sample.noise_seed);
  for (std::size_t o = 0; o < m; ++o) {
    const ObjectSpec& obj = sample.objects[o];
    if (obj.color >= world.colors.size() || obj.shape >= world.shapes.size() ||
        obj.size >= world.sizes.size()) {
      throw DataError("object attribute out of range");
    }
    double* row = values.data() + o * dv;
    row[obj.color] = 1.0;
    row[world.colors.size() + obj.shape] = 1.0;
    row[world.colors.size() + world.shapes.size() + obj.size] = 1.0;
    for (std::size_t d = 0; d < dv; ++d) {
      row[d] += world.noise_sigma * noise.normal();
    }
  }
  return Tensor({m, dv}, std::move(values));
}

TokenSequence qtype_probe(const WorldSpec& world, const SyntheticSample& sample) {
  (void)world;
  if (sample.tokens.empty()) throw DataError("sample has no tokens");
  const std::size_t head = sample.tokens[0];
  if (head < 1 || head > kTypeCount) {
    throw DataError("question does not start with a type word");
  }
  return TokenSequence{{head}};
}

std::size_t solve_by_rules(const WorldSpec& world, const SyntheticSample& sample) {
  if (sample.objects.size() != world.object_count) {
    throw DataError("sample carries the wrong object count");
  }
  const std::size_t head = sample.tokens.empty() ? 0 : sample.tokens[0];
  if (head < 1 || head > kTypeCount) {
    throw DataError("question does not start with a type word");
  }
  const QType t = static_cast<QType>(head - 1);
  const std::size_t want = t == QType::is_before ? kRelQuestionLen
                                                 : kAttrQuestionLen;
  if (sample.tokens.size() != want) {
    throw DataError("question has the wrong token count for its type");
  }
  const std::size_t shape_base = world.shape_token(0);
  const std::size_t color_base = world.color_token(0);
  auto is_shape_word = [&](std::size_t tok) {
    return tok >= shape_base && tok < shape_base + world.shapes.size();
  };
  auto is_color_word = [&](std::size_t tok) {
    return tok >= color_base && tok < color_base + world.colors.size();
  };
  auto object_with_shape = [&](std::size_t shape) {
    for (std::size_t o = 0; o < sample.objects.size(); ++o) {
      if (sample.objects[o].shape == shape) return o;
    }
    throw DataError("referenced shape absent from the image");
  };

  if (t == QType::is_before) {
    const std::size_t a = sample.tokens[1], b = sample.tokens[2];
    if (!is_shape_word(a) || !is_shape_word(b) || a == b) {
      throw DataError("relational question needs two distinct shape words");
    }
    const std::size_t i = object_with_shape(a - shape_base);
    const std::size_t j = object_with_shape(b - shape_base);
    return world.type_answer_base(t) + (i < j ? 0 : 1);
  }

  const std::size_t filler = world.filler_token();
  std::size_t ref = 0;
  std::size_t ref_count = 0;
  for (std::size_t i = 1; i < sample.tokens.size(); ++i) {
    if (sample.tokens[i] == filler) continue;
    if (i != kStraightSlot && i != kSwappedSlot) {
      throw DataError("referent sits outside the two designated slots");
    }
    ref = sample.tokens[i];
    ++ref_count;
  }
  if (ref_count != 1) {
    throw DataError("attribute question needs exactly one referent word");
  }
  switch (t) {
    case QType::what_color: {
      if (!is_shape_word(ref)) throw DataError("referent must be a shape word");
      const std::size_t o = object_with_shape(ref - shape_base);
      return world.type_answer_base(t) + sample.objects[o].color;
    }
    case QType::what_shape: {
      if (!is_color_word(ref)) throw DataError("referent must be a color word");
      for (std::size_t o = 0; o < sample.objects.size(); ++o) {
        if (sample.objects[o].color == ref - color_base) {
          return world.type_answer_base(t) + sample.objects[o].shape;
        }
      }
      throw DataError("referenced color absent from the image");
    }
    case QType::what_size: {
      if (!is_shape_word(ref)) throw DataError("referent must be a shape word");
      const std::size_t o = object_with_shape(ref - shape_base);
      return world.type_answer_base(t) + sample.objects[o].size;
    }
    case QType::is_before: break;
  }
  throw DataError("unreachable question type");
}

namespace {

void append_u64(std::string& out, std::uint64_t v) {
  char buf[24];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, end);
}

void append_sample(std::string& out, const SyntheticSample& s) {
  out += to_string(s.split);
  out += '\t';
  append_u64(out, s.type);
  out += '\t';
  append_u64(out, s.answer);
  out += '\t';
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (i) out += ',';
    append_u64(out, s.tokens[i]);
  }
  out += '\t';
  for (std::size_t o = 0; o < s.objects.size(); ++o) {
    if (o) out += ';';
    append_u64(out, s.objects[o].color);
    out += ',';
    append_u64(out, s.objects[o].shape);
    out += ',';
    append_u64(out, s.objects[o].size);
  }
  out += '\t';
  append_u64(out, s.noise_seed);
  out += '\n';
}

std::uint64_t parse_u64(std::string_view field, std::size_t line_no) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError("line " + std::to_string(line_no) +
                    ": malformed integer field");
  }
  return v;
}

std::vector<std::string_view> split_on(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

std::string write_dataset(const Dataset& data) {
  std::string out;
  std::size_t total = data.train.size() + data.id_test.size() + data.ood_test.size();
  out.reserve(total * 64);
  for (const auto* split : {&data.train, &data.id_test, &data.ood_test}) {
    for (const SyntheticSample& s : *split) append_sample(out, s);
  }
  return out;
}

Dataset read_dataset(const std::string& text, const WorldSpec& world) {
  world.validate();
  Dataset data;
  std::size_t line_no = 0;
  for (std::string_view rest = text; !rest.empty();) {
    const std::size_t nl = rest.find('\n');
    if (nl == std::string_view::npos) {
      throw DataError("line " + std::to_string(line_no + 1) +
                      ": missing trailing newline");
    }
    const std::string_view line = rest.substr(0, nl);
    rest = rest.substr(nl + 1);
    ++line_no;

    const auto fields = split_on(line, '\t');
    if (fields.size() != 6) {
      throw DataError("line " + std::to_string(line_no) +
                      ": expected 6 tab-separated fields");
    }
    SyntheticSample s;
    try {
      s.split = parse_split(std::string(fields[0]));
    } catch (const ConfigError&) {
      throw DataError("line " + std::to_string(line_no) +
                      ": unknown split tag");
    }
    s.type = parse_u64(fields[1], line_no);
    s.answer = parse_u64(fields[2], line_no);
    if (s.type >= kTypeCount || s.answer >= world.answer_count()) {
      throw DataError("line " + std::to_string(line_no) +
                      ": type or answer out of range");
    }
    for (std::string_view tok : split_on(fields[3], ',')) {
      const std::uint64_t id = parse_u64(tok, line_no);
      if (id >= world.token_count()) {
        throw DataError("line " + std::to_string(line_no) +
                        ": token id out of range");
      }
      s.tokens.push_back(static_cast<std::size_t>(id));
    }
    const auto objects = split_on(fields[4], ';');
    if (objects.size() != world.object_count) {
      throw DataError("line " + std::to_string(line_no) +
                      ": wrong object count");
    }
    for (std::string_view obj : objects) {
      const auto attrs = split_on(obj, ',');
      if (attrs.size() != 3) {
        throw DataError("line " + std::to_string(line_no) +
                        ": object needs three attributes");
      }
      ObjectSpec o;
      o.color = parse_u64(attrs[0], line_no);
      o.shape = parse_u64(attrs[1], line_no);
      o.size = parse_u64(attrs[2], line_no);
      if (o.color >= world.colors.size() || o.shape >= world.shapes.size() ||
          o.size >= world.sizes.size()) {
        throw DataError("line " + std::to_string(line_no) +
                        ": object attribute out of range");
      }
      s.objects.push_back(o);
    }
    s.noise_seed = parse_u64(fields[5], line_no);
    switch (s.split) {
      case Split::train: data.train.push_back(std::move(s)); break;
      case Split::id_test: data.id_test.push_back(std::move(s)); break;
      case Split::ood_test: data.ood_test.push_back(std::move(s)); break;
    }
  }
  return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string text = write_dataset(data);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

Dataset load_dataset(const std::string& path, const WorldSpec& world) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return read_dataset(text, world);
}

}  // namespace qebench
