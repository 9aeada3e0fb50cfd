// SPDX-License-Identifier: Apache-2.0
#include "qebench/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <utility>

#include <json.hpp>

#include "qebench/digest.hpp"
#include "qebench/errors.hpp"
#include "qebench/ops.hpp"
#include "qebench/rng.hpp"

namespace qebench {

namespace {

// Independent sub-streams of the training seed.
constexpr std::uint64_t kInitStream = 0xa11c;
constexpr std::uint64_t kShuffleStream = 0x5f17;

std::string format_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericError("cannot format double");
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("malformed number '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("malformed integer '" + s + "'");
  }
  return v;
}

}  // namespace

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::model: return "model";
    case RunMode::frequency_baseline: return "frequency-baseline";
  }
  throw DomainError("unknown run mode");
}

RunMode parse_run_mode(const std::string& s) {
  if (s == "model") return RunMode::model;
  if (s == "frequency-baseline") return RunMode::frequency_baseline;
  throw ConfigError("unknown run mode '" + s + "'");
}

void ExperimentConfig::validate() const {
  encoder.validate();
  if (!std::isfinite(sigma) || sigma < 0.0) {
    throw ConfigError("sigma must be finite and non-negative");
  }
  if (!std::isfinite(order_skew) || order_skew < 0.0 || order_skew > 1.0) {
    throw ConfigError("order skew must lie in [0, 1]");
  }
  if (!std::isfinite(rho) || rho <= 0.0 || rho > 1.0) {
    throw ConfigError("rho must lie in (0, 1]");
  }
  if (n_train < 1 || n_id_test < 1 || n_ood_test < 1) {
    throw ConfigError("every split needs at least one sample");
  }
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  if (!std::isfinite(lr) || lr < 0.0) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  world().validate();
}

std::string ExperimentConfig::canonical() const {
  std::vector<std::string> lines;
  {
    const std::string enc = encoder.canonical();
    std::size_t start = 0;
    while (start < enc.size()) {
      std::size_t nl = enc.find('\n', start);
      if (nl == std::string::npos) nl = enc.size();
      if (nl > start) lines.push_back("enc." + enc.substr(start, nl - start));
      start = nl + 1;
    }
  }
  lines.push_back("data.id_test=" + std::to_string(n_id_test));
  lines.push_back("data.ood_test=" + std::to_string(n_ood_test));
  lines.push_back("data.seed=" + std::to_string(data_seed));
  lines.push_back("data.train=" + std::to_string(n_train));
  lines.push_back("mode=" + to_string(mode));
  lines.push_back("train.batch=" + std::to_string(batch));
  lines.push_back("train.epochs=" + std::to_string(epochs));
  lines.push_back("train.lr=" + format_double(lr));
  lines.push_back("train.seed=" + std::to_string(train_seed));
  lines.push_back("world.order_skew=" + format_double(order_skew));
  lines.push_back("world.rho=" + format_double(rho));
  lines.push_back("world.sigma=" + format_double(sigma));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const std::string& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

std::string ExperimentConfig::digest() const { return text_digest(canonical()); }

std::string ExperimentConfig::label() const {
  switch (encoder.variant) {
    case Variant::gru:
    case Variant::bigru:
      return to_string(encoder.variant) + "/" + to_string(encoder.aggregation);
    case Variant::transformer:
      return "transformer/" + to_string(encoder.pos_enc) + "/" +
             to_string(encoder.mha_mode);
    case Variant::gat:
      return "gat/" + to_string(encoder.score_mode) + "/" +
             to_string(encoder.mha_mode) + "/s" +
             std::to_string(encoder.window);
  }
  throw DomainError("unknown encoder variant");
}

WorldSpec ExperimentConfig::world() const {
  WorldSpec w = WorldSpec::standard();
  w.noise_sigma = sigma;
  w.order_skew = order_skew;
  return w;
}

PriorSpec ExperimentConfig::priors() const {
  return PriorSpec::shifted(world(), rho);
}

ExperimentConfig ExperimentConfig::desk(Variant v) {
  ExperimentConfig cfg;
  cfg.encoder = EncoderConfig::desk(v);
  cfg.sigma = 0.6;
  cfg.order_skew = 0.95;
  cfg.rho = 0.8;
  cfg.n_train = 10000;
  cfg.n_id_test = 2000;
  cfg.n_ood_test = 2000;
  cfg.data_seed = 7;
  cfg.lr = 1e-3;
  cfg.batch = 128;
  cfg.epochs = 15;
  cfg.train_seed = 1;
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  auto as_size = [&](std::uint64_t v) { return static_cast<std::size_t>(v); };
  if (key == "mode") {
    cfg.mode = parse_run_mode(value);
  } else if (key == "enc.variant") {
    cfg.encoder.variant = parse_variant(value);
  } else if (key == "enc.aggregation") {
    cfg.encoder.aggregation = parse_aggregation(value);
  } else if (key == "enc.pos_enc") {
    cfg.encoder.pos_enc = parse_pos_enc(value);
  } else if (key == "enc.mha_mode") {
    cfg.encoder.mha_mode = parse_mha_mode(value);
  } else if (key == "enc.score_mode") {
    cfg.encoder.score_mode = parse_score_mode(value);
  } else if (key == "enc.layers") {
    cfg.encoder.layers = as_size(parse_uint(value));
  } else if (key == "enc.heads") {
    cfg.encoder.heads = as_size(parse_uint(value));
  } else if (key == "enc.window") {
    cfg.encoder.window = as_size(parse_uint(value));
  } else if (key == "enc.d_w") {
    cfg.encoder.d_w = as_size(parse_uint(value));
  } else if (key == "enc.d_a") {
    cfg.encoder.d_a = as_size(parse_uint(value));
  } else if (key == "enc.d_q") {
    cfg.encoder.d_q = as_size(parse_uint(value));
  } else if (key == "enc.max_len") {
    cfg.encoder.max_len = as_size(parse_uint(value));
  } else if (key == "world.sigma") {
    cfg.sigma = parse_double(value);
  } else if (key == "world.order_skew") {
    cfg.order_skew = parse_double(value);
  } else if (key == "world.rho") {
    cfg.rho = parse_double(value);
  } else if (key == "data.train") {
    cfg.n_train = as_size(parse_uint(value));
  } else if (key == "data.id_test") {
    cfg.n_id_test = as_size(parse_uint(value));
  } else if (key == "data.ood_test") {
    cfg.n_ood_test = as_size(parse_uint(value));
  } else if (key == "data.seed") {
    cfg.data_seed = parse_uint(value);
  } else if (key == "train.lr") {
    cfg.lr = parse_double(value);
  } else if (key == "train.batch") {
    cfg.batch = as_size(parse_uint(value));
  } else if (key == "train.epochs") {
    cfg.epochs = as_size(parse_uint(value));
  } else if (key == "train.seed") {
    cfg.train_seed = parse_uint(value);
  } else if (key == "out.dir") {
    cfg.out_dir = value;
  } else if (key == "out.data_file") {
    cfg.data_file = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig cfg;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(start, nl - start);
    start = nl + 1;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
      line.pop_back();
    }
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') continue;
    apply_override(cfg, line.substr(first));
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// rows

namespace {

nlohmann::json metrics_to_json(const MetricsRecord& r) {
  nlohmann::json j;
  j["split"] = to_string(r.split);
  j["probe"] = to_string(r.probe);
  j["n"] = r.sample_count;
  j["overall_acc"] = r.overall_acc;
  j["per_type_acc"] = r.per_type_acc;
  j["per_type_count"] = r.per_type_count;
  if (r.pct_acc) j["pct_acc"] = *r.pct_acc;
  if (r.delta_gap) j["delta_gap"] = *r.delta_gap;
  return j;
}

MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.split = parse_split(j.at("split").get<std::string>());
  r.probe = parse_probe_mode(j.at("probe").get<std::string>());
  r.sample_count = j.at("n").get<std::size_t>();
  r.overall_acc = j.at("overall_acc").get<double>();
  r.per_type_acc = j.at("per_type_acc").get<std::vector<double>>();
  r.per_type_count = j.at("per_type_count").get<std::vector<std::size_t>>();
  if (j.contains("pct_acc")) r.pct_acc = j.at("pct_acc").get<double>();
  if (j.contains("delta_gap")) r.delta_gap = j.at("delta_gap").get<double>();
  return r;
}

}  // namespace

std::string record_to_json(const MetricsRecord& record) {
  return metrics_to_json(record).dump();
}

MetricsRecord record_from_json(const std::string& text) {
  try {
    return metrics_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metrics record: ") + e.what());
  }
}

std::string row_to_json(const ReportRow& row) {
  nlohmann::json j;
  j["digest"] = row.digest;
  j["label"] = row.label;
  j["mode"] = to_string(row.mode);
  j["seed"] = row.seed;
  j["wall_seconds"] = row.wall_seconds;
  j["id_full"] = metrics_to_json(row.id_full);
  j["id_probe"] = metrics_to_json(row.id_probe);
  j["ood_full"] = metrics_to_json(row.ood_full);
  j["ood_probe"] = metrics_to_json(row.ood_probe);
  return j.dump();
}

ReportRow row_from_json(const std::string& line) {
  try {
    const nlohmann::json j = nlohmann::json::parse(line);
    ReportRow row;
    row.digest = j.at("digest").get<std::string>();
    row.label = j.at("label").get<std::string>();
    row.mode = parse_run_mode(j.at("mode").get<std::string>());
    row.seed = j.at("seed").get<std::uint64_t>();
    row.wall_seconds = j.at("wall_seconds").get<double>();
    row.id_full = metrics_from_json(j.at("id_full"));
    row.id_probe = metrics_from_json(j.at("id_probe"));
    row.ood_full = metrics_from_json(j.at("ood_full"));
    row.ood_probe = metrics_from_json(j.at("ood_probe"));
    return row;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report row: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// training

VqaModel train_model(const ExperimentConfig& cfg, const WorldSpec& world,
                     const Dataset& data) {
  VqaConfig vc;
  vc.encoder = cfg.encoder;
  vc.vocab = world.token_count();
  vc.answers = world.answer_count();
  vc.d_v = world.feature_dim();
  vc.padding_id = world.pad_token();
  VqaModel model(vc, mix_seed(cfg.train_seed, kInitStream));

  const std::vector<SyntheticSample>& train = data.train;
  const std::size_t n = train.size();
  std::vector<Tensor> features, targets;
  std::vector<TokenSequence> questions;
  features.reserve(n);
  targets.reserve(n);
  questions.reserve(n);
  for (const SyntheticSample& s : train) {
    features.push_back(image_features(world, s));
    std::vector<double> hot(world.answer_count(), 0.0);
    hot[s.answer] = 1.0;
    targets.push_back(Tensor({world.answer_count()}, std::move(hot)));
    questions.push_back(TokenSequence{s.tokens});
  }

  AdamWConfig adamw;
  adamw.lr = cfg.lr;
  ParameterStore& store = model.params();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(mix_seed(cfg.train_seed, kShuffleStream), epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
      const std::size_t end = std::min(n, begin + cfg.batch);
      ++step;
      Tape tape;
      store.watch_all(tape);
      Tensor batch_loss;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t i = order[b];
        Tensor logits = model.logits(questions[i], features[i]);
        Tensor loss = ops::bce_with_logits_mean(logits, targets[i]);
        batch_loss = b == begin ? loss : ops::add(batch_loss, loss);
      }
      batch_loss = ops::scale(batch_loss, 1.0 / static_cast<double>(end - begin));
      const double loss_value = batch_loss.value();
      if (!std::isfinite(loss_value)) {
        store.unbind_all();
        throw TrainingDiverged(step, loss_value, store.param_norm(),
                               "loss went non-finite at step " +
                                   std::to_string(step));
      }
      tape.backward(batch_loss);
      store.adamw_step(tape, adamw);
      store.unbind_all();
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// full runs

ReportRow run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();

  const WorldSpec world = cfg.world();
  const PriorSpec priors = cfg.priors();
  Dataset data = generate_dataset(
      world, priors, GenCounts{cfg.n_train, cfg.n_id_test, cfg.n_ood_test},
      cfg.data_seed);
  if (!cfg.data_file.empty()) {
    // A supplied dataset must be the one this config generates; anything else
    // would detach the row's digest from the data it was computed on.
    Dataset loaded = load_dataset(cfg.data_file, world);
    if (write_dataset(loaded) != write_dataset(data)) {
      throw DataError("dataset file '" + cfg.data_file +
                      "' does not match the configured generator");
    }
    data = std::move(loaded);
  }

  ReportRow row;
  row.digest = cfg.digest();
  row.mode = cfg.mode;
  row.seed = cfg.train_seed;

  Predictor predictor;
  std::optional<VqaModel> trained;
  if (cfg.mode == RunMode::model) {
    row.label = cfg.label();
    trained.emplace(train_model(cfg, world, data));
    predictor = model_predictor(*trained, world);
  } else {
    row.label = "frequency-baseline";
    FrequencyTable table = FrequencyTable::fit(world, data.train);
    predictor = table.predictor();
  }

  row.id_full = evaluate(world, data.id_test, ProbeMode::full_q, predictor);
  row.id_probe = evaluate(world, data.id_test, ProbeMode::qtype_only, predictor);
  row.ood_full = evaluate(world, data.ood_test, ProbeMode::full_q, predictor);
  row.ood_probe =
      evaluate(world, data.ood_test, ProbeMode::qtype_only, predictor);
  attach_prior_probe(row.id_full, row.id_probe);
  attach_prior_probe(row.ood_full, row.ood_probe);

  row.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();

  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.out_dir);
    if (trained.has_value()) {
      const std::string path = cfg.out_dir + "/ckpt-" + row.digest + "-s" +
                               std::to_string(cfg.train_seed) + ".qbck";
      std::ofstream out(path, std::ios::binary);
      if (!out) throw IoError("cannot open checkpoint '" + path + "'");
      save_checkpoint(out, cfg.canonical(), trained->params());
      if (!out) throw IoError("short checkpoint write to '" + path + "'");
    }
    std::ofstream rows(cfg.out_dir + "/rows.jsonl", std::ios::app);
    if (!rows) throw IoError("cannot append to rows.jsonl");
    rows << row_to_json(row) << '\n';
  }
  return row;
}

MetricsRecord evaluate_checkpoint(const std::string& path, Split split,
                                  ProbeMode probe) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  CheckpointData data = read_checkpoint(in);
  ExperimentConfig cfg = parse_experiment_config(data.config_text);

  const WorldSpec world = cfg.world();
  VqaConfig vc;
  vc.encoder = cfg.encoder;
  vc.vocab = world.token_count();
  vc.answers = world.answer_count();
  vc.d_v = world.feature_dim();
  vc.padding_id = world.pad_token();
  VqaModel model(vc, mix_seed(cfg.train_seed, kInitStream));
  load_into(model.params(), data);

  Dataset dataset = generate_dataset(
      world, cfg.priors(), GenCounts{cfg.n_train, cfg.n_id_test, cfg.n_ood_test},
      cfg.data_seed);
  return evaluate(world, dataset.split(split), probe,
                  model_predictor(model, world));
}

}  // namespace qebench
