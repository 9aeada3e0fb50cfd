// SPDX-License-Identifier: Apache-2.0
// Command-line driver: dataset generation, training runs, checkpoint
// evaluation, gradient checking, and report assembly over rows.jsonl files.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "qebench/errors.hpp"
#include "qebench/experiment.hpp"
#include "qebench/model_check.hpp"
#include "qebench/world.hpp"

namespace {

using namespace qebench;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("short read from '" + path + "'");
  return buf.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::fputs(text.c_str(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path + "'");
}

struct GenDataArgs {
  std::string out;
  std::uint64_t seed = 7;
  std::size_t train = 10000, id_test = 2000, ood_test = 2000;
  double sigma = 0.05, order_skew = 0.9, rho = 0.8;
};

void run_gen_data(const GenDataArgs& a) {
  WorldSpec world = WorldSpec::standard();
  world.noise_sigma = a.sigma;
  world.order_skew = a.order_skew;
  Dataset data =
      generate_dataset(world, PriorSpec::shifted(world, a.rho),
                       GenCounts{a.train, a.id_test, a.ood_test}, a.seed);
  save_dataset(a.out, data);
  std::printf("wrote %zu train / %zu id-test / %zu ood-test samples to %s\n",
              data.train.size(), data.id_test.size(), data.ood_test.size(),
              a.out.c_str());
}

struct TrainArgs {
  std::string config_path;
  std::string desk_variant;
  std::vector<std::string> sets;
  std::string out_dir;
};

void run_train(const TrainArgs& a) {
  ExperimentConfig cfg;
  if (!a.desk_variant.empty()) {
    cfg = ExperimentConfig::desk(parse_variant(a.desk_variant));
  }
  if (!a.config_path.empty()) {
    cfg = parse_experiment_config(read_file(a.config_path));
  }
  for (const std::string& assignment : a.sets) apply_override(cfg, assignment);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  if (const char* env = std::getenv("QEBENCH_OUT_DIR")) {
    if (*env != '\0') cfg.out_dir = env;
  }
  ReportRow row = run_experiment(cfg);
  std::printf("%s\n", row_to_json(row).c_str());
}

struct EvalArgs {
  std::string checkpoint;
  std::string split = "id-test";
  std::string probe = "full-q";
};

void run_eval(const EvalArgs& a) {
  MetricsRecord record = evaluate_checkpoint(a.checkpoint, parse_split(a.split),
                                             parse_probe_mode(a.probe));
  std::printf("%s\n", record_to_json(record).c_str());
}

struct GradcheckArgs {
  std::string variant = "gat";
  std::vector<std::string> sets;
  double tol = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a) {
  ModelCheckSpec spec;
  spec.encoder = EncoderConfig::desk(parse_variant(a.variant));
  spec.encoder.d_w = 8;
  spec.encoder.d_a = 8;
  spec.encoder.d_q = 8;
  spec.encoder.max_len = 8;
  spec.options.max_coords_per_param = 25;
  // enc.* overrides reuse the experiment key set; other keys are meaningless
  // here and rejected by the shared router.
  ExperimentConfig shim;
  shim.encoder = spec.encoder;
  for (const std::string& assignment : a.sets) apply_override(shim, assignment);
  spec.encoder = shim.encoder;
  spec.encoder.validate();

  GradCheckReport rep = model_grad_check(spec);
  std::printf("variant=%s max_rel_err=%.3e worst=%s[%zu]\n", a.variant.c_str(),
              rep.max_rel_err, rep.worst_param.c_str(), rep.worst_coord);
  if (!(rep.max_rel_err <= a.tol)) {
    std::fprintf(stderr, "error: code=numeric msg=\"gradient mismatch %.3e exceeds %.1e\"\n",
                 rep.max_rel_err, a.tol);
    return 1;
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> rows_files;
  std::string format = "table";
  bool aggregate = false;
  std::string out;
};

void run_report(const ReportArgs& a) {
  std::vector<ReportRow> rows;
  for (const std::string& path : a.rows_files) {
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        rows.push_back(row_from_json(line));
      } catch (const DataError& e) {
        throw DataError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
      }
    }
  }
  ReportFormat fmt;
  if (a.format == "csv") {
    fmt = ReportFormat::csv;
  } else if (a.format == "table") {
    fmt = ReportFormat::table;
  } else {
    throw ConfigError("unknown report format '" + a.format + "'");
  }
  write_output(a.out, emit_report(rows, fmt, a.aggregate));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Question-encoder benchmark driver"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* cmd_gen = app.add_subcommand(
      "gen-data", "Generate a synthetic dataset file");
  cmd_gen->add_option("--out", gen.out, "Output dataset path")->required();
  cmd_gen->add_option("--seed", gen.seed, "Generation seed");
  cmd_gen->add_option("--train", gen.train, "Training sample count");
  cmd_gen->add_option("--id-test", gen.id_test, "Id-test sample count");
  cmd_gen->add_option("--ood-test", gen.ood_test, "Ood-test sample count");
  cmd_gen->add_option("--sigma", gen.sigma, "Image feature noise");
  cmd_gen->add_option("--order-skew", gen.order_skew,
                      "P(straight rendering | majority answer)");
  cmd_gen->add_option("--rho", gen.rho, "Majority answer mass per type");

  TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand(
      "train", "Train one configuration and append its report row");
  cmd_train->add_option("--config", train.config_path,
                        "key=value config file (canonical text)");
  cmd_train->add_option("--desk", train.desk_variant,
                        "Start from the desk profile of a variant "
                        "(gru|bigru|transformer|gat)");
  cmd_train->add_option("--set", train.sets,
                        "key=value override, repeatable");
  cmd_train->add_option("--out-dir", train.out_dir,
                        "Checkpoint/row directory (QEBENCH_OUT_DIR overrides)");

  EvalArgs eval;
  CLI::App* cmd_eval = app.add_subcommand(
      "eval", "Re-evaluate a checkpoint on one split");
  cmd_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint path")
      ->required();
  cmd_eval->add_option("--split", eval.split, "train|id-test|ood-test");
  cmd_eval->add_option("--probe", eval.probe, "full-q|qtype-only");

  GradcheckArgs grad;
  CLI::App* cmd_grad = app.add_subcommand(
      "gradcheck", "Finite-difference check of a full model");
  cmd_grad->add_option("--variant", grad.variant,
                       "gru|bigru|transformer|gat");
  cmd_grad->add_option("--set", grad.sets, "enc.* override, repeatable");
  cmd_grad->add_option("--tol", grad.tol, "Maximum relative error");

  ReportArgs report;
  CLI::App* cmd_report = app.add_subcommand(
      "report", "Render rows.jsonl files as a table or CSV");
  cmd_report->add_option("--rows", report.rows_files, "rows.jsonl path, repeatable")
      ->required();
  cmd_report->add_option("--format", report.format, "csv|table");
  cmd_report->add_flag("--aggregate", report.aggregate,
                       "median over seeds per configuration");
  cmd_report->add_option("--out", report.out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
    if (cmd_gen->parsed()) run_gen_data(gen);
    if (cmd_train->parsed()) run_train(train);
    if (cmd_eval->parsed()) run_eval(eval);
    if (cmd_grad->parsed()) return run_gradcheck(grad);
    if (cmd_report->parsed()) run_report(report);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::fprintf(stderr, "error: code=usage msg=\"%s\"\n", e.what());
    return 2;
  } catch (const qebench::Error& e) {
    std::fprintf(stderr, "error: code=%s msg=\"%s\"\n", e.code().c_str(),
                 e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: code=internal msg=\"%s\"\n", e.what());
    return 1;
  }
}
