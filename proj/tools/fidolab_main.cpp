#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fidolab/bench.hpp"
#include "fidolab/costmodel.hpp"
#include "fidolab/decoding.hpp"
#include "fidolab/verify.hpp"
#include "fidolab/weights_io.hpp"

namespace {

using namespace fidolab;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitUsage = 2;

void write_text(const std::string& output, const std::string& text) {
  if (output == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(output, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open \"" + output + "\" for writing");
  out << text << "\n";
}

std::vector<std::int64_t> parse_values(const std::string& csv) {
  std::vector<std::int64_t> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    values.push_back(std::stoll(item));
  }
  if (values.empty()) throw std::invalid_argument("--values: no values given");
  return values;
}

struct AnalyzeArgs {
  std::string config_path;
  std::string device_path;
  std::string output = "-";
  std::string format = "json";
  std::string axis;
  std::string values;
};

int cmd_analyze(const AnalyzeArgs& args, bool axis_required) {
  const CostInput cost = cost_input_from_file(args.config_path);
  const DeviceProfile dev = args.device_path.empty()
                                ? DeviceProfile{}
                                : device_profile_from_file(args.device_path);
  if (axis_required && args.axis.empty()) {
    throw std::invalid_argument("sweep requires --axis (n_passages or n_t)");
  }

  const CostReport headline = predict_split(cost, dev);
  const double fe = static_cast<double>(headline.flops_enc_exact);
  const double fd = static_cast<double>(headline.flops_dec_exact);
  const double te = headline.predicted_time_enc;
  const double td = headline.predicted_time_dec;
  std::printf("encoder FLOPs share: %.1f%%\n", 100.0 * fe / (fe + fd));
  std::printf("decoder FLOPs share: %.1f%%\n", 100.0 * fd / (fe + fd));
  std::printf("predicted encoder time share: %.1f%%\n", 100.0 * te / (te + td));
  std::printf("predicted decoder time share: %.1f%%\n", 100.0 * td / (te + td));

  std::vector<CostReport> reports;
  if (!args.axis.empty()) {
    reports = sweep(cost, dev, sweep_axis_from_string(args.axis),
                    parse_values(args.values));
  } else {
    reports.push_back(headline);
  }

  if (args.format == "csv") {
    std::ostringstream os;
    os << cost_report_csv_header();
    for (const auto& r : reports) os << "\n" << cost_report_csv_row(r);
    write_text(args.output, os.str());
  } else if (reports.size() == 1) {
    write_text(args.output, cost_report_to_json(reports[0]));
  } else {
    write_text(args.output, cost_reports_to_json(reports));
  }
  return kExitOk;
}

int report_suites(const std::vector<SuiteResult>& suites) {
  bool all_ok = true;
  for (const auto& s : suites) {
    std::printf("%s %s: %s\n", s.passed ? "PASS" : "FAIL", s.name.c_str(),
                s.detail.c_str());
    all_ok = all_ok && s.passed;
  }
  std::printf("%zu/%zu suites passed\n",
              static_cast<std::size_t>(std::count_if(
                  suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; })),
              suites.size());
  return all_ok ? kExitOk : kExitVerifyFailure;
}

int cmd_verify(std::uint64_t seed, const std::string& weights_path,
               const std::string& config_path) {
  if (weights_path.empty()) {
    return report_suites(run_verification(seed));
  }
  std::vector<SuiteResult> suites;
  try {
    FidModel model = config_path.empty()
                         ? load_model(weights_path)
                         : load_model_checked(weights_path,
                                              model_config_from_file(config_path));
    suites.push_back({"weights-load", true, "loaded \"" + weights_path + "\""});
    const auto rest = run_verification_on(model, seed);
    suites.insert(suites.end(), rest.begin(), rest.end());
  } catch (const std::exception& e) {
    suites.push_back({"weights-load", false, e.what()});
  }
  return report_suites(suites);
}

FiDInput input_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("input: cannot open \"" + path + "\"");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("input: invalid JSON: ") + e.what());
  }
  if (!j.contains("question") || !j.contains("passages")) {
    throw std::invalid_argument("input: needs \"question\" and \"passages\" fields");
  }
  FiDInput input;
  input.question = j.at("question").get<std::vector<int>>();
  input.passages = j.at("passages").get<std::vector<std::vector<int>>>();
  return input;
}

struct RunArgs {
  std::string config_path;
  std::string weights_path;
  std::string save_weights_path;
  std::string input_path;
  std::string output = "-";
  std::uint64_t seed = 0;
  int beam = 1;
  int max_len = -1;
  int eos = 1;
  bool greedy = false;
  bool no_timing = false;
};

nlohmann::json counters_to_json(const Counters& c) {
  nlohmann::json j;
  j["multiplies"] = c.multiplies;
  j["bytes_weights"] = c.bytes_weights;
  j["bytes_kv"] = c.bytes_kv;
  return j;
}

int cmd_run(const RunArgs& args) {
  const ModelConfig cfg = model_config_from_file(args.config_path);
  const FidModel model = args.weights_path.empty()
                             ? FidModel::randomly_initialized(cfg, args.seed)
                             : load_model_checked(args.weights_path, cfg);
  if (!args.save_weights_path.empty()) save_weights(args.save_weights_path, model);
  const FiDInput input = input_from_file(args.input_path);
  const int max_len = args.max_len < 0 ? cfg.n_t_max : args.max_len;

  DecodeResult res;
  if (args.greedy || args.beam <= 1) {
    res = greedy_decode(model, input, max_len, args.eos);
  } else {
    res = beam_decode(model, input, args.beam, max_len, args.eos);
  }

  nlohmann::json j;
  j["tokens"] = res.tokens;
  j["encoder_counters"] = counters_to_json(res.encoder_counters);
  j["decoder_counters"] = counters_to_json(res.decoder_counters);
  if (!args.no_timing) {
    j["wall_encoder"] = res.wall_encoder;
    j["wall_decoder"] = res.wall_decoder;
  }
  write_text(args.output, j.dump(2));
  return kExitOk;
}

struct BenchArgs {
  std::string config_path;
  std::string output = "-";
  std::string format = "json";
  int batch = 4;
  int repeats = 3;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& args) {
  const ModelConfig cfg = model_config_from_file(args.config_path);
  const BenchReport report = run_bench(cfg, args.batch, args.repeats, args.seed);
  if (args.format == "csv") {
    if (args.output == "-") {
      std::cout << bench_csv_header() << "\n" << bench_csv_row(report) << "\n";
    } else {
      const bool fresh = !std::filesystem::exists(args.output) ||
                         std::filesystem::file_size(args.output) == 0;
      std::ofstream out(args.output, std::ios::app);
      if (!out) throw std::runtime_error("cannot open \"" + args.output + "\"");
      if (fresh) out << bench_csv_header() << "\n";
      out << bench_csv_row(report) << "\n";
    }
  } else {
    write_text(args.output, bench_report_to_json(report));
  }
  std::printf("bench: %d samples x %d repeats, median %.3f s (%.2f samples/s)\n",
              report.batch, report.repeats, report.median_wall_total,
              report.samples_per_sec);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fidolab: Fusion-in-Decoder inference engine with an analytical "
               "FLOPs/roofline cost model"};
  app.require_subcommand(1);

  AnalyzeArgs analyze_args;
  auto* analyze = app.add_subcommand("analyze", "Closed-form FLOPs and roofline analysis");
  analyze->add_option("--config", analyze_args.config_path, "model/cost config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("--device", analyze_args.device_path, "device profile JSON")
      ->check(CLI::ExistingFile);
  analyze->add_option("--output", analyze_args.output, "report path or - for stdout");
  analyze->add_option("--format", analyze_args.format)
      ->check(CLI::IsMember({"json", "csv"}));
  analyze->add_option("--axis", analyze_args.axis, "sweep axis: n_passages or n_t");
  analyze->add_option("--values", analyze_args.values, "comma-separated axis values");

  AnalyzeArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "analyze over an axis (requires --axis)");
  sweep_cmd->add_option("--config", sweep_args.config_path)
      ->required()
      ->check(CLI::ExistingFile);
  sweep_cmd->add_option("--device", sweep_args.device_path)->check(CLI::ExistingFile);
  sweep_cmd->add_option("--output", sweep_args.output);
  sweep_cmd->add_option("--format", sweep_args.format)
      ->check(CLI::IsMember({"json", "csv"}));
  sweep_cmd->add_option("--axis", sweep_args.axis);
  sweep_cmd->add_option("--values", sweep_args.values);

  std::uint64_t verify_seed = 0;
  std::string verify_weights, verify_config;
  auto* verify = app.add_subcommand("verify", "Run the oracle equivalence suites");
  verify->add_option("--seed", verify_seed);
  verify->add_option("--weights", verify_weights, "verify a FIDO1 weight file")
      ->check(CLI::ExistingFile);
  verify->add_option("--config", verify_config, "expected config for --weights")
      ->check(CLI::ExistingFile);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Decode one input with the toy engine");
  run->add_option("--config", run_args.config_path)->required()->check(CLI::ExistingFile);
  run->add_option("--weights", run_args.weights_path, "FIDO1 file (default: seeded init)")
      ->check(CLI::ExistingFile);
  run->add_option("--save-weights", run_args.save_weights_path,
                  "write the model to a FIDO1 file before decoding");
  run->add_option("--input", run_args.input_path, "input JSON with question/passages")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--output", run_args.output);
  run->add_option("--seed", run_args.seed);
  run->add_option("--beam", run_args.beam, "beam width (1 = greedy)");
  run->add_option("--max-len", run_args.max_len);
  run->add_option("--eos", run_args.eos, "eos token id, -1 disables");
  run->add_flag("--greedy", run_args.greedy, "force greedy decoding");
  run->add_flag("--no-timing", run_args.no_timing, "omit wall times for byte-stable output");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Timed toy-model inference with counters");
  bench->add_option("--config", bench_args.config_path)->required()->check(CLI::ExistingFile);
  bench->add_option("--batch", bench_args.batch);
  bench->add_option("--repeats", bench_args.repeats);
  bench->add_option("--seed", bench_args.seed);
  bench->add_option("--output", bench_args.output);
  bench->add_option("--format", bench_args.format)->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (analyze->parsed()) return cmd_analyze(analyze_args, false);
    if (sweep_cmd->parsed()) return cmd_analyze(sweep_args, true);
    if (verify->parsed()) return cmd_verify(verify_seed, verify_weights, verify_config);
    if (run->parsed()) return cmd_run(run_args);
    if (bench->parsed()) return cmd_bench(bench_args);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitVerifyFailure;
  }
  return kExitUsage;
}
