// Experiment front door: dataset construction, two-phase training,
// checkpoint evaluation, spectrum diagnostics, and the verification suites.
// Everything is driven by flat key = value configs with --key value
// overrides so run manifests re-parse as configs.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "metasaug/config.hpp"
#include "metasaug/datagen.hpp"
#include "metasaug/diagnostics.hpp"
#include "metasaug/errors.hpp"
#include "metasaug/meta.hpp"
#include "metasaug/model.hpp"
#include "metasaug/verify.hpp"

namespace {

using namespace metasaug;

constexpr const char* kVersion = "0.1.0";

const char* kUsage = R"(usage: metasaug <command> [options]

commands:
  make-lt   generate a long-tailed synthetic dataset (train/val/test CSVs)
  train     run the two-phase training loop
  eval      score a model checkpoint on a test CSV
  diag      covariance spectrum report from a saved bank
  verify    run the verification suites
  help      show this text

make-lt --out DIR [--classes 10] [--dim 10] [--n-max 500] [--mu 100]
        [--profile exp|step] [--val-per-class 10] [--test-per-class 100]
        [--separation 3] [--seed 1]
    Writes train.csv, val.csv, test.csv and dataset_manifest.txt into DIR
    (which must already exist). The balanced val/test splits are carved
    before the long tail is imposed, so every class keeps enough samples.

train [--config FILE] [--preset NAME] [--KEY VALUE ...]
    Options apply left to right on top of the defaults; --KEY VALUE sets
    any config key (dashes in KEY map to underscores, e.g. --batch-size).
    Requires train_csv; a meta phase also requires val_csv. Writes
    manifest.txt, history.jsonl, model.{bin,json} and bank.{bin,json} into
    out_dir, which must already exist. The manifest re-parses as a config
    and reproduces the run bit-exactly on the same data files.
    Presets: ce, cb-ce, focal, cb-focal, ldam, ldam-drw, isda-fixed,
    metasaug-ce, metasaug-focal, metasaug-ldam.

eval --model PREFIX --test CSV [--train CSV] [--out DIR]
    Prints the balanced error report; --train adds many/medium/few group
    errors split by training-count terciles. --out writes report.json,
    confusion.csv and confusion_normalized.csv.

diag --bank PREFIX [--class -1] [--top 5] [--out FILE]
    Top-k covariance spectrum, max-normalized, with spectral flatness.
    --class -1 means the rarest class (highest id).

verify [--seed 0] [--check NAME ...] [--samples 100000] [--json FILE]
       [--mode fd-vs-analytic]
    Checks: collapse, mc-bound, gradients, hypergrad, weights, streaming,
    longtail, phase-collapse, spectrum, benchmark, all. Default runs all
    fast checks; benchmark (the 5-seed end-to-end comparison) is opt-in.
    Exit code 1 when any check fails.

exit codes: 0 success, 1 run or verification failure, 2 usage/config error
)";

[[noreturn]] void usage_error(const std::string& msg) { throw ConfigError(msg); }

struct Args {
  std::vector<std::string> items;
  size_t pos = 0;

  bool done() const { return pos >= items.size(); }
  std::string take() { return items[pos++]; }
  std::string value(const std::string& flag) {
    if (done()) usage_error("missing value for " + flag);
    return items[pos++];
  }
};

int to_int(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    usage_error(what + ": expected an integer, got \"" + s + "\"");
  }
}

double to_double(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    usage_error(what + ": expected a number, got \"" + s + "\"");
  }
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    usage_error(what + ": expected an unsigned integer, got \"" + s + "\"");
  }
}

void require_dir(const std::string& path, const std::string& who) {
  if (!std::filesystem::is_directory(path))
    throw IoError(who + ": output directory does not exist: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

std::string counts_csv(const std::vector<int>& counts) {
  std::string s;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(counts[i]);
  }
  return s;
}

int cmd_make_lt(Args& a) {
  std::string out;
  int classes = 10, dim = 10, n_max = 500, val_pc = 10, test_pc = 100;
  double mu = 100.0, separation = 3.0;
  TailProfile profile = TailProfile::kExponential;
  std::string profile_name = "exp";
  std::uint64_t seed = 1;

  while (!a.done()) {
    const std::string flag = a.take();
    if (flag == "--out") out = a.value(flag);
    else if (flag == "--classes") classes = to_int(a.value(flag), flag);
    else if (flag == "--dim") dim = to_int(a.value(flag), flag);
    else if (flag == "--n-max") n_max = to_int(a.value(flag), flag);
    else if (flag == "--mu") mu = to_double(a.value(flag), flag);
    else if (flag == "--val-per-class") val_pc = to_int(a.value(flag), flag);
    else if (flag == "--test-per-class") test_pc = to_int(a.value(flag), flag);
    else if (flag == "--separation") separation = to_double(a.value(flag), flag);
    else if (flag == "--seed") seed = to_u64(a.value(flag), flag);
    else if (flag == "--profile") {
      profile_name = a.value(flag);
      if (profile_name == "exp") profile = TailProfile::kExponential;
      else if (profile_name == "step") profile = TailProfile::kStep;
      else usage_error("--profile: expected exp or step, got \"" + profile_name + "\"");
    } else {
      usage_error("make-lt: unknown option " + flag);
    }
  }
  if (out.empty()) usage_error("make-lt: --out is required");
  require_dir(out, "make-lt");

  Rng rng(seed);
  const SplitBundle bundle = build_longtail_bundle(classes, dim, n_max, mu, profile, val_pc,
                                                   test_pc, separation, rng);
  const std::string train_path = out + "/train.csv";
  const std::string val_path = out + "/val.csv";
  const std::string test_path = out + "/test.csv";
  save_csv(bundle.train, train_path);
  save_csv(bundle.meta_val, val_path);
  save_csv(bundle.test, test_path);

  char num[64];
  std::string manifest;
  auto add = [&manifest](const std::string& k, const std::string& v) {
    manifest += k + " = " + v + "\n";
  };
  add("classes", std::to_string(classes));
  add("dim", std::to_string(dim));
  add("n_max", std::to_string(n_max));
  std::snprintf(num, sizeof num, "%.17g", mu);
  add("mu", num);
  add("profile", profile_name);
  add("val_per_class", std::to_string(val_pc));
  add("test_per_class", std::to_string(test_pc));
  std::snprintf(num, sizeof num, "%.17g", separation);
  add("separation", num);
  add("seed", std::to_string(seed));
  add("run.version", kVersion);
  add("run.train_csv", "train.csv");
  add("run.train_fingerprint", fingerprint_hex(fnv1a_file(train_path)));
  add("run.train_counts", counts_csv(bundle.train.class_counts));
  add("run.val_csv", "val.csv");
  add("run.val_fingerprint", fingerprint_hex(fnv1a_file(val_path)));
  add("run.test_csv", "test.csv");
  add("run.test_fingerprint", fingerprint_hex(fnv1a_file(test_path)));
  write_text(out + "/dataset_manifest.txt", manifest);

  std::cout << "train: " << bundle.train.size() << " samples, counts "
            << counts_csv(bundle.train.class_counts) << "\n"
            << "val:   " << bundle.meta_val.size() << " samples\n"
            << "test:  " << bundle.test.size() << " samples\n"
            << "wrote " << out << "/{train,val,test}.csv and dataset_manifest.txt\n";
  return 0;
}

nlohmann::json history_json(const HistoryRecord& rec) {
  nlohmann::json j;
  j["step"] = rec.step;
  j["phase"] = rec.phase;
  j["train_loss"] = rec.train_loss;
  if (std::isfinite(rec.val_loss))
    j["val_loss"] = rec.val_loss;
  else
    j["val_loss"] = nullptr;
  j["lr"] = rec.lr;
  j["sigma_trace"] = rec.sigma_trace;
  return j;
}

int cmd_train(Args& a) {
  TrainConfig cfg;
  while (!a.done()) {
    const std::string flag = a.take();
    if (flag == "--config") {
      apply_config_file(cfg, a.value(flag));
    } else if (flag == "--preset") {
      apply_preset(cfg, a.value(flag));
    } else if (flag.rfind("--", 0) == 0 && flag.size() > 2) {
      std::string key = flag.substr(2);
      for (char& c : key)
        if (c == '-') c = '_';
      apply_override(cfg, key, a.value(flag));
    } else {
      usage_error("train: unexpected argument " + flag);
    }
  }
  validate_config(cfg);
  if (cfg.train_csv.empty())
    usage_error("train: train_csv is required (a config file or --train-csv)");
  require_dir(cfg.out_dir, "train");

  Dataset tr = load_csv(cfg.train_csv);
  SplitBundle bundle;
  const int num_classes = tr.num_classes;
  bundle.train = std::move(tr);
  if (!cfg.val_csv.empty()) bundle.meta_val = load_csv(cfg.val_csv, num_classes);

  const auto t_start = std::chrono::steady_clock::now();
  const TrainResult res = train(bundle, cfg);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  std::string history;
  for (const HistoryRecord& rec : res.history) history += history_json(rec).dump() + "\n";
  write_text(cfg.out_dir + "/history.jsonl", history);
  save_params(res.params, cfg.out_dir + "/model");
  save_bank(res.bank, cfg.out_dir + "/bank");

  char num[64];
  std::snprintf(num, sizeof num, "%.3f", wall);
  std::vector<std::pair<std::string, std::string>> info = {
      {"version", kVersion},
      {"train_fingerprint", fingerprint_hex(fnv1a_file(cfg.train_csv))},
  };
  if (!cfg.val_csv.empty())
    info.emplace_back("val_fingerprint", fingerprint_hex(fnv1a_file(cfg.val_csv)));
  if (!cfg.test_csv.empty())
    info.emplace_back("test_fingerprint", fingerprint_hex(fnv1a_file(cfg.test_csv)));
  info.emplace_back("wall_seconds", num);
  info.emplace_back("model", "model");
  info.emplace_back("bank", "bank");
  info.emplace_back("history", "history.jsonl");
  write_text(cfg.out_dir + "/manifest.txt", manifest_text(cfg, info));

  const double final_loss = res.history.empty() ? 0.0 : res.history.back().train_loss;
  std::cout << "completed " << res.history.size() << " steps in " << num << " s, final train loss "
            << final_loss << "\n"
            << "artifacts in " << cfg.out_dir << ": manifest.txt, history.jsonl, model.*, bank.*\n";
  return 0;
}

int cmd_eval(Args& a) {
  std::string model, test_csv, train_csv, out;
  while (!a.done()) {
    const std::string flag = a.take();
    if (flag == "--model") model = a.value(flag);
    else if (flag == "--test") test_csv = a.value(flag);
    else if (flag == "--train") train_csv = a.value(flag);
    else if (flag == "--out") out = a.value(flag);
    else usage_error("eval: unknown option " + flag);
  }
  if (model.empty() || test_csv.empty()) usage_error("eval: --model and --test are required");
  if (!out.empty()) require_dir(out, "eval");

  const ClassifierParams params = load_params(model);
  const Dataset test = load_csv(test_csv, params.num_classes);
  auto [confusion, report] = evaluate(params, test);
  if (!train_csv.empty()) {
    const Dataset tr = load_csv(train_csv, params.num_classes);
    add_group_errors(report, confusion, tr.class_counts);
  }

  char line[128];
  std::snprintf(line, sizeof line, "overall error: %.2f%% (%d samples)\n", report.overall_error,
                confusion.total);
  std::cout << line;
  if (!report.group_error.empty()) {
    std::snprintf(line, sizeof line, "group error: many %.2f%%, medium %.2f%%, few %.2f%%\n",
                  report.group_error[0], report.group_error[1], report.group_error[2]);
    std::cout << line;
  }

  if (!out.empty()) {
    write_text(out + "/report.json", error_report_json(report).dump(2) + "\n");
    save_confusion_csv(confusion, out + "/confusion.csv", false);
    save_confusion_csv(confusion, out + "/confusion_normalized.csv", true);
    std::cout << "wrote " << out << "/{report.json, confusion.csv, confusion_normalized.csv}\n";
  }
  return 0;
}

int cmd_diag(Args& a) {
  std::string bank_prefix, out;
  int cls = -1, top = 5;
  while (!a.done()) {
    const std::string flag = a.take();
    if (flag == "--bank") bank_prefix = a.value(flag);
    else if (flag == "--class") cls = to_int(a.value(flag), flag);
    else if (flag == "--top") top = to_int(a.value(flag), flag);
    else if (flag == "--out") out = a.value(flag);
    else usage_error("diag: unknown option " + flag);
  }
  if (bank_prefix.empty()) usage_error("diag: --bank is required");
  if (top < 1) usage_error("diag: --top must be positive");

  const CovarianceBank bank = load_bank(bank_prefix);
  if (cls == -1) cls = bank.num_classes() - 1;
  if (cls < 0 || cls >= bank.num_classes())
    usage_error("diag: --class out of range for a bank with " +
                std::to_string(bank.num_classes()) + " classes");

  const SpectrumFigure fig = spectrum_figure_data(bank, cls, top);
  nlohmann::json j = spectrum_json(fig);
  j["class"] = cls;
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out.empty()) write_text(out, text);
  return 0;
}

int cmd_verify(Args& a) {
  std::uint64_t seed = 0;
  int samples = 100000;
  std::string json_path;
  std::vector<std::string> checks;
  while (!a.done()) {
    const std::string flag = a.take();
    if (flag == "--seed") seed = to_u64(a.value(flag), flag);
    else if (flag == "--samples") samples = to_int(a.value(flag), flag);
    else if (flag == "--json") json_path = a.value(flag);
    else if (flag == "--check") checks.push_back(a.value(flag));
    else if (flag == "--mode") {
      const std::string mode = a.value(flag);
      if (mode != "fd-vs-analytic")
        usage_error("--mode: only fd-vs-analytic is available, got \"" + mode + "\"");
    } else {
      usage_error("verify: unknown option " + flag);
    }
  }
  if (samples < 2) usage_error("verify: --samples must be at least 2");

  const std::vector<std::string> known = {"collapse",  "mc-bound", "gradients",
                                          "hypergrad", "weights",  "streaming",
                                          "longtail",  "phase-collapse", "spectrum",
                                          "benchmark", "all"};
  for (const std::string& c : checks) {
    bool ok = false;
    for (const std::string& k : known) ok = ok || c == k;
    if (!ok) usage_error("verify: unknown check \"" + c + "\"");
  }
  const bool run_all = checks.empty() ||
                       std::find(checks.begin(), checks.end(), "all") != checks.end();
  auto want = [&](const std::string& name) {
    return run_all || std::find(checks.begin(), checks.end(), name) != checks.end();
  };

  // Children are derived unconditionally in a fixed order so each suite
  // sees the same stream whether or not the others run.
  Rng root(seed);
  Rng r_collapse = root.child();
  Rng r_bound = root.child();
  Rng r_grad = root.child();
  Rng r_hyper = root.child();
  Rng r_weights = root.child();
  Rng r_stream = root.child();
  Rng r_tail = root.child();
  Rng r_spec = root.child();

  std::vector<CheckResult> results;
  auto append = [&results](std::vector<CheckResult> part) {
    for (CheckResult& r : part) results.push_back(std::move(r));
  };
  if (want("collapse")) append(run_collapse_checks(r_collapse));
  if (want("mc-bound")) append(run_bound_checks(r_bound, 50, samples));
  if (want("gradients")) append(run_gradient_checks(r_grad));
  if (want("hypergrad")) append(run_hypergrad_checks(r_hyper));
  if (want("weights")) append(run_weight_checks(r_weights));
  if (want("streaming")) append(run_streaming_checks(r_stream));
  if (want("longtail")) append(run_longtail_checks(r_tail));
  if (want("phase-collapse")) append(run_phase_collapse_checks(seed));
  if (want("spectrum")) append(run_spectrum_checks(r_spec));

  nlohmann::json extras;
  const bool with_benchmark =
      std::find(checks.begin(), checks.end(), "benchmark") != checks.end();
  if (with_benchmark) {
    const BenchmarkResult bench = run_benchmark();
    std::cout << bench.table;
    char line[120];
    std::snprintf(line, sizeof line,
                  "rarest-class top-5 flatness: meta %.4f, estimated %.4f (report only)\n",
                  bench.flatness_meta, bench.flatness_estimated);
    std::cout << line;
    append(benchmark_check_results(bench));
    extras["benchmark"] = {{"table", bench.table},
                           {"margin", bench.margin},
                           {"ordered", bench.ordered},
                           {"flatness_meta", bench.flatness_meta},
                           {"flatness_estimated", bench.flatness_estimated}};
  }

  for (const CheckResult& r : results) std::cout << format_result(r) << "\n";
  if (!json_path.empty()) {
    nlohmann::json j = results_json(results);
    if (!extras.is_null()) j.update(extras);
    write_text(json_path, j.dump(2) + "\n");
  }
  return all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> raw(argv + 1, argv + argc);
  try {
    if (raw.empty()) {
      std::cerr << kUsage;
      return 2;
    }
    const std::string cmd = raw[0];
    if (cmd == "help" || cmd == "--help" || cmd == "-h") {
      std::cout << kUsage;
      return 0;
    }
    Args rest{std::vector<std::string>(raw.begin() + 1, raw.end()), 0};
    if (cmd == "make-lt") return cmd_make_lt(rest);
    if (cmd == "train") return cmd_train(rest);
    if (cmd == "eval") return cmd_eval(rest);
    if (cmd == "diag") return cmd_diag(rest);
    if (cmd == "verify") return cmd_verify(rest);
    usage_error("unknown command \"" + cmd + "\"; run \"metasaug help\"");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    // Malformed config files and manifests are configuration mistakes too.
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
