#include "metasaug/config.hpp"

#include <algorithm>
#include <climits>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace metasaug {

namespace {
enum class FieldType { kString, kDouble, kInt, kBool, kU64 };

struct FieldDesc {
  const char* key;
  FieldType type;
  union {
    std::string TrainConfig::* s;
    double TrainConfig::* d;
    int TrainConfig::* i;
    bool TrainConfig::* b;
    std::uint64_t TrainConfig::* u;
  };

  FieldDesc(const char* k, std::string TrainConfig::* m) : key(k), type(FieldType::kString), s(m) {}
  FieldDesc(const char* k, double TrainConfig::* m) : key(k), type(FieldType::kDouble), d(m) {}
  FieldDesc(const char* k, int TrainConfig::* m) : key(k), type(FieldType::kInt), i(m) {}
  FieldDesc(const char* k, bool TrainConfig::* m) : key(k), type(FieldType::kBool), b(m) {}
  FieldDesc(const char* k, std::uint64_t TrainConfig::* m) : key(k), type(FieldType::kU64), u(m) {}
};

const std::vector<FieldDesc>& field_table() {
  static const std::vector<FieldDesc> table = {
      {"train_csv", &TrainConfig::train_csv},
      {"val_csv", &TrainConfig::val_csv},
      {"test_csv", &TrainConfig::test_csv},
      {"out_dir", &TrainConfig::out_dir},
      {"seed", &TrainConfig::seed},
      {"hidden_dims", &TrainConfig::hidden_dims},
      {"base_loss", &TrainConfig::base_loss},
      {"focal_gamma", &TrainConfig::focal_gamma},
      {"ldam_max_margin", &TrainConfig::ldam_max_margin},
      {"lambda", &TrainConfig::lambda},
      {"beta", &TrainConfig::beta},
      {"normalize_weights", &TrainConfig::normalize_weights},
      {"reweight", &TrainConfig::reweight},
      {"drw_start", &TrainConfig::drw_start},
      {"lr", &TrainConfig::lr},
      {"momentum", &TrainConfig::momentum},
      {"weight_decay", &TrainConfig::weight_decay},
      {"lr_schedule", &TrainConfig::lr_schedule},
      {"sigma_lr", &TrainConfig::sigma_lr},
      {"t1", &TrainConfig::t1},
      {"t2", &TrainConfig::t2},
      {"batch_size", &TrainConfig::batch_size},
      {"val_batch_size", &TrainConfig::val_batch_size},
      {"hypergrad", &TrainConfig::hypergrad},
      {"fd_h", &TrainConfig::fd_h},
      {"psd_policy", &TrainConfig::psd_policy},
      {"reduction", &TrainConfig::reduction},
      {"ablation", &TrainConfig::ablation},
      {"zero_init_bank", &TrainConfig::zero_init_bank},
      {"plain_final_step", &TrainConfig::plain_final_step},
      {"strict_psd", &TrainConfig::strict_psd},
      {"bessel", &TrainConfig::bessel},
  };
  return table;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": \"" + v + "\" is not a number");
  }
}

long long parse_ll(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": \"" + v + "\" is not an integer");
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": \"" + v + "\" is not a boolean (true/false)");
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
}  // namespace

std::vector<std::string> preset_names() {
  return {"ce",        "cb-ce",       "focal",          "cb-focal",       "ldam",
          "ldam-drw",  "isda-fixed",  "metasaug-ce",    "metasaug-focal", "metasaug-ldam"};
}

void apply_preset(TrainConfig& cfg, const std::string& name) {
  // Plain baselines get lambda = 0 so the augmented loss degenerates to the
  // base loss no matter when the phase switch happens.
  if (name == "ce") {
    cfg.base_loss = "ce";
    cfg.lambda = 0.0;
    cfg.reweight = false;
  } else if (name == "cb-ce") {
    cfg.base_loss = "ce";
    cfg.lambda = 0.0;
    cfg.reweight = true;
    cfg.drw_start = 0;
  } else if (name == "focal") {
    cfg.base_loss = "focal";
    cfg.lambda = 0.0;
    cfg.reweight = false;
  } else if (name == "cb-focal") {
    cfg.base_loss = "focal";
    cfg.lambda = 0.0;
    cfg.reweight = true;
    cfg.drw_start = 0;
  } else if (name == "ldam") {
    cfg.base_loss = "ldam";
    cfg.lambda = 0.0;
    cfg.reweight = false;
  } else if (name == "ldam-drw") {
    // t1 doubles as the deferral point: unweighted margins before it,
    // class-balanced weights after, no augmentation either way.
    cfg.base_loss = "ldam";
    cfg.lambda = 0.0;
    cfg.reweight = true;
    cfg.drw_start = -1;
    cfg.ablation = "no-meta";
  } else if (name == "isda-fixed") {
    cfg.base_loss = "ce";
    cfg.lambda = 0.5;
    cfg.reweight = false;
    cfg.ablation = "no-meta";
  } else if (name == "metasaug-ce" || name == "metasaug-focal" || name == "metasaug-ldam") {
    cfg.base_loss = name == "metasaug-ce" ? "ce" : (name == "metasaug-focal" ? "focal" : "ldam");
    cfg.lambda = 0.5;
    cfg.reweight = true;
    cfg.ablation = "none";
    cfg.drw_start = -1;  // auto: weights enter with the meta phase
  } else {
    throw ConfigError("unknown preset \"" + name + "\"");
  }
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const FieldDesc& f : field_table()) {
    if (key != f.key) continue;
    switch (f.type) {
      case FieldType::kString:
        cfg.*(f.s) = value;
        return;
      case FieldType::kDouble:
        // beta accepts the symbolic default.
        cfg.*(f.d) = (value == "auto") ? -1.0 : parse_double(value, key);
        return;
      case FieldType::kInt: {
        long long x = parse_ll(value, key);
        if (x < INT_MIN || x > INT_MAX) throw ConfigError(key + ": value out of range");
        cfg.*(f.i) = static_cast<int>(x);
        return;
      }
      case FieldType::kBool:
        cfg.*(f.b) = parse_bool(value, key);
        return;
      case FieldType::kU64: {
        try {
          size_t pos = 0;
          std::uint64_t x = std::stoull(value, &pos);
          if (pos != value.size()) throw std::invalid_argument(value);
          cfg.*(f.u) = x;
        } catch (const std::exception&) {
          throw ConfigError(key + ": \"" + value + "\" is not an unsigned integer");
        }
        return;
      }
    }
  }
  throw ConfigError("unknown config key \"" + key + "\"");
}

void apply_config_line(TrainConfig& cfg, const std::string& raw, const std::string& where) {
  std::string line = raw;
  size_t hash = line.find('#');
  if (hash != std::string::npos) line.resize(hash);
  line = trim(line);
  if (line.empty()) return;

  size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw ParseError(where + ": expected \"key = value\", got \"" + trim(raw) + "\"");
  std::string key = trim(line.substr(0, eq));
  std::string value = trim(line.substr(eq + 1));
  if (key.rfind("run.", 0) == 0) return;  // manifest info lines
  try {
    apply_override(cfg, key, value);
  } catch (const ConfigError& e) {
    throw ParseError(where + ": " + e.what());
  }
}

void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    apply_config_line(cfg, line, path + ":" + std::to_string(lineno));
  }
}

TrainConfig parse_config_file(const std::string& path) {
  TrainConfig cfg;
  apply_config_file(cfg, path);
  return cfg;
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream out;
  for (const FieldDesc& f : field_table()) {
    out << f.key << " = ";
    switch (f.type) {
      case FieldType::kString:
        out << cfg.*(f.s);
        break;
      case FieldType::kDouble:
        out << format_double(cfg.*(f.d));
        break;
      case FieldType::kInt:
        out << cfg.*(f.i);
        break;
      case FieldType::kBool:
        out << (cfg.*(f.b) ? "true" : "false");
        break;
      case FieldType::kU64:
        out << cfg.*(f.u);
        break;
    }
    out << "\n";
  }
  return out.str();
}

std::vector<int> parsed_hidden_dims(const TrainConfig& cfg) {
  std::vector<int> dims;
  std::string s = cfg.hidden_dims;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    long long v = parse_ll(item, "hidden_dims");
    if (v < 1 || v > 100000) throw ConfigError("hidden_dims: width " + item + " out of range");
    dims.push_back(static_cast<int>(v));
  }
  return dims;
}

std::vector<std::pair<int, double>> parsed_lr_schedule(const TrainConfig& cfg) {
  std::vector<std::pair<int, double>> events;
  std::stringstream ss(cfg.lr_schedule);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("lr_schedule: expected step:factor, got \"" + item + "\"");
    long long step = parse_ll(trim(item.substr(0, colon)), "lr_schedule");
    double factor = parse_double(trim(item.substr(colon + 1)), "lr_schedule");
    if (step < 0) throw ConfigError("lr_schedule: negative step");
    if (factor <= 0.0) throw ConfigError("lr_schedule: factor must be positive");
    events.emplace_back(static_cast<int>(step), factor);
  }
  std::sort(events.begin(), events.end());
  return events;
}

Reduction parsed_reduction(const TrainConfig& cfg) {
  if (cfg.reduction == "mean") return Reduction::kMean;
  if (cfg.reduction == "sum") return Reduction::kSum;
  throw ConfigError("reduction: expected mean or sum, got \"" + cfg.reduction + "\"");
}

PsdPolicy parsed_psd_policy(const TrainConfig& cfg) {
  if (cfg.psd_policy == "none") return PsdPolicy::kNone;
  if (cfg.psd_policy == "project") return PsdPolicy::kProjectEachUpdate;
  throw ConfigError("psd_policy: expected none or project, got \"" + cfg.psd_policy + "\"");
}

HypergradMethod parsed_hypergrad(const TrainConfig& cfg) {
  if (cfg.hypergrad == "analytic") return HypergradMethod::kAnalyticLastLayer;
  if (cfg.hypergrad == "fd") return HypergradMethod::kFiniteDifference;
  throw ConfigError("hypergrad: expected analytic or fd, got \"" + cfg.hypergrad + "\"");
}

BaseLoss parsed_base_loss(const TrainConfig& cfg, const std::vector<int>& counts) {
  if (cfg.base_loss == "ce") return BaseLoss::cross_entropy();
  if (cfg.base_loss == "focal") return BaseLoss::focal(cfg.focal_gamma);
  if (cfg.base_loss == "ldam") return BaseLoss::ldam(counts, cfg.ldam_max_margin);
  throw ConfigError("base_loss: expected ce, focal or ldam, got \"" + cfg.base_loss + "\"");
}

int resolve_drw_start(const TrainConfig& cfg) {
  return cfg.drw_start >= 0 ? cfg.drw_start : cfg.t1;
}

double resolve_beta(const TrainConfig& cfg, long long total_train_samples) {
  if (cfg.beta >= 0.0) return cfg.beta;
  if (total_train_samples < 1) throw ConfigError("beta: auto needs a nonempty training set");
  return static_cast<double>(total_train_samples - 1) / static_cast<double>(total_train_samples);
}

void validate_config(const TrainConfig& cfg) {
  std::vector<std::string> bad;
  auto check = [&bad](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };

  check(cfg.base_loss == "ce" || cfg.base_loss == "focal" || cfg.base_loss == "ldam",
        "base_loss: expected ce, focal or ldam");
  check(cfg.focal_gamma >= 0.0, "focal_gamma: must be nonnegative");
  check(cfg.ldam_max_margin > 0.0, "ldam_max_margin: must be positive");
  check(cfg.lambda >= 0.0, "lambda: must be nonnegative");
  check(cfg.beta == -1.0 || (cfg.beta >= 0.0 && cfg.beta < 1.0),
        "beta: must be in [0, 1) or auto");
  check(cfg.lr > 0.0, "lr: must be positive");
  check(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "momentum: must be in [0, 1)");
  check(cfg.weight_decay >= 0.0, "weight_decay: must be nonnegative");
  check(cfg.sigma_lr >= 0.0, "sigma_lr: must be nonnegative");
  check(cfg.t1 >= 0, "t1: must be nonnegative");
  check(cfg.t2 >= cfg.t1, "t2: must be at least t1");
  check(cfg.batch_size >= 1, "batch_size: must be positive");
  check(cfg.val_batch_size >= 0, "val_batch_size: must be nonnegative (0 = auto)");
  check(cfg.fd_h > 0.0, "fd_h: must be positive");
  check(cfg.hypergrad == "analytic" || cfg.hypergrad == "fd",
        "hypergrad: expected analytic or fd");
  check(cfg.psd_policy == "none" || cfg.psd_policy == "project",
        "psd_policy: expected none or project");
  check(cfg.reduction == "mean" || cfg.reduction == "sum", "reduction: expected mean or sum");
  check(cfg.ablation == "none" || cfg.ablation == "no-reweight" || cfg.ablation == "no-meta",
        "ablation: expected none, no-reweight or no-meta");

  try {
    std::vector<int> dims = parsed_hidden_dims(cfg);
    if (!dims.empty() && cfg.hypergrad == "analytic")
      bad.push_back("hypergrad: analytic mode supports the linear model only; use fd");
  } catch (const ConfigError& e) {
    bad.push_back(e.what());
  }
  try {
    parsed_lr_schedule(cfg);
  } catch (const ConfigError& e) {
    bad.push_back(e.what());
  }

  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const std::string& m : bad) msg += "\n  " + m;
    throw ConfigError(msg);
  }
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for fingerprinting");
  std::uint64_t h = 14695981039346656037ull;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

std::string fingerprint_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string manifest_text(const TrainConfig& cfg,
                          const std::vector<std::pair<std::string, std::string>>& run_info) {
  std::string out = serialize_config(cfg);
  for (const auto& [key, value] : run_info) out += "run." + key + " = " + value + "\n";
  return out;
}

}  // namespace metasaug
