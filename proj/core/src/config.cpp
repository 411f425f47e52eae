#include "hedge/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hedge/crc32.hpp"
#include "hedge/errors.hpp"
#include "hedge/idx.hpp"
#include "hedge/rng.hpp"

namespace hedge {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  const int64_t x = parse_i64(key, v);
  if (x < INT32_MIN || x > INT32_MAX)
    throw ConfigError(key + " out of range: '" + v + "'");
  return int(x);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad unsigned integer for " + key + ": '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "mnist_dir") mnist_dir = value;
  else if (key == "dataset") dataset = value;
  else if (key == "n_digits") n_digits = parse_int(key, value);
  else if (key == "occlusion_prob") occlusion_prob = parse_f64(key, value);
  else if (key == "representation") representation = value;
  else if (key == "mog_components") mog_components = parse_int(key, value);
  else if (key == "embed_dim") embed_dim = parse_int(key, value);
  else if (key == "conv1_channels") conv1_channels = parse_int(key, value);
  else if (key == "conv2_channels") conv2_channels = parse_int(key, value);
  else if (key == "loss") loss = value;
  else if (key == "margin") margin = parse_f64(key, value);
  else if (key == "lr") lr = parse_f64(key, value);
  else if (key == "beta") beta = parse_f64(key, value);
  else if (key == "batch_size") batch_size = parse_int(key, value);
  else if (key == "k_mc") k_mc = parse_int(key, value);
  else if (key == "k_kl") k_kl = parse_int(key, value);
  else if (key == "steps") steps = parse_i64(key, value);
  else if (key == "log_every") log_every = parse_i64(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_i64(key, value);
  else if (key == "eval_pairs") eval_pairs = parse_i64(key, value);
  else if (key == "k_nn") k_nn = parse_int(key, value);
  else if (key == "bins") bins = parse_int(key, value);
  else if (key == "repeats") repeats = parse_int(key, value);
  else if (key == "uncertainty_knn") uncertainty_knn = parse_bool(key, value);
  else if (key == "scatter") scatter = parse_bool(key, value);
  else if (key == "out_dir") out_dir = value;
  else if (key == "sweep_betas") sweep_betas = value;
  else if (key == "master_seed") master_seed = parse_u64(key, value);
  else if (key == "threads") threads = parse_int(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_assignment(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("expected key=value, got '" + kv + "'");
  apply(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig cfg;
  if (name == "table1-n2d2") {
    cfg.n_digits = 2;
    cfg.embed_dim = 2;
    cfg.representation = "gaussian";
    cfg.beta = 1e-4;
  } else if (name == "table6-beta-sweep") {
    cfg.n_digits = 2;
    cfg.embed_dim = 2;
    cfg.representation = "gaussian";
    cfg.sweep_betas = "0,1e-4";
  } else if (name == "higher-dims-n3d6") {
    cfg.n_digits = 3;
    cfg.embed_dim = 6;
    cfg.representation = "gaussian";
    cfg.beta = 1e-6;
  } else {
    throw ConfigError("unknown preset '" + name +
                      "' (known: table1-n2d2, table6-beta-sweep, higher-dims-n3d6)");
  }
  return cfg;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    apply(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

std::map<std::string, std::string> RunConfig::items() const {
  return {
      {"mnist_dir", mnist_dir},
      {"dataset", dataset},
      {"n_digits", std::to_string(n_digits)},
      {"occlusion_prob", fmt_f64(occlusion_prob)},
      {"representation", representation},
      {"mog_components", std::to_string(mog_components)},
      {"embed_dim", std::to_string(embed_dim)},
      {"conv1_channels", std::to_string(conv1_channels)},
      {"conv2_channels", std::to_string(conv2_channels)},
      {"loss", loss},
      {"margin", fmt_f64(margin)},
      {"lr", fmt_f64(lr)},
      {"beta", fmt_f64(beta)},
      {"batch_size", std::to_string(batch_size)},
      {"k_mc", std::to_string(k_mc)},
      {"k_kl", std::to_string(k_kl)},
      {"steps", std::to_string(steps)},
      {"log_every", std::to_string(log_every)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"eval_pairs", std::to_string(eval_pairs)},
      {"k_nn", std::to_string(k_nn)},
      {"bins", std::to_string(bins)},
      {"repeats", std::to_string(repeats)},
      {"uncertainty_knn", uncertainty_knn ? "true" : "false"},
      {"scatter", scatter ? "true" : "false"},
      {"out_dir", out_dir},
      {"sweep_betas", sweep_betas},
      {"master_seed", std::to_string(master_seed)},
      {"threads", std::to_string(threads)},
  };
}

uint64_t RunConfig::synth_seed() const { return derive_seed(master_seed, "synth"); }
uint64_t RunConfig::train_seed() const { return derive_seed(master_seed, "train"); }
uint64_t RunConfig::eval_seed() const { return derive_seed(master_seed, "eval"); }

EncoderConfig RunConfig::encoder() const {
  EncoderConfig ec;
  ec.n_digits = n_digits;
  ec.embed_dim = embed_dim;
  ec.representation = representation_from_string(representation);
  ec.mog_components = ec.representation == Representation::kMog ? mog_components : 1;
  ec.conv1_channels = conv1_channels;
  ec.conv2_channels = conv2_channels;
  ec.validate();
  return ec;
}

TrainConfig RunConfig::trainer() const {
  TrainConfig tc;
  tc.encoder = encoder();
  tc.loss = loss_kind_from_string(loss);
  tc.margin = margin;
  tc.batch_size = batch_size;
  tc.iterations = steps;
  tc.beta = beta;
  tc.k = k_mc;
  tc.k_kl = k_kl;
  tc.learning_rate = lr;
  tc.seed = train_seed();
  tc.log_every = log_every;
  tc.validate();
  return tc;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions eo;
  eo.n_pairs = eval_pairs;
  eo.k = k_mc;
  eo.k_nn = k_nn;
  eo.n_bins = bins;
  eo.repeats = repeats;
  eo.seed = eval_seed();
  eo.threads = threads;
  eo.uncertainty_knn = uncertainty_knn;
  return eo;
}

std::string RunConfig::checkpoint_path() const { return out_dir + "/checkpoint.hckp"; }
std::string RunConfig::curve_path() const { return out_dir + "/curve.csv"; }
std::string RunConfig::report_json_path() const { return out_dir + "/report.json"; }
std::string RunConfig::report_csv_path() const { return out_dir + "/report.csv"; }
std::string RunConfig::scatter_csv_path() const { return out_dir + "/scatter.csv"; }
std::string RunConfig::scatter_svg_path() const { return out_dir + "/scatter.svg"; }
std::string RunConfig::manifest_path(const std::string& command) const {
  return out_dir + "/manifest-" + command + ".json";
}

uint32_t crc32_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return crc32(bytes.data(), bytes.size());
}

void write_manifest(const std::string& path, const std::string& command,
                    const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::pair<std::string, std::string>>& outputs,
                    const std::map<std::string, std::string>& extra) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = cfg.items();
  j["seeds"] = {{"master", cfg.master_seed},
                {"synth", cfg.synth_seed()},
                {"train", cfg.train_seed()},
                {"eval", cfg.eval_seed()}};
  auto file_entry = [](const std::pair<std::string, std::string>& np) {
    const auto bytes = read_file_bytes(np.second);
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08x", crc32(bytes.data(), bytes.size()));
    return nlohmann::json{{"name", np.first},
                          {"path", np.second},
                          {"crc32", crc},
                          {"bytes", bytes.size()}};
  };
  j["inputs"] = nlohmann::json::array();
  for (const auto& np : inputs) j["inputs"].push_back(file_entry(np));
  j["outputs"] = nlohmann::json::array();
  for (const auto& np : outputs) j["outputs"].push_back(file_entry(np));
  for (const auto& [k, v] : extra) j["extra"][k] = v;

  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, {reinterpret_cast<const uint8_t*>(text.data()),
                          text.size()});
}

}  // namespace hedge
