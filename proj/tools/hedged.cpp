// hedged: dataset synthesis, training, evaluation, and export for hedged
// instance embeddings, driven by a flat key=value config with flag overrides.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hedge/config.hpp"
#include "hedge/crc32.hpp"
#include "hedge/dataset.hpp"
#include "hedge/errors.hpp"
#include "hedge/eval.hpp"
#include "hedge/graph.hpp"
#include "hedge/idx.hpp"
#include "hedge/trainer.hpp"

namespace fs = std::filesystem;
using namespace hedge;

namespace {

// Exit codes, one per failure family, so scripts can tell what went wrong.
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitParse = 4;
constexpr int kExitFormat = 5;
constexpr int kExitStratification = 6;
constexpr int kExitDivergence = 7;
constexpr int kExitEval = 8;
constexpr int kExitOther = 1;

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoFailure*>(&e)) return kExitIo;
  if (dynamic_cast<const BadMagic*>(&e) || dynamic_cast<const Truncated*>(&e) ||
      dynamic_cast<const DimMismatch*>(&e) ||
      dynamic_cast<const LabelOutOfRange*>(&e))
    return kExitParse;
  if (dynamic_cast<const FormatVersionMismatch*>(&e) ||
      dynamic_cast<const ChecksumMismatch*>(&e))
    return kExitFormat;
  if (dynamic_cast<const StratificationError*>(&e)) return kExitStratification;
  if (dynamic_cast<const DivergenceDetected*>(&e)) return kExitDivergence;
  if (dynamic_cast<const NoPositives*>(&e) ||
      dynamic_cast<const GalleryTooSmall*>(&e) ||
      dynamic_cast<const DegenerateInput*>(&e) ||
      dynamic_cast<const WrongDimensionality*>(&e) ||
      dynamic_cast<const UnsupportedDim*>(&e))
    return kExitEval;
  return kExitOther;
}

// Flag spool for one subcommand: config sources in precedence order.
struct Opts {
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;           // --set key=value, in order
  std::vector<std::pair<std::string, std::string>> named;  // typed flags, in order
};

void add_common(CLI::App* sub, Opts& o) {
  sub->add_option("--preset", o.preset,
                  "named profile: table1-n2d2, table6-beta-sweep, higher-dims-n3d6");
  sub->add_option("--config", o.config_file, "key=value config file");
  sub->add_option("--set", o.sets, "override one key, e.g. --set steps=2000")
      ->take_all();
  struct Flag { const char* flag; const char* key; const char* help; };
  static const Flag flags[] = {
      {"--mnist-dir", "mnist_dir", "directory with the four MNIST IDX files"},
      {"--dataset", "dataset", "dataset file (.ndmn)"},
      {"--n-digits", "n_digits", "digits per composed image"},
      {"--occlusion-prob", "occlusion_prob", "per-digit occlusion probability"},
      {"--representation", "representation", "point | gaussian | mog"},
      {"--mog-components", "mog_components", "mixture components for mog"},
      {"--embed-dim", "embed_dim", "embedding dimensionality"},
      {"--loss", "loss", "soft | hard"},
      {"--margin", "margin", "hard-contrastive margin"},
      {"--lr", "lr", "Adam learning rate"},
      {"--beta", "beta", "KL weight"},
      {"--batch-size", "batch_size", "images per training step"},
      {"--k-mc", "k_mc", "match-probability samples per image"},
      {"--k-kl", "k_kl", "mixture-KL samples per image"},
      {"--steps", "steps", "training iterations"},
      {"--log-every", "log_every", "training-curve cadence"},
      {"--checkpoint-every", "checkpoint_every", "checkpoint cadence"},
      {"--eval-pairs", "eval_pairs", "verification pairs"},
      {"--k-nn", "k_nn", "neighbors for KNN identification"},
      {"--bins", "bins", "equal-count uncertainty bins"},
      {"--repeats", "repeats", "evaluation repeats"},
      {"--sweep-betas", "sweep_betas", "comma list of KL weights to sweep"},
      {"--out", "out_dir", "output directory"},
      {"--seed", "master_seed", "master seed (fans out per stage)"},
      {"--threads", "threads", "worker threads (1 = bit-reproducible order)"},
  };
  for (const Flag& f : flags) {
    const std::string key = f.key;
    sub->add_option_function<std::string>(
        f.flag, [&o, key](const std::string& v) { o.named.emplace_back(key, v); },
        f.help);
  }
  sub->add_flag_callback(
      "--scatter", [&o] { o.named.emplace_back("scatter", "true"); },
      "also export the embedding scatter CSV+SVG");
  sub->add_flag_callback(
      "--uncertainty-knn", [&o] { o.named.emplace_back("uncertainty_knn", "true"); },
      "also correlate uncertainty with KNN accuracy (slow)");
}

RunConfig resolve(const Opts& o) {
  RunConfig cfg = o.preset.empty() ? RunConfig{} : RunConfig::preset(o.preset);
  if (!o.config_file.empty()) cfg.load_file(o.config_file);
  for (const std::string& kv : o.sets) cfg.apply_assignment(kv);
  for (const auto& [k, v] : o.named) cfg.apply(k, v);
  if (cfg.dataset.empty()) cfg.dataset = cfg.out_dir + "/dataset.ndmn";
  return cfg;
}

std::string resolved_or(const std::string& s) { return s.empty() ? "-" : s; }

// ---------------------------------------------------------------------------

void run_synth(RunConfig cfg) {
  fs::create_directories(cfg.out_dir);
  fs::create_directories(fs::path(cfg.dataset).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(cfg.dataset).parent_path());
  const std::string ti = cfg.mnist_dir + "/train-images-idx3-ubyte";
  const std::string tl = cfg.mnist_dir + "/train-labels-idx1-ubyte";
  const std::string si = cfg.mnist_dir + "/t10k-images-idx3-ubyte";
  const std::string sl = cfg.mnist_dir + "/t10k-labels-idx1-ubyte";

  const RawDigitSet raw_train = load_digit_set(ti, tl, "train");
  const RawDigitSet raw_test = load_digit_set(si, sl, "test");
  const ClassSplit split = build_class_splits(cfg.n_digits, cfg.synth_seed());
  const NDigitDataset ds = synthesize(raw_train, raw_test, split,
                                      cfg.occlusion_prob, cfg.synth_seed());
  write_dataset(ds, cfg.dataset);

  // validate: the file must load back clean (checks magic, version, CRC)
  const NDigitDataset back = read_dataset(cfg.dataset);

  std::string split_str = std::to_string(split.n_digits) + "/" +
                          std::to_string(split.seed);
  for (const auto* v :
       {&split.training_classes, &split.unseen_test_classes, &split.seen_test_classes}) {
    split_str += "|";
    for (uint32_t c : *v) split_str += std::to_string(c) + ",";
  }
  char split_hash[16];
  std::snprintf(split_hash, sizeof split_hash, "%08x",
                crc32(split_str.data(), split_str.size()));

  write_manifest(cfg.manifest_path("synth"), "synth", cfg,
                 {{"train_images_idx", ti},
                  {"train_labels_idx", tl},
                  {"test_images_idx", si},
                  {"test_labels_idx", sl}},
                 {{"dataset", cfg.dataset}},
                 {{"train_images", std::to_string(back.train.size())},
                  {"test_clean_images", std::to_string(back.test_clean.size())},
                  {"test_corrupt_images", std::to_string(back.test_corrupt.size())},
                  {"training_classes", std::to_string(split.training_classes.size())},
                  {"unseen_test_classes", std::to_string(split.unseen_test_classes.size())},
                  {"seen_test_classes", std::to_string(split.seen_test_classes.size())},
                  {"split_hash", split_hash}});
  std::printf("synth: %zu train / %zu clean / %zu corrupt -> %s\n",
              back.train.size(), back.test_clean.size(), back.test_corrupt.size(),
              cfg.dataset.c_str());
}

void run_train(RunConfig cfg) {
  const TrainConfig tc = cfg.trainer();  // validates up front (C | K etc.)
  fs::create_directories(cfg.out_dir);
  const NDigitDataset ds = read_dataset(cfg.dataset);
  if (ds.n_digits() != cfg.n_digits)
    throw ConfigError("dataset holds " + std::to_string(ds.n_digits()) +
                      "-digit images but config says n_digits=" +
                      std::to_string(cfg.n_digits));

  const std::string cp_path = cfg.checkpoint_path();
  std::unique_ptr<Trainer> tr;
  bool resumed = false;
  if (fs::exists(cp_path)) {
    TrainCheckpoint cp = load_checkpoint(cp_path);
    if (cp.step >= cfg.steps) {
      std::printf("train: checkpoint already at step %lld (target %lld), nothing to do\n",
                  static_cast<long long>(cp.step), static_cast<long long>(cfg.steps));
      return;
    }
    TrainConfig stored = cp.config;
    stored.iterations = tc.iterations;  // extending a run is fine
    if (train_config_to_json(stored) != train_config_to_json(tc))
      throw ConfigError("checkpoint at " + cp_path +
                        " was trained with different settings; pick a fresh out_dir");
    tr = std::make_unique<Trainer>(cp, ds);
    resumed = true;
    std::printf("train: resuming from step %lld\n", static_cast<long long>(cp.step));
  } else {
    tr = std::make_unique<Trainer>(tc, ds);
  }

  std::ofstream curve(cfg.curve_path(),
                      resumed ? std::ios::app : std::ios::trunc);
  if (!curve) throw IoFailure("cannot open " + cfg.curve_path());
  if (!resumed) curve << "step,loss,mean_kl,a,b\n";
  tr->set_curve_sink([&curve](const CurveRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g,%.10g\n",
                  static_cast<long long>(r.step), r.loss, r.mean_kl, r.a, r.b);
    curve << buf;
    curve.flush();
  });

  const std::string tmp = cp_path + ".tmp";
  auto save = [&] {
    save_checkpoint(tr->snapshot(), tmp);
    fs::rename(tmp, cp_path);
  };
  while (tr->step() < cfg.steps) {
    const int64_t next = std::min<int64_t>(cfg.steps, tr->step() + cfg.checkpoint_every);
    tr->run_to(next);  // throws DivergenceDetected on a non-finite loss
    save();
    std::printf("train: step %lld / %lld\n", static_cast<long long>(tr->step()),
                static_cast<long long>(cfg.steps));
    std::fflush(stdout);
  }

  const TrainCheckpoint final_cp = load_checkpoint(cp_path);  // validate
  if (final_cp.step != cfg.steps)
    throw IoFailure("checkpoint step mismatch after training");
  write_manifest(cfg.manifest_path("train"), "train", cfg,
                 {{"dataset", cfg.dataset}},
                 {{"checkpoint", cp_path}, {"curve", cfg.curve_path()}},
                 {{"final_step", std::to_string(final_cp.step)}});
}

void export_scatter(const RunConfig& cfg, EncoderRunner& runner,
                    const NDigitDataset& ds) {
  const auto clean = runner.encode(pixels_to_array(ds.test_clean, ds.n_digits()));
  const auto corrupt = runner.encode(pixels_to_array(ds.test_corrupt, ds.n_digits()));
  std::vector<uint32_t> classes;
  classes.reserve(ds.test_clean.size());
  for (const auto& img : ds.test_clean) classes.push_back(img.class_id);
  embed_scatter_export(clean, corrupt, classes, cfg.scatter_csv_path(),
                       cfg.scatter_svg_path());
}

void run_eval_cmd(RunConfig cfg) {
  fs::create_directories(cfg.out_dir);
  const NDigitDataset ds = read_dataset(cfg.dataset);
  const TrainCheckpoint cp = load_checkpoint(cfg.checkpoint_path());
  EncoderRunner runner(cp.config.encoder, cp.params);

  EvalReport rep = run_eval(runner, ds, cfg.eval_options());
  rep.checkpoint_step = cp.step;

  const std::string json_text = rep.to_json() + "\n";
  write_file_bytes(cfg.report_json_path(),
                   {reinterpret_cast<const uint8_t*>(json_text.data()),
                    json_text.size()});
  const std::string csv_text = rep.to_csv();
  write_file_bytes(cfg.report_csv_path(),
                   {reinterpret_cast<const uint8_t*>(csv_text.data()),
                    csv_text.size()});

  std::vector<std::pair<std::string, std::string>> outputs = {
      {"report_json", cfg.report_json_path()},
      {"report_csv", cfg.report_csv_path()}};
  if (cfg.scatter) {
    export_scatter(cfg, runner, ds);
    outputs.push_back({"scatter_csv", cfg.scatter_csv_path()});
    if (fs::exists(cfg.scatter_svg_path()))
      outputs.push_back({"scatter_svg", cfg.scatter_svg_path()});
  }

  // validate: report must parse back as JSON
  const auto parsed = nlohmann::json::parse(json_text);
  if (parsed.at("schema_version").get<int>() != rep.schema_version)
    throw IoFailure("report failed to round-trip");

  write_manifest(cfg.manifest_path("eval"), "eval", cfg,
                 {{"dataset", cfg.dataset}, {"checkpoint", cfg.checkpoint_path()}},
                 outputs, {{"checkpoint_step", std::to_string(cp.step)}});
  std::printf("eval: wrote %s\n", cfg.report_json_path().c_str());
}

void run_scatter(RunConfig cfg) {
  fs::create_directories(cfg.out_dir);
  const NDigitDataset ds = read_dataset(cfg.dataset);
  const TrainCheckpoint cp = load_checkpoint(cfg.checkpoint_path());
  EncoderRunner runner(cp.config.encoder, cp.params);
  export_scatter(cfg, runner, ds);
  std::vector<std::pair<std::string, std::string>> outputs = {
      {"scatter_csv", cfg.scatter_csv_path()}};
  if (fs::exists(cfg.scatter_svg_path()))
    outputs.push_back({"scatter_svg", cfg.scatter_svg_path()});
  write_manifest(cfg.manifest_path("scatter"), "scatter", cfg,
                 {{"dataset", cfg.dataset}, {"checkpoint", cfg.checkpoint_path()}},
                 outputs, {});
  std::printf("scatter: wrote %s\n", cfg.scatter_csv_path().c_str());
}

void run_sweep(RunConfig cfg) {
  fs::create_directories(cfg.out_dir);
  std::vector<std::pair<std::string, double>> betas;
  std::stringstream ss(cfg.sweep_betas);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != tok.size())
      throw ConfigError("bad sweep_betas entry '" + tok + "'");
    betas.emplace_back(tok, v);
  }
  if (betas.empty()) throw ConfigError("sweep_betas is empty");

  nlohmann::json arms = nlohmann::json::array();
  for (const auto& [tok2, beta] : betas) {
    RunConfig sub = cfg;
    sub.beta = beta;
    sub.out_dir = cfg.out_dir + "/beta-" + tok2;
    std::printf("sweep: arm beta=%s -> %s\n", tok2.c_str(), sub.out_dir.c_str());
    run_train(sub);
    run_eval_cmd(sub);
    const auto bytes = read_file_bytes(sub.report_json_path());
    auto rep = nlohmann::json::parse(bytes.begin(), bytes.end());
    rep["beta"] = beta;
    rep["out_dir"] = sub.out_dir;
    arms.push_back(std::move(rep));
  }
  nlohmann::json j;
  j["schema_version"] = 1;
  j["arms"] = std::move(arms);
  const std::string text = j.dump(2) + "\n";
  const std::string path = cfg.out_dir + "/sweep.json";
  write_file_bytes(path, {reinterpret_cast<const uint8_t*>(text.data()),
                          text.size()});
  write_manifest(cfg.manifest_path("sweep"), "sweep", cfg,
                 {{"dataset", cfg.dataset}}, {{"sweep_json", path}}, {});
  std::printf("sweep: wrote %s\n", path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "hedged: synthesize N-digit MNIST with occlusions, train point / "
      "gaussian / mixture embedding models, and evaluate verification, KNN "
      "identification, and uncertainty correlation.\n"
      "Config precedence: defaults < --preset < --config file < --set < "
      "typed flags. Environment variables are never consulted.\n"
      "Exit codes: 0 ok, 2 config, 3 io, 4 input parse, 5 file format, "
      "6 stratification, 7 divergence, 8 evaluation, 1 other."};
  app.require_subcommand(1);

  Opts o_synth, o_train, o_eval, o_scatter, o_sweep;
  CLI::App* c_synth = app.add_subcommand("synth", "compose the dataset file");
  add_common(c_synth, o_synth);
  CLI::App* c_train = app.add_subcommand("train", "train (or resume) a model");
  add_common(c_train, o_train);
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(c_eval, o_eval);
  CLI::App* c_scatter =
      app.add_subcommand("scatter", "export the embedding scatter CSV+SVG");
  add_common(c_scatter, o_scatter);
  CLI::App* c_sweep =
      app.add_subcommand("sweep", "train+eval one arm per KL weight");
  add_common(c_sweep, o_sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (c_synth->parsed()) cfg = resolve(o_synth);
    else if (c_train->parsed()) cfg = resolve(o_train);
    else if (c_eval->parsed()) cfg = resolve(o_eval);
    else if (c_scatter->parsed()) cfg = resolve(o_scatter);
    else cfg = resolve(o_sweep);
    set_blas_threads(cfg.threads);

    if (c_synth->parsed()) run_synth(cfg);
    else if (c_train->parsed()) run_train(cfg);
    else if (c_eval->parsed()) run_eval_cmd(cfg);
    else if (c_scatter->parsed()) run_scatter(cfg);
    else run_sweep(cfg);
  } catch (const Error& e) {
    std::fprintf(stderr, "hedged: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hedged: %s\n", e.what());
    return kExitOther;
  }
  return 0;
}
