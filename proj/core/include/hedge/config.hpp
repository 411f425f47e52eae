#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hedge/encoder.hpp"
#include "hedge/eval.hpp"
#include "hedge/trainer.hpp"

namespace hedge {

// One flat bag of settings driving every subcommand. Precedence, lowest to
// highest: built-in defaults < preset < config file < command-line flags.
// Defaults follow the reference experiment settings (beta 1e-4, K=8,
// batch 128, K_nn=5, occlusion 0.2, 20 bins, 10 repeats).
struct RunConfig {
  // dataset synthesis
  std::string mnist_dir = "data/mnist";  // expects the four standard IDX files
  std::string dataset;                   // .ndmn path (synth writes, others read)
  int n_digits = 2;
  double occlusion_prob = 0.2;

  // model
  std::string representation = "gaussian";  // point | gaussian | mog
  int mog_components = 1;
  int embed_dim = 2;
  int conv1_channels = 32;
  int conv2_channels = 64;

  // training
  std::string loss = "soft";  // soft | hard
  double margin = 1.0;
  double lr = 1e-3;
  double beta = 1e-4;
  int batch_size = 128;
  int k_mc = 8;
  int k_kl = 32;
  int64_t steps = 30000;
  int64_t log_every = 500;
  int64_t checkpoint_every = 2000;  // crash-safety cadence during training

  // evaluation
  int64_t eval_pairs = 10000;
  int k_nn = 5;
  int bins = 20;
  int repeats = 10;
  bool uncertainty_knn = false;
  bool scatter = false;

  // run plumbing
  std::string out_dir = "runs/run";
  std::string sweep_betas = "0,1e-4";  // comma list for the sweep command
  uint64_t master_seed = 1;
  int threads = 1;

  // Set one field from its config-file key. ConfigError on an unknown key
  // or an unparseable value.
  void apply(const std::string& key, const std::string& value);

  // Parse "key=value" (used by --set flags). ConfigError when '=' missing.
  void apply_assignment(const std::string& kv);

  // Named profile with the corresponding study's settings baked in.
  // Known names: table1-n2d2, table6-beta-sweep, higher-dims-n3d6.
  static RunConfig preset(const std::string& name);

  // Flat key=value file; '#' comments and blank lines allowed.
  void load_file(const std::string& path);

  // Every field as (key, value) in sorted key order — what the manifest and
  // config round-trips use.
  std::map<std::string, std::string> items() const;

  // Master-seed fan-out: each stage draws from its own branch so e.g.
  // changing eval repeats never shifts training randomness.
  uint64_t synth_seed() const;
  uint64_t train_seed() const;
  uint64_t eval_seed() const;

  // Projections onto the subsystem configs. Validate on use.
  EncoderConfig encoder() const;
  TrainConfig trainer() const;
  EvalOptions eval_options() const;

  // Derived artifact paths under out_dir.
  std::string checkpoint_path() const;
  std::string curve_path() const;
  std::string report_json_path() const;
  std::string report_csv_path() const;
  std::string scatter_csv_path() const;
  std::string scatter_svg_path() const;
  std::string manifest_path(const std::string& command) const;
};

// CRC-32 of a file's bytes (IoFailure when unreadable).
uint32_t crc32_file(const std::string& path);

// Reproducibility record: resolved config, derived seeds, and a CRC per
// input and output file. Written as JSON.
void write_manifest(const std::string& path, const std::string& command,
                    const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::pair<std::string, std::string>>& outputs,
                    const std::map<std::string, std::string>& extra = {});

}  // namespace hedge
