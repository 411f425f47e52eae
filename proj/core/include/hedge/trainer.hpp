#pragma once
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hedge/checkpoint.hpp"
#include "hedge/dataset.hpp"
#include "hedge/encoder.hpp"
#include "hedge/graph.hpp"

namespace hedge {

enum class LossKind { kSoft, kHard };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
  EncoderConfig encoder;
  LossKind loss = LossKind::kSoft;
  double margin = 1.0;       // hard contrastive only
  int batch_size = 128;      // images per step; batch_size/2 pairs
  int64_t iterations = 50000;
  double beta = 1e-4;        // KL weight; ignored for point/hard
  int k = 8;                 // match-probability samples per image
  int k_kl = 32;             // mixture-KL samples per image (mog only)
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 1;
  int64_t log_every = 100;   // training-curve cadence

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);

// One SGD minibatch: indices into the training image list, laid out so pair
// p is (indices[p], indices[p + P]); labels[p] = 1 iff the two images share
// a class. Half the pairs come from a uniform stream, half from an
// anchor-class stream that draws both members from one of 8 classes picked
// fresh each batch, so every batch carries plenty of positives (~50% under
// defaults) no matter how many classes the dataset has.
struct PairBatch {
  std::vector<int64_t> indices;  // batch_size
  std::vector<int> labels;       // batch_size / 2

  int64_t pairs() const { return int64_t(labels.size()); }
  int64_t positives() const;
};

// Per-class index over a dataset's training images, built once.
struct TrainClassIndex {
  std::vector<uint32_t> classes;   // sorted, classes that actually appear
  std::vector<uint32_t> class_of;  // per training image
  std::unordered_map<uint32_t, std::vector<int64_t>> by_class;
};
TrainClassIndex build_class_index(const NDigitDataset& ds);

PairBatch build_pair_batch(const TrainClassIndex& index, Rng& rng,
                           int batch_size);
PairBatch build_pair_batch(const NDigitDataset& ds, Rng& rng, int batch_size);

// Everything needed to stop and later resume a run bit-exactly, plus what
// evaluation needs (parameters and the run's own config).
struct TrainCheckpoint {
  TrainConfig config;
  int64_t step = 0;
  NamedArrays params;
  NamedArrays adam_m, adam_v;
  std::string batch_rng_state, noise_rng_state;
};

void save_checkpoint(const TrainCheckpoint& cp, const std::string& path);
TrainCheckpoint load_checkpoint(const std::string& path);

struct CurveRow {
  int64_t step = 0;
  double loss = 0.0;
  double mean_kl = 0.0;  // mean per-image KL this batch; 0 when not tracked
  double a = 0.0, b = 0.0;
};

class Trainer {
 public:
  // Fresh run (parameters from init_params) over ds.train.
  Trainer(const TrainConfig& cfg, const NDigitDataset& ds);

  // Resume: cp.config must agree with the graph-shaping fields.
  Trainer(const TrainCheckpoint& cp, const NDigitDataset& ds);

  // Advance to target_step (clamped to >= current); throws
  // DivergenceDetected the moment a step produces a non-finite loss.
  void run_to(int64_t target_step);

  int64_t step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  TrainCheckpoint snapshot() const;
  MatchHead head() const;

  // Called on every logged row (cadence log_every, plus step 1 and the final
  // step of each run_to).
  void set_curve_sink(std::function<void(const CurveRow&)> sink) {
    curve_sink_ = std::move(sink);
  }

 private:
  void build_graph();
  void apply_adam();
  CurveRow make_row(double loss) const;

  TrainConfig cfg_;
  const NDigitDataset& ds_;
  TrainClassIndex index_;
  Graph g_;
  EncoderNodes enc_;
  int labels_ = -1, eps_ = -1, eps_kl_ = -1;
  int loss_node_ = -1, kl_mean_node_ = -1;
  int64_t step_ = 0;
  Rng batch_rng_, noise_rng_;
  std::vector<Array> adam_m_, adam_v_;  // aligned with g_.param_ids()
  std::function<void(const CurveRow&)> curve_sink_;
};

}  // namespace hedge
