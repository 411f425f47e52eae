#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hedge/dataset.hpp"
#include "hedge/encoder.hpp"
#include "hedge/hib.hpp"

namespace hedge {

enum class Condition { kClean, kCorrupt };
std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);
const std::vector<NDigitImage>& test_images(const NDigitDataset& ds, Condition c);

// Non-interpolated average precision: sort by score descending (ties keep
// input order), then mean the precision at each positive's rank.
double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels);

// Tie-corrected Kendall tau-b between two equally long lists.
// DegenerateInput when either list is all ties (denominator vanishes).
double kendall_tau_b(const std::vector<double>& xs, const std::vector<double>& ys);

// tau-b between bin index and metric with the sign flipped, so a metric that
// *decreases* as uncertainty grows scores positive.
double uncertainty_tau(const std::vector<double>& bin_index,
                       const std::vector<double>& metric);

// Balanced pair sample: half matches, half not (counts differ by at most 1).
struct EvalPair {
  int64_t a = 0, b = 0;
  int label = 0;
};
std::vector<EvalPair> make_eval_pairs(const std::vector<uint32_t>& classes,
                                      int64_t n_pairs, Rng& rng);

// Match-probability scores for a fixed pair list (fresh draws per pair).
std::vector<double> score_pairs(const std::vector<EmbeddingDistribution>& dists,
                                const std::vector<EvalPair>& pairs,
                                const MatchHead& head, int k, Rng& rng);

struct VerificationResult {
  double ap = 0.0;
  int64_t n_pairs = 0;
};
VerificationResult verification_eval(const std::vector<EmbeddingDistribution>& dists,
                                     const std::vector<uint32_t>& classes,
                                     const MatchHead& head, int k, int64_t n_pairs,
                                     Rng& rng);

// K-nearest-neighbor identification. Neighbors are ranked by descending
// Monte-Carlo match probability to the probe. Majority rule wants a class on
// strictly more than half the neighbors and otherwise returns kReject
// (scored as incorrect); plurality takes the modal class, breaking ties
// toward the class of the best-ranked neighbor among the tied classes.
enum class KnnRule { kMajority, kPlurality };
std::string to_string(KnnRule r);
constexpr int32_t kReject = -1;

// Draws are precomputed per image (SampleSet per gallery member / probe), so
// one gallery can serve many probes.
int32_t knn_classify(const SampleSet& probe, const std::vector<SampleSet>& gallery,
                     const std::vector<uint32_t>& gallery_classes,
                     const MatchHead& head, int k_nn, KnnRule rule,
                     int64_t exclude_index = -1);

struct KnnResult {
  double accuracy = 0.0;
  std::vector<uint8_t> correct;     // per probe
  std::vector<int32_t> predicted;   // per probe; kReject possible
};

// exclude_same_index: drop gallery[i] when probing probe[i] (the twin test
// sets hold the *same* composed images, so index i is the probe itself).
KnnResult knn_eval(const std::vector<EmbeddingDistribution>& gallery,
                   const std::vector<uint32_t>& gallery_classes,
                   const std::vector<EmbeddingDistribution>& probes,
                   const std::vector<uint32_t>& probe_classes,
                   const MatchHead& head, int k, int k_nn, KnnRule rule,
                   uint64_t seed, bool exclude_same_index, int threads = 1);

// Same pass, both voting rules (the neighbor search dominates the cost and
// is identical for the two).
struct KnnBothResult {
  KnnResult majority, plurality;
};
KnnBothResult knn_eval_both(const std::vector<EmbeddingDistribution>& gallery,
                            const std::vector<uint32_t>& gallery_classes,
                            const std::vector<EmbeddingDistribution>& probes,
                            const std::vector<uint32_t>& probe_classes,
                            const MatchHead& head, int k, int k_nn,
                            uint64_t seed, bool exclude_same_index,
                            int threads = 1);

// eta(x) for every distribution; rng derived per index from (seed, tag) so
// the result is independent of sharding.
std::vector<double> self_mismatch_all(const std::vector<EmbeddingDistribution>& dists,
                                      const MatchHead& head, int k, uint64_t seed,
                                      const std::string& tag);

// Equal-count binning by ascending value: returns per-element bin index.
// Bin sizes differ by at most one; ties are split by input order.
std::vector<int> equal_count_bins(const std::vector<double>& values, int n_bins);

struct TauStat {
  bool degenerate = false;  // constant uncertainty (point embeddings)
  double mean = 0.0, stddev = 0.0;
  std::vector<double> taus;             // one per repeat
  std::vector<double> bin_metric_mean;  // per-bin metric, averaged over repeats
  std::vector<double> bin_eta_mean;
};

// Verification flavor: bins are over pairs, keyed by the pair's mean eta;
// per-bin metric is AP. The pair list stays fixed across repeats, draws are
// redrawn. KNN flavor: bins are over probes (probe eta), metric is accuracy.
// Both throw DegenerateInput when eta is constant across the population
// (point embeddings): there is no ordering to correlate against.
TauStat uncertainty_ap_correlation(const std::vector<EmbeddingDistribution>& dists,
                                   const std::vector<uint32_t>& classes,
                                   const MatchHead& head, int k, int64_t n_pairs,
                                   int n_bins, int repeats, uint64_t seed);
TauStat uncertainty_knn_correlation(const std::vector<EmbeddingDistribution>& gallery,
                                    const std::vector<uint32_t>& gallery_classes,
                                    const std::vector<EmbeddingDistribution>& probes,
                                    const std::vector<uint32_t>& probe_classes,
                                    const MatchHead& head, int k, int k_nn,
                                    KnnRule rule, bool exclude_same_index,
                                    int n_bins, int repeats, uint64_t seed,
                                    int threads);

// 1-D latent organization: sort class centroids, count adjacent pairs whose
// 2-digit classes share a ones or tens digit, and the mean length (in pairs)
// of maximal consecutive runs of such pairs.
struct LatentOrder {
  int shared_adjacent = 0;
  double mean_run_length = 0.0;
};
LatentOrder latent_order_metrics(const std::vector<double>& centroids,
                                 const std::vector<uint32_t>& class_ids,
                                 int n_digits);

// Scatter export: CSV rows (class, condition, mu..., sigma...) for both test
// twins, plus an SVG with 3-sigma ellipses when D == 2. D must be 2 or 3.
void embed_scatter_export(const std::vector<EmbeddingDistribution>& clean,
                          const std::vector<EmbeddingDistribution>& corrupt,
                          const std::vector<uint32_t>& classes,
                          const std::string& csv_path,
                          const std::string& svg_path);

// ---------------------------------------------------------------------------
// Whole-report orchestration

struct EvalOptions {
  int64_t n_pairs = 10000;
  int k = 8;
  int k_nn = 5;
  int n_bins = 20;
  int repeats = 10;
  uint64_t seed = 1;
  int threads = 1;
  bool verification = true;
  bool knn = true;
  bool uncertainty_ap = true;
  bool uncertainty_knn = false;  // 10 full gallery passes; off by default
};

struct KnnCell {
  Condition gallery = Condition::kClean;
  Condition probe = Condition::kClean;
  KnnRule rule = KnnRule::kMajority;
  double accuracy = 0.0;
};

struct EvalReport {
  int schema_version = 1;
  std::string representation;
  int embed_dim = 0;
  int64_t checkpoint_step = 0;

  std::optional<double> ap_clean, ap_corrupt;
  std::vector<KnnCell> knn;
  std::optional<TauStat> unc_ap_clean, unc_ap_corrupt;
  std::optional<TauStat> unc_knn_clean, unc_knn_corrupt;
  std::optional<double> mean_kl_clean, mean_kl_corrupt;
  std::optional<double> mean_sigma_clean, mean_sigma_corrupt;
  std::optional<LatentOrder> latent;

  std::string to_json() const;
  std::string to_csv() const;
};

EvalReport run_eval(EncoderRunner& runner, const NDigitDataset& ds,
                    const EvalOptions& opt);

}  // namespace hedge
