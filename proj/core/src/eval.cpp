#include "hedge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "hedge/errors.hpp"
#include "hedge/idx.hpp"
#include "hedge/vexp.hpp"

namespace hedge {

std::string to_string(Condition c) {
  return c == Condition::kClean ? "clean" : "corrupt";
}

Condition condition_from_string(const std::string& s) {
  if (s == "clean") return Condition::kClean;
  if (s == "corrupt") return Condition::kCorrupt;
  throw ConfigError("unknown condition '" + s + "' (want clean|corrupt)");
}

const std::vector<NDigitImage>& test_images(const NDigitDataset& ds, Condition c) {
  return c == Condition::kClean ? ds.test_clean : ds.test_corrupt;
}

std::string to_string(KnnRule r) {
  return r == KnnRule::kMajority ? "majority" : "plurality";
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DimMismatch("scores and labels differ in length");
  const size_t n = scores.size();
  int64_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  if (n_pos == 0) throw NoPositives("no positive labels");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double sum = 0.0;
  int64_t seen = 0;
  for (size_t r = 0; r < n; ++r) {
    if (labels[order[r]]) {
      ++seen;
      sum += double(seen) / double(r + 1);
    }
  }
  return sum / double(n_pos);
}

double kendall_tau_b(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw DimMismatch("lists differ in length");
  const int64_t n = int64_t(xs.size());
  if (n < 2) throw DegenerateInput("need at least two observations");
  int64_t concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double dx = xs[size_t(i)] - xs[size_t(j)];
      const double dy = ys[size_t(i)] - ys[size_t(j)];
      if (dx == 0.0) ++tie_x;
      if (dy == 0.0) ++tie_y;
      if (dx == 0.0 || dy == 0.0) continue;
      if ((dx > 0.0) == (dy > 0.0))
        ++concordant;
      else
        ++discordant;
    }
  const int64_t n0 = n * (n - 1) / 2;
  if (tie_x == n0 || tie_y == n0)
    throw DegenerateInput("all observations tied");
  const double denom =
      std::sqrt(double(n0 - tie_x)) * std::sqrt(double(n0 - tie_y));
  return double(concordant - discordant) / denom;
}

double uncertainty_tau(const std::vector<double>& bin_index,
                       const std::vector<double>& metric) {
  return -kendall_tau_b(bin_index, metric);
}

std::vector<EvalPair> make_eval_pairs(const std::vector<uint32_t>& classes,
                                      int64_t n_pairs, Rng& rng) {
  const int64_t n = int64_t(classes.size());
  if (n < 2) throw DegenerateInput("need at least two images");
  std::unordered_map<uint32_t, std::vector<int64_t>> by_class;
  for (int64_t i = 0; i < n; ++i) by_class[classes[size_t(i)]].push_back(i);
  bool any_pairable = false;
  for (const auto& [c, v] : by_class)
    if (v.size() >= 2) {
      any_pairable = true;
      break;
    }
  if (!any_pairable) throw DegenerateInput("no class has two images");
  if (by_class.size() < 2)
    throw DegenerateInput("single-class set cannot make non-matching pairs");

  const int64_t n_match = (n_pairs + 1) / 2;
  std::vector<EvalPair> out;
  out.reserve(size_t(n_pairs));
  for (int64_t p = 0; p < n_match; ++p) {
    int64_t a;
    do {
      a = int64_t(rng.uniform_int(uint64_t(n)));
    } while (by_class.at(classes[size_t(a)]).size() < 2);
    const auto& pool = by_class.at(classes[size_t(a)]);
    int64_t b;
    do {
      b = pool[rng.uniform_int(uint64_t(pool.size()))];
    } while (b == a);
    out.push_back({a, b, 1});
  }
  for (int64_t p = n_match; p < n_pairs; ++p) {
    int64_t a = int64_t(rng.uniform_int(uint64_t(n)));
    int64_t b;
    do {
      b = int64_t(rng.uniform_int(uint64_t(n)));
    } while (classes[size_t(a)] == classes[size_t(b)]);
    out.push_back({a, b, 0});
  }
  return out;
}

std::vector<double> score_pairs(const std::vector<EmbeddingDistribution>& dists,
                                const std::vector<EvalPair>& pairs,
                                const MatchHead& head, int k, Rng& rng) {
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const EvalPair& p : pairs)
    scores.push_back(match_prob_mc(dists[size_t(p.a)], dists[size_t(p.b)], head,
                                   k, rng));
  return scores;
}

VerificationResult verification_eval(const std::vector<EmbeddingDistribution>& dists,
                                     const std::vector<uint32_t>& classes,
                                     const MatchHead& head, int k, int64_t n_pairs,
                                     Rng& rng) {
  if (dists.size() != classes.size())
    throw DimMismatch("distributions and classes differ in length");
  const auto pairs = make_eval_pairs(classes, n_pairs, rng);
  const auto scores = score_pairs(dists, pairs, head, k, rng);
  std::vector<int> labels;
  labels.reserve(pairs.size());
  for (const EvalPair& p : pairs) labels.push_back(p.label);
  VerificationResult res;
  res.ap = average_precision(scores, labels);
  res.n_pairs = n_pairs;
  return res;
}

// ---------------------------------------------------------------------------
// KNN

namespace {

struct Neighbor {
  double score = -1.0;
  int64_t index = -1;
};

// (1/k^2) sum sigmoid(b - a * dist) between two draw sets, written so the
// exp calls sit in one flat loop the compiler can vectorize.
double mc_score(const SampleSet& p, const SampleSet& q, double a, double b) {
  const int k1 = p.k, k2 = q.k, dim = p.dim;
  double t[1024];
  const int kk = k1 * k2;
  int idx = 0;
  for (int i = 0; i < k1; ++i) {
    const double* pi = p.at(i);
    for (int j = 0; j < k2; ++j) {
      const double* qj = q.at(j);
      double ssq = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double diff = pi[d] - qj[d];
        ssq += diff * diff;
      }
      t[idx++] = ssq;
    }
  }
  // sigmoid(b - a*d) = 1 / (1 + exp(a*d - b)); exp overflow saturates to 0
  // on its own, and the separate map loops vectorize (the fused reduction
  // would not)
  for (int i = 0; i < kk; ++i) t[i] = a * std::sqrt(t[i]) - b;
  exp_map(t, kk);
  double acc = 0.0;
  for (int i = 0; i < kk; ++i) acc += 1.0 / (1.0 + t[i]);
  return acc / double(kk);
}

int32_t vote(const Neighbor* top, int k_nn,
             const std::vector<uint32_t>& gallery_classes, KnnRule rule) {
  uint32_t cls[64] = {0};
  int counts[64] = {0};
  int n_cls = 0;
  for (int i = 0; i < k_nn; ++i) {
    const uint32_t c = gallery_classes[size_t(top[i].index)];
    int found = -1;
    for (int j = 0; j < n_cls; ++j)
      if (cls[j] == c) {
        found = j;
        break;
      }
    if (found < 0) {
      cls[n_cls] = c;
      counts[n_cls] = 1;
      ++n_cls;
    } else {
      ++counts[found];
    }
  }
  int best = 0;
  for (int j = 1; j < n_cls; ++j)
    if (counts[j] > counts[best]) best = j;

  if (rule == KnnRule::kMajority)
    return 2 * counts[best] > k_nn ? int32_t(cls[best]) : kReject;

  // plurality: modal class; ties go to the class of the best-ranked neighbor
  // among the tied classes (top[] is already in rank order).
  for (int i = 0; i < k_nn; ++i) {
    const uint32_t c = gallery_classes[size_t(top[i].index)];
    for (int j = 0; j < n_cls; ++j)
      if (cls[j] == c && counts[j] == counts[best]) return int32_t(c);
  }
  return int32_t(cls[best]);  // unreachable
}

void top_k_neighbors(const SampleSet& probe, const std::vector<SampleSet>& gallery,
                     const MatchHead& head, int k_nn, int64_t exclude,
                     Neighbor* top) {
  const double a = head.a(), b = head.b;
  int filled = 0;
  for (int64_t g = 0; g < int64_t(gallery.size()); ++g) {
    if (g == exclude) continue;
    const double s = mc_score(probe, gallery[size_t(g)], a, b);
    // insertion into the small sorted-by-rank array; ties keep lower index
    if (filled == k_nn && !(s > top[k_nn - 1].score)) continue;
    int pos = std::min(filled, k_nn - 1);
    while (pos > 0 && s > top[pos - 1].score) {
      top[pos] = top[pos - 1];
      --pos;
    }
    top[pos] = {s, g};
    if (filled < k_nn) ++filled;
  }
}

std::vector<SampleSet> draw_sample_sets(const std::vector<EmbeddingDistribution>& dists,
                                        int k, uint64_t seed, const char* tag) {
  std::vector<SampleSet> sets;
  sets.reserve(dists.size());
  for (size_t i = 0; i < dists.size(); ++i) {
    // a point embedding's draws are all the same vector: one is enough
    const int ki = dists[i].kind == EmbeddingDistribution::kPoint ? 1 : k;
    Rng rng(derive_seed(seed, tag, uint64_t(i)));
    sets.push_back(sample(dists[i], ki, rng));
  }
  return sets;
}

void require_k_fits(int k) {
  if (k < 1 || k * k > 1024)
    throw ConfigError("k must be in [1, 32] for the neighbor search");
}

}  // namespace

int32_t knn_classify(const SampleSet& probe, const std::vector<SampleSet>& gallery,
                     const std::vector<uint32_t>& gallery_classes,
                     const MatchHead& head, int k_nn, KnnRule rule,
                     int64_t exclude_index) {
  if (gallery.size() != gallery_classes.size())
    throw DimMismatch("gallery and classes differ in length");
  if (k_nn < 1 || k_nn > 64) throw ConfigError("k_nn must be in [1, 64]");
  const int64_t usable =
      int64_t(gallery.size()) -
      (exclude_index >= 0 && exclude_index < int64_t(gallery.size()) ? 1 : 0);
  if (usable < k_nn)
    throw GalleryTooSmall("gallery holds " + std::to_string(usable) +
                          " usable members, k_nn=" + std::to_string(k_nn));
  require_k_fits(probe.k);
  std::vector<Neighbor> top(static_cast<size_t>(k_nn));
  top_k_neighbors(probe, gallery, head, k_nn, exclude_index, top.data());
  return vote(top.data(), k_nn, gallery_classes, rule);
}

KnnBothResult knn_eval_both(const std::vector<EmbeddingDistribution>& gallery,
                            const std::vector<uint32_t>& gallery_classes,
                            const std::vector<EmbeddingDistribution>& probes,
                            const std::vector<uint32_t>& probe_classes,
                            const MatchHead& head, int k, int k_nn,
                            uint64_t seed, bool exclude_same_index, int threads) {
  if (gallery.size() != gallery_classes.size() ||
      probes.size() != probe_classes.size())
    throw DimMismatch("embedding and class lists differ in length");
  if (k_nn < 1 || k_nn > 64) throw ConfigError("k_nn must be in [1, 64]");
  require_k_fits(k);
  const int64_t usable = int64_t(gallery.size()) - (exclude_same_index ? 1 : 0);
  if (usable < k_nn)
    throw GalleryTooSmall("gallery holds " + std::to_string(usable) +
                          " usable members, k_nn=" + std::to_string(k_nn));

  const auto gsets = draw_sample_sets(gallery, k, seed, "knn-gallery");
  const auto psets = draw_sample_sets(probes, k, seed, "knn-probe");

  const int64_t n = int64_t(probes.size());
  std::vector<int32_t> pred_major(static_cast<size_t>(n)), pred_plural(static_cast<size_t>(n));
  auto work = [&](int64_t lo, int64_t hi) {
    std::vector<Neighbor> top(static_cast<size_t>(k_nn));
    for (int64_t i = lo; i < hi; ++i) {
      const int64_t exclude = exclude_same_index ? i : -1;
      top_k_neighbors(psets[size_t(i)], gsets, head, k_nn, exclude, top.data());
      pred_major[size_t(i)] = vote(top.data(), k_nn, gallery_classes, KnnRule::kMajority);
      pred_plural[size_t(i)] = vote(top.data(), k_nn, gallery_classes, KnnRule::kPlurality);
    }
  };
  const int n_threads = std::max(1, threads);
  if (n_threads == 1 || n < 2 * n_threads) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const int64_t chunk = (n + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const int64_t lo = t * chunk, hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  KnnBothResult both;
  for (KnnRule rule : {KnnRule::kMajority, KnnRule::kPlurality}) {
    KnnResult& res = rule == KnnRule::kMajority ? both.majority : both.plurality;
    const auto& pred = rule == KnnRule::kMajority ? pred_major : pred_plural;
    res.predicted = pred;
    res.correct.resize(size_t(n));
    int64_t n_correct = 0;
    for (int64_t i = 0; i < n; ++i) {
      const bool ok = pred[size_t(i)] == int32_t(probe_classes[size_t(i)]);
      res.correct[size_t(i)] = ok ? 1 : 0;
      n_correct += ok ? 1 : 0;
    }
    res.accuracy = double(n_correct) / double(n);
  }
  return both;
}

KnnResult knn_eval(const std::vector<EmbeddingDistribution>& gallery,
                   const std::vector<uint32_t>& gallery_classes,
                   const std::vector<EmbeddingDistribution>& probes,
                   const std::vector<uint32_t>& probe_classes,
                   const MatchHead& head, int k, int k_nn, KnnRule rule,
                   uint64_t seed, bool exclude_same_index, int threads) {
  auto both = knn_eval_both(gallery, gallery_classes, probes, probe_classes, head,
                            k, k_nn, seed, exclude_same_index, threads);
  return rule == KnnRule::kMajority ? std::move(both.majority)
                                    : std::move(both.plurality);
}

// ---------------------------------------------------------------------------
// uncertainty correlation

std::vector<double> self_mismatch_all(const std::vector<EmbeddingDistribution>& dists,
                                      const MatchHead& head, int k, uint64_t seed,
                                      const std::string& tag) {
  std::vector<double> eta;
  eta.reserve(dists.size());
  for (size_t i = 0; i < dists.size(); ++i) {
    Rng rng(derive_seed(seed, tag, uint64_t(i)));
    eta.push_back(self_mismatch(dists[i], head, k, rng));
  }
  return eta;
}

std::vector<int> equal_count_bins(const std::vector<double>& values, int n_bins) {
  if (n_bins < 1) throw ConfigError("n_bins must be >= 1");
  const int64_t n = int64_t(values.size());
  if (n < n_bins) throw DegenerateInput("fewer values than bins");
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return values[size_t(a)] < values[size_t(b)];
  });
  std::vector<int> bin(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r)
    bin[size_t(order[size_t(r)])] = int(r * n_bins / n);
  return bin;
}

namespace {

void finish_tau_stat(TauStat& st, int n_bins, int repeats,
                     const std::vector<double>& metric_acc,
                     const std::vector<int64_t>& metric_count,
                     const std::vector<double>& eta_acc) {
  double mean = 0.0;
  for (double t : st.taus) mean += t;
  mean /= double(st.taus.size());
  double var = 0.0;
  for (double t : st.taus) var += (t - mean) * (t - mean);
  st.mean = mean;
  st.stddev = st.taus.size() > 1 ? std::sqrt(var / double(st.taus.size() - 1)) : 0.0;
  st.bin_metric_mean.assign(size_t(n_bins), 0.0);
  st.bin_eta_mean.assign(size_t(n_bins), 0.0);
  for (int b = 0; b < n_bins; ++b) {
    if (metric_count[size_t(b)] > 0)
      st.bin_metric_mean[size_t(b)] =
          metric_acc[size_t(b)] / double(metric_count[size_t(b)]);
    st.bin_eta_mean[size_t(b)] = eta_acc[size_t(b)] / double(repeats);
  }
}

void require_varying(const std::vector<double>& eta) {
  const auto [lo, hi] = std::minmax_element(eta.begin(), eta.end());
  if (*lo == *hi)
    throw DegenerateInput("uncertainty is constant across the population");
}

}  // namespace

TauStat uncertainty_ap_correlation(const std::vector<EmbeddingDistribution>& dists,
                                   const std::vector<uint32_t>& classes,
                                   const MatchHead& head, int k, int64_t n_pairs,
                                   int n_bins, int repeats, uint64_t seed) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  Rng pair_rng(derive_seed(seed, "unc-pairs"));
  const auto pairs = make_eval_pairs(classes, n_pairs, pair_rng);

  TauStat st;
  std::vector<double> metric_acc(size_t(n_bins), 0.0), eta_acc(size_t(n_bins), 0.0);
  std::vector<int64_t> metric_count(size_t(n_bins), 0);
  std::vector<double> pair_eta(pairs.size());

  for (int r = 0; r < repeats; ++r) {
    const auto eta =
        self_mismatch_all(dists, head, k, derive_seed(seed, "unc-eta", uint64_t(r)),
                          "eta");
    for (size_t p = 0; p < pairs.size(); ++p)
      pair_eta[p] = 0.5 * (eta[size_t(pairs[p].a)] + eta[size_t(pairs[p].b)]);
    require_varying(pair_eta);

    Rng srng(derive_seed(seed, "unc-scores", uint64_t(r)));
    const auto scores = score_pairs(dists, pairs, head, k, srng);
    const auto bins = equal_count_bins(pair_eta, n_bins);

    std::vector<std::vector<double>> bin_scores(static_cast<size_t>(n_bins));
    std::vector<std::vector<int>> bin_labels(static_cast<size_t>(n_bins));
    for (size_t p = 0; p < pairs.size(); ++p) {
      bin_scores[size_t(bins[p])].push_back(scores[p]);
      bin_labels[size_t(bins[p])].push_back(pairs[p].label);
      eta_acc[size_t(bins[p])] += pair_eta[p];
    }
    std::vector<double> xs, ys;
    for (int b = 0; b < n_bins; ++b) {
      if (bin_labels[size_t(b)].empty()) continue;
      bool has_pos = false;
      for (int l : bin_labels[size_t(b)]) has_pos |= l != 0;
      if (!has_pos) continue;  // AP undefined; drop the bin this repeat
      const double ap = average_precision(bin_scores[size_t(b)], bin_labels[size_t(b)]);
      xs.push_back(double(b));
      ys.push_back(ap);
      metric_acc[size_t(b)] += ap;
      metric_count[size_t(b)] += 1;
    }
    if (xs.size() < 2) throw DegenerateInput("fewer than two scoreable bins");
    st.taus.push_back(uncertainty_tau(xs, ys));
  }

  // eta_acc holds sums over pairs x repeats; equal-count binning fixes the
  // per-bin population by rank, so the mean divisor is the same every repeat
  std::vector<int64_t> bin_pop(size_t(n_bins), 0);
  for (int64_t r = 0; r < int64_t(pairs.size()); ++r)
    bin_pop[size_t(r * n_bins / int64_t(pairs.size()))] += 1;
  for (int b = 0; b < n_bins; ++b)
    if (bin_pop[size_t(b)] > 0) eta_acc[size_t(b)] /= double(bin_pop[size_t(b)]);
  finish_tau_stat(st, n_bins, repeats, metric_acc, metric_count, eta_acc);
  return st;
}

TauStat uncertainty_knn_correlation(const std::vector<EmbeddingDistribution>& gallery,
                                    const std::vector<uint32_t>& gallery_classes,
                                    const std::vector<EmbeddingDistribution>& probes,
                                    const std::vector<uint32_t>& probe_classes,
                                    const MatchHead& head, int k, int k_nn,
                                    KnnRule rule, bool exclude_same_index,
                                    int n_bins, int repeats, uint64_t seed,
                                    int threads) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  TauStat st;
  std::vector<double> metric_acc(size_t(n_bins), 0.0), eta_acc(size_t(n_bins), 0.0);
  std::vector<int64_t> metric_count(size_t(n_bins), 0);

  for (int r = 0; r < repeats; ++r) {
    const auto eta = self_mismatch_all(
        probes, head, k, derive_seed(seed, "unc-knn-eta", uint64_t(r)), "eta");
    require_varying(eta);
    const auto knn = knn_eval(gallery, gallery_classes, probes, probe_classes,
                              head, k, k_nn, rule,
                              derive_seed(seed, "unc-knn", uint64_t(r)),
                              exclude_same_index, threads);
    const auto bins = equal_count_bins(eta, n_bins);
    std::vector<int64_t> hits(size_t(n_bins), 0), pop(size_t(n_bins), 0);
    std::vector<double> esum(size_t(n_bins), 0.0);
    for (size_t i = 0; i < eta.size(); ++i) {
      pop[size_t(bins[i])] += 1;
      hits[size_t(bins[i])] += knn.correct[i];
      esum[size_t(bins[i])] += eta[i];
    }
    std::vector<double> xs, ys;
    for (int b = 0; b < n_bins; ++b) {
      if (pop[size_t(b)] == 0) continue;
      const double acc = double(hits[size_t(b)]) / double(pop[size_t(b)]);
      xs.push_back(double(b));
      ys.push_back(acc);
      metric_acc[size_t(b)] += acc;
      metric_count[size_t(b)] += 1;
      eta_acc[size_t(b)] += esum[size_t(b)] / double(pop[size_t(b)]);
    }
    if (xs.size() < 2) throw DegenerateInput("fewer than two populated bins");
    st.taus.push_back(uncertainty_tau(xs, ys));
  }
  finish_tau_stat(st, n_bins, repeats, metric_acc, metric_count, eta_acc);
  return st;
}

// ---------------------------------------------------------------------------
// latent organization & scatter export

LatentOrder latent_order_metrics(const std::vector<double>& centroids,
                                 const std::vector<uint32_t>& class_ids,
                                 int n_digits) {
  if (n_digits != 2)
    throw WrongDimensionality("latent organization metrics need 2-digit classes");
  if (centroids.size() != class_ids.size())
    throw DimMismatch("centroids and classes differ in length");
  const size_t n = centroids.size();
  LatentOrder out;
  if (n < 2) return out;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return centroids[a] < centroids[b];
  });

  std::vector<int> share(n - 1, 0);
  for (size_t i = 0; i + 1 < n; ++i) {
    const uint32_t c1 = class_ids[order[i]], c2 = class_ids[order[i + 1]];
    const bool s = (c1 / 10 == c2 / 10) || (c1 % 10 == c2 % 10);
    share[i] = s ? 1 : 0;
    out.shared_adjacent += s ? 1 : 0;
  }
  int64_t runs = 0, total_len = 0, cur = 0;
  for (size_t i = 0; i < share.size(); ++i) {
    if (share[i]) {
      ++cur;
    } else if (cur > 0) {
      ++runs;
      total_len += cur;
      cur = 0;
    }
  }
  if (cur > 0) {
    ++runs;
    total_len += cur;
  }
  out.mean_run_length = runs > 0 ? double(total_len) / double(runs) : 0.0;
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void append_scatter_rows(std::string& csv, const std::vector<EmbeddingDistribution>& dists,
                         const std::vector<uint32_t>& classes, const char* cond,
                         int dim) {
  for (size_t i = 0; i < dists.size(); ++i) {
    for (int c = 0; c < dists[i].n_components(); ++c) {
      const auto& comp = dists[i].comps[size_t(c)];
      csv += std::to_string(classes[i]);
      csv += ',';
      csv += cond;
      csv += ',';
      csv += std::to_string(c);
      for (int d = 0; d < dim; ++d) csv += ',' + fmt(comp.mu[size_t(d)]);
      for (int d = 0; d < dim; ++d)
        csv += ',' + fmt(comp.sigma.empty() ? 0.0 : comp.sigma[size_t(d)]);
      csv += '\n';
    }
  }
}

void svg_panel(std::string& svg, const std::vector<EmbeddingDistribution>& dists,
               const std::vector<uint32_t>& classes, double x_off, double lo0,
               double lo1, double scale, const char* label) {
  svg += "<g transform=\"translate(" + fmt(x_off) + ",0)\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"600\" height=\"600\" fill=\"none\" "
         "stroke=\"#888\"/>\n";
  svg += "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"16\">";
  svg += label;
  svg += "</text>\n";
  const size_t stride = std::max<size_t>(1, dists.size() / 2000);
  for (size_t i = 0; i < dists.size(); i += stride) {
    const unsigned hue = (classes[i] * 2654435761u) % 360u;
    for (const auto& comp : dists[i].comps) {
      const double cx = (comp.mu[0] - lo0) * scale;
      const double cy = 600.0 - (comp.mu[1] - lo1) * scale;
      if (comp.sigma.empty()) {
        svg += "<circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) +
               "\" r=\"2\" fill=\"hsl(" + std::to_string(hue) +
               ",70%,45%)\" fill-opacity=\"0.6\"/>\n";
      } else {
        svg += "<ellipse cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) + "\" rx=\"" +
               fmt(3.0 * comp.sigma[0] * scale) + "\" ry=\"" +
               fmt(3.0 * comp.sigma[1] * scale) + "\" fill=\"hsl(" +
               std::to_string(hue) + ",70%,45%)\" fill-opacity=\"0.15\"/>\n";
      }
    }
  }
  svg += "</g>\n";
}

}  // namespace

void embed_scatter_export(const std::vector<EmbeddingDistribution>& clean,
                          const std::vector<EmbeddingDistribution>& corrupt,
                          const std::vector<uint32_t>& classes,
                          const std::string& csv_path,
                          const std::string& svg_path) {
  if (clean.empty() || clean.size() != corrupt.size() ||
      clean.size() != classes.size())
    throw DimMismatch("clean/corrupt/classes lists must align");
  const int dim = clean[0].dim();
  if (dim != 2 && dim != 3)
    throw UnsupportedDim("scatter export wants 2-D or 3-D embeddings, got " +
                         std::to_string(dim));

  std::string csv = "class,condition,component";
  for (int d = 0; d < dim; ++d) csv += ",mu" + std::to_string(d);
  for (int d = 0; d < dim; ++d) csv += ",sigma" + std::to_string(d);
  csv += '\n';
  append_scatter_rows(csv, clean, classes, "clean", dim);
  append_scatter_rows(csv, corrupt, classes, "corrupt", dim);
  write_file_bytes(csv_path, {reinterpret_cast<const uint8_t*>(csv.data()),
                              csv.size()});

  if (dim != 2) return;  // the figure is drawn for the 2-D study only

  double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
  for (const auto* set : {&clean, &corrupt})
    for (const auto& e : *set)
      for (const auto& comp : e.comps) {
        const double s0 = comp.sigma.empty() ? 0.0 : comp.sigma[0];
        const double s1 = comp.sigma.empty() ? 0.0 : comp.sigma[1];
        lo0 = std::min(lo0, comp.mu[0] - 3 * s0);
        hi0 = std::max(hi0, comp.mu[0] + 3 * s0);
        lo1 = std::min(lo1, comp.mu[1] - 3 * s1);
        hi1 = std::max(hi1, comp.mu[1] + 3 * s1);
      }
  const double span = std::max({hi0 - lo0, hi1 - lo1, 1e-9});
  const double scale = 600.0 / span;

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1220\" height=\"600\" "
      "viewBox=\"0 0 1220 600\">\n";
  svg_panel(svg, clean, classes, 0.0, lo0, lo1, scale, "clean");
  svg_panel(svg, corrupt, classes, 620.0, lo0, lo1, scale, "corrupt");
  svg += "</svg>\n";
  write_file_bytes(svg_path, {reinterpret_cast<const uint8_t*>(svg.data()),
                              svg.size()});
}

// ---------------------------------------------------------------------------
// report orchestration

namespace {

double mean_kl_over(const std::vector<EmbeddingDistribution>& dists,
                    uint64_t seed, const char* tag) {
  double acc = 0.0;
  for (size_t i = 0; i < dists.size(); ++i) {
    Rng rng(derive_seed(seed, tag, uint64_t(i)));
    acc += kl_to_unit_gaussian(dists[i], rng);
  }
  return acc / double(dists.size());
}

double mean_sigma_over(const std::vector<EmbeddingDistribution>& dists) {
  double acc = 0.0;
  int64_t n = 0;
  for (const auto& e : dists)
    for (const auto& comp : e.comps)
      for (double s : comp.sigma) {
        acc += s;
        ++n;
      }
  return n > 0 ? acc / double(n) : 0.0;
}

nlohmann::json tau_to_json(const TauStat& st) {
  nlohmann::json j;
  j["degenerate"] = st.degenerate;
  if (!st.degenerate) {
    j["mean"] = st.mean;
    j["stddev"] = st.stddev;
    j["taus"] = st.taus;
    j["bin_metric_mean"] = st.bin_metric_mean;
    j["bin_eta_mean"] = st.bin_eta_mean;
  }
  return j;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["representation"] = representation;
  j["embed_dim"] = embed_dim;
  j["checkpoint_step"] = checkpoint_step;
  if (ap_clean) j["verification"]["clean"]["ap"] = *ap_clean;
  if (ap_corrupt) j["verification"]["corrupt"]["ap"] = *ap_corrupt;
  for (const KnnCell& c : knn) {
    j["knn"].push_back({{"gallery", to_string(c.gallery)},
                        {"probe", to_string(c.probe)},
                        {"rule", to_string(c.rule)},
                        {"accuracy", c.accuracy}});
  }
  if (unc_ap_clean) j["uncertainty"]["ap"]["clean"] = tau_to_json(*unc_ap_clean);
  if (unc_ap_corrupt)
    j["uncertainty"]["ap"]["corrupt"] = tau_to_json(*unc_ap_corrupt);
  if (unc_knn_clean)
    j["uncertainty"]["knn"]["clean"] = tau_to_json(*unc_knn_clean);
  if (unc_knn_corrupt)
    j["uncertainty"]["knn"]["corrupt"] = tau_to_json(*unc_knn_corrupt);
  if (mean_kl_clean) j["embedding"]["clean"]["mean_kl"] = *mean_kl_clean;
  if (mean_kl_corrupt) j["embedding"]["corrupt"]["mean_kl"] = *mean_kl_corrupt;
  if (mean_sigma_clean)
    j["embedding"]["clean"]["mean_sigma"] = *mean_sigma_clean;
  if (mean_sigma_corrupt)
    j["embedding"]["corrupt"]["mean_sigma"] = *mean_sigma_corrupt;
  if (latent) {
    j["latent"]["shared_adjacent"] = latent->shared_adjacent;
    j["latent"]["mean_run_length"] = latent->mean_run_length;
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::string csv = "metric,condition,rule,value,stddev\n";
  auto row = [&](const std::string& m, const std::string& c, const std::string& r,
                 double v, double sd, bool has_sd) {
    csv += m + ',' + c + ',' + r + ',' + fmt(v) + ',' +
           (has_sd ? fmt(sd) : std::string()) + '\n';
  };
  if (ap_clean) row("verification_ap", "clean", "", *ap_clean, 0, false);
  if (ap_corrupt) row("verification_ap", "corrupt", "", *ap_corrupt, 0, false);
  for (const KnnCell& c : knn)
    row("knn_accuracy", to_string(c.gallery) + "_gallery/" + to_string(c.probe) + "_probe",
        to_string(c.rule), c.accuracy, 0, false);
  auto tau_rows = [&](const char* name, const std::optional<TauStat>& st,
                      const char* cond) {
    if (!st) return;
    if (st->degenerate)
      csv += std::string(name) + ',' + cond + ",,degenerate,\n";
    else
      row(name, cond, "", st->mean, st->stddev, true);
  };
  tau_rows("uncertainty_ap_tau", unc_ap_clean, "clean");
  tau_rows("uncertainty_ap_tau", unc_ap_corrupt, "corrupt");
  tau_rows("uncertainty_knn_tau", unc_knn_clean, "clean");
  tau_rows("uncertainty_knn_tau", unc_knn_corrupt, "corrupt");
  if (mean_kl_clean) row("mean_kl", "clean", "", *mean_kl_clean, 0, false);
  if (mean_kl_corrupt) row("mean_kl", "corrupt", "", *mean_kl_corrupt, 0, false);
  if (mean_sigma_clean) row("mean_sigma", "clean", "", *mean_sigma_clean, 0, false);
  if (mean_sigma_corrupt)
    row("mean_sigma", "corrupt", "", *mean_sigma_corrupt, 0, false);
  if (latent) {
    row("latent_shared_adjacent", "clean", "", latent->shared_adjacent, 0, false);
    row("latent_mean_run_length", "clean", "", latent->mean_run_length, 0, false);
  }
  return csv;
}

EvalReport run_eval(EncoderRunner& runner, const NDigitDataset& ds,
                    const EvalOptions& opt) {
  const EncoderConfig& ec = runner.config();
  EvalReport rep;
  rep.representation = to_string(ec.representation);
  if (ec.representation == Representation::kMog)
    rep.representation += "-" + std::to_string(ec.mog_components);
  rep.embed_dim = ec.embed_dim;

  const MatchHead head = runner.head();
  const int n_digits = ds.n_digits();

  std::vector<uint32_t> classes;
  classes.reserve(ds.test_clean.size());
  for (const auto& img : ds.test_clean) classes.push_back(img.class_id);
  std::vector<uint32_t> classes_corrupt;
  classes_corrupt.reserve(ds.test_corrupt.size());
  for (const auto& img : ds.test_corrupt) classes_corrupt.push_back(img.class_id);

  const auto clean = runner.encode(pixels_to_array(ds.test_clean, n_digits));
  const auto corrupt = runner.encode(pixels_to_array(ds.test_corrupt, n_digits));

  if (opt.verification) {
    Rng r1(derive_seed(opt.seed, "verify-clean"));
    rep.ap_clean =
        verification_eval(clean, classes, head, opt.k, opt.n_pairs, r1).ap;
    Rng r2(derive_seed(opt.seed, "verify-corrupt"));
    rep.ap_corrupt =
        verification_eval(corrupt, classes_corrupt, head, opt.k, opt.n_pairs, r2).ap;
  }

  if (opt.knn) {
    struct Cond {
      Condition gallery, probe;
      const std::vector<EmbeddingDistribution>*g, *p;
      const std::vector<uint32_t>*gc, *pc;
      const char* tag;
    };
    const Cond conds[] = {
        {Condition::kClean, Condition::kClean, &clean, &clean, &classes, &classes,
         "knn-cc"},
        {Condition::kClean, Condition::kCorrupt, &clean, &corrupt, &classes,
         &classes_corrupt, "knn-ck"},
        {Condition::kCorrupt, Condition::kClean, &corrupt, &clean,
         &classes_corrupt, &classes, "knn-kc"},
    };
    for (const Cond& c : conds) {
      auto both = knn_eval_both(*c.g, *c.gc, *c.p, *c.pc, head, opt.k, opt.k_nn,
                                derive_seed(opt.seed, c.tag), true, opt.threads);
      rep.knn.push_back({c.gallery, c.probe, KnnRule::kMajority, both.majority.accuracy});
      rep.knn.push_back({c.gallery, c.probe, KnnRule::kPlurality, both.plurality.accuracy});
    }
  }

  auto tau_or_degenerate = [&](auto&& fn) -> TauStat {
    try {
      return fn();
    } catch (const DegenerateInput&) {
      TauStat st;
      st.degenerate = true;
      return st;
    }
  };

  if (opt.uncertainty_ap) {
    rep.unc_ap_clean = tau_or_degenerate([&] {
      return uncertainty_ap_correlation(clean, classes, head, opt.k, opt.n_pairs,
                                        opt.n_bins, opt.repeats,
                                        derive_seed(opt.seed, "unc-ap-clean"));
    });
    rep.unc_ap_corrupt = tau_or_degenerate([&] {
      return uncertainty_ap_correlation(corrupt, classes_corrupt, head, opt.k,
                                        opt.n_pairs, opt.n_bins, opt.repeats,
                                        derive_seed(opt.seed, "unc-ap-corrupt"));
    });
  }

  if (opt.uncertainty_knn) {
    rep.unc_knn_clean = tau_or_degenerate([&] {
      return uncertainty_knn_correlation(
          clean, classes, clean, classes, head, opt.k, opt.k_nn,
          KnnRule::kMajority, true, opt.n_bins, opt.repeats,
          derive_seed(opt.seed, "unc-knn-clean"), opt.threads);
    });
    rep.unc_knn_corrupt = tau_or_degenerate([&] {
      return uncertainty_knn_correlation(
          clean, classes, corrupt, classes_corrupt, head, opt.k, opt.k_nn,
          KnnRule::kMajority, true, opt.n_bins, opt.repeats,
          derive_seed(opt.seed, "unc-knn-corrupt"), opt.threads);
    });
  }

  if (ec.stochastic()) {
    rep.mean_kl_clean = mean_kl_over(clean, opt.seed, "kl-clean");
    rep.mean_kl_corrupt = mean_kl_over(corrupt, opt.seed, "kl-corrupt");
    rep.mean_sigma_clean = mean_sigma_over(clean);
    rep.mean_sigma_corrupt = mean_sigma_over(corrupt);
  }

  if (ec.embed_dim == 1 && n_digits == 2) {
    // per-class centroid of the mixture mean over the clean test set
    std::unordered_map<uint32_t, std::pair<double, int64_t>> acc;
    for (size_t i = 0; i < clean.size(); ++i) {
      double m = 0.0;
      for (const auto& comp : clean[i].comps) m += comp.mu[0];
      m /= double(clean[i].n_components());
      auto& slot = acc[classes[i]];
      slot.first += m;
      slot.second += 1;
    }
    std::vector<uint32_t> cids;
    cids.reserve(acc.size());
    for (const auto& [c, _] : acc) cids.push_back(c);
    std::sort(cids.begin(), cids.end());
    std::vector<double> cents;
    cents.reserve(cids.size());
    for (uint32_t c : cids) cents.push_back(acc[c].first / double(acc[c].second));
    rep.latent = latent_order_metrics(cents, cids, n_digits);
  }

  return rep;
}

}  // namespace hedge
