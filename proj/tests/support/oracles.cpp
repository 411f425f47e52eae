#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace oracle {

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  const size_t n = scores.size();
  std::vector<std::pair<double, size_t>> ranked;  // (-score, original index)
  ranked.reserve(n);
  for (size_t i = 0; i < n; ++i) ranked.push_back({-scores[i], i});
  std::sort(ranked.begin(), ranked.end());  // ties fall back to index order

  double sum = 0.0;
  int64_t positives_seen = 0, total_positives = 0;
  for (size_t i = 0; i < n; ++i) total_positives += labels[i] ? 1 : 0;
  for (size_t rank = 1; rank <= n; ++rank) {
    if (labels[ranked[rank - 1].second]) {
      ++positives_seen;
      sum += double(positives_seen) / double(rank);
    }
  }
  return sum / double(total_positives);
}

TauCounts tau_counts(const std::vector<double>& xs, const std::vector<double>& ys) {
  const int64_t n = int64_t(xs.size());
  TauCounts c;
  c.pairs = n * (n - 1) / 2;

  // tie counts by value grouping: sum over groups of size g of g(g-1)/2
  auto group_ties = [](const std::vector<double>& v) {
    std::map<double, int64_t> groups;
    for (double x : v) groups[x] += 1;
    int64_t t = 0;
    for (const auto& [value, g] : groups) t += g * (g - 1) / 2;
    return t;
  };
  c.tied_x = group_ties(xs);
  c.tied_y = group_ties(ys);

  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double s = (xs[size_t(i)] - xs[size_t(j)]) * (ys[size_t(i)] - ys[size_t(j)]);
      if (s > 0) ++c.concordant;
      if (s < 0) ++c.discordant;
    }
  return c;
}

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double log_normal_1d(double x, double mu, double sigma) {
  const double d = (x - mu) / sigma;
  return -0.5 * d * d - std::log(sigma) - 0.5 * std::log(2.0 * 3.14159265358979323846);
}

// Simpson over [lo, hi] with an even number of panels.
template <class F>
double simpson(F f, double lo, double hi, int panels) {
  const double h = (hi - lo) / panels;
  double s = f(lo) + f(hi);
  for (int i = 1; i < panels; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

double match_prob_sets(const hedge::SampleSet& s1, const hedge::SampleSet& s2,
                       const hedge::MatchHead& head) {
  const double a = head.a(), b = head.b;
  double acc = 0.0;
  for (int i = 0; i < s1.k; ++i)
    for (int j = 0; j < s2.k; ++j) {
      double ssq = 0.0;
      for (int d = 0; d < s1.dim; ++d) {
        const double diff = s1.at(i)[d] - s2.at(j)[d];
        ssq += diff * diff;
      }
      acc += sigmoid(b - a * std::sqrt(ssq));
    }
  return acc / (double(s1.k) * double(s2.k));
}

double gauss_kl_quadrature(const std::vector<double>& mu,
                           const std::vector<double>& sigma) {
  double kl = 0.0;
  for (size_t d = 0; d < mu.size(); ++d) {
    const double m = mu[d], s = sigma[d];
    auto integrand = [m, s](double x) {
      const double lp = log_normal_1d(x, m, s);
      const double lq = log_normal_1d(x, 0.0, 1.0);
      return std::exp(lp) * (lp - lq);
    };
    kl += simpson(integrand, m - 15.0 * s, m + 15.0 * s, 40000);
  }
  return kl;
}

double mog1d_kl_quadrature(const std::vector<double>& mus,
                           const std::vector<double>& sigmas) {
  const size_t c_count = mus.size();
  double lo = mus[0], hi = mus[0], smax = sigmas[0];
  for (size_t c = 0; c < c_count; ++c) {
    lo = std::min(lo, mus[c]);
    hi = std::max(hi, mus[c]);
    smax = std::max(smax, sigmas[c]);
  }
  lo -= 15.0 * smax;
  hi += 15.0 * smax;
  auto log_p = [&](double x) {
    double best = -1e300;
    std::vector<double> ls(c_count);
    for (size_t c = 0; c < c_count; ++c) {
      ls[c] = log_normal_1d(x, mus[c], sigmas[c]) - std::log(double(c_count));
      best = std::max(best, ls[c]);
    }
    double s = 0.0;
    for (double l : ls) s += std::exp(l - best);
    return best + std::log(s);
  };
  auto integrand = [&](double x) {
    const double lp = log_p(x);
    return std::exp(lp) * (lp - log_normal_1d(x, 0.0, 1.0));
  };
  return simpson(integrand, lo, hi, 120000);
}

int32_t knn_vote(const hedge::SampleSet& probe,
                 const std::vector<hedge::SampleSet>& gallery,
                 const std::vector<uint32_t>& classes,
                 const hedge::MatchHead& head, int k_nn, bool majority,
                 int64_t exclude) {
  std::vector<std::pair<double, int64_t>> order;  // (-score, index)
  for (int64_t g = 0; g < int64_t(gallery.size()); ++g) {
    if (g == exclude) continue;
    order.push_back({-match_prob_sets(probe, gallery[size_t(g)], head), g});
  }
  std::sort(order.begin(), order.end());
  order.resize(size_t(k_nn));

  std::map<uint32_t, int> counts;
  for (const auto& [neg, idx] : order) counts[classes[size_t(idx)]] += 1;
  int best = 0;
  for (const auto& [cls, cnt] : counts) best = std::max(best, cnt);

  if (majority) {
    if (2 * best <= k_nn) return -1;
    for (const auto& [cls, cnt] : counts)
      if (cnt == best) return int32_t(cls);
  }
  // plurality: earliest-ranked neighbor whose class is tied for the max
  for (const auto& [neg, idx] : order)
    if (counts[classes[size_t(idx)]] == best) return int32_t(classes[size_t(idx)]);
  return -1;
}

}  // namespace oracle
