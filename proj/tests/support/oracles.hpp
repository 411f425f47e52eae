#pragma once
// Brute-force reference implementations, kept deliberately dumb and written
// from the quantity definitions rather than from the library code. Tests
// compare the fast paths against these.
#include <cstdint>
#include <vector>

#include "hedge/hib.hpp"

namespace oracle {

// AP straight from the definition: stable-sort by descending score, average
// the precision at each positive rank. Precisions accumulate in rank order.
double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels);

// Tie-aware pair counts for Kendall's tau, via value-grouping rather than
// the O(n^2) pair classification the library uses. Counts are integers, so
// agreement is exact.
struct TauCounts {
  int64_t concordant = 0, discordant = 0;
  int64_t pairs = 0;        // n(n-1)/2
  int64_t tied_x = 0, tied_y = 0;  // pairs tied in that variable (both-ties count in each)
};
TauCounts tau_counts(const std::vector<double>& xs, const std::vector<double>& ys);

// (1/K^2) sum of sigmoid(b - a*dist) over all cross pairs, scalar loop.
double match_prob_sets(const hedge::SampleSet& s1, const hedge::SampleSet& s2,
                       const hedge::MatchHead& head);

// KL(N(mu, diag sigma^2) || N(0, I)) by per-dimension Simpson integration of
// p(x) * (ln p(x) - ln q(x)) over [mu - 15 sigma, mu + 15 sigma].
double gauss_kl_quadrature(const std::vector<double>& mu,
                           const std::vector<double>& sigma);

// Same integral for a 1-D mixture with uniform weights.
double mog1d_kl_quadrature(const std::vector<double>& mus,
                           const std::vector<double>& sigmas);

// KNN vote straight from the rules: score every gallery member, order by
// (score desc, index asc), take the first k_nn, then majority (> k/2 else
// -1) or plurality (modal count, tie to the best-ranked tied class).
int32_t knn_vote(const hedge::SampleSet& probe,
                 const std::vector<hedge::SampleSet>& gallery,
                 const std::vector<uint32_t>& classes,
                 const hedge::MatchHead& head, int k_nn, bool majority,
                 int64_t exclude);

}  // namespace oracle
