#pragma once
#include <vector>

#include "hedge/graph.hpp"
#include "hedge/rng.hpp"

namespace hedge {

// The probabilistic pieces: embeddings as distributions over R^D, the
// sigmoid-of-distance match probability and its Monte-Carlo estimate over
// embedding draws, the soft/hard contrastive losses, the KL regularizer, and
// the self-mismatch uncertainty. Two surfaces:
//  - plain functions on concrete vectors (evaluation, oracles, tests);
//  - build_* helpers that assemble the same math as graph nodes (training).

// Scalars of the match head: a = softplus(a_raw) keeps a > 0, b is free.
struct MatchHead {
  double a_raw = 0.0;
  double b = 0.0;
  double a() const;
};

struct EmbeddingDistribution {
  enum Kind { kPoint, kGaussian, kMog };
  struct Component {
    std::vector<double> mu;
    std::vector<double> sigma;  // empty for point
  };
  Kind kind = kPoint;
  std::vector<Component> comps;  // one for point/gaussian, C for mog
                                 // (mixture weights are uniform 1/C)

  int dim() const { return comps.empty() ? 0 : int(comps[0].mu.size()); }
  int n_components() const { return int(comps.size()); }

  static EmbeddingDistribution point(std::vector<double> z);
  static EmbeddingDistribution gaussian(std::vector<double> mu,
                                        std::vector<double> sigma);
  static EmbeddingDistribution mog(std::vector<Component> comps);

  void check() const;  // NonPositiveSigma / DimMismatch on broken invariants
};

struct SampleSet {
  int k = 0;
  int dim = 0;
  std::vector<double> samples;           // k x dim row-major
  std::vector<int> source_component;     // per draw; all zero for point/gaussian

  const double* at(int i) const { return samples.data() + size_t(i) * dim; }
};

// sigma(-a*||z1-z2|| + b)
double match_prob_point(const std::vector<double>& z1, const std::vector<double>& z2,
                        const MatchHead& head);

// -log p or -log(1-p), with p clamped to [1e-12, 1-1e-12] first
double soft_contrastive_loss(double p, int match_label);

// ||z1-z2||^2 for a match, max(M - ||z1-z2||, 0)^2 otherwise
double hard_contrastive_loss(const std::vector<double>& z1,
                             const std::vector<double>& z2, int match_label,
                             double margin);

// K draws; gaussian via z = sigma*eps + mu; mog stratified (K/C per
// component, in component order), raising StratificationError unless C | K;
// point returns K copies.
SampleSet sample(const EmbeddingDistribution& dist, int k, Rng& rng);

// (1/K^2) sum over all cross pairs of sigma(-a*dist + b). Two point
// distributions short-circuit to match_prob_point. The SampleSet overload
// scores precomputed draws — sharing a seed between the two sample calls
// gives the exactly-symmetric variant.
double match_prob_mc(const EmbeddingDistribution& d1, const EmbeddingDistribution& d2,
                     const MatchHead& head, int k, Rng& rng);
double match_prob_mc(const SampleSet& s1, const SampleSet& s2, const MatchHead& head);

// KL(dist || N(0, I)). Gaussian: closed form 0.5 * sum(mu^2 + s^2 - 1 -
// ln s^2), no rng touched. MoG: stratified Monte-Carlo mean of
// ln p(z) - ln r(z) over k_kl draws.
double kl_to_unit_gaussian(const EmbeddingDistribution& dist, Rng& rng, int k_kl = 32);

// soft_contrastive(match_prob_mc) + beta * (KL(d1) + KL(d2)); beta > 0
// requires distributions with a density (not point).
double vib_emb_loss(const EmbeddingDistribution& d1, const EmbeddingDistribution& d2,
                    int match_label, const MatchHead& head, double beta, int k,
                    Rng& rng);

// eta(x) = 1 - match_prob_mc(dist, dist) with two independent sample sets
double self_mismatch(const EmbeddingDistribution& dist, const MatchHead& head, int k,
                     Rng& rng);

// log density ln p(z) of a gaussian/mog embedding at z (used by oracles too)
double log_density(const EmbeddingDistribution& dist, const double* z);

// ---------------------------------------------------------------------------
// Graph builders. Shapes follow the trainer's batched layout: B images make
// P = B/2 pairs (image i pairs with image i + P); mu/sigma are [B,C,D],
// sample noise [B,K,D], labels [P].

// stratified reparameterized draws: [B,C,D] x [B,K,D] -> z [B,K,D]
int build_stratified_samples(Graph& g, int mu_bcd, int sigma_bcd, int eps_bkd);

// z [B,K,D] -> per-pair MC match probability [P]; a_raw/b are {1} leaves.
// Distances use sqrt(ssq + 1e-12); the shift keeps the gradient finite if a
// cross pair ever coincides.
int build_match_mc(Graph& g, int z_bkd, int a_raw, int b);

// per-pair soft contrastive loss [P] from probabilities [P] and labels [P]
int build_soft_ce(Graph& g, int p, int labels);

// closed-form unit-gaussian KL per image: mu,sigma [B,1,D] -> [B]
int build_gauss_kl(Graph& g, int mu_b1d, int sigma_b1d);

// Monte-Carlo unit-gaussian KL per image for a mixture: [B,C,D] + noise
// [B,K_kl,D] -> [B]
int build_mog_kl_mc(Graph& g, int mu_bcd, int sigma_bcd, int eps_kl);

// per-pair hard contrastive loss [P] from point embeddings z [B,1,D]
int build_hard_loss(Graph& g, int z_b1d, int labels, double margin);

}  // namespace hedge
