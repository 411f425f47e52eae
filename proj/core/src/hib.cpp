#include "hedge/hib.hpp"

#include <cmath>

#include "hedge/errors.hpp"

namespace hedge {
namespace {

constexpr double kProbClamp = 1e-12;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double euclid(const std::vector<double>& z1, const std::vector<double>& z2) {
  if (z1.size() != z2.size())
    throw DimMismatch("embedding dims " + std::to_string(z1.size()) + " vs " +
                      std::to_string(z2.size()));
  double ssq = 0.0;
  for (size_t i = 0; i < z1.size(); ++i) {
    double d = z1[i] - z2[i];
    ssq += d * d;
  }
  return std::sqrt(ssq);
}

}  // namespace

double MatchHead::a() const {
  return std::max(a_raw, 0.0) + std::log1p(std::exp(-std::abs(a_raw)));
}

EmbeddingDistribution EmbeddingDistribution::point(std::vector<double> z) {
  EmbeddingDistribution d;
  d.kind = kPoint;
  d.comps.push_back({std::move(z), {}});
  return d;
}

EmbeddingDistribution EmbeddingDistribution::gaussian(std::vector<double> mu,
                                                      std::vector<double> sigma) {
  EmbeddingDistribution d;
  d.kind = kGaussian;
  d.comps.push_back({std::move(mu), std::move(sigma)});
  d.check();
  return d;
}

EmbeddingDistribution EmbeddingDistribution::mog(std::vector<Component> comps) {
  EmbeddingDistribution d;
  d.kind = kMog;
  d.comps = std::move(comps);
  if (d.comps.empty()) throw Error("mog needs at least one component");
  d.check();
  return d;
}

void EmbeddingDistribution::check() const {
  if (comps.empty()) throw Error("embedding distribution has no components");
  size_t dim = comps[0].mu.size();
  for (const auto& c : comps) {
    if (c.mu.size() != dim) throw DimMismatch("component dims differ");
    if (kind == kPoint) continue;
    if (c.sigma.size() != dim) throw DimMismatch("mu/sigma dims differ");
    for (double s : c.sigma)
      if (!(s > 0.0)) throw NonPositiveSigma("sigma " + std::to_string(s));
  }
}

double match_prob_point(const std::vector<double>& z1, const std::vector<double>& z2,
                        const MatchHead& head) {
  return sigmoid(-head.a() * euclid(z1, z2) + head.b);
}

double soft_contrastive_loss(double p, int match_label) {
  p = std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
  return match_label ? -std::log(p) : -std::log(1.0 - p);
}

double hard_contrastive_loss(const std::vector<double>& z1,
                             const std::vector<double>& z2, int match_label,
                             double margin) {
  if (margin <= 0.0) throw Error("hard contrastive margin must be positive");
  double d = euclid(z1, z2);
  if (match_label) return d * d;
  double h = std::max(margin - d, 0.0);
  return h * h;
}

SampleSet sample(const EmbeddingDistribution& dist, int k, Rng& rng) {
  if (k < 1) throw Error("sample: K must be >= 1");
  dist.check();
  int dim = dist.dim();
  SampleSet out;
  out.k = k;
  out.dim = dim;
  out.samples.resize(size_t(k) * dim);
  out.source_component.assign(size_t(k), 0);
  if (dist.kind == EmbeddingDistribution::kPoint) {
    for (int i = 0; i < k; ++i)
      for (int d = 0; d < dim; ++d) out.samples[size_t(i) * dim + d] = dist.comps[0].mu[d];
    return out;
  }
  int c_count = dist.n_components();
  if (k % c_count != 0)
    throw StratificationError("C=" + std::to_string(c_count) +
                              " does not divide K=" + std::to_string(k));
  int per = k / c_count;
  for (int c = 0; c < c_count; ++c) {
    const auto& comp = dist.comps[c];
    for (int i = 0; i < per; ++i) {
      int row = c * per + i;
      out.source_component[size_t(row)] = c;
      for (int d = 0; d < dim; ++d)
        out.samples[size_t(row) * dim + d] =
            comp.sigma[d] * rng.normal() + comp.mu[d];
    }
  }
  return out;
}

double match_prob_mc(const SampleSet& s1, const SampleSet& s2, const MatchHead& head) {
  if (s1.dim != s2.dim) throw DimMismatch("sample sets of different dims");
  double a = head.a(), b = head.b;
  double acc = 0.0;
  for (int i = 0; i < s1.k; ++i) {
    const double* p1 = s1.at(i);
    for (int j = 0; j < s2.k; ++j) {
      const double* p2 = s2.at(j);
      double ssq = 0.0;
      for (int d = 0; d < s1.dim; ++d) {
        double diff = p1[d] - p2[d];
        ssq += diff * diff;
      }
      acc += sigmoid(-a * std::sqrt(ssq) + b);
    }
  }
  return acc / (double(s1.k) * double(s2.k));
}

double match_prob_mc(const EmbeddingDistribution& d1, const EmbeddingDistribution& d2,
                     const MatchHead& head, int k, Rng& rng) {
  if (d1.kind == EmbeddingDistribution::kPoint &&
      d2.kind == EmbeddingDistribution::kPoint)
    return match_prob_point(d1.comps[0].mu, d2.comps[0].mu, head);
  SampleSet s1 = sample(d1, k, rng);
  SampleSet s2 = sample(d2, k, rng);
  return match_prob_mc(s1, s2, head);
}

double log_density(const EmbeddingDistribution& dist, const double* z) {
  if (dist.kind == EmbeddingDistribution::kPoint)
    throw ConfigError("point embeddings have no density");
  int dim = dist.dim();
  int c_count = dist.n_components();
  // log( (1/C) sum_c N(z; mu_c, sigma_c) ) via max-shifted logsumexp
  double best = -1e300;
  std::vector<double> logs(static_cast<size_t>(c_count));
  for (int c = 0; c < c_count; ++c) {
    const auto& comp = dist.comps[c];
    double q = 0.0, lognorm = 0.0;
    for (int d = 0; d < dim; ++d) {
      double u = (z[d] - comp.mu[d]) / comp.sigma[d];
      q += u * u;
      lognorm += std::log(comp.sigma[d]);
    }
    logs[size_t(c)] = -0.5 * q - lognorm - 0.5 * dim * kLog2Pi;
    best = std::max(best, logs[size_t(c)]);
  }
  double s = 0.0;
  for (double l : logs) s += std::exp(l - best);
  return best + std::log(s) - std::log(double(c_count));
}

double kl_to_unit_gaussian(const EmbeddingDistribution& dist, Rng& rng, int k_kl) {
  dist.check();
  if (dist.kind == EmbeddingDistribution::kPoint)
    throw ConfigError("KL to the unit gaussian is undefined for point embeddings");
  if (dist.kind == EmbeddingDistribution::kGaussian) {
    const auto& c = dist.comps[0];
    double acc = 0.0;
    for (size_t d = 0; d < c.mu.size(); ++d) {
      double s2 = c.sigma[d] * c.sigma[d];
      acc += c.mu[d] * c.mu[d] + s2 - 1.0 - std::log(s2);
    }
    return 0.5 * acc;
  }
  // mog: stratified MC estimate of E_p[ln p(z) - ln r(z)]
  SampleSet s = sample(dist, k_kl, rng);
  int dim = s.dim;
  double acc = 0.0;
  for (int i = 0; i < s.k; ++i) {
    const double* z = s.at(i);
    double lnr = -0.5 * dim * kLog2Pi;
    for (int d = 0; d < dim; ++d) lnr -= 0.5 * z[d] * z[d];
    acc += log_density(dist, z) - lnr;
  }
  return acc / double(s.k);
}

double vib_emb_loss(const EmbeddingDistribution& d1, const EmbeddingDistribution& d2,
                    int match_label, const MatchHead& head, double beta, int k,
                    Rng& rng) {
  if (beta < 0.0) throw Error("beta must be >= 0");
  double p = match_prob_mc(d1, d2, head, k, rng);
  double loss = soft_contrastive_loss(p, match_label);
  if (beta > 0.0)
    loss += beta * (kl_to_unit_gaussian(d1, rng) + kl_to_unit_gaussian(d2, rng));
  return loss;
}

double self_mismatch(const EmbeddingDistribution& dist, const MatchHead& head, int k,
                     Rng& rng) {
  return 1.0 - match_prob_mc(dist, dist, head, k, rng);
}

// ---------------------------------------------------------------------------
// graph builders

int build_stratified_samples(Graph& g, int mu_bcd, int sigma_bcd, int eps_bkd) {
  const auto& ms = g.value(mu_bcd).shape;
  const auto& es = g.value(eps_bkd).shape;
  if (ms.size() != 3 || es.size() != 3 || ms[0] != es[0])
    throw ShapeMismatch("want mu [B,C,D] and eps [B,K,D]");
  int64_t c_count = ms[1], k = es[1];
  if (k % c_count != 0)
    throw StratificationError("C=" + std::to_string(c_count) +
                              " does not divide K=" + std::to_string(k));
  if (c_count == 1) return g.reparameterize(mu_bcd, sigma_bcd, eps_bkd);
  int64_t per = k / c_count;
  std::vector<int> parts;
  for (int64_t c = 0; c < c_count; ++c) {
    int mu_c = g.slice(mu_bcd, 1, c, c + 1);
    int sg_c = g.slice(sigma_bcd, 1, c, c + 1);
    int ep_c = g.slice(eps_bkd, 1, c * per, (c + 1) * per);
    parts.push_back(g.reparameterize(mu_c, sg_c, ep_c));
  }
  return g.concat(parts, 1);
}

int build_match_mc(Graph& g, int z_bkd, int a_raw, int b) {
  const auto& zs = g.value(z_bkd).shape;
  if (zs.size() != 3 || zs[0] % 2 != 0)
    throw ShapeMismatch("want z [B,K,D] with even B");
  int64_t bsz = zs[0], k = zs[1], dim = zs[2], pairs = bsz / 2;
  int za = g.reshape(g.slice(z_bkd, 0, 0, pairs), {pairs, k, 1, dim});
  int zb = g.reshape(g.slice(z_bkd, 0, pairs, bsz), {pairs, 1, k, dim});
  int ssq = g.sum_axes(g.square(g.sub(za, zb)), {3});   // [P,K,K]
  int dist = g.sqrt_(g.affine_const(ssq, 1.0, 1e-12));
  int a = g.softplus(a_raw);
  int y = g.sub(b, g.mul(dist, a));
  return g.mean_axes(g.sigmoid(y), {1, 2});  // [P]
}

int build_soft_ce(Graph& g, int p, int labels) {
  int pc = g.clamp(p, 1e-12, 1.0 - 1e-12);
  int log_p = g.log_(pc);
  int log_np = g.log_(g.affine_const(pc, -1.0, 1.0));
  int pos = g.mul(labels, log_p);
  int neg = g.mul(g.affine_const(labels, -1.0, 1.0), log_np);
  return g.affine_const(g.add(pos, neg), -1.0, 0.0);  // [P]
}

int build_gauss_kl(Graph& g, int mu_b1d, int sigma_b1d) {
  const auto& ms = g.value(mu_b1d).shape;
  if (ms.size() != 3 || ms[1] != 1)
    throw ShapeMismatch("closed-form KL wants a single component [B,1,D]");
  int64_t bsz = ms[0], dim = ms[2];
  int mu = g.reshape(mu_b1d, {bsz, dim});
  int sg = g.reshape(sigma_b1d, {bsz, dim});
  // 0.5 * sum_d (mu^2 + s^2 - 1 - 2 ln s)
  int t = g.sub(g.add(g.square(mu), g.square(sg)),
                g.affine_const(g.log_(sg), 2.0, 1.0));
  return g.affine_const(g.sum_axes(t, {1}), 0.5, 0.0);  // [B]
}

int build_mog_kl_mc(Graph& g, int mu_bcd, int sigma_bcd, int eps_kl) {
  const auto& ms = g.value(mu_bcd).shape;
  int64_t c_count = ms[1], dim = ms[2];
  int z = build_stratified_samples(g, mu_bcd, sigma_bcd, eps_kl);  // [B,Kkl,D]
  int64_t k_kl = g.value(z).shape[1];
  std::vector<int> logs;
  for (int64_t c = 0; c < c_count; ++c) {
    int mu_c = g.slice(mu_bcd, 1, c, c + 1);     // [B,1,D]
    int sg_c = g.slice(sigma_bcd, 1, c, c + 1);
    int u = g.div(g.sub(z, mu_c), sg_c);          // [B,Kkl,D]
    int q = g.sum_axes(g.square(u), {2});         // [B,Kkl]
    int lognorm = g.sum_axes(g.log_(sg_c), {2});  // [B,1]
    int ln_c = g.sub(g.affine_const(q, -0.5, -0.5 * double(dim) * 1.8378770664093454836),
                     lognorm);                    // [B,Kkl]
    logs.push_back(g.reshape(ln_c, {ms[0], k_kl, 1}));
  }
  int lnp = g.affine_const(g.logsumexp(g.concat(logs, 2), 2), 1.0,
                           -std::log(double(c_count)));  // [B,Kkl]
  int lnr = g.affine_const(g.sum_axes(g.square(z), {2}), -0.5,
                           -0.5 * double(dim) * 1.8378770664093454836);
  return g.mean_axes(g.sub(lnp, lnr), {1});  // [B]
}

int build_hard_loss(Graph& g, int z_b1d, int labels, double margin) {
  if (margin <= 0.0) throw Error("hard contrastive margin must be positive");
  const auto& zs = g.value(z_b1d).shape;
  if (zs.size() != 3 || zs[1] != 1 || zs[0] % 2 != 0)
    throw ShapeMismatch("want point embeddings [B,1,D] with even B");
  int64_t bsz = zs[0], pairs = bsz / 2;
  int za = g.slice(z_b1d, 0, 0, pairs);
  int zb = g.slice(z_b1d, 0, pairs, bsz);
  int ssq = g.reshape(g.sum_axes(g.square(g.sub(za, zb)), {2}), {pairs});
  int dist = g.sqrt_(g.affine_const(ssq, 1.0, 1e-12));
  int hinge = g.relu(g.affine_const(dist, -1.0, margin));
  int pos = g.mul(labels, ssq);  // match branch uses the exact squared distance
  int neg = g.mul(g.affine_const(labels, -1.0, 1.0), g.square(hinge));
  return g.add(pos, neg);  // [P]
}

}  // namespace hedge
