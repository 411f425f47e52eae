#include <cmath>
#include <vector>

#include "doctest.h"
#include "hedge/errors.hpp"
#include "hedge/hib.hpp"
#include "hedge/rng.hpp"
#include "support/oracles.hpp"

using namespace hedge;

namespace {

constexpr double kPi = 3.14159265358979323846;

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

EmbeddingDistribution random_gaussian(int d, Rng& rng) {
  std::vector<double> mu(d), sg(d);
  for (double& v : mu) v = rng.uniform(-1.0, 1.0);
  for (double& v : sg) v = rng.uniform(0.2, 1.0);
  return EmbeddingDistribution::gaussian(mu, sg);
}

double sample_variance(const std::vector<double>& xs) {
  double mean = 0.0;
  for (const double x : xs) mean += x;
  mean /= double(xs.size());
  double acc = 0.0;
  for (const double x : xs) acc += (x - mean) * (x - mean);
  return acc / double(xs.size() - 1);
}

}  // namespace

TEST_SUITE_BEGIN("hib");

TEST_CASE("match head softplus keeps the scale positive") {
  CHECK(MatchHead{0.5413248546129181, 0.0}.a() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(MatchHead{0.0, 0.0}.a() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(MatchHead{-40.0, 0.0}.a() > 0.0);
  CHECK(MatchHead{-40.0, 0.0}.a() == doctest::Approx(std::exp(-40.0)).epsilon(1e-6));
}

TEST_CASE("match probability at distance ln 3 is a quarter") {
  // a=1, b=0: sigma(-ln 3) = 1/(1+3)
  const MatchHead head{0.5413248546129181, 0.0};
  const std::vector<double> z1 = {0.0, 0.0};
  const std::vector<double> z2 = {std::log(3.0), 0.0};
  CHECK(match_prob_point(z1, z2, head) == doctest::Approx(0.25).epsilon(1e-12));
  // coincident points hit sigma(b)
  CHECK(match_prob_point(z1, z1, MatchHead{0.5413248546129181, 2.0}) ==
        doctest::Approx(sigmoid(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(match_prob_point({0.0}, {0.0, 0.0}, head), DimMismatch);
}

TEST_CASE("soft contrastive loss with clamping") {
  CHECK(soft_contrastive_loss(0.25, 1) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(soft_contrastive_loss(0.25, 0) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(soft_contrastive_loss(0.0, 1) == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
  CHECK(soft_contrastive_loss(1.0, 0) == doctest::Approx(-std::log(1e-12)).epsilon(1e-4));
}

TEST_CASE("hard contrastive loss hinges on the margin") {
  const std::vector<double> z1 = {0.0, 0.0};
  const std::vector<double> z2 = {3.0, 4.0};  // distance 5
  CHECK(hard_contrastive_loss(z1, z2, 1, 2.0) == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(hard_contrastive_loss(z1, z2, 0, 2.0) == 0.0);  // d >= margin
  const std::vector<double> close = {1.0, 0.0};
  CHECK(hard_contrastive_loss(z1, close, 0, 2.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(hard_contrastive_loss(z1, z2, 0, 0.0), Error);
}

TEST_CASE("distribution invariants are enforced") {
  CHECK_THROWS_AS(EmbeddingDistribution::gaussian({0.0}, {0.0}).check(),
                  NonPositiveSigma);
  CHECK_THROWS_AS(EmbeddingDistribution::gaussian({0.0}, {-1.0}).check(),
                  NonPositiveSigma);
  CHECK_THROWS_AS(
      EmbeddingDistribution::mog({{{0.0, 0.0}, {1.0, 1.0}}, {{0.0}, {1.0}}}).check(),
      DimMismatch);
  CHECK_NOTHROW(EmbeddingDistribution::point({1.0, 2.0}).check());
}

TEST_CASE("sampling: point copies, mog stratifies in component order") {
  Rng rng(61);
  const EmbeddingDistribution pt = EmbeddingDistribution::point({1.5, -2.0});
  const SampleSet ps = sample(pt, 4, rng);
  CHECK(ps.k == 4);
  CHECK(ps.dim == 2);
  for (int i = 0; i < 4; ++i) {
    CHECK(ps.at(i)[0] == 1.5);
    CHECK(ps.at(i)[1] == -2.0);
    CHECK(ps.source_component[i] == 0);
  }

  const EmbeddingDistribution mog = EmbeddingDistribution::mog(
      {{{-10.0}, {0.01}}, {{10.0}, {0.01}}});
  const SampleSet ms = sample(mog, 8, rng);
  const std::vector<int> want = {0, 0, 0, 0, 1, 1, 1, 1};
  CHECK(ms.source_component == want);
  for (int i = 0; i < 8; ++i) {
    const double z = ms.at(i)[0];
    CHECK(std::abs(z - (i < 4 ? -10.0 : 10.0)) < 1.0);
  }
  CHECK_THROWS_AS(sample(mog, 7, rng), StratificationError);

  EmbeddingDistribution mog3 = EmbeddingDistribution::mog(
      {{{0.0}, {1.0}}, {{1.0}, {1.0}}, {{2.0}, {1.0}}});
  CHECK_THROWS_AS(sample(mog3, 8, rng), StratificationError);
  CHECK_NOTHROW(sample(mog3, 9, rng));
}

TEST_CASE("gaussian sample moments track mu and sigma") {
  Rng rng(62);
  const EmbeddingDistribution g =
      EmbeddingDistribution::gaussian({2.0, -1.0}, {0.5, 2.0});
  const SampleSet s = sample(g, 200000, rng);
  for (int d = 0; d < 2; ++d) {
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < s.k; ++i) {
      sum += s.at(i)[d];
      sum2 += s.at(i)[d] * s.at(i)[d];
    }
    const double mean = sum / s.k;
    const double var = sum2 / s.k - mean * mean;
    CHECK(mean == doctest::Approx(g.comps[0].mu[d]).epsilon(0.02));
    const double want_sd = g.comps[0].sigma[d];
    CHECK(var == doctest::Approx(want_sd * want_sd).epsilon(0.03));
  }
}

TEST_CASE("mc match probability equals the brute-force pair sum") {
  Rng rng(63);
  const EmbeddingDistribution d1 = random_gaussian(3, rng);
  const EmbeddingDistribution d2 = random_gaussian(3, rng);
  const MatchHead head{0.2, 0.3};
  const SampleSet s1 = sample(d1, 64, rng);
  const SampleSet s2 = sample(d2, 64, rng);
  CHECK(match_prob_mc(s1, s2, head) ==
        doctest::Approx(oracle::match_prob_sets(s1, s2, head)).epsilon(1e-9));
}

TEST_CASE("mc estimate agrees with a large brute force within noise") {
  Rng rng(64);
  const EmbeddingDistribution d1 = random_gaussian(2, rng);
  const EmbeddingDistribution d2 = random_gaussian(2, rng);
  const MatchHead head{0.5413248546129181, 0.5};

  Rng brute_rng(991);
  const SampleSet b1 = sample(d1, 1000, brute_rng);
  const SampleSet b2 = sample(d2, 1000, brute_rng);
  const double brute = oracle::match_prob_sets(b1, b2, head);  // 10^6 pairs

  const int repeats = 16;
  std::vector<double> est(repeats);
  for (int r = 0; r < repeats; ++r) {
    Rng er(derive_seed(64, "mc-repeat", uint64_t(r)));
    est[r] = match_prob_mc(d1, d2, head, 512, er);
  }
  double mean = 0.0;
  for (const double e : est) mean += e;
  mean /= repeats;
  const double se = std::sqrt(sample_variance(est) / repeats);
  CHECK(std::abs(mean - brute) < 3.0 * se + 0.003);
}

TEST_CASE("estimator variance shrinks as K grows") {
  Rng rng(65);
  const EmbeddingDistribution d1 = random_gaussian(2, rng);
  const EmbeddingDistribution d2 = random_gaussian(2, rng);
  const MatchHead head{0.5413248546129181, 0.0};
  std::vector<double> vars;
  for (const int k : {2, 8, 32, 128}) {
    std::vector<double> est;
    for (int s = 0; s < 60; ++s) {
      Rng er(derive_seed(65, "var-seed", uint64_t(k * 1000 + s)));
      est.push_back(match_prob_mc(d1, d2, head, k, er));
    }
    vars.push_back(sample_variance(est));
  }
  for (size_t i = 0; i + 1 < vars.size(); ++i) CHECK(vars[i + 1] < vars[i]);
}

TEST_CASE("two points short-circuit without touching the rng") {
  const EmbeddingDistribution p1 = EmbeddingDistribution::point({0.0, 0.0});
  const EmbeddingDistribution p2 = EmbeddingDistribution::point({1.0, 1.0});
  const MatchHead head{0.1, -0.2};
  Rng rng(66);
  const Rng before = rng;
  CHECK(match_prob_mc(p1, p2, head, 128, rng) ==
        match_prob_point(p1.comps[0].mu, p2.comps[0].mu, head));
  CHECK(rng == before);
}

TEST_CASE("shared draws make the probability exactly symmetric") {
  Rng rng(67);
  const EmbeddingDistribution d1 = random_gaussian(2, rng);
  const EmbeddingDistribution d2 = random_gaussian(2, rng);
  const MatchHead head{0.4, 0.1};
  const uint64_t seed = 4242;
  Rng ra(seed), rb(seed);
  const SampleSet s1 = sample(d1, 16, ra);
  const SampleSet s2 = sample(d2, 16, rb);
  // the cross-pair sum is symmetric up to summation order
  CHECK(match_prob_mc(s1, s2, head) ==
        doctest::Approx(match_prob_mc(s2, s1, head)).epsilon(1e-13));
  // same construction with the roles swapped lands on the same draws
  Rng rc(seed), rd(seed);
  const SampleSet t2 = sample(d2, 16, rc);
  const SampleSet t1 = sample(d1, 16, rd);
  CHECK(match_prob_mc(s1, s2, head) ==
        doctest::Approx(match_prob_mc(t2, t1, head)).epsilon(1e-13));
}

TEST_CASE("gaussian KL closed form") {
  Rng rng(68);
  // D=1, mu=1, sigma=1: 0.5*(1 + 1 - 1 - 0) = 0.5
  CHECK(kl_to_unit_gaussian(EmbeddingDistribution::gaussian({1.0}, {1.0}), rng) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // the unit gaussian itself: exactly zero
  CHECK(kl_to_unit_gaussian(EmbeddingDistribution::gaussian({0.0, 0.0}, {1.0, 1.0}),
                            rng) == 0.0);
  // closed form never touches the rng
  const Rng before = rng;
  kl_to_unit_gaussian(random_gaussian(3, rng), rng);
  CHECK(!(rng == before));  // construction consumed draws...
  const Rng mark = rng;
  kl_to_unit_gaussian(EmbeddingDistribution::gaussian({0.3}, {0.7}), rng);
  CHECK(rng == mark);  // ...but the KL itself did not
  CHECK_THROWS_AS(
      kl_to_unit_gaussian(EmbeddingDistribution::point({0.0}), rng), ConfigError);
}

TEST_CASE("gaussian KL matches quadrature") {
  Rng rng(69);
  for (int trial = 0; trial < 5; ++trial) {
    const EmbeddingDistribution g = random_gaussian(1 + int(rng.uniform_int(3)), rng);
    CHECK(kl_to_unit_gaussian(g, rng) ==
          doctest::Approx(oracle::gauss_kl_quadrature(g.comps[0].mu, g.comps[0].sigma))
              .epsilon(1e-9));
  }
}

TEST_CASE("collapsed mixture KL matches the gaussian closed form") {
  // both components identical: the stratified MC mean is exact up to noise
  const std::vector<double> mu = {0.8}, sg = {0.6};
  const EmbeddingDistribution g = EmbeddingDistribution::gaussian(mu, sg);
  const EmbeddingDistribution m =
      EmbeddingDistribution::mog({{mu, sg}, {mu, sg}});
  Rng rng(70);
  const double want = kl_to_unit_gaussian(g, rng);
  std::vector<double> est;
  for (int r = 0; r < 12; ++r) {
    Rng er(derive_seed(70, "collapsed", uint64_t(r)));
    est.push_back(kl_to_unit_gaussian(m, er, 2048));
  }
  double mean = 0.0;
  for (const double e : est) mean += e;
  mean /= double(est.size());
  const double se = std::sqrt(sample_variance(est) / double(est.size()));
  CHECK(std::abs(mean - want) < 3.0 * se + 0.01);
}

TEST_CASE("bimodal 1-d mixture KL matches quadrature") {
  const std::vector<double> mus = {-1.2, 1.5};
  const std::vector<double> sgs = {0.5, 0.8};
  const EmbeddingDistribution m =
      EmbeddingDistribution::mog({{{mus[0]}, {sgs[0]}}, {{mus[1]}, {sgs[1]}}});
  const double want = oracle::mog1d_kl_quadrature(mus, sgs);
  std::vector<double> est;
  for (int r = 0; r < 12; ++r) {
    Rng er(derive_seed(71, "bimodal", uint64_t(r)));
    est.push_back(kl_to_unit_gaussian(m, er, 4096));
  }
  double mean = 0.0;
  for (const double e : est) mean += e;
  mean /= double(est.size());
  const double se = std::sqrt(sample_variance(est) / double(est.size()));
  CHECK(std::abs(mean - want) < 3.0 * se + 0.01);
}

TEST_CASE("mixture KL estimates never go significantly negative") {
  Rng rng(72);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<EmbeddingDistribution::Component> comps;
    const int c = 1 + int(rng.uniform_int(3));
    for (int i = 0; i < c; ++i) {
      const EmbeddingDistribution g = random_gaussian(2, rng);
      comps.push_back(g.comps[0]);
    }
    Rng er(derive_seed(72, "nonneg", uint64_t(trial)));
    CHECK(kl_to_unit_gaussian(EmbeddingDistribution::mog(comps), er, 1536) > -0.05);
  }
}

TEST_CASE("log density hand checks") {
  const EmbeddingDistribution g =
      EmbeddingDistribution::gaussian({1.0, -1.0}, {0.5, 2.0});
  const double z[2] = {0.5, 0.0};
  double want = 0.0;
  for (int d = 0; d < 2; ++d) {
    const double t = (z[d] - g.comps[0].mu[d]) / g.comps[0].sigma[d];
    want += -0.5 * t * t - std::log(g.comps[0].sigma[d]) - 0.5 * std::log(2.0 * kPi);
  }
  CHECK(log_density(g, z) == doctest::Approx(want).epsilon(1e-12));

  const EmbeddingDistribution m = EmbeddingDistribution::mog(
      {{{0.0}, {1.0}}, {{2.0}, {0.5}}});
  const double zz[1] = {1.0};
  const auto comp_pdf = [&](double mu, double sg) {
    const double t = (zz[0] - mu) / sg;
    return std::exp(-0.5 * t * t) / (sg * std::sqrt(2.0 * kPi));
  };
  CHECK(log_density(m, zz) ==
        doctest::Approx(std::log(0.5 * comp_pdf(0.0, 1.0) + 0.5 * comp_pdf(2.0, 0.5)))
            .epsilon(1e-12));
  CHECK_THROWS_AS(log_density(EmbeddingDistribution::point({0.0}), zz), ConfigError);
}

TEST_CASE("vib loss with beta 0 reduces to the soft loss") {
  Rng rng(73);
  const EmbeddingDistribution d1 = random_gaussian(2, rng);
  const EmbeddingDistribution d2 = random_gaussian(2, rng);
  const MatchHead head{0.5, 0.2};
  const uint64_t seed = 8181;
  Rng ra(seed), rb(seed);
  const double vib = vib_emb_loss(d1, d2, 1, head, 0.0, 32, ra);
  const double soft = soft_contrastive_loss(match_prob_mc(d1, d2, head, 32, rb), 1);
  CHECK(vib == soft);

  // beta > 0 adds exactly beta * (KL1 + KL2) for gaussians
  Rng rc(seed);
  const double vib_b = vib_emb_loss(d1, d2, 1, head, 0.01, 32, rc);
  Rng dummy(0);
  const double kl = kl_to_unit_gaussian(d1, dummy) + kl_to_unit_gaussian(d2, dummy);
  CHECK(vib_b == doctest::Approx(soft + 0.01 * kl).epsilon(1e-12));

  Rng rd(seed);
  const EmbeddingDistribution p1 = EmbeddingDistribution::point({0.0});
  CHECK_THROWS_AS(vib_emb_loss(p1, p1, 1, head, 0.1, 8, rd), ConfigError);
}

TEST_CASE("self mismatch of a point is one minus sigmoid(b)") {
  Rng rng(74);
  const EmbeddingDistribution p = EmbeddingDistribution::point({0.7, -0.3});
  for (const double b : {-1.0, 0.0, 1.7}) {
    CHECK(self_mismatch(p, MatchHead{0.3, b}, 64, rng) ==
          doctest::Approx(1.0 - sigmoid(b)).epsilon(1e-12));
  }
}

TEST_SUITE_END();
