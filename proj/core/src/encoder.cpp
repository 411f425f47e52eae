#include "hedge/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hedge/errors.hpp"
#include "hedge/rng.hpp"

namespace hedge {

std::string to_string(Representation r) {
  switch (r) {
    case Representation::kPoint: return "point";
    case Representation::kGaussian: return "gaussian";
    case Representation::kMog: return "mog";
  }
  return "?";
}

Representation representation_from_string(const std::string& s) {
  if (s == "point") return Representation::kPoint;
  if (s == "gaussian") return Representation::kGaussian;
  if (s == "mog") return Representation::kMog;
  throw ConfigError("unknown representation '" + s +
                    "' (want point|gaussian|mog)");
}

void EncoderConfig::validate() const {
  if (n_digits < 1 || n_digits > 9)
    throw ConfigError("n_digits must be in 1..9");
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (conv1_channels < 1 || conv2_channels < 1)
    throw ConfigError("conv channel counts must be positive");
  if (representation == Representation::kMog && mog_components < 1)
    throw ConfigError("mog needs at least one component");
}

namespace {

Array uniform_fan_in(Rng& rng, std::vector<int64_t> shape, int64_t fan_in) {
  Array a;
  a.shape = std::move(shape);
  a.data.resize(Array::count_of(a.shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : a.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return a;
}

Array zeros(std::vector<int64_t> shape) {
  Array a;
  a.shape = std::move(shape);
  a.data.assign(Array::count_of(a.shape), 0.0);
  return a;
}

Array scalar(double v) {
  Array a;
  a.shape = {1};
  a.data = {v};
  return a;
}

}  // namespace

NamedArrays init_params(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "encoder-init"));
  const int c1 = cfg.conv1_channels, c2 = cfg.conv2_channels;
  const int64_t flat = cfg.stump_flat();
  const int64_t d = cfg.embed_dim;

  NamedArrays p;
  // Draw order is fixed: conv stumps, then heads component by component.
  p["conv1.w"] = uniform_fan_in(rng, {c1, 1, 5, 5}, 1 * 5 * 5);
  p["conv1.b"] = zeros({c1});
  p["conv2.w"] = uniform_fan_in(rng, {c2, c1, 5, 5}, int64_t{c1} * 5 * 5);
  p["conv2.b"] = zeros({c2});
  const int comps = cfg.components();
  for (int c = 0; c < comps; ++c) {
    const std::string tag = std::to_string(c);
    p["head.mu" + tag + ".w"] = uniform_fan_in(rng, {flat, d}, flat);
    p["head.mu" + tag + ".b"] = zeros({d});
    if (cfg.stochastic()) {
      p["head.sigma" + tag + ".w"] = uniform_fan_in(rng, {flat, d}, flat);
      p["head.sigma" + tag + ".b"] = zeros({d});
    }
  }
  p["match.a_raw"] = scalar(std::log(std::exp(1.0) - 1.0));  // a = 1
  p["match.b"] = scalar(0.0);
  return p;
}

EncoderNodes build_encoder(Graph& g, const EncoderConfig& cfg, int64_t batch) {
  cfg.validate();
  const int c1 = cfg.conv1_channels, c2 = cfg.conv2_channels;
  const int64_t w = cfg.image_width();
  const int64_t d = cfg.embed_dim;
  const int64_t flat = cfg.stump_flat();

  EncoderNodes n;
  n.images = g.input("images", {batch, 1, 28, w});

  const int k1 = g.param("conv1.w", {c1, 1, 5, 5});
  const int b1 = g.param("conv1.b", {c1});
  const int k2 = g.param("conv2.w", {c2, c1, 5, 5});
  const int b2 = g.param("conv2.b", {c2});

  int x = g.conv2d(n.images, k1, b1);       // [B,c1,24,w-4]
  x = g.max_pool2(g.relu(x));               // [B,c1,12,(w-4)/2]
  x = g.conv2d(x, k2, b2);                  // [B,c2,8,...]
  x = g.max_pool2(g.relu(x));               // [B,c2,4,7N-3]
  n.flat = g.reshape(x, {batch, flat});

  const int comps = cfg.components();
  for (int c = 0; c < comps; ++c) {
    const std::string tag = std::to_string(c);
    const int mw = g.param("head.mu" + tag + ".w", {flat, d});
    const int mb = g.param("head.mu" + tag + ".b", {d});
    n.mu.push_back(g.reshape(g.affine(n.flat, mw, mb), {batch, 1, d}));
    if (cfg.stochastic()) {
      const int sw = g.param("head.sigma" + tag + ".w", {flat, d});
      const int sb = g.param("head.sigma" + tag + ".b", {d});
      const int raw = g.affine(n.flat, sw, sb);
      // sigma = softplus(raw) + 1e-6: strictly positive
      const int sp = g.affine_const(g.softplus(raw), 1.0, 1e-6);
      n.sigma.push_back(g.reshape(sp, {batch, 1, d}));
    }
  }
  n.mu_all = comps == 1 ? n.mu[0] : g.concat(n.mu, 1);
  if (cfg.stochastic())
    n.sigma_all = comps == 1 ? n.sigma[0] : g.concat(n.sigma, 1);

  n.a_raw = g.param("match.a_raw", {1});
  n.b = g.param("match.b", {1});
  return n;
}

void load_params(Graph& g, const NamedArrays& params) {
  for (int id : g.param_ids()) {
    const std::string& name = g.node(id).name;
    auto it = params.find(name);
    if (it == params.end())
      throw ShapeMismatch("no value for parameter '" + name + "'");
    g.set_leaf(id, it->second);
  }
}

NamedArrays extract_params(const Graph& g) {
  NamedArrays out;
  for (int id : g.param_ids()) out[g.node(id).name] = g.node(id).value;
  return out;
}

EncoderRunner::EncoderRunner(const EncoderConfig& cfg, const NamedArrays& params,
                             int64_t chunk)
    : cfg_(cfg), chunk_(chunk) {
  nodes_ = build_encoder(g_, cfg_, chunk_);
  load_params(g_, params);
  head_.a_raw = params.at("match.a_raw").data[0];
  head_.b = params.at("match.b").data[0];
}

std::vector<EmbeddingDistribution> EncoderRunner::encode(const Array& images) {
  if (images.shape.size() != 4 || images.shape[1] != 1 ||
      images.shape[2] != 28 || images.shape[3] != cfg_.image_width())
    throw ShapeMismatch("encode: want [n,1,28," +
                        std::to_string(cfg_.image_width()) + "], got " +
                        shape_str(images.shape));
  const int64_t n = images.shape[0];
  const int64_t px = 28 * cfg_.image_width();
  const int comps = cfg_.components();
  const int64_t d = cfg_.embed_dim;

  std::vector<EmbeddingDistribution> out;
  out.reserve(n);
  Array buf({chunk_, 1, 28, cfg_.image_width()});
  for (int64_t base = 0; base < n; base += chunk_) {
    const int64_t m = std::min(chunk_, n - base);
    std::memcpy(buf.data.data(), images.data.data() + base * px,
                static_cast<size_t>(m) * px * sizeof(double));
    if (m < chunk_)
      std::fill(buf.data.begin() + m * px, buf.data.end(), 0.0);
    g_.set_leaf(nodes_.images, buf);
    g_.forward();

    const Array& mu = g_.node(nodes_.mu_all).value;  // [chunk,C,D]
    const Array* sigma =
        cfg_.stochastic() ? &g_.node(nodes_.sigma_all).value : nullptr;
    for (int64_t i = 0; i < m; ++i) {
      EmbeddingDistribution e;
      e.kind = cfg_.representation == Representation::kPoint
                   ? EmbeddingDistribution::kPoint
                   : (cfg_.representation == Representation::kGaussian
                          ? EmbeddingDistribution::kGaussian
                          : EmbeddingDistribution::kMog);
      for (int c = 0; c < comps; ++c) {
        EmbeddingDistribution::Component comp;
        comp.mu.assign(mu.data.begin() + (i * comps + c) * d,
                       mu.data.begin() + (i * comps + c + 1) * d);
        if (sigma)
          comp.sigma.assign(sigma->data.begin() + (i * comps + c) * d,
                            sigma->data.begin() + (i * comps + c + 1) * d);
        e.comps.push_back(std::move(comp));
      }
      e.check();
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace hedge
