#include "hedge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <json.hpp>

#include "hedge/errors.hpp"
#include "hedge/hib.hpp"

namespace hedge {

std::string to_string(LossKind k) {
  return k == LossKind::kSoft ? "soft" : "hard";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "soft") return LossKind::kSoft;
  if (s == "hard") return LossKind::kHard;
  throw ConfigError("unknown loss '" + s + "' (want soft|hard)");
}

void TrainConfig::validate() const {
  encoder.validate();
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 2");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (beta < 0.0) throw ConfigError("beta must be >= 0");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (loss == LossKind::kHard) {
    if (margin <= 0.0) throw ConfigError("hard loss needs margin > 0");
    if (encoder.representation != Representation::kPoint)
      throw ConfigError("hard contrastive loss is defined on point embeddings");
  }
  const int c = encoder.components();
  if (encoder.stochastic() && k % c != 0)
    throw StratificationError("k=" + std::to_string(k) + " not divisible by " +
                              std::to_string(c) + " mixture components");
  if (encoder.representation == Representation::kMog && c > 1 && k_kl % c != 0)
    throw StratificationError("k_kl=" + std::to_string(k_kl) +
                              " not divisible by " + std::to_string(c) +
                              " mixture components");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["encoder"] = {{"n_digits", cfg.encoder.n_digits},
                  {"embed_dim", cfg.encoder.embed_dim},
                  {"representation", to_string(cfg.encoder.representation)},
                  {"mog_components", cfg.encoder.mog_components},
                  {"conv1_channels", cfg.encoder.conv1_channels},
                  {"conv2_channels", cfg.encoder.conv2_channels}};
  j["loss"] = to_string(cfg.loss);
  j["margin"] = cfg.margin;
  j["batch_size"] = cfg.batch_size;
  j["iterations"] = cfg.iterations;
  j["beta"] = cfg.beta;
  j["k"] = cfg.k;
  j["k_kl"] = cfg.k_kl;
  j["learning_rate"] = cfg.learning_rate;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["seed"] = cfg.seed;
  j["log_every"] = cfg.log_every;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config json: ") + e.what());
  }
  TrainConfig cfg;
  try {
    const auto& e = j.at("encoder");
    cfg.encoder.n_digits = e.at("n_digits").get<int>();
    cfg.encoder.embed_dim = e.at("embed_dim").get<int>();
    cfg.encoder.representation =
        representation_from_string(e.at("representation").get<std::string>());
    cfg.encoder.mog_components = e.at("mog_components").get<int>();
    cfg.encoder.conv1_channels = e.at("conv1_channels").get<int>();
    cfg.encoder.conv2_channels = e.at("conv2_channels").get<int>();
    cfg.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    cfg.margin = j.at("margin").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.iterations = j.at("iterations").get<int64_t>();
    cfg.beta = j.at("beta").get<double>();
    cfg.k = j.at("k").get<int>();
    cfg.k_kl = j.at("k_kl").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.adam_beta1 = j.at("adam_beta1").get<double>();
    cfg.adam_beta2 = j.at("adam_beta2").get<double>();
    cfg.adam_eps = j.at("adam_eps").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.log_every = j.at("log_every").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config json: ") + e.what());
  }
  return cfg;
}

int64_t PairBatch::positives() const {
  int64_t n = 0;
  for (int v : labels) n += v;
  return n;
}

TrainClassIndex build_class_index(const NDigitDataset& ds) {
  TrainClassIndex ix;
  ix.class_of.reserve(ds.train.size());
  for (size_t i = 0; i < ds.train.size(); ++i) {
    const uint32_t c = ds.train[i].class_id;
    ix.class_of.push_back(c);
    ix.by_class[c].push_back(int64_t(i));
  }
  ix.classes.reserve(ix.by_class.size());
  for (const auto& [c, _] : ix.by_class) ix.classes.push_back(c);
  std::sort(ix.classes.begin(), ix.classes.end());
  return ix;
}

PairBatch build_pair_batch(const TrainClassIndex& index, Rng& rng,
                           int batch_size) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 2");
  const int64_t n_images = int64_t(index.class_of.size());
  const int64_t n_classes = int64_t(index.classes.size());
  if (n_images < 1) throw DegenerateInput("empty training set");

  const int64_t pairs = batch_size / 2;
  const int64_t per_class_images = (batch_size + 15) / 16;
  const int64_t per_class_pairs = (per_class_images + 1) / 2;
  const int64_t n_anchors = std::min<int64_t>(8, n_classes);
  const int64_t anchor_pairs = std::min(n_anchors * per_class_pairs, pairs);

  std::vector<uint32_t> anchors(index.classes);
  rng.shuffle(anchors);
  anchors.resize(size_t(n_anchors));

  struct Duo {
    int64_t a, b;
  };
  std::vector<Duo> duos;
  duos.reserve(size_t(pairs));
  for (int64_t p = 0; p < anchor_pairs; ++p) {
    const auto& pool = index.by_class.at(anchors[size_t(p % n_anchors)]);
    const int64_t a = pool[rng.uniform_int(uint64_t(pool.size()))];
    const int64_t b = pool[rng.uniform_int(uint64_t(pool.size()))];
    duos.push_back({a, b});
  }
  for (int64_t p = anchor_pairs; p < pairs; ++p) {
    const int64_t a = int64_t(rng.uniform_int(uint64_t(n_images)));
    const int64_t b = int64_t(rng.uniform_int(uint64_t(n_images)));
    duos.push_back({a, b});
  }
  for (auto& d : duos)
    if (rng.uniform() < 0.5) std::swap(d.a, d.b);
  rng.shuffle(duos);

  // A uniform pair can collide into a match, so in principle a batch could
  // come out all-positive; force one cross-class pair so both labels always
  // show up whenever the dataset has two classes at all.
  if (n_classes >= 2) {
    bool any_negative = false;
    for (const Duo& d : duos)
      if (index.class_of[size_t(d.a)] != index.class_of[size_t(d.b)]) {
        any_negative = true;
        break;
      }
    if (!any_negative) {
      const auto& pool_a = index.by_class.at(anchors[0]);
      const auto& pool_b = index.by_class.at(anchors[1 % anchors.size()]);
      duos.back() = {pool_a[rng.uniform_int(uint64_t(pool_a.size()))],
                     pool_b[rng.uniform_int(uint64_t(pool_b.size()))]};
    }
  }

  PairBatch out;
  out.indices.resize(size_t(batch_size));
  out.labels.resize(size_t(pairs));
  for (int64_t p = 0; p < pairs; ++p) {
    out.indices[size_t(p)] = duos[size_t(p)].a;
    out.indices[size_t(p + pairs)] = duos[size_t(p)].b;
    out.labels[size_t(p)] = index.class_of[size_t(duos[size_t(p)].a)] ==
                                    index.class_of[size_t(duos[size_t(p)].b)]
                                ? 1
                                : 0;
  }
  return out;
}

PairBatch build_pair_batch(const NDigitDataset& ds, Rng& rng, int batch_size) {
  return build_pair_batch(build_class_index(ds), rng, batch_size);
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {
constexpr const char* kAdamMPrefix = "adam.m/";
constexpr const char* kAdamVPrefix = "adam.v/";

bool has_prefix(const std::string& s, const char* p) {
  return s.rfind(p, 0) == 0;
}
}  // namespace

void save_checkpoint(const TrainCheckpoint& cp, const std::string& path) {
  NamedArrays na;
  for (const auto& [name, a] : cp.params) na[name] = a;
  for (const auto& [name, a] : cp.adam_m) na[kAdamMPrefix + name] = a;
  for (const auto& [name, a] : cp.adam_v) na[kAdamVPrefix + name] = a;
  Array step({1});
  step.data[0] = double(cp.step);
  na["state.step"] = step;
  na["state.batch_rng"] = pack_string(cp.batch_rng_state);
  na["state.noise_rng"] = pack_string(cp.noise_rng_state);
  na["state.config"] = pack_string(train_config_to_json(cp.config));
  write_named_arrays(path, na);
}

TrainCheckpoint load_checkpoint(const std::string& path) {
  NamedArrays na = read_named_arrays(path);
  TrainCheckpoint cp;
  auto take = [&](const char* key) {
    auto it = na.find(key);
    if (it == na.end())
      throw FormatVersionMismatch(path + " is missing " + key);
    Array a = std::move(it->second);
    na.erase(it);
    return a;
  };
  cp.step = int64_t(take("state.step").data.at(0));
  cp.batch_rng_state = unpack_string(take("state.batch_rng"));
  cp.noise_rng_state = unpack_string(take("state.noise_rng"));
  cp.config = train_config_from_json(unpack_string(take("state.config")));
  for (auto& [name, a] : na) {
    if (has_prefix(name, kAdamMPrefix))
      cp.adam_m[name.substr(std::string(kAdamMPrefix).size())] = std::move(a);
    else if (has_prefix(name, kAdamVPrefix))
      cp.adam_v[name.substr(std::string(kAdamVPrefix).size())] = std::move(a);
    else
      cp.params[name] = std::move(a);
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const TrainConfig& cfg, const NDigitDataset& ds)
    : cfg_(cfg),
      ds_(ds),
      batch_rng_(derive_seed(cfg.seed, "train-batch")),
      noise_rng_(derive_seed(cfg.seed, "train-noise")) {
  cfg_.validate();
  index_ = build_class_index(ds_);
  build_graph();
  load_params(g_, init_params(cfg_.encoder, cfg_.seed));
  for (int pid : g_.param_ids()) {
    adam_m_.emplace_back(g_.value(pid).shape);
    adam_v_.emplace_back(g_.value(pid).shape);
  }
}

Trainer::Trainer(const TrainCheckpoint& cp, const NDigitDataset& ds)
    : cfg_(cp.config), ds_(ds), step_(cp.step) {
  cfg_.validate();
  index_ = build_class_index(ds_);
  build_graph();
  load_params(g_, cp.params);
  for (int pid : g_.param_ids()) {
    const std::string& name = g_.node(pid).name;
    auto want = g_.value(pid).shape;
    auto m = cp.adam_m.find(name), v = cp.adam_v.find(name);
    if (m == cp.adam_m.end() || v == cp.adam_v.end())
      throw FormatVersionMismatch("checkpoint has no optimizer state for " +
                                  name);
    if (m->second.shape != want || v->second.shape != want)
      throw ShapeMismatch("optimizer state for " + name +
                          " does not match the parameter");
    adam_m_.push_back(m->second);
    adam_v_.push_back(v->second);
  }
  batch_rng_ = Rng::deserialize(cp.batch_rng_state);
  noise_rng_ = Rng::deserialize(cp.noise_rng_state);
}

void Trainer::build_graph() {
  const int64_t bsz = cfg_.batch_size;
  const int64_t pairs = bsz / 2;
  const int64_t dim = cfg_.encoder.embed_dim;

  enc_ = build_encoder(g_, cfg_.encoder, bsz);
  labels_ = g_.input("labels", {pairs});

  if (cfg_.loss == LossKind::kHard) {
    loss_node_ = g_.mean_all(build_hard_loss(g_, enc_.mu_all, labels_, cfg_.margin));
    return;
  }

  int z;
  if (cfg_.encoder.stochastic()) {
    eps_ = g_.input("eps", {bsz, cfg_.k, dim});
    z = build_stratified_samples(g_, enc_.mu_all, enc_.sigma_all, eps_);
  } else {
    z = enc_.mu_all;  // [B,1,D]: the K=1 "sample" is the point itself
  }
  const int match = build_match_mc(g_, z, enc_.a_raw, enc_.b);
  const int ce = g_.mean_all(build_soft_ce(g_, match, labels_));

  if (!cfg_.encoder.stochastic()) {
    loss_node_ = ce;
    return;
  }

  // mog(1) trains exactly like gaussian: same closed-form KL, same rng use.
  const int comps = cfg_.encoder.components();
  int kl;
  if (comps == 1) {
    kl = build_gauss_kl(g_, enc_.mu_all, enc_.sigma_all);
  } else {
    eps_kl_ = g_.input("eps_kl", {bsz, cfg_.k_kl, dim});
    kl = build_mog_kl_mc(g_, enc_.mu_all, enc_.sigma_all, eps_kl_);
  }
  kl_mean_node_ = g_.mean_all(kl);

  // Per pair the objective adds beta * (KL_1 + KL_2); averaged over pairs
  // that is 2 * beta * mean-per-image KL. The KL node stays in the graph
  // even at beta = 0 so the curve can report it.
  if (cfg_.beta > 0.0)
    loss_node_ = g_.add(ce, g_.affine_const(kl_mean_node_, 2.0 * cfg_.beta, 0.0));
  else
    loss_node_ = ce;
}

MatchHead Trainer::head() const {
  MatchHead h;
  h.a_raw = g_.value(enc_.a_raw).data[0];
  h.b = g_.value(enc_.b).data[0];
  return h;
}

CurveRow Trainer::make_row(double loss) const {
  CurveRow row;
  row.step = step_;
  row.loss = loss;
  row.mean_kl = kl_mean_node_ >= 0 ? g_.value(kl_mean_node_).data[0] : 0.0;
  const MatchHead h = head();
  row.a = h.a();
  row.b = h.b;
  return row;
}

void Trainer::apply_adam() {
  const auto& pids = g_.param_ids();
  const double t = double(step_);
  const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t);
  for (size_t i = 0; i < pids.size(); ++i) {
    const Array& grad = g_.grad(pids[i]);
    Array& p = g_.leaf(pids[i]);
    Array& m = adam_m_[i];
    Array& v = adam_v_[i];
    for (size_t j = 0; j < p.data.size(); ++j) {
      const double gj = grad.data[j];
      m.data[j] = cfg_.adam_beta1 * m.data[j] + (1.0 - cfg_.adam_beta1) * gj;
      v.data[j] = cfg_.adam_beta2 * v.data[j] + (1.0 - cfg_.adam_beta2) * gj * gj;
      const double mhat = m.data[j] / c1;
      const double vhat = v.data[j] / c2;
      p.data[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
    }
  }
}

void Trainer::run_to(int64_t target_step) {
  const int64_t bsz = cfg_.batch_size;
  const int64_t pairs = bsz / 2;
  Array labels({pairs});
  Array eps(eps_ >= 0 ? g_.value(eps_).shape : std::vector<int64_t>{0});
  Array eps_kl(eps_kl_ >= 0 ? g_.value(eps_kl_).shape
                            : std::vector<int64_t>{0});

  while (step_ < target_step) {
    PairBatch pb = build_pair_batch(index_, batch_rng_, int(bsz));
    g_.set_leaf(enc_.images,
                pixels_to_array(ds_.train, pb.indices, cfg_.encoder.n_digits));
    for (int64_t p = 0; p < pairs; ++p) labels.data[size_t(p)] = pb.labels[size_t(p)];
    g_.set_leaf(labels_, labels);
    if (eps_ >= 0) {
      for (double& x : eps.data) x = noise_rng_.normal();
      g_.set_leaf(eps_, eps);
    }
    if (eps_kl_ >= 0) {
      for (double& x : eps_kl.data) x = noise_rng_.normal();
      g_.set_leaf(eps_kl_, eps_kl);
    }

    g_.forward();
    const double loss = g_.value(loss_node_).data[0];
    if (!std::isfinite(loss))
      throw DivergenceDetected("loss is " + std::to_string(loss) + " at step " +
                               std::to_string(step_ + 1));
    g_.backward(loss_node_);
    ++step_;
    apply_adam();

    if (curve_sink_ &&
        (step_ == 1 || step_ % cfg_.log_every == 0 || step_ == target_step))
      curve_sink_(make_row(loss));
  }
}

TrainCheckpoint Trainer::snapshot() const {
  TrainCheckpoint cp;
  cp.config = cfg_;
  cp.step = step_;
  cp.params = extract_params(g_);
  const auto& pids = g_.param_ids();
  for (size_t i = 0; i < pids.size(); ++i) {
    const std::string& name = g_.node(pids[i]).name;
    cp.adam_m[name] = adam_m_[i];
    cp.adam_v[name] = adam_v_[i];
  }
  cp.batch_rng_state = batch_rng_.serialize();
  cp.noise_rng_state = noise_rng_.serialize();
  return cp;
}

}  // namespace hedge
