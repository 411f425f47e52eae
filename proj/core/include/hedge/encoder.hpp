#pragma once
#include <string>
#include <vector>

#include "hedge/checkpoint.hpp"
#include "hedge/graph.hpp"
#include "hedge/hib.hpp"

namespace hedge {

enum class Representation { kPoint, kGaussian, kMog };

std::string to_string(Representation r);
Representation representation_from_string(const std::string& s);

// The CNN: two 5x5 conv layers (ReLU, 2x2 max pool after each), then one
// linear head per output branch off the shared flattened stump. A gaussian
// embedding has branches (mu, sigma); mog(C) has 2C branches; point has one.
// mog(1) and gaussian produce identical outputs for identical parameters —
// they differ only in how training estimates the KL term.
struct EncoderConfig {
  int n_digits = 2;
  int embed_dim = 2;       // D
  Representation representation = Representation::kGaussian;
  int mog_components = 1;  // C; meaningful for kMog
  int conv1_channels = 32;
  int conv2_channels = 64;

  int components() const {
    return representation == Representation::kMog ? mog_components : 1;
  }
  bool stochastic() const { return representation != Representation::kPoint; }
  int image_width() const { return 28 * n_digits; }
  int stump_flat() const { return conv2_channels * 4 * (7 * n_digits - 3); }
  void validate() const;
};

// Fresh parameters: weights uniform in +/- sqrt(6/fan_in), biases zero,
// match head at a_raw = ln(e-1) (so a = softplus(a_raw) = 1) and b = 0.
// Deterministic in (config, seed).
NamedArrays init_params(const EncoderConfig& cfg, uint64_t seed);

// Graph-side encoder; node ids for everything downstream builders need.
struct EncoderNodes {
  int images = -1;              // input [B,1,28,28N]
  int flat = -1;                // stump output [B,F]
  std::vector<int> mu;          // per component, [B,1,D]
  std::vector<int> sigma;       // per component, [B,1,D]; empty for point
  int mu_all = -1;              // [B,C,D]
  int sigma_all = -1;           // [B,C,D]; -1 for point
  int a_raw = -1, b = -1;       // match head params, {1}
};
EncoderNodes build_encoder(Graph& g, const EncoderConfig& cfg, int64_t batch);

// Copy named parameter values into / out of a graph's param leaves.
void load_params(Graph& g, const NamedArrays& params);
NamedArrays extract_params(const Graph& g);

// Batched deterministic inference: images in, distributions out. Runs an
// internal graph of fixed chunk size, padding the last chunk.
class EncoderRunner {
 public:
  EncoderRunner(const EncoderConfig& cfg, const NamedArrays& params,
                int64_t chunk = 128);

  // images: [n,1,28,28N] (n arbitrary)
  std::vector<EmbeddingDistribution> encode(const Array& images);
  MatchHead head() const { return head_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Graph g_;
  EncoderNodes nodes_;
  int64_t chunk_;
  MatchHead head_;
};

}  // namespace hedge
