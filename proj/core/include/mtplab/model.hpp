#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtplab/dist.hpp"
#include "mtplab/optim.hpp"
#include "mtplab/rng.hpp"
#include "mtplab/tensor.hpp"

namespace mtplab {

struct ModelConfig {
  int64_t layers = 4;
  int64_t hidden = 64;
  int64_t n_heads = 4;
  int64_t vocab = 64;
  int64_t max_seq = 64;
  int64_t mlp_ratio = 4;
  int64_t adapter_rank = 0;  // 0 = no adapters attached

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Architecture hyperparameters plus the named-parameter snapshot.
// meta carries the rng record, the pretraining learning rate, and the fixed
// numeric choices (eps values, adapter scaling) so a run replays exactly.
struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  nlohmann::json meta = nlohmann::json::object();
};

constexpr float kLayerNormEps = 1e-5f;
constexpr double kInitStd = 0.02;

// Parameter names for one transformer block under `prefix` (e.g. "layers.0.").
std::vector<std::string> block_param_names(const std::string& prefix);

// Fresh block parameters drawn from the standard init scheme
// (normal(0, 0.02) weights, zero biases, unit norm gains), in name order.
void init_block_params(ParamStore& store, const std::string& prefix,
                       const ModelConfig& config, Rng& rng);

// Full base-model init: embeddings, L blocks, unembedding norm + matrix.
Checkpoint init_checkpoint(const ModelConfig& config, uint64_t seed);

// One pre-norm transformer block applied to x [t,h]; reads parameters under
// `prefix` from `params`, with low-rank adapters on q/k/v when present.
Tensor transformer_block(const ParamStore& params, const std::string& prefix,
                         const ModelConfig& config, const Tensor& x);

// Token + position embeddings for `ids`.
Tensor embed_sequence(const ParamStore& params, const ModelConfig& config,
                      const std::vector<int32_t>& ids);

// Per-layer outputs Z^{1..L}, each [t,h]. Causal by construction: position t
// depends only on ids[0..t].
std::vector<Tensor> forward_hidden(const Checkpoint& ckpt,
                                   const std::vector<int32_t>& ids);

// logits = W_u . layer_norm(z): the shared unembedding, norm included.
Tensor unembed(const ParamStore& params, const Tensor& z);

// softmax(unembed(Z^L at last position)).
ProbDist next_token_dist(const Checkpoint& ckpt, const std::vector<int32_t>& ids);

// Adds rank-r adapters (W + B.A / r, A gaussian, B zero) to every q/k/v
// projection and freezes the base weights they wrap. Errors if already
// attached.
void attach_adapters(Checkpoint& ckpt, int64_t rank, Rng& rng);

// Number of trainable adapter parameters implied by the config.
int64_t adapter_param_count(const ModelConfig& config);

}  // namespace mtplab
