#include "mtplab/model.hpp"

#include <algorithm>

#include "mtplab/errors.hpp"

namespace mtplab {

void ModelConfig::validate() const {
  if (layers < 2) throw ConfigError("model: layers must be >= 2");
  if (hidden <= 0 || n_heads <= 0 || hidden % n_heads != 0) {
    throw ConfigError("model: hidden must be divisible by n_heads");
  }
  if (vocab < 2 || max_seq < 1 || mlp_ratio < 1) {
    throw ConfigError("model: bad vocab/max_seq/mlp_ratio");
  }
  if (adapter_rank < 0) throw ConfigError("model: adapter_rank must be >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},   {"hidden", c.hidden},
                     {"n_heads", c.n_heads}, {"vocab", c.vocab},
                     {"max_seq", c.max_seq}, {"mlp_ratio", c.mlp_ratio},
                     {"adapter_rank", c.adapter_rank}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("hidden").get_to(c.hidden);
  j.at("n_heads").get_to(c.n_heads);
  j.at("vocab").get_to(c.vocab);
  j.at("max_seq").get_to(c.max_seq);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("adapter_rank").get_to(c.adapter_rank);
}

std::vector<std::string> block_param_names(const std::string& prefix) {
  return {prefix + "ln1.g",    prefix + "ln1.b",    prefix + "attn.q.w",
          prefix + "attn.q.b", prefix + "attn.k.w", prefix + "attn.k.b",
          prefix + "attn.v.w", prefix + "attn.v.b", prefix + "attn.o.w",
          prefix + "attn.o.b", prefix + "ln2.g",    prefix + "ln2.b",
          prefix + "mlp.fc.w", prefix + "mlp.fc.b", prefix + "mlp.proj.w",
          prefix + "mlp.proj.b"};
}

namespace {

void add_param(ParamStore& store, const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  if (!store.tensors.emplace(name, std::move(t)).second) {
    throw ConfigError("duplicate parameter: " + name);
  }
}

}  // namespace

void init_block_params(ParamStore& store, const std::string& prefix,
                       const ModelConfig& config, Rng& rng) {
  const int64_t h = config.hidden;
  const int64_t m = config.mlp_ratio * h;
  add_param(store, prefix + "ln1.g", Tensor::full({h}, 1.0f));
  add_param(store, prefix + "ln1.b", Tensor::zeros({h}));
  for (const char* p : {"q", "k", "v", "o"}) {
    add_param(store, prefix + "attn." + std::string(p) + ".w",
              Tensor::randn({h, h}, rng, kInitStd));
    add_param(store, prefix + "attn." + std::string(p) + ".b", Tensor::zeros({h}));
  }
  add_param(store, prefix + "ln2.g", Tensor::full({h}, 1.0f));
  add_param(store, prefix + "ln2.b", Tensor::zeros({h}));
  add_param(store, prefix + "mlp.fc.w", Tensor::randn({m, h}, rng, kInitStd));
  add_param(store, prefix + "mlp.fc.b", Tensor::zeros({m}));
  add_param(store, prefix + "mlp.proj.w", Tensor::randn({h, m}, rng, kInitStd));
  add_param(store, prefix + "mlp.proj.b", Tensor::zeros({h}));
}

Checkpoint init_checkpoint(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  Rng rng(seed);
  add_param(ckpt.params, "embed.tok",
            Tensor::randn({config.vocab, config.hidden}, rng, kInitStd));
  add_param(ckpt.params, "embed.pos",
            Tensor::randn({config.max_seq, config.hidden}, rng, kInitStd));
  for (int64_t l = 0; l < config.layers; ++l) {
    init_block_params(ckpt.params, "layers." + std::to_string(l) + ".", config, rng);
  }
  add_param(ckpt.params, "unembed.norm.g", Tensor::full({config.hidden}, 1.0f));
  add_param(ckpt.params, "unembed.norm.b", Tensor::zeros({config.hidden}));
  add_param(ckpt.params, "unembed.w",
            Tensor::randn({config.vocab, config.hidden}, rng, kInitStd));
  ckpt.meta["rng"] = {{"algorithm", Rng::kAlgorithm}, {"seed", seed}};
  ckpt.meta["layer_norm_eps"] = kLayerNormEps;
  ckpt.meta["init_std"] = kInitStd;
  ckpt.meta["positional"] = "learned_absolute";
  return ckpt;
}

namespace {

// q/k/v projection with an optional low-rank adapter: (W + B.A / rank) x + b.
Tensor adapted_linear(const ParamStore& params, const std::string& name,
                      int64_t rank, const Tensor& x) {
  const Tensor& w = params.at(name + ".w");
  const Tensor& b = params.at(name + ".b");
  auto a_it = params.tensors.find(name + ".lora_a");
  if (a_it == params.tensors.end()) return linear(x, w, b);
  const Tensor& a = a_it->second;
  const Tensor& bb = params.at(name + ".lora_b");
  Tensor delta = scale(matmul(bb, a), 1.0f / static_cast<float>(rank));
  return linear(x, add(w, delta), b);
}

}  // namespace

Tensor transformer_block(const ParamStore& params, const std::string& prefix,
                         const ModelConfig& config, const Tensor& x) {
  const Tensor normed1 = layer_norm(x, params.at(prefix + "ln1.g"),
                                    params.at(prefix + "ln1.b"), kLayerNormEps);
  const Tensor q = adapted_linear(params, prefix + "attn.q", config.adapter_rank, normed1);
  const Tensor k = adapted_linear(params, prefix + "attn.k", config.adapter_rank, normed1);
  const Tensor v = adapted_linear(params, prefix + "attn.v", config.adapter_rank, normed1);
  const Tensor att = causal_attention(q, k, v, static_cast<int>(config.n_heads));
  const Tensor att_out =
      linear(att, params.at(prefix + "attn.o.w"), params.at(prefix + "attn.o.b"));
  const Tensor x1 = add(x, att_out);
  const Tensor normed2 = layer_norm(x1, params.at(prefix + "ln2.g"),
                                    params.at(prefix + "ln2.b"), kLayerNormEps);
  const Tensor hidden =
      gelu(linear(normed2, params.at(prefix + "mlp.fc.w"), params.at(prefix + "mlp.fc.b")));
  const Tensor mlp_out =
      linear(hidden, params.at(prefix + "mlp.proj.w"), params.at(prefix + "mlp.proj.b"));
  return add(x1, mlp_out);
}

Tensor embed_sequence(const ParamStore& params, const ModelConfig& config,
                      const std::vector<int32_t>& ids) {
  if (ids.empty()) throw ShapeError("forward: empty input");
  if (static_cast<int64_t>(ids.size()) > config.max_seq) {
    throw ShapeError("forward: input length " + std::to_string(ids.size()) +
                     " exceeds max_seq " + std::to_string(config.max_seq));
  }
  std::vector<int32_t> positions(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int32_t>(i);
  return add(embedding(params.at("embed.tok"), ids),
             embedding(params.at("embed.pos"), positions));
}

std::vector<Tensor> forward_hidden(const Checkpoint& ckpt,
                                   const std::vector<int32_t>& ids) {
  Tensor x = embed_sequence(ckpt.params, ckpt.config, ids);
  std::vector<Tensor> layers;
  layers.reserve(static_cast<size_t>(ckpt.config.layers));
  for (int64_t l = 0; l < ckpt.config.layers; ++l) {
    x = transformer_block(ckpt.params, "layers." + std::to_string(l) + ".",
                          ckpt.config, x);
    layers.push_back(x);
  }
  return layers;
}

Tensor unembed(const ParamStore& params, const Tensor& z) {
  const Tensor normed = layer_norm(z, params.at("unembed.norm.g"),
                                   params.at("unembed.norm.b"), kLayerNormEps);
  return linear(normed, params.at("unembed.w"), Tensor());
}

ProbDist next_token_dist(const Checkpoint& ckpt, const std::vector<int32_t>& ids) {
  NoGradGuard no_grad;
  const std::vector<Tensor> layers = forward_hidden(ckpt, ids);
  const Tensor logits = unembed(ckpt.params, layers.back());
  const int64_t t = logits.dim(0), v = logits.dim(1);
  std::vector<float> last(logits.data().begin() + (t - 1) * v,
                          logits.data().end());
  return dist_from_logits(last);
}

void attach_adapters(Checkpoint& ckpt, int64_t rank, Rng& rng) {
  if (rank < 1) throw ConfigError("attach_adapters: rank must be >= 1");
  if (ckpt.config.adapter_rank != 0) {
    throw ConfigError("attach_adapters: adapters already attached");
  }
  const int64_t h = ckpt.config.hidden;
  for (int64_t l = 0; l < ckpt.config.layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".attn.";
    for (const char* p : {"q", "k", "v"}) {
      const std::string base = prefix + p;
      add_param(ckpt.params, base + ".lora_a", Tensor::randn({rank, h}, rng, kInitStd));
      add_param(ckpt.params, base + ".lora_b", Tensor::zeros({h, rank}));
      ckpt.params.frozen.insert(base + ".w");
    }
  }
  ckpt.config.adapter_rank = rank;
  ckpt.meta["adapter_scaling"] = "1/rank";
}

int64_t adapter_param_count(const ModelConfig& config) {
  if (config.adapter_rank == 0) return 0;
  // 3 adapted matrices per layer, each h x h: rank*(in + out) parameters.
  return config.layers * 3 * config.adapter_rank * (config.hidden + config.hidden);
}

}  // namespace mtplab
