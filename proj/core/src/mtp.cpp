#include "mtplab/mtp.hpp"

#include "mtplab/errors.hpp"

namespace mtplab {

void MtpConfig::validate() const {
  if (heads < 1) throw ConfigError("mtp: head count must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("mtp: temperature must be > 0");
}

void to_json(nlohmann::json& j, const MtpConfig& c) {
  j = nlohmann::json{{"heads", c.heads}, {"whs", c.whs}, {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, MtpConfig& c) {
  j.at("heads").get_to(c.heads);
  j.at("whs").get_to(c.whs);
  j.at("temperature").get_to(c.temperature);
}

namespace {

std::string head_prefix(int64_t n) { return "head." + std::to_string(n) + "."; }

void copy_params(const ParamStore& src, const std::string& src_prefix,
                 ParamStore& dst, const std::string& dst_prefix,
                 const std::vector<std::string>& names) {
  for (const std::string& n : names) {
    const std::string src_name = src_prefix + n;
    Tensor t = src.at(src_name).clone_detached(true);
    if (!dst.tensors.emplace(dst_prefix + n, std::move(t)).second) {
      throw ConfigError("duplicate parameter: " + dst_prefix + n);
    }
  }
}

std::vector<std::string> bare_block_names() { return block_param_names(""); }

std::vector<std::string> expected_mtp_names(const ModelConfig& config,
                                            const MtpConfig& mtp) {
  std::vector<std::string> names = {"embed.tok", "embed.pos", "unembed.norm.g",
                                    "unembed.norm.b", "unembed.w"};
  for (int64_t l = 0; l < config.layers - 1; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (const std::string& n : block_param_names(prefix)) names.push_back(n);
    if (config.adapter_rank > 0) {
      for (const char* p : {"q", "k", "v"}) {
        names.push_back(prefix + "attn." + p + ".lora_a");
        names.push_back(prefix + "attn." + p + ".lora_b");
      }
    }
  }
  for (int64_t n = 1; n <= mtp.heads; ++n) {
    for (const std::string& b : block_param_names(head_prefix(n))) names.push_back(b);
    if (mtp.whs) names.push_back(head_prefix(n) + "whs_weights");
  }
  return names;
}

}  // namespace

MtpModel init_mtp(const Checkpoint& base, const MtpConfig& cfg, uint64_t seed) {
  cfg.validate();
  base.config.validate();
  if (base.config.adapter_rank != 0) {
    throw ConfigError("init_mtp: base checkpoint must not carry adapters");
  }
  MtpModel m;
  m.config = base.config;
  m.mtp = cfg;
  const std::vector<std::string> block = bare_block_names();
  copy_params(base.params, "", m.params, "",
              {"embed.tok", "embed.pos", "unembed.norm.g", "unembed.norm.b", "unembed.w"});
  for (int64_t l = 0; l < base.config.layers - 1; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    copy_params(base.params, prefix, m.params, prefix, block);
  }
  // Every head replicates the base model's final layer. For head 1 this makes
  // the initial output exactly the base next-token distribution; for deeper
  // heads it seeds the attention/cipher circuitry the base already learned,
  // so training only has to retarget the offset instead of escaping the
  // unigram plateau from a random layer.
  for (int64_t n = 1; n <= cfg.heads; ++n) {
    copy_params(base.params, "layers." + std::to_string(base.config.layers - 1) + ".",
                m.params, head_prefix(n), block);
  }
  if (cfg.whs) {
    for (int64_t n = 1; n <= cfg.heads; ++n) {
      Tensor w = Tensor::full({m.backbone_layers()}, 0.1f);
      w.set_requires_grad(true);
      m.params.tensors.emplace(head_prefix(n) + "whs_weights", std::move(w));
    }
  }
  m.params.frozen.insert({"unembed.norm.g", "unembed.norm.b", "unembed.w"});
  m.meta = base.meta;
  m.meta["head_rng"] = {{"algorithm", Rng::kAlgorithm}, {"seed", seed}};
  return m;
}

std::vector<Tensor> mtp_backbone(const MtpModel& m, const std::vector<int32_t>& ids) {
  Tensor x = embed_sequence(m.params, m.config, ids);
  std::vector<Tensor> layers;
  layers.reserve(static_cast<size_t>(m.backbone_layers()));
  for (int64_t l = 0; l < m.backbone_layers(); ++l) {
    x = transformer_block(m.params, "layers." + std::to_string(l) + ".", m.config, x);
    layers.push_back(x);
  }
  return layers;
}

Tensor whs_combine(const std::vector<Tensor>& z, const Tensor& w, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("whs_combine: temperature must be > 0");
  if (w.ndim() != 1 || w.dim(0) != static_cast<int64_t>(z.size())) {
    throw ShapeError("whs_combine: weight length must equal layer count");
  }
  const Tensor weights = softmax(scale(w, static_cast<float>(1.0 / temperature)), 0);
  return weighted_sum(z, weights);
}

Tensor mtp_head_input(const MtpModel& m, const std::vector<Tensor>& backbone,
                      int64_t head) {
  if (head < 1 || head > m.mtp.heads) throw ConfigError("head index out of range");
  if (!m.mtp.whs) return backbone.back();
  return whs_combine(backbone, m.params.at(head_prefix(head) + "whs_weights"),
                     m.mtp.temperature);
}

Tensor mtp_head_logits(const MtpModel& m, const std::vector<Tensor>& backbone,
                       int64_t head) {
  // Head layers never carry adapters; blank out the rank for the lookup.
  ModelConfig head_cfg = m.config;
  head_cfg.adapter_rank = 0;
  const Tensor z = transformer_block(m.params, head_prefix(head), head_cfg,
                                     mtp_head_input(m, backbone, head));
  return unembed(m.params, z);
}

std::vector<ProbDist> mtp_forward(const MtpModel& m, const std::vector<int32_t>& ids) {
  NoGradGuard no_grad;
  const std::vector<Tensor> backbone = mtp_backbone(m, ids);
  std::vector<ProbDist> out;
  out.reserve(static_cast<size_t>(m.mtp.heads));
  for (int64_t n = 1; n <= m.mtp.heads; ++n) {
    const Tensor logits = mtp_head_logits(m, backbone, n);
    const int64_t t = logits.dim(0), v = logits.dim(1);
    std::vector<float> last(logits.data().begin() + (t - 1) * v, logits.data().end());
    out.push_back(dist_from_logits(last));
  }
  return out;
}

void freeze_for_heads_only(MtpModel& m) {
  for (const auto& [name, t] : m.params.tensors) {
    if (name.rfind("head.", 0) != 0) m.params.frozen.insert(name);
  }
}

void freeze_for_joint(MtpModel& m, int64_t adapter_rank, Rng& rng) {
  if (adapter_rank < 1) throw ConfigError("joint mode requires adapter_rank >= 1");
  if (m.config.adapter_rank != 0) throw ConfigError("adapters already attached");
  const int64_t h = m.config.hidden;
  for (int64_t l = 0; l < m.backbone_layers(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".attn.";
    for (const char* p : {"q", "k", "v"}) {
      Tensor a = Tensor::randn({adapter_rank, h}, rng, kInitStd);
      a.set_requires_grad(true);
      Tensor b = Tensor::zeros({h, adapter_rank});
      b.set_requires_grad(true);
      m.params.tensors.emplace(prefix + p + ".lora_a", std::move(a));
      m.params.tensors.emplace(prefix + p + ".lora_b", std::move(b));
    }
  }
  m.config.adapter_rank = adapter_rank;
  // Trainable set: adapters plus everything under head.*.
  for (const auto& [name, t] : m.params.tensors) {
    const bool adapter = name.find(".lora_") != std::string::npos;
    const bool head = name.rfind("head.", 0) == 0;
    if (!adapter && !head) m.params.frozen.insert(name);
  }
}

void save_mtp(const MtpModel& m, const std::string& path) {
  nlohmann::json header;
  header["kind"] = "mtp";
  header["config"] = m.config;
  header["mtp"] = m.mtp;
  header["frozen"] =
      std::vector<std::string>(m.params.frozen.begin(), m.params.frozen.end());
  header["meta"] = m.meta;
  write_container(path, header, m.params.tensors);
}

MtpModel load_mtp(const std::string& path) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "mtp") throw IoError("not an MTP checkpoint: " + path);
  MtpModel m;
  m.config = c.header.at("config").get<ModelConfig>();
  m.mtp = c.header.at("mtp").get<MtpConfig>();
  m.meta = c.header.value("meta", nlohmann::json::object());
  for (auto& [name, t] : c.tensors) {
    t.set_requires_grad(true);
    m.params.tensors.emplace(name, std::move(t));
  }
  for (const auto& n : c.header.value("frozen", std::vector<std::string>{})) {
    m.params.frozen.insert(n);
  }
  const auto expected = expected_mtp_names(m.config, m.mtp);
  if (expected.size() != m.params.tensors.size()) {
    throw IoError("mtp checkpoint parameter count mismatch in " + path);
  }
  for (const std::string& n : expected) {
    if (!m.params.tensors.count(n)) throw IoError("mtp checkpoint missing " + n);
  }
  return m;
}

}  // namespace mtplab
