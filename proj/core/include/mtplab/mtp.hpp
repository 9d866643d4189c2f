#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtplab/checkpoint_io.hpp"
#include "mtplab/dist.hpp"
#include "mtplab/model.hpp"

namespace mtplab {

struct MtpConfig {
  int64_t heads = 2;          // N
  bool whs = false;           // weighted-hidden-states head inputs
  double temperature = 0.1;   // fixed softmax temperature for the layer weights

  void validate() const;
  bool operator==(const MtpConfig&) const = default;
};

void to_json(nlohmann::json& j, const MtpConfig& c);
void from_json(const nlohmann::json& j, MtpConfig& c);

// Backbone = layers 1..L-1 of the base model plus its embeddings; N
// independent head layers (same block structure); one shared frozen
// unembedding. Head parameters are namespaced head.<n>.*, the per-head layer
// weights head.<n>.whs_weights.
struct MtpModel {
  ModelConfig config;  // of the base model this was built from
  MtpConfig mtp;
  ParamStore params;
  nlohmann::json meta = nlohmann::json::object();

  int64_t backbone_layers() const { return config.layers - 1; }
};

// Build from a base checkpoint: backbone copies layers 1..L-1, head 1 copies
// base layer L, heads 2..N draw fresh parameters from the base init scheme
// (seeded), the unembedding is copied and frozen. WHS weights start at 0.1.
MtpModel init_mtp(const Checkpoint& base, const MtpConfig& cfg, uint64_t seed);

// Backbone pass: Z^{1..L-1}, each [t,h].
std::vector<Tensor> mtp_backbone(const MtpModel& m, const std::vector<int32_t>& ids);

// sum_l softmax(w / temperature)[l] * z[l], per position.
Tensor whs_combine(const std::vector<Tensor>& z, const Tensor& w, double temperature);

// Head input for head n (1-based): Z^{L-1} in vanilla mode, whs_combine in
// WHS mode.
Tensor mtp_head_input(const MtpModel& m, const std::vector<Tensor>& backbone,
                      int64_t head);

// Logits [t,|V|] of head n over every position; shares `backbone`.
Tensor mtp_head_logits(const MtpModel& m, const std::vector<Tensor>& backbone,
                       int64_t head);

// One backbone pass, then each head's distribution at the last position.
std::vector<ProbDist> mtp_forward(const MtpModel& m, const std::vector<int32_t>& ids);

// Freeze sets for the two training regimes.
void freeze_for_heads_only(MtpModel& m);                 // backbone + unembedding
void freeze_for_joint(MtpModel& m, int64_t adapter_rank, Rng& rng);

void save_mtp(const MtpModel& m, const std::string& path);
MtpModel load_mtp(const std::string& path);

}  // namespace mtplab
