#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtplab/data.hpp"
#include "mtplab/dist.hpp"
#include "mtplab/model.hpp"

namespace mtplab {

// Per-layer scalar series indexed l = 1..L-1, plus how it was aggregated.
struct LayerProfile {
  std::vector<double> values;   // length L-1, all >= 0
  int64_t positions = 0;        // target positions averaged
  std::string metric;           // "kl" | "entropy" | "top_p_count"
};

// Logit-lens distribution: shared unembedding (layer norm included) applied
// to z^l at the last position. l in 1..L-1.
ProbDist intermediate_dist(const Checkpoint& ckpt, const std::vector<int32_t>& ids,
                           int64_t layer);

// Mean over evaluated target positions of KL(p_l || p_final), nats.
LayerProfile kl_profile(const Checkpoint& ckpt, const std::vector<SequencePair>& corpus);

// Shannon entropy (nats) of the next-token distribution at each target
// position, sequence by sequence.
struct EntropySeries {
  std::vector<std::vector<double>> per_sequence;
  double mean = 0.0;
  int64_t positions = 0;
};
EntropySeries entropy_profile(const Checkpoint& ckpt,
                              const std::vector<SequencePair>& corpus);

// Mean nucleus-set size of the next-token distribution over target positions.
double mean_top_p_count(const Checkpoint& ckpt, const std::vector<SequencePair>& corpus,
                        double p);

// CSV export: layer_frac,metric,value with layer index normalized to
// l/(L-1) so profiles from different depths line up.
void write_layer_profile_csv(const LayerProfile& profile, int64_t model_layers,
                             const std::string& path);
void write_entropy_csv(const EntropySeries& series, const std::string& path);

}  // namespace mtplab
