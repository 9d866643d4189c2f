#include "mtplab/probes.hpp"

#include <fstream>

#include "mtplab/errors.hpp"

namespace mtplab {

namespace {

ProbDist dist_from_row(const Tensor& logits, int64_t position) {
  const int64_t v = logits.dim(1);
  std::vector<float> row(logits.data().begin() + position * v,
                         logits.data().begin() + (position + 1) * v);
  return dist_from_logits(row);
}

}  // namespace

ProbDist intermediate_dist(const Checkpoint& ckpt, const std::vector<int32_t>& ids,
                           int64_t layer) {
  if (layer < 1 || layer > ckpt.config.layers - 1) {
    throw ConfigError("intermediate_dist: layer must be in 1..L-1");
  }
  NoGradGuard no_grad;
  const std::vector<Tensor> z = forward_hidden(ckpt, ids);
  const Tensor logits = unembed(ckpt.params, z[static_cast<size_t>(layer - 1)]);
  return dist_from_row(logits, logits.dim(0) - 1);
}

LayerProfile kl_profile(const Checkpoint& ckpt, const std::vector<SequencePair>& corpus) {
  if (corpus.empty()) throw ConfigError("kl_profile: empty corpus");
  NoGradGuard no_grad;
  const int64_t l_minus_1 = ckpt.config.layers - 1;
  LayerProfile profile;
  profile.metric = "kl";
  profile.values.assign(static_cast<size_t>(l_minus_1), 0.0);
  int64_t positions = 0;
  for (const SequencePair& pair : corpus) {
    // One causal forward gives every position's hidden state for every layer;
    // unembed each layer once for the whole sequence.
    const std::vector<Tensor> z = forward_hidden(ckpt, pair.ids);
    std::vector<Tensor> logits;
    logits.reserve(z.size());
    for (const Tensor& zl : z) logits.push_back(unembed(ckpt.params, zl));
    for (size_t t = 0; t < pair.ids.size(); ++t) {
      if (!pair.mask[t]) continue;
      const ProbDist p_final = dist_from_row(logits.back(), static_cast<int64_t>(t));
      for (int64_t l = 1; l <= l_minus_1; ++l) {
        const ProbDist p_l =
            dist_from_row(logits[static_cast<size_t>(l - 1)], static_cast<int64_t>(t));
        profile.values[static_cast<size_t>(l - 1)] += kl_nats(p_l, p_final);
      }
      ++positions;
    }
  }
  if (positions == 0) throw ConfigError("kl_profile: no target positions");
  for (double& v : profile.values) v /= static_cast<double>(positions);
  profile.positions = positions;
  return profile;
}

EntropySeries entropy_profile(const Checkpoint& ckpt,
                              const std::vector<SequencePair>& corpus) {
  NoGradGuard no_grad;
  EntropySeries series;
  double total = 0.0;
  for (const SequencePair& pair : corpus) {
    const std::vector<Tensor> z = forward_hidden(ckpt, pair.ids);
    const Tensor logits = unembed(ckpt.params, z.back());
    std::vector<double> row;
    for (size_t t = 0; t < pair.ids.size(); ++t) {
      if (!pair.mask[t]) continue;
      // Entropy of the distribution predicting this target token, i.e. the
      // model's view from the preceding context position.
      const double h = entropy_nats(dist_from_row(logits, static_cast<int64_t>(t) - 1));
      row.push_back(h);
      total += h;
      ++series.positions;
    }
    series.per_sequence.push_back(std::move(row));
  }
  series.mean = series.positions > 0 ? total / static_cast<double>(series.positions) : 0.0;
  return series;
}

double mean_top_p_count(const Checkpoint& ckpt, const std::vector<SequencePair>& corpus,
                        double p) {
  NoGradGuard no_grad;
  double total = 0.0;
  int64_t positions = 0;
  for (const SequencePair& pair : corpus) {
    const std::vector<Tensor> z = forward_hidden(ckpt, pair.ids);
    const Tensor logits = unembed(ckpt.params, z.back());
    for (size_t t = 0; t < pair.ids.size(); ++t) {
      if (!pair.mask[t]) continue;
      total += static_cast<double>(
          top_p_count(dist_from_row(logits, static_cast<int64_t>(t) - 1), p));
      ++positions;
    }
  }
  if (positions == 0) throw ConfigError("mean_top_p_count: no target positions");
  return total / static_cast<double>(positions);
}

void write_layer_profile_csv(const LayerProfile& profile, int64_t model_layers,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "layer_frac,metric,value\n";
  const int64_t l_minus_1 = model_layers - 1;
  for (size_t i = 0; i < profile.values.size(); ++i) {
    const double frac = static_cast<double>(i + 1) / static_cast<double>(l_minus_1);
    out << frac << "," << profile.metric << "," << profile.values[i] << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_entropy_csv(const EntropySeries& series, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "sequence,position,entropy\n";
  for (size_t s = 0; s < series.per_sequence.size(); ++s) {
    for (size_t i = 0; i < series.per_sequence[s].size(); ++i) {
      out << s << "," << i << "," << series.per_sequence[s][i] << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace mtplab
