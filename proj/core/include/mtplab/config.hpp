#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mtplab/data.hpp"
#include "mtplab/eval.hpp"
#include "mtplab/marginal.hpp"
#include "mtplab/model.hpp"
#include "mtplab/mtp.hpp"
#include "mtplab/train.hpp"

namespace mtplab {

// Sectioned key/value text config. `[section]` headers, `key = value` lines,
// `#`/`;` comments, blank lines ignored. Canonical serialization sorts
// sections and keys, so parse -> serialize -> parse is the identity.
using IniDoc = std::map<std::string, std::map<std::string, std::string>>;

IniDoc parse_ini(const std::string& text);
std::string serialize_ini(const IniDoc& doc);
IniDoc read_ini_file(const std::string& path);

// One declarative unit driving the whole experiment matrix: the model, the
// corpus, the shared training knobs, evaluation and marginalization settings.
struct RunConfig {
  ModelConfig model;
  CorpusSpec corpus;
  MtpConfig mtp;
  EvalSpec eval;
  MarginalSpec marginal;
  uint64_t seed = 0;           // model-init seed (corpus has its own)
  double base_lr = 1e-3;       // pretraining LR; finetunes derive 0.5x
  double diff_lr_multiplier = 4.0;
  int64_t epochs = 1;
  int64_t batch_size = 16;
  int64_t adapter_rank = 8;
  bool loss_balance = true;
  int64_t checkpoint_every = 0;

  void validate() const;
};

RunConfig run_config_from_ini(const IniDoc& doc);
IniDoc run_config_to_ini(const RunConfig& cfg);

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

}  // namespace mtplab
