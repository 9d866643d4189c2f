#include "mtplab/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mtplab/errors.hpp"

namespace mtplab {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

int64_t to_int(const std::string& section, const std::string& key,
               const std::string& value) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config [" + section + "] " + key + ": not an integer: " + value);
  }
}

double to_double(const std::string& section, const std::string& key,
                 const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config [" + section + "] " + key + ": not a number: " + value);
  }
}

bool to_bool(const std::string& section, const std::string& key,
             const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config [" + section + "] " + key + ": not a boolean: " + value);
}

// Canonical number formatting: integers render without a point, everything
// else via ostream (shortest-ish default precision is fine because the
// canonical form is defined by serialize(parse(x)), not by x).
std::string num(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    return std::to_string(static_cast<int64_t>(v));
  }
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

class SectionReader {
 public:
  SectionReader(const IniDoc& doc, std::string section) : section_(std::move(section)) {
    auto it = doc.find(section_);
    if (it != doc.end()) entries_ = &it->second;
  }

  std::string str(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
  }
  int64_t integer(const std::string& key, int64_t fallback) const {
    const std::string* v = find(key);
    return v ? to_int(section_, key, *v) : fallback;
  }
  double real(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? to_double(section_, key, *v) : fallback;
  }
  bool boolean(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    return v ? to_bool(section_, key, *v) : fallback;
  }

 private:
  const std::string* find(const std::string& key) const {
    if (!entries_) return nullptr;
    auto it = entries_->find(key);
    return it == entries_->end() ? nullptr : &it->second;
  }
  std::string section_;
  const std::map<std::string, std::string>* entries_ = nullptr;
};

}  // namespace

IniDoc parse_ini(const std::string& text) {
  IniDoc doc;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header: " + t);
      }
      section = trim(t.substr(1, t.size() - 2));
      doc[section];  // empty sections are preserved
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value: " + t);
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": key outside any section");
    }
    doc[section][key] = value;
  }
  return doc;
}

std::string serialize_ini(const IniDoc& doc) {
  std::string out;
  bool first = true;
  for (const auto& [section, entries] : doc) {
    if (!first) out += "\n";
    first = false;
    out += "[" + section + "]\n";
    for (const auto& [key, value] : entries) {
      out += key + " = " + value + "\n";
    }
  }
  return out;
}

IniDoc read_ini_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_ini(buf.str());
}

std::string task_kind_name(TaskKind kind) {
  return kind == TaskKind::translation ? "translation" : "open_ended";
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "translation") return TaskKind::translation;
  if (name == "open_ended") return TaskKind::open_ended;
  throw ConfigError("unknown task kind: " + name);
}

void RunConfig::validate() const {
  model.validate();
  mtp.validate();
  eval.validate();
  marginal.validate();
  if (corpus.n_train < 1 || corpus.n_eval < 1) {
    throw ConfigError("config [corpus]: n_train and n_eval must be >= 1");
  }
  if (!(base_lr > 0.0)) throw ConfigError("config [train]: base_lr must be > 0");
  if (diff_lr_multiplier < 1.0) {
    throw ConfigError("config [train]: diff_lr_multiplier must be >= 1");
  }
  if (epochs < 1 || batch_size < 1) {
    throw ConfigError("config [train]: epochs/batch_size must be >= 1");
  }
  if (adapter_rank < 1) throw ConfigError("config [train]: adapter_rank must be >= 1");
  if (model.vocab != corpus.vocab_size) {
    throw ConfigError("config: model vocab and corpus vocab_size must match");
  }
}

RunConfig run_config_from_ini(const IniDoc& doc) {
  RunConfig cfg;
  const SectionReader run(doc, "run");
  cfg.seed = static_cast<uint64_t>(run.integer("seed", 0));

  const SectionReader model(doc, "model");
  cfg.model.layers = model.integer("layers", cfg.model.layers);
  cfg.model.hidden = model.integer("hidden", cfg.model.hidden);
  cfg.model.n_heads = model.integer("n_heads", cfg.model.n_heads);
  cfg.model.vocab = model.integer("vocab", cfg.model.vocab);
  cfg.model.max_seq = model.integer("max_seq", cfg.model.max_seq);
  cfg.model.mlp_ratio = model.integer("mlp_ratio", cfg.model.mlp_ratio);

  const SectionReader corpus(doc, "corpus");
  cfg.corpus.kind = task_kind_from_name(corpus.str("kind", "translation"));
  cfg.corpus.vocab_size = static_cast<int32_t>(corpus.integer("vocab_size", cfg.model.vocab));
  cfg.corpus.n_train = corpus.integer("n_train", 2000);
  cfg.corpus.n_eval = corpus.integer("n_eval", 50);
  cfg.corpus.min_target_len =
      static_cast<int32_t>(corpus.integer("min_target_len", cfg.corpus.min_target_len));
  cfg.corpus.seed = static_cast<uint64_t>(corpus.integer("seed", 1));
  cfg.corpus.ambiguity = corpus.real("ambiguity", 0.0);
  cfg.corpus.src_len_min =
      static_cast<int32_t>(corpus.integer("src_len_min", cfg.corpus.min_target_len + 1));
  cfg.corpus.src_len_max =
      static_cast<int32_t>(corpus.integer("src_len_max", cfg.corpus.src_len_max));
  cfg.corpus.open_len = static_cast<int32_t>(corpus.integer("open_len", cfg.corpus.open_len));

  const SectionReader mtp(doc, "mtp");
  cfg.mtp.heads = mtp.integer("heads", cfg.mtp.heads);
  cfg.mtp.whs = mtp.boolean("whs", cfg.mtp.whs);
  cfg.mtp.temperature = mtp.real("temperature", cfg.mtp.temperature);

  const SectionReader train(doc, "train");
  cfg.base_lr = train.real("base_lr", cfg.base_lr);
  cfg.diff_lr_multiplier = train.real("diff_lr_multiplier", cfg.diff_lr_multiplier);
  cfg.epochs = train.integer("epochs", cfg.epochs);
  cfg.batch_size = train.integer("batch_size", cfg.batch_size);
  cfg.adapter_rank = train.integer("adapter_rank", cfg.adapter_rank);
  cfg.loss_balance = train.boolean("loss_balance", cfg.loss_balance);
  cfg.checkpoint_every = train.integer("checkpoint_every", cfg.checkpoint_every);

  const SectionReader eval(doc, "eval");
  cfg.eval.n_eval_sequences = eval.integer("n_eval_sequences", cfg.eval.n_eval_sequences);
  cfg.eval.tokens_per_sequence =
      static_cast<int>(eval.integer("tokens_per_sequence", cfg.eval.tokens_per_sequence));
  cfg.eval.top_k = static_cast<int>(eval.integer("top_k", cfg.eval.top_k));

  const SectionReader marginal(doc, "marginal");
  cfg.marginal.k = static_cast<int>(marginal.integer("k", cfg.marginal.k));
  cfg.marginal.top_p = marginal.real("top_p", cfg.marginal.top_p);
  cfg.marginal.renormalize = marginal.boolean("renormalize", cfg.marginal.renormalize);

  cfg.validate();
  return cfg;
}

IniDoc run_config_to_ini(const RunConfig& cfg) {
  IniDoc doc;
  auto& run = doc["run"];
  run["seed"] = std::to_string(cfg.seed);

  auto& model = doc["model"];
  model["layers"] = std::to_string(cfg.model.layers);
  model["hidden"] = std::to_string(cfg.model.hidden);
  model["n_heads"] = std::to_string(cfg.model.n_heads);
  model["vocab"] = std::to_string(cfg.model.vocab);
  model["max_seq"] = std::to_string(cfg.model.max_seq);
  model["mlp_ratio"] = std::to_string(cfg.model.mlp_ratio);

  auto& corpus = doc["corpus"];
  corpus["kind"] = task_kind_name(cfg.corpus.kind);
  corpus["vocab_size"] = std::to_string(cfg.corpus.vocab_size);
  corpus["n_train"] = std::to_string(cfg.corpus.n_train);
  corpus["n_eval"] = std::to_string(cfg.corpus.n_eval);
  corpus["min_target_len"] = std::to_string(cfg.corpus.min_target_len);
  corpus["seed"] = std::to_string(cfg.corpus.seed);
  corpus["ambiguity"] = num(cfg.corpus.ambiguity);
  corpus["src_len_min"] = std::to_string(cfg.corpus.src_len_min);
  corpus["src_len_max"] = std::to_string(cfg.corpus.src_len_max);
  corpus["open_len"] = std::to_string(cfg.corpus.open_len);

  auto& mtp = doc["mtp"];
  mtp["heads"] = std::to_string(cfg.mtp.heads);
  mtp["whs"] = cfg.mtp.whs ? "true" : "false";
  mtp["temperature"] = num(cfg.mtp.temperature);

  auto& train = doc["train"];
  train["base_lr"] = num(cfg.base_lr);
  train["diff_lr_multiplier"] = num(cfg.diff_lr_multiplier);
  train["epochs"] = std::to_string(cfg.epochs);
  train["batch_size"] = std::to_string(cfg.batch_size);
  train["adapter_rank"] = std::to_string(cfg.adapter_rank);
  train["loss_balance"] = cfg.loss_balance ? "true" : "false";
  train["checkpoint_every"] = std::to_string(cfg.checkpoint_every);

  auto& eval = doc["eval"];
  eval["n_eval_sequences"] = std::to_string(cfg.eval.n_eval_sequences);
  eval["tokens_per_sequence"] = std::to_string(cfg.eval.tokens_per_sequence);
  eval["top_k"] = std::to_string(cfg.eval.top_k);

  auto& marginal = doc["marginal"];
  marginal["k"] = std::to_string(cfg.marginal.k);
  marginal["top_p"] = num(cfg.marginal.top_p);
  marginal["renormalize"] = cfg.marginal.renormalize ? "true" : "false";

  return doc;
}

}  // namespace mtplab
