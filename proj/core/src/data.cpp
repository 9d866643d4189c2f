#include "mtplab/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mtplab/errors.hpp"

namespace mtplab {

Vocab::Vocab(int32_t vocab_size) : size(vocab_size) {
  if (size < kContentBegin + 2 || size > 256) {
    throw ConfigError("vocab size must be in [6, 256] (exact marginalization bound)");
  }
}

std::string Vocab::token_string(int32_t id) const {
  if (id < 0 || id >= size) throw ConfigError("token id out of range");
  switch (id) {
    case kPad: return "<pad>";
    case kBos: return "<bos>";
    case kSep: return "<sep>";
    case kTra: return "<tra>";
    default: return "tk" + std::to_string(id - kContentBegin);
  }
}

int32_t Vocab::token_id(const std::string& s) const {
  if (s == "<pad>") return kPad;
  if (s == "<bos>") return kBos;
  if (s == "<sep>") return kSep;
  if (s == "<tra>") return kTra;
  if (s.rfind("tk", 0) == 0) {
    const int32_t id = kContentBegin + std::stoi(s.substr(2));
    if (id >= kContentBegin && id < size) return id;
  }
  throw ConfigError("unknown token string: " + s);
}

Cipher::Cipher(const Vocab& vocab, Rng& rng) : source_begin(vocab.source_begin()) {
  const int32_t n = vocab.source_count();
  if (vocab.target_count() < n) throw ConfigError("target alphabet smaller than source");
  map.resize(static_cast<size_t>(n));
  std::iota(map.begin(), map.end(), vocab.target_begin());
  // Fisher-Yates with the corpus stream.
  for (int32_t i = n - 1; i > 0; --i) {
    const int64_t j = rng.uniform_int(0, i);
    std::swap(map[static_cast<size_t>(i)], map[static_cast<size_t>(j)]);
  }
}

int32_t Cipher::apply(int32_t source_token) const {
  const int32_t idx = source_token - source_begin;
  if (idx < 0 || idx >= static_cast<int32_t>(map.size())) {
    throw ConfigError("cipher: token outside source alphabet");
  }
  return map[static_cast<size_t>(idx)];
}

SequencePair gen_translation_pair(const CorpusSpec& spec, const Vocab& vocab,
                                  const Cipher& cipher, Rng& rng) {
  const int32_t len = static_cast<int32_t>(
      rng.uniform_int(spec.src_len_min, spec.src_len_max));
  // Source tokens follow an order-1 preferred-successor chain (half the draws
  // take the preferred successor, half are uniform). The structure makes
  // later target tokens statistically predictable from earlier context, so
  // multi-token heads have a learnable signal beyond exact positional lookup.
  const int32_t ns = vocab.source_count();
  const int32_t s0 = vocab.source_begin();
  Rng chain_rng(Rng::splitmix64(spec.seed ^ 0x737263636861696eULL));
  std::vector<int32_t> preferred(static_cast<size_t>(ns));
  for (int32_t& p : preferred) {
    p = s0 + static_cast<int32_t>(chain_rng.uniform_int(0, ns - 1));
  }
  std::vector<int32_t> src(static_cast<size_t>(len));
  for (size_t i = 0; i < src.size(); ++i) {
    if (i > 0 && rng.uniform() < 0.5) {
      src[i] = preferred[static_cast<size_t>(src[i - 1] - s0)];
    } else {
      src[i] = static_cast<int32_t>(rng.uniform_int(s0, s0 + ns - 1));
    }
  }
  SequencePair pair;
  pair.ids.reserve(static_cast<size_t>(2 * len + 3));
  pair.ids.push_back(Vocab::kBos);
  pair.ids.push_back(Vocab::kTra);
  pair.ids.insert(pair.ids.end(), src.begin(), src.end());
  pair.ids.push_back(Vocab::kSep);
  for (int32_t s : src) {
    int32_t t = cipher.apply(s);
    if (spec.ambiguity > 0.0 && rng.uniform() < spec.ambiguity) {
      // Remap to a uniformly random *different* target-alphabet token.
      int32_t alt = t;
      while (alt == t) {
        alt = static_cast<int32_t>(rng.uniform_int(
            vocab.target_begin(), vocab.target_begin() + vocab.target_count() - 1));
      }
      t = alt;
    }
    pair.ids.push_back(t);
  }
  pair.mask.assign(pair.ids.size(), 0);
  for (size_t i = pair.ids.size() - static_cast<size_t>(len); i < pair.ids.size(); ++i) {
    pair.mask[i] = 1;
  }
  pair.target_len = len;
  return pair;
}

SequencePair gen_open_ended(const CorpusSpec& spec, const Vocab& vocab, Rng& rng) {
  const int32_t len = spec.open_len;
  if (len < 4) throw ConfigError("open_len too short");
  const int32_t n = vocab.content_count();
  const int32_t c0 = Vocab::kContentBegin;
  // Preferred successor for each (a,b) pair, derived from the corpus seed so
  // train and eval shards share one chain.
  Rng chain_rng(Rng::splitmix64(spec.seed ^ 0x6f70656e6d6b76ULL));
  std::vector<int32_t> preferred(static_cast<size_t>(n) * static_cast<size_t>(n));
  for (int32_t& p : preferred) {
    p = c0 + static_cast<int32_t>(chain_rng.uniform_int(0, n - 1));
  }
  SequencePair pair;
  pair.ids.reserve(static_cast<size_t>(len) + 1);
  pair.ids.push_back(Vocab::kBos);
  int32_t a = c0 + static_cast<int32_t>(rng.uniform_int(0, n - 1));
  int32_t b = c0 + static_cast<int32_t>(rng.uniform_int(0, n - 1));
  pair.ids.push_back(a);
  pair.ids.push_back(b);
  for (int32_t i = 2; i < len; ++i) {
    int32_t next;
    if (rng.uniform() < spec.ambiguity) {
      next = c0 + static_cast<int32_t>(rng.uniform_int(0, n - 1));
    } else {
      next = preferred[static_cast<size_t>(a - c0) * static_cast<size_t>(n) +
                       static_cast<size_t>(b - c0)];
    }
    pair.ids.push_back(next);
    a = b;
    b = next;
  }
  pair.target_len = len / 2;
  pair.mask.assign(pair.ids.size(), 0);
  for (size_t i = pair.ids.size() - static_cast<size_t>(pair.target_len);
       i < pair.ids.size(); ++i) {
    pair.mask[i] = 1;
  }
  return pair;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  if (spec.n_train <= 0 || spec.n_eval <= 0) {
    throw ConfigError("corpus spec: n_train and n_eval must be positive");
  }
  if (spec.ambiguity < 0.0 || spec.ambiguity > 1.0) {
    throw ConfigError("corpus spec: ambiguity must be in [0,1]");
  }
  Vocab vocab(spec.vocab_size);
  Rng rng(spec.seed);
  Cipher cipher(vocab, rng);
  Corpus corpus;
  corpus.spec = spec;
  auto gen_one = [&](Rng& r) {
    return spec.kind == TaskKind::translation
               ? gen_translation_pair(spec, vocab, cipher, r)
               : gen_open_ended(spec, vocab, r);
  };
  Rng train_rng = rng.child(1);
  for (int64_t i = 0; i < spec.n_train; ++i) corpus.train.push_back(gen_one(train_rng));
  Rng eval_rng = rng.child(2);
  while (static_cast<int64_t>(corpus.eval.size()) < spec.n_eval) {
    SequencePair p = gen_one(eval_rng);
    if (p.target_len >= spec.min_target_len) corpus.eval.push_back(std::move(p));
  }
  return corpus;
}

Batch make_batch(const std::vector<SequencePair>& pairs, int64_t first,
                 int64_t count, int64_t pad_to) {
  if (count < 1) throw ConfigError("make_batch: batch size must be >= 1");
  if (first < 0 || first + count > static_cast<int64_t>(pairs.size())) {
    throw ConfigError("make_batch: range out of bounds");
  }
  Batch batch;
  batch.rows = count;
  batch.width = pad_to;
  batch.ids.assign(static_cast<size_t>(count * pad_to), Vocab::kPad);
  batch.loss_mask.assign(static_cast<size_t>(count * pad_to), 0);
  batch.valid_len.resize(static_cast<size_t>(count));
  for (int64_t r = 0; r < count; ++r) {
    const SequencePair& p = pairs[static_cast<size_t>(first + r)];
    const int64_t len = static_cast<int64_t>(p.ids.size());
    if (len > pad_to) {
      throw ConfigError("make_batch: sequence of length " + std::to_string(len) +
                        " exceeds pad_to " + std::to_string(pad_to));
    }
    std::copy(p.ids.begin(), p.ids.end(), batch.ids.begin() + r * pad_to);
    std::copy(p.mask.begin(), p.mask.end(), batch.loss_mask.begin() + r * pad_to);
    batch.valid_len[static_cast<size_t>(r)] = static_cast<int32_t>(len);
  }
  return batch;
}

void write_pairs_jsonl(const std::vector<SequencePair>& pairs,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const SequencePair& p : pairs) {
    nlohmann::json rec;
    rec["ids"] = p.ids;
    rec["mask"] = std::vector<int>(p.mask.begin(), p.mask.end());
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<SequencePair> read_pairs_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<SequencePair> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json rec = nlohmann::json::parse(line);
    SequencePair p;
    p.ids = rec.at("ids").get<std::vector<int32_t>>();
    const auto mask = rec.at("mask").get<std::vector<int>>();
    p.mask.assign(mask.begin(), mask.end());
    if (p.ids.size() != p.mask.size()) throw IoError("corrupt record in " + path);
    p.target_len = static_cast<int32_t>(
        std::count(p.mask.begin(), p.mask.end(), static_cast<uint8_t>(1)));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace mtplab
