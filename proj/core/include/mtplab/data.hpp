#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtplab/rng.hpp"

namespace mtplab {

// Id-level token inventory. Ids 0..3 are the specials; content tokens follow.
// For the translation task the content range splits into a source alphabet
// (first half) and a target alphabet (second half).
struct Vocab {
  int32_t size = 64;
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kSep = 2;
  static constexpr int32_t kTra = 3;  // "TRANSLATE:" template marker
  static constexpr int32_t kContentBegin = 4;

  explicit Vocab(int32_t vocab_size = 64);

  int32_t content_count() const { return size - kContentBegin; }
  int32_t source_begin() const { return kContentBegin; }
  int32_t source_count() const { return content_count() / 2; }
  int32_t target_begin() const { return kContentBegin + source_count(); }
  int32_t target_count() const { return content_count() - source_count(); }

  std::string token_string(int32_t id) const;
  int32_t token_id(const std::string& s) const;
};

struct SequencePair {
  std::vector<int32_t> ids;   // templated source + separator + target
  std::vector<uint8_t> mask;  // 1 exactly on target positions
  int32_t target_len = 0;
};

enum class TaskKind { translation, open_ended };

struct CorpusSpec {
  TaskKind kind = TaskKind::translation;
  int32_t vocab_size = 64;
  int64_t n_train = 0;
  int64_t n_eval = 0;
  int32_t min_target_len = 20;
  uint64_t seed = 0;
  double ambiguity = 0.0;  // 0 = deterministic source->target map
  // Translation source lengths (uniform); min defaults to min_target_len + 1
  // so the evaluation window (last 20 positions judging next and 2nd token
  // from one context) always fits inside the target span.
  int32_t src_len_min = 21;
  int32_t src_len_max = 28;
  int32_t open_len = 200;  // open-ended sequence length
};

struct Corpus {
  CorpusSpec spec;
  std::vector<SequencePair> train;
  std::vector<SequencePair> eval;
};

// Per-token substitution cipher from the source sub-alphabet into the target
// sub-alphabet, a seeded permutation fixed per corpus.
struct Cipher {
  std::vector<int32_t> map;  // indexed by source id - source_begin
  int32_t source_begin = 0;
  Cipher(const Vocab& vocab, Rng& rng);
  int32_t apply(int32_t source_token) const;
};

// One templated pair: BOS TRA <src> SEP <tgt>. With ambiguity = a, each
// target token is independently flipped to a different random target-alphabet
// token with probability a.
SequencePair gen_translation_pair(const CorpusSpec& spec, const Vocab& vocab,
                                  const Cipher& cipher, Rng& rng);

// Order-2 Markov chain over content tokens; each (a,b) has one preferred
// successor, taken with probability 1 - ambiguity, else uniform. Mask covers
// the final half of the sequence.
SequencePair gen_open_ended(const CorpusSpec& spec, const Vocab& vocab,
                            Rng& rng);

// Full deterministic corpus from (spec, spec.seed). Eval pairs are filtered
// to target_len >= min_target_len.
Corpus generate_corpus(const CorpusSpec& spec);

// Right-padded id/mask arrays plus per-row valid lengths (attention must not
// reach PAD; with right padding the valid length conveys that).
struct Batch {
  int64_t rows = 0;
  int64_t width = 0;
  std::vector<int32_t> ids;        // rows * width
  std::vector<uint8_t> loss_mask;  // rows * width, 0 on padding
  std::vector<int32_t> valid_len;
};

Batch make_batch(const std::vector<SequencePair>& pairs, int64_t first,
                 int64_t count, int64_t pad_to);

// Line-delimited {"ids":[...],"mask":[...]} records, LF-terminated.
void write_pairs_jsonl(const std::vector<SequencePair>& pairs,
                       const std::string& path);
std::vector<SequencePair> read_pairs_jsonl(const std::string& path);

}  // namespace mtplab
