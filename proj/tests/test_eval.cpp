#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtplab/eval.hpp"

using namespace mtplab;

namespace {

// Scripted predictor: puts all mass on a fixed answer for next and second,
// regardless of context, and records each context it was asked about.
class ScriptedPredictor : public PairPredictor {
 public:
  ScriptedPredictor(int64_t vocab, int32_t next_answer, int32_t second_answer)
      : vocab_(vocab), next_(next_answer), second_(second_answer) {}

  PairPrediction predict(const std::vector<int32_t>& ctx) override {
    contexts.push_back(ctx);
    PairPrediction out;
    out.next.assign(static_cast<size_t>(vocab_), 0.0);
    out.next[static_cast<size_t>(next_)] = 1.0;
    ProbDist second(static_cast<size_t>(vocab_), 0.0);
    second[static_cast<size_t>(second_)] = 1.0;
    out.second = second;
    return out;
  }

  std::vector<std::vector<int32_t>> contexts;

 private:
  int64_t vocab_;
  int32_t next_;
  int32_t second_;
};

SequencePair constant_pair(int len_target, int32_t token) {
  // BOS TRA src SEP then `token` repeated: every next/second reference in the
  // window equals `token`.
  SequencePair p;
  p.ids = {1, 3, 4, 5, 6, 2};
  p.mask.assign(p.ids.size(), 0);
  for (int i = 0; i < len_target; ++i) {
    p.ids.push_back(token);
    p.mask.push_back(1);
  }
  p.target_len = len_target;
  return p;
}

}  // namespace

TEST_CASE("evaluation scores the documented window") {
  const SequencePair pair = constant_pair(8, 7);
  EvalSpec spec;
  spec.tokens_per_sequence = 4;
  spec.n_eval_sequences = 10;
  ScriptedPredictor right(16, 7, 7);
  const EvalResult res = evaluate(right, {pair}, spec);
  CHECK(res.n_positions == 4);
  CHECK(res.next_top5 == 1.0);
  CHECK(res.second_top5 == 1.0);
  CHECK(res.has_second);
  // Contexts end at t = n-3-3 .. n-3; each judges ids[t+1] and ids[t+2].
  const int64_t n = static_cast<int64_t>(pair.ids.size());
  REQUIRE(right.contexts.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(static_cast<int64_t>(right.contexts[i].size()) ==
          n - 3 - 4 + 1 + static_cast<int64_t>(i) + 1);
  }

  ScriptedPredictor wrong_second(16, 7, 9);
  const EvalResult res2 = evaluate(wrong_second, {pair}, spec);
  CHECK(res2.next_top5 == 1.0);
  CHECK(res2.second_top5 == 0.0);
}

TEST_CASE("sequences with short target spans are excluded") {
  EvalSpec spec;
  spec.tokens_per_sequence = 6;
  ScriptedPredictor p(16, 7, 7);
  // target_len = 6 < tokens_per_sequence + 1: the window would start outside
  // the target span.
  CHECK_THROWS_AS(evaluate(p, {constant_pair(6, 7)}, spec), ConfigError);
  const EvalResult res = evaluate(p, {constant_pair(6, 7), constant_pair(7, 7)}, spec);
  CHECK(res.n_positions == 6);  // only the second sequence qualifies
}

TEST_CASE("n_eval_sequences caps the scored sequences") {
  EvalSpec spec;
  spec.tokens_per_sequence = 2;
  spec.n_eval_sequences = 2;
  ScriptedPredictor p(16, 7, 7);
  std::vector<SequencePair> pairs(5, constant_pair(5, 7));
  const EvalResult res = evaluate(p, pairs, spec);
  CHECK(res.n_positions == 4);
}

TEST_CASE("detail stream gets one record per position") {
  EvalSpec spec;
  spec.tokens_per_sequence = 3;
  ScriptedPredictor p(16, 7, 7);
  std::ostringstream detail;
  const EvalResult res = evaluate(p, {constant_pair(6, 7)}, spec, &detail);
  size_t lines = 0;
  std::istringstream in(detail.str());
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == static_cast<size_t>(res.n_positions));
}

TEST_CASE("report matrix emits every row plus the ordering flags") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mtplab_report_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "eval");
  auto write_row = [&](const std::string& row, double next, double second) {
    std::ofstream out(dir / "eval" / (row + ".json"));
    out << "{\"next_top5\":" << next << ",\"second_top5\":" << second
        << ",\"n_positions\":100}";
  };
  write_row("baseline", 0.97, 0.91);
  write_row("heads_only", 0.95, 0.55);
  write_row("vanilla", 0.95, 0.70);
  write_row("diff_lr", 0.95, 0.80);

  const std::string csv = (dir / "report.csv").string();
  report_matrix(dir.string(), csv);
  std::ifstream in(csv);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 1 + strategy_rows().size() + 2);
  CHECK(lines[0] == "row,next_top5,second_top5,n_positions");
  CHECK(lines[1].rfind("baseline,0.97,0.91,100", 0) == 0);
  CHECK(lines[4].rfind("warmup,absent,absent,0", 0) == 0);
  // baseline 0.91 >= best joint 0.80 >= heads_only 0.55.
  CHECK(lines[lines.size() - 2] == "ordering:baseline_ge_joint,1,,");
  CHECK(lines[lines.size() - 1] == "ordering:joint_ge_heads_only,1,,");
  fs::remove_all(dir);
}
