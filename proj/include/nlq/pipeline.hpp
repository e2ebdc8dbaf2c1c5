#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "nlq/engine.hpp"
#include "nlq/ir.hpp"
#include "nlq/prob.hpp"
#include "nlq/rewriter.hpp"

namespace nlq {

struct PipelineError : std::runtime_error {
  std::string step;
  bool budget = false; // a world / circuit / rewrite budget ran out
  PipelineError(std::string s, const std::string& msg, bool budget_hit = false)
      : std::runtime_error("step " + s + ": " + msg), step(std::move(s)), budget(budget_hit) {}
};

struct AnswerSet {
  Query query;
  std::vector<Row> rows; // lexicographically sorted, deduplicated
};

struct PerTrace {
  std::string head_pred;
  std::string strategy;   // "lifted" or "compiled"
  std::string plan_text;
  size_t answers = 0;
  size_t dropped_conditions = 0; // conditional groundings with Pr(cond) = 0
  CircuitStats stats;
};

struct PipelineTrace {
  size_t sigma_prime = 0, aux = 0, rest = 0;
  size_t m_size = 0, b_size = 0, m_prime_size = 0;
  std::vector<PerTrace> pers;
  double step_ms[5] = {0, 0, 0, 0, 0};

  std::string render() const;
  std::string to_json() const;
};

struct PipelineOptions {
  MarginalOptions prob;
  OverlaySink overlay;
  size_t rewrite_budget = 100000;
};

struct PipelineResult {
  AnswerSet answers;
  PipelineTrace trace;
  Model m_prime;
};

// reserved predicate holding the body witness tuples of the i-th PER
std::string per_witness_pred(size_t per_index);

// Step 3 in isolation: returns `m` extended with the reified PER heads and
// their witness atoms. Conditional heads carry Pr(body & cond)/Pr(cond);
// groundings with Pr(cond) = 0 are dropped (and counted in the trace).
Model reify_pers(const Program& p, const Model& m, const MarginalOptions& opt = {},
                 PipelineTrace* trace = nullptr);

// Step 5 in isolation: homomorphism matching of the query body, projected to
// the head terms, sorted and deduplicated.
AnswerSet extract_answers(const Query& q, const Model& m_prime);

PipelineResult answer_query(const Program& p, const Query& q, const PipelineOptions& opt = {});

} // namespace nlq
