#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "nlq/ir.hpp"

namespace nlq {

struct RewriteError : std::runtime_error {
  enum Kind { BudgetExceeded, NotSticky } kind;
  RewriteError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Sticky-fragment marking: body variables missing from the head are marked,
// markings propagate backward through head positions to a fixpoint, and the
// set is sticky iff no marked variable occurs twice in a body.
struct MarkedRuleSet {
  std::vector<Rule> rules;
  // per rule, marked (body literal index, argument index) positions
  std::vector<std::set<std::pair<int, int>>> marking;

  bool sticky = true;
  // witness when not sticky
  std::string witness_var;
  int witness_line = 0;
  std::string message;
};

MarkedRuleSet check_sticky(const std::vector<Rule>& sigma1);

// One backward-rewriting step in the provenance chain of a produced rule.
struct RewriteStep {
  Rule rule;
  int parent = -1; // index into RewriteResult::all; -1 for an input rule
  int via = -1;    // index into sigma1; -1 for an input rule
  std::string note;
};

struct RewriteResult {
  std::vector<Rule> rules;       // final full TGDs free of rewritable predicates
  std::vector<RewriteStep> all;  // every generated rule with provenance
  std::vector<int> rule_sources; // rules[i] == all[rule_sources[i]].rule

  // provenance chain of rules[i], outermost first
  std::vector<const RewriteStep*> chain(size_t i) const;
};

// Exhaustive piece-unification rewriting of the sigma bodies against the
// sigma1 heads. Rules still mentioning a sigma1-head predicate are dropped
// from `rules` (facts over those predicates are not supported as rule input).
// Throws BudgetExceeded past `budget` generated rules, NotSticky when the
// precondition fails.
RewriteResult xrewrite(const std::vector<Rule>& sigma, const std::vector<Rule>& sigma1,
                       size_t budget = 100000);

// true when a substitution maps general's head to specific's head and
// general's body into a subset of specific's body
bool subsumes(const Rule& general, const Rule& specific);

struct SplitAux {
  std::vector<Rule> aux;
  std::vector<Rule> rest;
};

// Partition of the rewritten rules: Aux keeps those whose body dependency
// closure avoids probabilistic predicates, chi heads, and PER heads.
SplitAux split_aux(const std::vector<Rule>& sigma_prime, const Program& prog);

} // namespace nlq
