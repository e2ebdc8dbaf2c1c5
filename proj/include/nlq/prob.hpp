#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlq/engine.hpp"
#include "nlq/ir.hpp"

namespace nlq {

struct ProbError : std::runtime_error {
  enum Kind {
    CapExceeded,             // too many total choices to enumerate
    CircuitBudgetExceeded,   // Shannon expansion node cap
    IndependenceViolation,   // defensive check at an independent operator
    NotSupported
  } kind;
  ProbError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// ---------------------------------------------------------------------------
// Total choices

// alt[j] indexes choices[j].alternatives; alt[j] == k_j means bottom
struct TotalChoice {
  std::vector<int> alt;
  double p = 1.0;

  bool selects(size_t choice, int alternative) const { return alt[choice] == alternative; }
};

constexpr uint64_t kDefaultWorldCap = uint64_t(1) << 22;

void total_choices(const std::vector<ProbChoice>& choices,
                   const std::function<void(const TotalChoice&)>& fn,
                   uint64_t cap = kDefaultWorldCap);

std::vector<TotalChoice> total_choices_list(const std::vector<ProbChoice>& choices,
                                            uint64_t cap = kDefaultWorldCap);

// ---------------------------------------------------------------------------
// Probabilistic context: (M, C, chi) with lookup tables

using AnswerProbs = std::map<Row, double>;

struct ProbContext {
  Model det; // M
  std::vector<ProbChoice> choices;
  std::vector<Rule> chi;

  // derived
  struct ProbAtomInfo {
    int choice = -1;
    int alt = -1;
    double weight = 0;
  };
  std::map<std::string, std::map<Row, ProbAtomInfo>> prob_rows; // pred -> row -> info
  std::map<std::string, std::set<int>> pred_choices;            // pred -> choice ids

  // TupleIndependent: the predicate's atoms live in singleton choices only;
  // OneChoice: all of its atoms belong to one shared choice; Mixed otherwise.
  enum PredClass { TupleIndependent, OneChoice, Mixed };
  std::map<std::string, PredClass> pred_class;

  static ProbContext make(Model m, std::vector<ProbChoice> choices, std::vector<Rule> chi);

  bool is_prob(const std::string& pred) const { return prob_rows.count(pred) > 0; }
  // M plus every probabilistic atom: the union of all possible worlds
  Model support_model() const;
};

// ---------------------------------------------------------------------------
// Brute-force oracle (Def.-7 semantics by world enumeration)

AnswerProbs oracle_answers(const std::vector<Term>& head, const std::vector<Literal>& body,
                         const ProbContext& ctx, uint64_t cap = kDefaultWorldCap);

// ---------------------------------------------------------------------------
// Event expressions (hash-consed DAG)

using EventId = int32_t;

class EventPool {
 public:
  enum Kind : uint8_t { False, True, Lit, And, Or, Not };

  struct Node {
    Kind kind;
    int choice = -1, alt = -1;     // Lit
    std::vector<EventId> children; // And / Or / Not
  };

  EventPool();

  EventId ftrue() const { return 1; }
  EventId ffalse() const { return 0; }
  EventId lit(int choice, int alt);
  EventId conj(std::vector<EventId> xs);
  EventId disj(std::vector<EventId> xs);
  EventId neg(EventId x);

  const Node& node(EventId id) const { return nodes_[size_t(id)]; }
  size_t size() const { return nodes_.size(); }

  // substitute one choice's outcome (alt == -1 means bottom)
  EventId condition(EventId e, int choice, int alt);

  // occurrence count of each choice id over the DAG (each node once)
  std::map<int, int> choice_counts(EventId e) const;

  std::string repr(EventId e, const std::vector<ProbChoice>& choices) const;

 private:
  EventId intern(Node n);
  std::vector<Node> nodes_;
  std::map<std::string, EventId> index_;
};

struct ProvenanceTable {
  std::string pred;
  std::map<Row, EventId> rows;
};

// Semiring evaluation of the (non-recursive, negation-free) chi program plus
// the query body; rows keyed by the instantiated head tuple.
ProvenanceTable build_provenance(const std::vector<Term>& head, const std::vector<Literal>& body,
                                 const ProbContext& ctx, EventPool& pool);

// ---------------------------------------------------------------------------
// Exact counting over the event DAG

struct CircuitStats {
  size_t nodes = 0;
  size_t cache_hits = 0;
};

constexpr size_t kDefaultCircuitCap = 10'000'000;

double compile_and_count(EventId e, EventPool& pool, const std::vector<ProbChoice>& choices,
                         size_t node_cap = kDefaultCircuitCap, CircuitStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Lifted inference

struct SafePlan {
  enum Kind {
    DetBool,   // lits hold no probabilistic atom: probability is 0/1
    GroundConj,// probabilistic atoms all ground at eval time
    Project,   // independent/exclusive projection over `var`
    Join       // variable-disjoint components with disjoint choice supports
  } kind = DetBool;

  std::vector<Literal> lits; // DetBool / GroundConj
  std::string var;           // Project
  bool exclusive_sum = false;// Project: sum (exclusive) vs 1-prod(1-p)
  std::vector<SafePlan> children;

  std::string repr(int indent = 0) const;
};

struct LiftResult {
  std::optional<SafePlan> plan;
  std::string witness; // non-empty when not liftable
};

// Hierarchical-query test over one conjunctive body; `bound` variables are
// treated as constants (they are grounded per answer tuple before eval).
LiftResult lift_or_compile(const std::vector<Literal>& cq, const std::set<std::string>& bound,
                           const ProbContext& ctx);

// binding must cover every bound variable of the plan
double eval_safe_plan(const SafePlan& plan, const ProbContext& ctx, const Binding& binding);

// ---------------------------------------------------------------------------
// Dispatcher

struct MarginalOptions {
  uint64_t world_cap = kDefaultWorldCap;   // oracle only
  size_t circuit_cap = kDefaultCircuitCap;
};

struct MarginalResult {
  AnswerProbs answers;
  std::string strategy; // "lifted" or "compiled"
  std::string plan_text;
  CircuitStats stats;
};

MarginalResult marginal_answers(const std::vector<Term>& head, const std::vector<Literal>& body,
                                const ProbContext& ctx, const MarginalOptions& opt = {});

} // namespace nlq
