#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nlq/value.hpp"

namespace nlq {

// ---------------------------------------------------------------------------
// Terms

struct Term {
  enum Kind : uint8_t { Constant, Variable, NullT, IntLit, RealLit, StrLit };

  Kind kind = Constant;
  std::string name; // Constant symbol / Variable name / StrLit payload
  int64_t i = 0;    // IntLit payload, NullT id
  double d = 0.0;   // RealLit payload

  static Term constant(std::string s) { return {Constant, std::move(s), 0, 0.0}; }
  static Term var(std::string s) { return {Variable, std::move(s), 0, 0.0}; }
  static Term null(int64_t id) { return {NullT, {}, id, 0.0}; }
  static Term integer(int64_t x) { return {IntLit, {}, x, 0.0}; }
  static Term real(double x) { return {RealLit, {}, 0, x}; }
  static Term str(std::string s) { return {StrLit, std::move(s), 0, 0.0}; }
  static Term from_value(const Value& v);

  bool is_var() const { return kind == Variable; }
  bool is_ground() const { return kind != Variable; }
  Value ground_value() const; // precondition: is_ground()

  bool operator==(const Term& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
      case Constant:
      case Variable:
      case StrLit: return name == o.name;
      case NullT:
      case IntLit: return i == o.i;
      case RealLit: return d == o.d;
    }
    return false;
  }
  bool operator!=(const Term& o) const { return !(*this == o); }
  bool operator<(const Term& o) const {
    if (kind != o.kind) return kind < o.kind;
    switch (kind) {
      case Constant:
      case Variable:
      case StrLit: return name < o.name;
      case NullT:
      case IntLit: return i < o.i;
      case RealLit: return d < o.d;
    }
    return false;
  }

  std::string repr() const;
};

// ---------------------------------------------------------------------------
// Atoms and body literals

struct Atom {
  std::string pred;
  std::vector<Term> args;

  bool is_ground() const;
  Row ground_row() const;
  std::string repr() const;

  bool operator==(const Atom& o) const { return pred == o.pred && args == o.args; }
  bool operator!=(const Atom& o) const { return !(*this == o); }
  bool operator<(const Atom& o) const {
    if (pred != o.pred) return pred < o.pred;
    return args < o.args;
  }
};

enum class CmpOp { Lt, Le, Gt, Ge, Eq, Ne };

const char* cmp_op_text(CmpOp op);

struct Literal {
  enum Kind : uint8_t { Positive, Negative, Builtin } kind = Positive;
  Atom atom;     // Positive / Negative
  CmpOp op = CmpOp::Eq; // Builtin
  Term lhs, rhs;        // Builtin

  static Literal pos(Atom a) { return {Positive, std::move(a), CmpOp::Eq, {}, {}}; }
  static Literal neg(Atom a) { return {Negative, std::move(a), CmpOp::Eq, {}, {}}; }
  static Literal builtin(CmpOp op, Term l, Term r) {
    return {Builtin, {}, op, std::move(l), std::move(r)};
  }

  std::string repr() const;
  bool operator==(const Literal& o) const {
    if (kind != o.kind) return false;
    if (kind == Builtin) return op == o.op && lhs == o.lhs && rhs == o.rhs;
    return atom == o.atom;
  }
};

// ---------------------------------------------------------------------------
// Rules

// Overlay is the grouped-output directive (create_region_overlay): it emits
// the grouped rows as a tabular artifact instead of folding them to a scalar.
enum class AggFunc { Max, Min, Sum, Count, Mean, Percentile, Overlay };

const char* agg_func_name(AggFunc f);
std::optional<AggFunc> agg_func_from_name(const std::string& name);

// Aggregation slot in a rule head: agg(var), compute_percentile(var, q), or
// create_region_overlay(v1, ..., vk).
struct AggSpec {
  AggFunc func = AggFunc::Max;
  std::vector<Term> vars; // aggregated body variables (one except Overlay)
  double param = 0;       // percentile q
  const Term& var() const { return vars.front(); }
};

enum class RuleClass {
  SigmaFull,    // Sigma: full TGDs over deterministic predicates
  Existential,  // Sigma_1: TGDs with existential head variables
  Chi,          // full TGDs touching probabilistic predicates
  Per,          // probability encoding rules (PROB head argument)
  Aggregate     // aggregation heads
};

const char* rule_class_name(RuleClass c);

struct Rule {
  // `heads` has one atom except for existential rules, which may carry a
  // conjunctive head (e.g. an ontology part-of pattern).
  std::vector<Atom> heads;
  std::vector<Literal> body;
  // PER conditioning: head :- body // cond computes Pr(body & cond)/Pr(cond).
  std::vector<Literal> cond;
  RuleClass cls = RuleClass::SigmaFull;

  // Per rules: index of the PROB position in heads[0] (always last).
  // Aggregate rules: position of the aggregate slot in heads[0] plus spec.
  std::optional<AggSpec> agg;
  int agg_pos = -1;

  int line = 0; // source location for diagnostics

  const Atom& head() const { return heads.front(); }
  std::vector<std::string> head_vars() const;
  std::vector<std::string> body_vars() const;
  std::vector<std::string> existential_vars() const;
  bool has_existential() const { return !existential_vars().empty(); }

  std::string repr() const;
  bool operator==(const Rule& o) const { return heads == o.heads && body == o.body; }
};

// ---------------------------------------------------------------------------
// Probabilistic constraints

// One annotated disjunction a1:p1 | ... | ak:pk over ground probabilistic
// atoms; the complementary event carries mass 1 - sum(pi).
struct ProbChoice {
  std::vector<std::pair<Atom, double>> alternatives;
  int id = -1;
  int line = 0;

  double bottom_mass() const {
    double s = 0;
    for (const auto& [a, p] : alternatives) s += p;
    return 1.0 - s;
  }
  std::string repr() const;
};

// ---------------------------------------------------------------------------
// Declarations and programs

enum class SchemaClass { Deterministic, Probabilistic, Target };

struct PredicateDecl {
  std::string name;
  int arity = 0;
  SchemaClass cls = SchemaClass::Deterministic;
};

struct Query {
  std::vector<Term> head; // answer terms (variables or constants)
  std::vector<Literal> body;
  std::string name = "Ans";
  std::string repr() const;
};

struct Program {
  std::map<std::string, PredicateDecl> decls;

  std::vector<Atom> facts_d;  // D
  std::vector<Atom> facts_d1; // D_1 (ontology ABox side)
  std::vector<Rule> sigma;    // full TGDs over R_D
  std::vector<Rule> sigma1;   // existential TGDs (sticky fragment)
  std::vector<Rule> chi;      // probabilistic full TGDs
  std::vector<Rule> pers;     // probability encoding rules
  std::vector<Rule> aggs;     // aggregation rules
  std::vector<ProbChoice> choices;
  std::vector<Query> queries; // Ans rules, in source order

  const PredicateDecl* decl(const std::string& name) const {
    auto it = decls.find(name);
    return it == decls.end() ? nullptr : &it->second;
  }
  bool is_probabilistic(const std::string& pred) const {
    const auto* d = decl(pred);
    return d && d->cls == SchemaClass::Probabilistic;
  }
  bool is_target(const std::string& pred) const {
    const auto* d = decl(pred);
    return d && d->cls == SchemaClass::Target;
  }

  std::string repr() const;
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string message;
  int line = 0;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_program(const Program& p);

// ---------------------------------------------------------------------------
// Stratification over full TGDs with negation

struct StratificationError {
  std::vector<std::string> cycle; // predicates on an offending negative cycle
  std::string message;
};

struct Stratification {
  // strata[i] = predicates evaluated at level i; lower levels first.
  std::vector<std::set<std::string>> strata;
  int stratum_of(const std::string& pred) const;
};

// Returns the strata or an error when recursion passes through negation.
// Deterministic for a fixed predicate ordering.
std::optional<Stratification> stratify(const std::vector<Rule>& rules,
                                       StratificationError* err = nullptr);

// All predicates reachable from `target` through rule head -> body edges.
std::set<std::string> dependency_closure(const std::set<std::string>& target,
                                         const std::vector<Rule>& rules);

} // namespace nlq
