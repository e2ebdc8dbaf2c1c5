#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "nlq/ir.hpp"
#include "nlq/value.hpp"

namespace nlq {

struct EvalError : std::runtime_error {
  enum Kind { UnboundVariable, TypeMismatch, NotStratified } kind;
  EvalError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct Relation {
  int arity = 0;
  std::unordered_set<Row, RowHash> rows;

  bool insert(Row r) { return rows.insert(std::move(r)).second; }
  bool contains(const Row& r) const { return rows.count(r) > 0; }
  size_t size() const { return rows.size(); }
};

struct Model {
  std::map<std::string, Relation> rels;

  const Relation* rel(const std::string& pred) const {
    auto it = rels.find(pred);
    return it == rels.end() ? nullptr : &it->second;
  }
  bool insert(const std::string& pred, Row row) {
    auto& r = rels[pred];
    if (r.arity == 0 && r.rows.empty()) r.arity = int(row.size());
    return r.insert(std::move(row));
  }
  bool contains(const Atom& ground_atom) const {
    const auto* r = rel(ground_atom.pred);
    return r && r->contains(ground_atom.ground_row());
  }
  size_t total_tuples() const {
    size_t n = 0;
    for (const auto& [p, r] : rels) n += r.size();
    return n;
  }
};

// Variable binding produced by conjunctive matching.
using Binding = std::map<std::string, Value>;

// True/false of a fully bound comparison literal; throws TypeMismatch when a
// string meets a number.
bool eval_builtin(const Literal& lit, const Binding& binding);

// Enumerates all homomorphisms of `body` into `model`; negated atoms and
// builtins filter. `sink` returns false to stop early.
void match_conjunction(const Model& model, const std::vector<Literal>& body,
                       const std::function<bool(const Binding&)>& sink);

// Least model of the stratified full-TGD program `rules` over `facts`.
// Semi-naive delta iteration within each stratum.
Model seminaive_eval(const Model& facts, const std::vector<Rule>& rules);

// Naive fixpoint evaluation (test oracle for the least-model property).
Model naive_eval(const Model& facts, const std::vector<Rule>& rules);

// Grouped-output directive sink: called once per group of an Overlay rule
// with the emitted rows; returns the cell stored in the head tuple.
using OverlaySink =
    std::function<Value(const std::string& pred, const Row& group, const std::vector<Row>& rows)>;

// One aggregation rule over a fully materialized model. Empty body solutions
// produce an empty relation (never a default value).
Relation eval_aggregate_rule(const Rule& rule, const Model& model,
                             const OverlaySink& overlay = {});

// The non-recursive post-processing layer: aggregation rules plus plain view
// rules, evaluated in dependency order on top of `model` (mutated in place).
void eval_postprocessing_layer(Model& model, const std::vector<Rule>& rules,
                               const OverlaySink& overlay = {});

double percentile_interpolated(std::vector<double> values, double q);

} // namespace nlq
