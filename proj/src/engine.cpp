#include "nlq/engine.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace nlq {

namespace {

// ---------------------------------------------------------------------------
// Compiled bodies: variables interned to dense ids so bindings are vectors.

struct CSlot {
  int var = -1; // >= 0: variable id; -1: the constant in `val`
  Value val;
};

struct CAtom {
  std::string pred;
  std::vector<CSlot> slots;
};

struct CLit {
  Literal::Kind kind = Literal::Positive;
  CAtom atom;
  CmpOp op = CmpOp::Eq;
  CSlot lhs, rhs;
};

struct VarTable {
  std::unordered_map<std::string, int> ids;
  std::vector<std::string> names;

  int intern(const std::string& v) {
    auto it = ids.find(v);
    if (it != ids.end()) return it->second;
    int id = int(names.size());
    ids.emplace(v, id);
    names.push_back(v);
    return id;
  }
};

CSlot compile_term(const Term& t, VarTable& vars) {
  CSlot s;
  if (t.is_var())
    s.var = vars.intern(t.name);
  else
    s.val = t.ground_value();
  return s;
}

CLit compile_literal(const Literal& lit, VarTable& vars) {
  CLit c;
  c.kind = lit.kind;
  if (lit.kind == Literal::Builtin) {
    c.op = lit.op;
    c.lhs = compile_term(lit.lhs, vars);
    c.rhs = compile_term(lit.rhs, vars);
  } else {
    c.atom.pred = lit.atom.pred;
    for (const auto& t : lit.atom.args) c.atom.slots.push_back(compile_term(t, vars));
  }
  return c;
}

bool slot_vars_bound(const CLit& c, const std::vector<char>& bound) {
  if (c.kind == Literal::Builtin)
    return (c.lhs.var < 0 || bound[c.lhs.var]) && (c.rhs.var < 0 || bound[c.rhs.var]);
  for (const auto& s : c.atom.slots)
    if (s.var >= 0 && !bound[s.var]) return false;
  return true;
}

// Greedy join order: positive atoms picked by most-bound-slots first; negated
// atoms and builtins inserted as soon as all of their variables are bound.
std::vector<int> order_body(const std::vector<CLit>& lits, int nvars, int first = -1) {
  std::vector<char> bound(size_t(nvars), 0);
  std::vector<char> used(lits.size(), 0);
  std::vector<int> order;
  auto bind_atom = [&](int i) {
    used[i] = 1;
    order.push_back(i);
    if (lits[i].kind != Literal::Builtin)
      for (const auto& s : lits[i].atom.slots)
        if (s.var >= 0) bound[s.var] = 1;
  };
  auto flush_filters = [&] {
    bool again = true;
    while (again) {
      again = false;
      for (size_t i = 0; i < lits.size(); ++i)
        if (!used[i] && lits[i].kind != Literal::Positive && slot_vars_bound(lits[i], bound)) {
          bind_atom(int(i));
          again = true;
        }
    }
  };
  if (first >= 0) {
    bind_atom(first);
    flush_filters();
  }
  for (;;) {
    int best = -1, best_score = -1;
    for (size_t i = 0; i < lits.size(); ++i) {
      if (used[i] || lits[i].kind != Literal::Positive) continue;
      int score = 0;
      for (const auto& s : lits[i].atom.slots)
        if (s.var < 0 || bound[s.var]) ++score;
      if (score > best_score) {
        best_score = score;
        best = int(i);
      }
    }
    if (best < 0) break;
    bind_atom(best);
    flush_filters();
  }
  // Unsatisfiable leftovers (unbound negations/builtins) would be a safety
  // violation caught by validation; append them so eval throws.
  for (size_t i = 0; i < lits.size(); ++i)
    if (!used[i]) order.push_back(int(i));
  return order;
}

// Per-pass hash indexes: (pred, bound-position mask) -> key row -> tuples.
struct IndexCache {
  const Model* model;
  std::map<std::pair<std::string, std::vector<int>>,
           std::unordered_map<Row, std::vector<const Row*>, RowHash>>
      built;

  const std::vector<const Row*>* lookup(const std::string& pred, const std::vector<int>& pos,
                                        const Row& key) {
    auto mk = std::make_pair(pred, pos);
    auto it = built.find(mk);
    if (it == built.end()) {
      auto& idx = built[mk];
      if (const Relation* r = model->rel(pred)) {
        for (const auto& row : r->rows) {
          Row k;
          k.reserve(pos.size());
          for (int p : pos) k.push_back(row[size_t(p)]);
          idx[std::move(k)].push_back(&row);
        }
      }
      it = built.find(mk);
    }
    auto jt = it->second.find(key);
    return jt == it->second.end() ? nullptr : &jt->second;
  }
};

const Value& slot_value(const CSlot& s, const std::vector<Value>& binding) {
  return s.var >= 0 ? binding[size_t(s.var)] : s.val;
}

bool eval_cmp(CmpOp op, const Value& a, const Value& b) {
  bool numeric = a.is_numeric() && b.is_numeric();
  if (!numeric && a.kind != b.kind)
    throw EvalError(EvalError::TypeMismatch,
                    "cannot compare " + a.repr() + " with " + b.repr());
  int c;
  if (numeric) {
    double x = a.as_double(), y = b.as_double();
    c = x < y ? -1 : (x > y ? 1 : 0);
  } else if (a.kind == Value::Null) {
    if (op != CmpOp::Eq && op != CmpOp::Ne)
      throw EvalError(EvalError::TypeMismatch, "cannot order labeled nulls");
    c = a.i < b.i ? -1 : (a.i > b.i ? 1 : 0);
  } else {
    c = a.s < b.s ? -1 : (a.s > b.s ? 1 : 0);
  }
  switch (op) {
    case CmpOp::Lt: return c < 0;
    case CmpOp::Le: return c <= 0;
    case CmpOp::Gt: return c > 0;
    case CmpOp::Ge: return c >= 0;
    case CmpOp::Eq: return c == 0;
    case CmpOp::Ne: return c != 0;
  }
  return false;
}

struct BodyMatcher {
  const Model* model;
  IndexCache index;
  std::vector<CLit> lits;
  std::vector<int> order;
  int nvars = 0;
  // For the semi-naive delta slot: match this atom against a fixed row set.
  int delta_lit = -1;
  const std::vector<Row>* delta_rows = nullptr;

  std::vector<Value> binding;
  std::vector<char> bound;

  // Static per-order bound positions of each positive atom.
  std::vector<std::vector<int>> key_pos;

  void prepare() {
    binding.assign(size_t(nvars), Value{});
    bound.assign(size_t(nvars), 0);
    key_pos.assign(lits.size(), {});
    std::vector<char> b(size_t(nvars), 0);
    for (int li : order) {
      const CLit& c = lits[size_t(li)];
      if (c.kind == Literal::Builtin) continue;
      auto& kp = key_pos[size_t(li)];
      // collect key positions before marking, so a variable repeated within
      // one atom is not mistaken for bound at its later positions
      for (size_t p = 0; p < c.atom.slots.size(); ++p) {
        const auto& s = c.atom.slots[p];
        if (s.var < 0 || b[s.var]) kp.push_back(int(p));
      }
      if (c.kind == Literal::Positive)
        for (const auto& s : c.atom.slots)
          if (s.var >= 0) b[s.var] = 1;
    }
  }

  bool unify_row(const CAtom& a, const Row& row, std::vector<int>& newly) {
    for (size_t p = 0; p < a.slots.size(); ++p) {
      const auto& s = a.slots[p];
      if (s.var < 0) {
        if (!(row[p] == s.val)) return false;
      } else if (bound[s.var]) {
        if (!(row[p] == binding[size_t(s.var)])) return false;
      } else {
        binding[size_t(s.var)] = row[p];
        bound[s.var] = 1;
        newly.push_back(s.var);
      }
    }
    return true;
  }

  void undo(const std::vector<int>& newly) {
    for (int v : newly) bound[size_t(v)] = 0;
  }

  bool check_ground_atom(const CAtom& a, bool positive) {
    Row row;
    row.reserve(a.slots.size());
    for (const auto& s : a.slots) {
      if (s.var >= 0 && !bound[s.var])
        throw EvalError(EvalError::UnboundVariable, "unbound variable in negated atom or builtin");
      row.push_back(slot_value(s, binding));
    }
    const Relation* r = model->rel(a.pred);
    bool present = r && r->contains(row);
    return present == positive;
  }

  bool run(size_t step, const std::function<bool(const std::vector<Value>&)>& sink) {
    if (step == order.size()) return sink(binding);
    const CLit& c = lits[size_t(order[step])];
    if (c.kind == Literal::Builtin) {
      if (c.lhs.var >= 0 && !bound[c.lhs.var])
        throw EvalError(EvalError::UnboundVariable, "unbound variable in comparison");
      if (c.rhs.var >= 0 && !bound[c.rhs.var])
        throw EvalError(EvalError::UnboundVariable, "unbound variable in comparison");
      if (!eval_cmp(c.op, slot_value(c.lhs, binding), slot_value(c.rhs, binding))) return true;
      return run(step + 1, sink);
    }
    if (c.kind == Literal::Negative) {
      if (!check_ground_atom(c.atom, false)) return true;
      return run(step + 1, sink);
    }
    std::vector<int> newly;
    auto try_row = [&](const Row& row) {
      newly.clear();
      if (unify_row(c.atom, row, newly)) {
        if (!run(step + 1, sink)) {
          undo(newly);
          return false;
        }
      }
      undo(newly);
      return true;
    };
    if (order[step] == delta_lit) {
      for (const Row& row : *delta_rows)
        if (!try_row(row)) return false;
      return true;
    }
    const auto& kp = key_pos[size_t(order[step])];
    if (kp.empty()) {
      const Relation* r = model->rel(c.atom.pred);
      if (!r) return true;
      for (const Row& row : r->rows)
        if (!try_row(row)) return false;
      return true;
    }
    Row key;
    key.reserve(kp.size());
    for (int p : kp) key.push_back(slot_value(c.atom.slots[size_t(p)], binding));
    const auto* bucket = index.lookup(c.atom.pred, kp, key);
    if (!bucket) return true;
    for (const Row* row : *bucket)
      if (!try_row(*row)) return false;
    return true;
  }
};

struct CompiledRule {
  VarTable vars;
  std::vector<CLit> body;
  std::vector<std::vector<CSlot>> heads;
  std::vector<int> positive_lits; // indices into body
};

CompiledRule compile_rule(const Rule& rule) {
  CompiledRule cr;
  for (const auto& lit : rule.body) {
    if (lit.kind == Literal::Positive) cr.positive_lits.push_back(int(cr.body.size()));
    cr.body.push_back(compile_literal(lit, cr.vars));
  }
  for (const auto& h : rule.heads) {
    std::vector<CSlot> slots;
    for (const auto& t : h.args) slots.push_back(compile_term(t, cr.vars));
    cr.heads.push_back(std::move(slots));
  }
  return cr;
}

Row instantiate_head(const std::vector<CSlot>& slots, const std::vector<Value>& binding) {
  Row row;
  row.reserve(slots.size());
  for (const auto& s : slots) row.push_back(slot_value(s, binding));
  return row;
}

// Evaluates one rule; when delta_lit >= 0 that body atom ranges over
// delta_rows instead of the model. Appends derived head rows via emit.
void eval_rule_pass(const CompiledRule& cr, const Rule& rule, const Model& model, int delta_lit,
                    const std::vector<Row>* delta_rows,
                    const std::function<void(size_t head_idx, Row)>& emit) {
  BodyMatcher m;
  m.model = &model;
  m.index.model = &model;
  m.lits = cr.body;
  m.nvars = int(cr.vars.names.size());
  m.delta_lit = delta_lit;
  m.delta_rows = delta_rows;
  m.order = order_body(cr.body, m.nvars, delta_lit);
  m.prepare();
  m.run(0, [&](const std::vector<Value>& binding) {
    for (size_t h = 0; h < cr.heads.size(); ++h) {
      for (const auto& s : cr.heads[h])
        if (s.var >= 0 && !m.bound[s.var])
          throw EvalError(EvalError::UnboundVariable,
                          "head variable unbound in rule at line " + std::to_string(rule.line));
      emit(h, instantiate_head(cr.heads[h], binding));
    }
    return true;
  });
}

std::vector<std::vector<const Rule*>> rules_by_stratum(const std::vector<Rule>& rules,
                                                       const Stratification& strat) {
  std::vector<std::vector<const Rule*>> out(strat.strata.size());
  for (const auto& r : rules) {
    int s = strat.stratum_of(r.head().pred);
    if (s < 0) s = 0;
    out[size_t(s)].push_back(&r);
  }
  return out;
}

} // namespace

bool eval_builtin(const Literal& lit, const Binding& binding) {
  auto resolve = [&](const Term& t) -> Value {
    if (!t.is_var()) return t.ground_value();
    auto it = binding.find(t.name);
    if (it == binding.end())
      throw EvalError(EvalError::UnboundVariable, "unbound variable " + t.name);
    return it->second;
  };
  return eval_cmp(lit.op, resolve(lit.lhs), resolve(lit.rhs));
}

void match_conjunction(const Model& model, const std::vector<Literal>& body,
                       const std::function<bool(const Binding&)>& sink) {
  BodyMatcher m;
  VarTable vars;
  for (const auto& lit : body) m.lits.push_back(compile_literal(lit, vars));
  m.model = &model;
  m.index.model = &model;
  m.nvars = int(vars.names.size());
  m.order = order_body(m.lits, m.nvars);
  m.prepare();
  m.run(0, [&](const std::vector<Value>& binding) {
    Binding b;
    for (size_t i = 0; i < vars.names.size(); ++i)
      if (m.bound[i]) b.emplace(vars.names[i], binding[i]);
    return sink(b);
  });
}

Model seminaive_eval(const Model& facts, const std::vector<Rule>& rules) {
  StratificationError err;
  auto strat = stratify(rules, &err);
  if (!strat) throw EvalError(EvalError::NotStratified, err.message);

  Model model = facts;
  auto by_stratum = rules_by_stratum(rules, *strat);

  for (const auto& stratum_rules : by_stratum) {
    if (stratum_rules.empty()) continue;
    std::vector<CompiledRule> compiled;
    compiled.reserve(stratum_rules.size());
    for (const Rule* r : stratum_rules) compiled.push_back(compile_rule(*r));

    std::set<std::string> stratum_preds;
    for (const Rule* r : stratum_rules)
      for (const auto& h : r->heads) stratum_preds.insert(h.pred);

    // deltas: new tuples per predicate from the previous round; derivations
    // are buffered per pass so the matcher never iterates a mutating set
    std::map<std::string, std::vector<Row>> delta;
    std::vector<std::pair<std::string, Row>> buffer;
    auto flush = [&](std::map<std::string, std::vector<Row>>& next) {
      for (auto& [pred, row] : buffer)
        if (model.insert(pred, row)) next[pred].push_back(std::move(row));
      buffer.clear();
    };

    // round 0: full naive pass
    {
      std::map<std::string, std::vector<Row>> next;
      for (size_t i = 0; i < stratum_rules.size(); ++i) {
        const Rule& r = *stratum_rules[i];
        eval_rule_pass(compiled[i], r, model, -1, nullptr, [&](size_t h, Row row) {
          buffer.emplace_back(r.heads[h].pred, std::move(row));
        });
      }
      flush(next);
      delta = std::move(next);
    }
    // semi-naive rounds: each recursive body atom takes the delta in turn
    while (!delta.empty()) {
      std::map<std::string, std::vector<Row>> next;
      for (size_t i = 0; i < stratum_rules.size(); ++i) {
        const Rule& r = *stratum_rules[i];
        for (int li : compiled[i].positive_lits) {
          const auto& pred = r.body[size_t(li)].atom.pred;
          if (!stratum_preds.count(pred)) continue;
          auto dit = delta.find(pred);
          if (dit == delta.end()) continue;
          eval_rule_pass(compiled[i], r, model, li, &dit->second, [&](size_t h, Row row) {
            buffer.emplace_back(r.heads[h].pred, std::move(row));
          });
        }
      }
      flush(next);
      delta = std::move(next);
    }
  }
  return model;
}

Model naive_eval(const Model& facts, const std::vector<Rule>& rules) {
  StratificationError err;
  auto strat = stratify(rules, &err);
  if (!strat) throw EvalError(EvalError::NotStratified, err.message);

  Model model = facts;
  for (const auto& stratum_rules : rules_by_stratum(rules, *strat)) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (const Rule* r : stratum_rules) {
        CompiledRule cr = compile_rule(*r);
        std::vector<std::pair<std::string, Row>> derived;
        eval_rule_pass(cr, *r, model, -1, nullptr, [&](size_t h, Row row) {
          derived.emplace_back(r->heads[h].pred, std::move(row));
        });
        for (auto& [pred, row] : derived)
          if (model.insert(pred, std::move(row))) changed = true;
      }
    }
  }
  return model;
}

double percentile_interpolated(std::vector<double> values, double q) {
  if (values.empty())
    throw EvalError(EvalError::TypeMismatch, "percentile over an empty group");
  std::sort(values.begin(), values.end());
  double pos = (q / 100.0) * double(values.size() - 1);
  double lo = std::floor(pos);
  size_t i = size_t(lo);
  if (i + 1 >= values.size()) return values.back();
  double frac = pos - lo;
  return values[i] + frac * (values[i + 1] - values[i]);
}

Relation eval_aggregate_rule(const Rule& rule, const Model& model, const OverlaySink& overlay) {
  Relation out;
  // the aggregate slot is implicit in head().args, like the PROB slot
  out.arity = int(rule.head().args.size()) + (rule.agg ? 1 : 0);
  if (!rule.agg) {
    // plain view rule in the post-processing layer
    CompiledRule cr = compile_rule(rule);
    eval_rule_pass(cr, rule, model, -1, nullptr, [&](size_t, Row row) { out.insert(std::move(row)); });
    return out;
  }
  const AggSpec& agg = *rule.agg;
  // group key = all head slots except the aggregate position
  std::map<Row, std::vector<Row>> groups; // key -> aggregated value rows
  CompiledRule cr = compile_rule(rule);
  std::vector<int> agg_var_ids;
  for (const auto& t : agg.vars) agg_var_ids.push_back(cr.vars.intern(t.name));
  BodyMatcher m;
  m.model = &model;
  m.index.model = &model;
  m.lits = cr.body;
  m.nvars = int(cr.vars.names.size());
  m.order = order_body(cr.body, m.nvars);
  m.prepare();
  m.run(0, [&](const std::vector<Value>& binding) {
    // compiled head slots are exactly the grouping columns (agg slot elided)
    Row key;
    for (const auto& s : cr.heads[0]) key.push_back(slot_value(s, binding));
    Row vals;
    for (int v : agg_var_ids) {
      if (!m.bound[size_t(v)])
        throw EvalError(EvalError::UnboundVariable, "aggregated variable unbound");
      vals.push_back(binding[size_t(v)]);
    }
    groups[std::move(key)].push_back(std::move(vals));
    return true;
  });

  for (auto& [key, vals] : groups) {
    Value cell;
    if (agg.func == AggFunc::Overlay) {
      std::string name = rule.head().pred;
      for (const auto& v : key) name += "_" + v.repr();
      cell = overlay ? overlay(rule.head().pred, key, vals) : Value::sym(name + ".csv");
    } else if (agg.func == AggFunc::Count) {
      cell = Value::integer(int64_t(vals.size()));
    } else {
      std::vector<double> xs;
      xs.reserve(vals.size());
      for (const auto& r : vals) {
        if (!r[0].is_numeric())
          throw EvalError(EvalError::TypeMismatch,
                          "aggregate over non-numeric value " + r[0].repr());
        xs.push_back(r[0].as_double());
      }
      double res = 0;
      switch (agg.func) {
        case AggFunc::Max: res = *std::max_element(xs.begin(), xs.end()); break;
        case AggFunc::Min: res = *std::min_element(xs.begin(), xs.end()); break;
        case AggFunc::Sum: {
          double s = 0, c = 0;
          for (double x : xs) {
            double y = x - c, t = s + y;
            c = (t - s) - y;
            s = t;
          }
          res = s;
          break;
        }
        case AggFunc::Mean: {
          double s = 0;
          for (double x : xs) s += x;
          res = s / double(xs.size());
          break;
        }
        case AggFunc::Percentile: res = percentile_interpolated(xs, agg.param); break;
        default: break;
      }
      cell = Value::real(res);
    }
    Row row;
    size_t ki = 0;
    for (int p = 0; p < out.arity; ++p) {
      if (p == rule.agg_pos)
        row.push_back(cell);
      else
        row.push_back(key[ki++]);
    }
    out.insert(std::move(row));
  }
  return out;
}

void eval_postprocessing_layer(Model& model, const std::vector<Rule>& rules,
                               const OverlaySink& overlay) {
  // Non-recursive by validation; topological order over head -> body edges
  // among the heads defined in this layer.
  std::set<std::string> layer_heads;
  for (const auto& r : rules) layer_heads.insert(r.head().pred);
  std::vector<const Rule*> pending;
  for (const auto& r : rules) pending.push_back(&r);
  std::set<std::string> done;
  while (!pending.empty()) {
    std::vector<const Rule*> ready, later;
    std::set<std::string> pending_heads;
    for (const Rule* r : pending) pending_heads.insert(r->head().pred);
    for (const Rule* r : pending) {
      bool ok = true;
      for (const auto& lit : r->body)
        if (lit.kind != Literal::Builtin && pending_heads.count(lit.atom.pred) &&
            lit.atom.pred != r->head().pred)
          ok = false;
      (ok ? ready : later).push_back(r);
    }
    if (ready.empty())
      throw EvalError(EvalError::NotStratified, "cyclic aggregation layer");
    // evaluate all ready rules against the current model, then install
    std::vector<std::pair<std::string, Relation>> results;
    for (const Rule* r : ready)
      results.emplace_back(r->head().pred, eval_aggregate_rule(*r, model, overlay));
    for (auto& [pred, rel] : results)
      for (auto& row : rel.rows) model.insert(pred, row);
    pending = std::move(later);
    (void)done;
  }
}

} // namespace nlq
