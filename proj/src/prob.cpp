#include "nlq/prob.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace nlq {

// ---------------------------------------------------------------------------
// Total choices

void total_choices(const std::vector<ProbChoice>& choices,
                   const std::function<void(const TotalChoice&)>& fn, uint64_t cap) {
  long double worlds = 1;
  for (const auto& c : choices) worlds *= (long double)(c.alternatives.size() + 1);
  if (worlds > (long double)cap)
    throw ProbError(ProbError::CapExceeded,
                    "total choice space exceeds the enumeration cap of " + std::to_string(cap));

  TotalChoice tc;
  tc.alt.assign(choices.size(), 0);
  std::function<void(size_t, double)> go = [&](size_t j, double p) {
    if (j == choices.size()) {
      tc.p = p;
      fn(tc);
      return;
    }
    const auto& alts = choices[j].alternatives;
    for (size_t i = 0; i < alts.size(); ++i) {
      tc.alt[j] = int(i);
      go(j + 1, p * alts[i].second);
    }
    double bottom = choices[j].bottom_mass();
    if (bottom > 1e-15) {
      tc.alt[j] = int(alts.size());
      go(j + 1, p * bottom);
    }
  };
  go(0, 1.0);
}

std::vector<TotalChoice> total_choices_list(const std::vector<ProbChoice>& choices, uint64_t cap) {
  std::vector<TotalChoice> out;
  total_choices(choices, [&](const TotalChoice& tc) { out.push_back(tc); }, cap);
  return out;
}

// ---------------------------------------------------------------------------
// ProbContext

ProbContext ProbContext::make(Model m, std::vector<ProbChoice> choices, std::vector<Rule> chi) {
  ProbContext ctx;
  ctx.det = std::move(m);
  ctx.choices = std::move(choices);
  ctx.chi = std::move(chi);
  for (size_t j = 0; j < ctx.choices.size(); ++j) {
    const auto& c = ctx.choices[j];
    for (size_t i = 0; i < c.alternatives.size(); ++i) {
      const auto& [atom, w] = c.alternatives[i];
      ctx.prob_rows[atom.pred][atom.ground_row()] = {int(j), int(i), w};
      ctx.pred_choices[atom.pred].insert(int(j));
    }
  }
  for (const auto& [pred, cs] : ctx.pred_choices) {
    bool all_singleton = true;
    for (int j : cs)
      if (ctx.choices[size_t(j)].alternatives.size() != 1) all_singleton = false;
    if (all_singleton)
      ctx.pred_class[pred] = TupleIndependent;
    else if (cs.size() == 1)
      ctx.pred_class[pred] = OneChoice;
    else
      ctx.pred_class[pred] = Mixed;
  }
  return ctx;
}

Model ProbContext::support_model() const {
  Model m = det;
  for (const auto& [pred, rows] : prob_rows)
    for (const auto& [row, info] : rows) m.insert(pred, row);
  return m;
}

// ---------------------------------------------------------------------------
// Oracle

static Row instantiate_head(const std::vector<Term>& head, const Binding& b) {
  Row row;
  row.reserve(head.size());
  for (const auto& t : head) {
    if (t.is_var()) {
      auto it = b.find(t.name);
      if (it == b.end())
        throw EvalError(EvalError::UnboundVariable, "answer variable " + t.name + " unbound");
      row.push_back(it->second);
    } else {
      row.push_back(t.ground_value());
    }
  }
  return row;
}

AnswerProbs oracle_answers(const std::vector<Term>& head, const std::vector<Literal>& body,
                         const ProbContext& ctx, uint64_t cap) {
  AnswerProbs out;
  total_choices(ctx.choices, [&](const TotalChoice& tc) {
    Model world = ctx.det;
    for (size_t j = 0; j < ctx.choices.size(); ++j) {
      const auto& alts = ctx.choices[j].alternatives;
      if (tc.alt[j] < int(alts.size())) {
        const Atom& a = alts[size_t(tc.alt[j])].first;
        world.insert(a.pred, a.ground_row());
      }
    }
    Model m = ctx.chi.empty() ? std::move(world) : seminaive_eval(world, ctx.chi);
    std::set<Row> answers;
    match_conjunction(m, body, [&](const Binding& b) {
      answers.insert(instantiate_head(head, b));
      return true;
    });
    for (const auto& row : answers) out[row] += tc.p;
  }, cap);
  return out;
}

// ---------------------------------------------------------------------------
// EventPool

EventPool::EventPool() {
  nodes_.push_back({False, -1, -1, {}});
  nodes_.push_back({True, -1, -1, {}});
}

EventId EventPool::intern(Node n) {
  std::string key(1, char('0' + n.kind));
  if (n.kind == Lit) {
    key += std::to_string(n.choice) + ":" + std::to_string(n.alt);
  } else {
    for (EventId c : n.children) key += "," + std::to_string(c);
  }
  auto it = index_.find(key);
  if (it != index_.end()) return it->second;
  EventId id = EventId(nodes_.size());
  nodes_.push_back(std::move(n));
  index_.emplace(std::move(key), id);
  return id;
}

EventId EventPool::lit(int choice, int alt) { return intern({Lit, choice, alt, {}}); }

EventId EventPool::conj(std::vector<EventId> xs) {
  std::vector<EventId> flat;
  for (EventId x : xs) {
    if (x == ffalse()) return ffalse();
    if (x == ftrue()) continue;
    if (node(x).kind == And) {
      for (EventId c : node(x).children) flat.push_back(c);
    } else {
      flat.push_back(x);
    }
  }
  std::sort(flat.begin(), flat.end());
  flat.erase(std::unique(flat.begin(), flat.end()), flat.end());
  // exclusivity: two distinct alternatives of one choice cannot co-occur
  std::map<int, int> seen_alt;
  for (EventId x : flat) {
    const Node& n = node(x);
    if (n.kind != Lit) continue;
    auto it = seen_alt.find(n.choice);
    if (it != seen_alt.end() && it->second != n.alt) return ffalse();
    seen_alt.emplace(n.choice, n.alt);
  }
  if (flat.empty()) return ftrue();
  if (flat.size() == 1) return flat[0];
  return intern({And, -1, -1, std::move(flat)});
}

EventId EventPool::disj(std::vector<EventId> xs) {
  std::vector<EventId> flat;
  for (EventId x : xs) {
    if (x == ftrue()) return ftrue();
    if (x == ffalse()) continue;
    if (node(x).kind == Or) {
      for (EventId c : node(x).children) flat.push_back(c);
    } else {
      flat.push_back(x);
    }
  }
  std::sort(flat.begin(), flat.end());
  flat.erase(std::unique(flat.begin(), flat.end()), flat.end());
  if (flat.empty()) return ffalse();
  if (flat.size() == 1) return flat[0];
  return intern({Or, -1, -1, std::move(flat)});
}

EventId EventPool::neg(EventId x) {
  if (x == ftrue()) return ffalse();
  if (x == ffalse()) return ftrue();
  if (node(x).kind == Not) return node(x).children[0];
  return intern({Not, -1, -1, {x}});
}

EventId EventPool::condition(EventId e, int choice, int alt) {
  std::map<EventId, EventId> memo;
  std::function<EventId(EventId)> go = [&](EventId x) -> EventId {
    if (x == ftrue() || x == ffalse()) return x;
    auto it = memo.find(x);
    if (it != memo.end()) return it->second;
    Node n = node(x); // copy: nodes_ may grow
    EventId r;
    if (n.kind == Lit) {
      r = (n.choice != choice) ? x : (n.alt == alt ? ftrue() : ffalse());
    } else {
      std::vector<EventId> cs;
      cs.reserve(n.children.size());
      for (EventId c : n.children) cs.push_back(go(c));
      r = n.kind == And ? conj(std::move(cs))
                        : (n.kind == Or ? disj(std::move(cs)) : neg(cs[0]));
    }
    memo.emplace(x, r);
    return r;
  };
  return go(e);
}

std::map<int, int> EventPool::choice_counts(EventId e) const {
  std::map<int, int> counts;
  std::set<EventId> visited;
  std::function<void(EventId)> go = [&](EventId x) {
    if (!visited.insert(x).second) return;
    const Node& n = node(x);
    if (n.kind == Lit)
      ++counts[n.choice];
    else
      for (EventId c : n.children) go(c);
  };
  go(e);
  return counts;
}

std::string EventPool::repr(EventId e, const std::vector<ProbChoice>& choices) const {
  const Node& n = node(e);
  switch (n.kind) {
    case False: return "false";
    case True: return "true";
    case Lit:
      if (n.choice >= 0 && n.choice < int(choices.size()) &&
          n.alt < int(choices[size_t(n.choice)].alternatives.size()))
        return choices[size_t(n.choice)].alternatives[size_t(n.alt)].first.repr();
      return "x" + std::to_string(n.choice) + "." + std::to_string(n.alt);
    case Not: return "!" + repr(n.children[0], choices);
    case And:
    case Or: {
      std::string sep = n.kind == And ? " & " : " | ";
      std::string out = "(";
      for (size_t i = 0; i < n.children.size(); ++i) {
        if (i) out += sep;
        out += repr(n.children[i], choices);
      }
      return out + ")";
    }
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Provenance evaluation

namespace {

using ProvModel = std::map<std::string, std::map<Row, EventId>>;

// recursive provenance join; negation unsupported here (chi and step-3 query
// bodies are negation-free by validation)
void prov_match(const ProvModel& pm, const std::vector<Literal>& lits, size_t idx, Binding& b,
                EventId acc, EventPool& pool,
                const std::function<void(const Binding&, EventId)>& sink) {
  if (idx == lits.size()) {
    sink(b, acc);
    return;
  }
  const Literal& lit = lits[idx];
  if (lit.kind == Literal::Builtin) {
    if (eval_builtin(lit, b)) prov_match(pm, lits, idx + 1, b, acc, pool, sink);
    return;
  }
  if (lit.kind == Literal::Negative)
    throw ProbError(ProbError::NotSupported,
                    "negation is not supported in probabilistic query bodies");
  auto table = pm.find(lit.atom.pred);
  if (table == pm.end()) return;
  for (const auto& [row, ev] : table->second) {
    std::vector<std::string> added;
    bool ok = true;
    for (size_t ai = 0; ai < lit.atom.args.size() && ok; ++ai) {
      const Term& t = lit.atom.args[ai];
      if (!t.is_var()) {
        ok = t.ground_value() == row[ai];
      } else {
        auto it = b.find(t.name);
        if (it != b.end()) {
          ok = it->second == row[ai];
        } else {
          b.emplace(t.name, row[ai]);
          added.push_back(t.name);
        }
      }
    }
    if (ok) prov_match(pm, lits, idx + 1, b, pool.conj({acc, ev}), pool, sink);
    for (const auto& v : added) b.erase(v);
  }
}

void prov_apply_rule(ProvModel& pm, const Rule& r, EventPool& pool) {
  std::vector<std::tuple<std::string, Row, EventId>> derived;
  Binding b;
  prov_match(pm, r.body, 0, b, pool.ftrue(), pool, [&](const Binding& bind, EventId ev) {
    for (const auto& h : r.heads) {
      Row row;
      for (const auto& t : h.args)
        row.push_back(t.is_var() ? bind.at(t.name) : t.ground_value());
      derived.emplace_back(h.pred, std::move(row), ev);
    }
  });
  for (auto& [pred, row, ev] : derived) {
    auto& slot = pm[pred];
    auto it = slot.find(row);
    if (it == slot.end())
      slot.emplace(std::move(row), ev);
    else
      it->second = pool.disj({it->second, ev});
  }
}

ProvModel prov_base(const ProbContext& ctx, EventPool& pool) {
  ProvModel pm;
  for (const auto& [pred, rel] : ctx.det.rels)
    for (const auto& row : rel.rows) pm[pred].emplace(row, pool.ftrue());
  for (const auto& [pred, rows] : ctx.prob_rows)
    for (const auto& [row, info] : rows) pm[pred].emplace(row, pool.lit(info.choice, info.alt));
  return pm;
}

// non-recursive chi program in dependency order
void prov_eval_chi(ProvModel& pm, const std::vector<Rule>& chi, EventPool& pool) {
  std::vector<const Rule*> pending;
  for (const auto& r : chi) pending.push_back(&r);
  while (!pending.empty()) {
    std::set<std::string> pending_heads;
    for (const Rule* r : pending) pending_heads.insert(r->head().pred);
    std::vector<const Rule*> ready, later;
    for (const Rule* r : pending) {
      bool ok = true;
      for (const auto& l : r->body)
        if (l.kind != Literal::Builtin && pending_heads.count(l.atom.pred)) ok = false;
      (ok ? ready : later).push_back(r);
    }
    if (ready.empty())
      throw ProbError(ProbError::NotSupported, "recursive probabilistic rules are not supported");
    for (const Rule* r : ready) prov_apply_rule(pm, *r, pool);
    pending = std::move(later);
  }
}

} // namespace

ProvenanceTable build_provenance(const std::vector<Term>& head, const std::vector<Literal>& body,
                                 const ProbContext& ctx, EventPool& pool) {
  ProvModel pm = prov_base(ctx, pool);
  prov_eval_chi(pm, ctx.chi, pool);

  ProvenanceTable out;
  out.pred = "ans";
  Binding b;
  prov_match(pm, body, 0, b, pool.ftrue(), pool, [&](const Binding& bind, EventId ev) {
    Row row = instantiate_head(head, bind);
    auto it = out.rows.find(row);
    if (it == out.rows.end())
      out.rows.emplace(std::move(row), ev);
    else
      it->second = pool.disj({it->second, ev});
  });
  return out;
}

// ---------------------------------------------------------------------------
// Counting

double compile_and_count(EventId e, EventPool& pool, const std::vector<ProbChoice>& choices,
                         size_t node_cap, CircuitStats* stats) {
  std::map<EventId, double> memo;
  size_t nodes = 0;
  std::function<double(EventId)> go = [&](EventId x) -> double {
    if (x == pool.ftrue()) return 1.0;
    if (x == pool.ffalse()) return 0.0;
    auto it = memo.find(x);
    if (it != memo.end()) {
      if (stats) ++stats->cache_hits;
      return it->second;
    }
    if (++nodes > node_cap)
      throw ProbError(ProbError::CircuitBudgetExceeded,
                      "event circuit exceeded the node cap of " + std::to_string(node_cap));
    // branch on the most frequent choice; ties by lowest id
    auto counts = pool.choice_counts(x);
    int best = -1, best_count = -1;
    for (const auto& [c, n] : counts)
      if (n > best_count) {
        best = c;
        best_count = n;
      }
    const ProbChoice& ch = choices[size_t(best)];
    double p = 0;
    for (size_t i = 0; i < ch.alternatives.size(); ++i)
      p += ch.alternatives[i].second * go(pool.condition(x, best, int(i)));
    double bottom = ch.bottom_mass();
    if (bottom > 1e-15) p += bottom * go(pool.condition(x, best, -1));
    memo.emplace(x, p);
    return p;
  };
  double p = go(e);
  if (stats) stats->nodes += nodes;
  return p;
}

// ---------------------------------------------------------------------------
// Lifted inference

namespace {

std::set<std::string> lit_vars(const Literal& l) {
  std::set<std::string> out;
  if (l.kind == Literal::Builtin) {
    if (l.lhs.is_var()) out.insert(l.lhs.name);
    if (l.rhs.is_var()) out.insert(l.rhs.name);
  } else {
    for (const auto& t : l.atom.args)
      if (t.is_var()) out.insert(t.name);
  }
  return out;
}

LiftResult lift_rec(const std::vector<Literal>& lits, const std::set<std::string>& bound,
                    const ProbContext& ctx) {
  std::vector<const Literal*> prob_atoms;
  for (const auto& l : lits)
    if (l.kind == Literal::Positive && ctx.is_prob(l.atom.pred)) prob_atoms.push_back(&l);

  if (prob_atoms.empty()) {
    SafePlan p;
    p.kind = SafePlan::DetBool;
    p.lits = lits;
    return {p, ""};
  }

  std::set<std::string> prob_free;
  for (const Literal* l : prob_atoms)
    for (const auto& v : lit_vars(*l))
      if (!bound.count(v)) prob_free.insert(v);

  if (prob_free.empty()) {
    SafePlan p;
    p.kind = SafePlan::GroundConj;
    p.lits = lits;
    return {p, ""};
  }

  // connected components over free variables (all literal kinds connect)
  {
    std::vector<int> comp(lits.size(), -1);
    int ncomp = 0;
    for (size_t i = 0; i < lits.size(); ++i) {
      if (comp[i] != -1) continue;
      comp[i] = ncomp;
      bool grew = true;
      while (grew) {
        grew = false;
        for (size_t j = 0; j < lits.size(); ++j) {
          if (comp[j] != -1) continue;
          auto vj = lit_vars(lits[j]);
          for (size_t k = 0; k < lits.size(); ++k) {
            if (comp[k] != ncomp) continue;
            for (const auto& v : lit_vars(lits[k]))
              if (!bound.count(v) && vj.count(v)) {
                comp[j] = ncomp;
                grew = true;
              }
          }
        }
      }
      ++ncomp;
    }
    if (ncomp > 1) {
      std::vector<std::vector<Literal>> groups{size_t(ncomp)};
      for (size_t i = 0; i < lits.size(); ++i) groups[size_t(comp[i])].push_back(lits[i]);
      // choice supports must be pairwise disjoint
      std::vector<std::set<int>> supports{size_t(ncomp)};
      for (int g = 0; g < ncomp; ++g)
        for (const auto& l : groups[size_t(g)])
          if (l.kind == Literal::Positive && ctx.is_prob(l.atom.pred)) {
            auto it = ctx.pred_choices.find(l.atom.pred);
            if (it != ctx.pred_choices.end())
              supports[size_t(g)].insert(it->second.begin(), it->second.end());
          }
      for (int g1 = 0; g1 < ncomp; ++g1)
        for (int g2 = g1 + 1; g2 < ncomp; ++g2)
          for (int c : supports[size_t(g1)])
            if (supports[size_t(g2)].count(c))
              return {std::nullopt,
                      "variable-disjoint subqueries share probabilistic choice support"};
      SafePlan p;
      p.kind = SafePlan::Join;
      for (auto& g : groups) {
        auto sub = lift_rec(g, bound, ctx);
        if (!sub.plan) return sub;
        p.children.push_back(std::move(*sub.plan));
      }
      return {p, ""};
    }
  }

  // root variable: present in every probabilistic atom
  for (const auto& v : prob_free) {
    bool in_all = true;
    for (const Literal* l : prob_atoms)
      if (!lit_vars(*l).count(v)) in_all = false;
    if (!in_all) continue;

    bool exclusive = false, independent = true;
    std::set<std::string> seen_preds;
    for (const Literal* l : prob_atoms) {
      auto cls = ctx.pred_class.at(l->atom.pred);
      if (cls == ProbContext::OneChoice) exclusive = true;
      if (cls != ProbContext::TupleIndependent) independent = false;
      // self-joins can alias rows across groundings, breaking independence
      if (!seen_preds.insert(l->atom.pred).second) independent = false;
    }
    if (!exclusive && !independent) continue;

    std::set<std::string> sub_bound = bound;
    sub_bound.insert(v);
    auto sub = lift_rec(lits, sub_bound, ctx);
    if (!sub.plan) continue;
    SafePlan p;
    p.kind = SafePlan::Project;
    p.var = v;
    p.exclusive_sum = exclusive;
    p.children.push_back(std::move(*sub.plan));
    return {p, ""};
  }

  std::string witness = "no root variable covers the probabilistic atoms {";
  for (size_t i = 0; i < prob_atoms.size(); ++i)
    witness += (i ? ", " : "") + prob_atoms[i]->atom.repr();
  witness += "}";
  return {std::nullopt, witness};
}

Term subst_term(const Term& t, const Binding& b) {
  if (!t.is_var()) return t;
  auto it = b.find(t.name);
  return it == b.end() ? t : Term::from_value(it->second);
}

Literal subst_literal(const Literal& l, const Binding& b) {
  Literal out = l;
  if (l.kind == Literal::Builtin) {
    out.lhs = subst_term(l.lhs, b);
    out.rhs = subst_term(l.rhs, b);
  } else {
    for (auto& t : out.atom.args) t = subst_term(t, b);
  }
  return out;
}

struct PlanEval {
  const ProbContext* ctx;

  struct Outcome {
    double p = 0;
    std::set<int> support;
  };

  Outcome eval(const SafePlan& plan, const Binding& b) {
    switch (plan.kind) {
      case SafePlan::DetBool: return det_bool(plan, b);
      case SafePlan::GroundConj: return ground_conj(plan, b);
      case SafePlan::Join: return join(plan, b);
      case SafePlan::Project: return project(plan, b);
    }
    return {};
  }

  bool det_satisfiable(const std::vector<Literal>& lits, const Binding& b) {
    std::vector<Literal> sub;
    for (const auto& l : lits) sub.push_back(subst_literal(l, b));
    bool found = false;
    match_conjunction(ctx->det, sub, [&](const Binding&) {
      found = true;
      return false;
    });
    return found;
  }

  Outcome det_bool(const SafePlan& plan, const Binding& b) {
    return {det_satisfiable(plan.lits, b) ? 1.0 : 0.0, {}};
  }

  Outcome ground_conj(const SafePlan& plan, const Binding& b) {
    std::vector<Literal> det_lits;
    std::map<int, int> chosen; // choice -> alt
    Outcome out;
    out.p = 1.0;
    for (const auto& l : plan.lits) {
      if (l.kind == Literal::Positive && ctx->is_prob(l.atom.pred)) {
        Atom a = subst_literal(l, b).atom;
        if (!a.is_ground())
          throw ProbError(ProbError::IndependenceViolation,
                          "unground probabilistic atom in a ground plan node");
        auto table = ctx->prob_rows.find(a.pred);
        auto it = table == ctx->prob_rows.end() ? decltype(table->second.end())()
                                                : table->second.find(a.ground_row());
        if (table == ctx->prob_rows.end() || it == table->second.end()) return {0.0, {}};
        const auto& info = it->second;
        auto prev = chosen.find(info.choice);
        if (prev != chosen.end()) {
          if (prev->second != info.alt) return {0.0, {}}; // exclusive alternatives
          continue;                                       // idempotent repeat
        }
        chosen.emplace(info.choice, info.alt);
        out.p *= info.weight;
        out.support.insert(info.choice);
      } else {
        det_lits.push_back(l);
      }
    }
    if (!det_lits.empty() && !det_satisfiable(det_lits, b)) return {0.0, {}};
    return out;
  }

  Outcome join(const SafePlan& plan, const Binding& b) {
    Outcome out;
    out.p = 1.0;
    for (const auto& child : plan.children) {
      Outcome sub = eval(child, b);
      for (int c : sub.support)
        if (out.support.count(c))
          throw ProbError(ProbError::IndependenceViolation,
                          "overlapping choice support at an independent join");
      out.support.insert(sub.support.begin(), sub.support.end());
      out.p *= sub.p;
      if (out.p == 0) break;
    }
    return out;
  }

  // candidate groundings of `var` from every atom that mentions it
  std::set<Value> groundings(const SafePlan& plan, const std::string& var, const Binding& b) {
    std::set<Value> vals;
    std::function<void(const SafePlan&)> scan = [&](const SafePlan& p) {
      for (const auto& l : p.lits) collect(l, var, b, vals);
      for (const auto& c : p.children) scan(c);
    };
    scan(plan);
    return vals;
  }

  void collect(const Literal& lit, const std::string& var, const Binding& b,
               std::set<Value>& vals) {
    if (lit.kind == Literal::Builtin) return;
    Literal sub = subst_literal(lit, b);
    bool mentions = false;
    for (const auto& t : sub.atom.args)
      if (t.is_var() && t.name == var) mentions = true;
    if (!mentions) return;
    auto try_row = [&](const Row& row) {
      std::optional<Value> v;
      for (size_t ai = 0; ai < sub.atom.args.size(); ++ai) {
        const Term& t = sub.atom.args[ai];
        if (!t.is_var()) {
          if (!(t.ground_value() == row[ai])) return;
        } else if (t.name == var) {
          if (v && !(*v == row[ai])) return;
          v = row[ai];
        }
      }
      if (v) vals.insert(*v);
    };
    if (ctx->is_prob(sub.atom.pred)) {
      for (const auto& [row, info] : ctx->prob_rows.at(sub.atom.pred)) try_row(row);
    } else if (const Relation* rel = ctx->det.rel(sub.atom.pred)) {
      for (const auto& row : rel->rows) try_row(row);
    }
  }

  Outcome project(const SafePlan& plan, const Binding& b) {
    const SafePlan& child = plan.children[0];
    auto vals = groundings(plan, plan.var, b);
    Outcome out;
    if (plan.exclusive_sum) {
      double sum = 0, comp = 0; // compensated accumulation
      for (const auto& v : vals) {
        Binding sub = b;
        sub[plan.var] = v;
        Outcome o = eval(child, sub);
        double y = o.p - comp, t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        out.support.insert(o.support.begin(), o.support.end());
      }
      if (sum > 1.0 + 1e-9)
        throw ProbError(ProbError::IndependenceViolation,
                        "exclusive projection sums above one");
      out.p = std::min(sum, 1.0);
    } else {
      double prod = 1.0;
      for (const auto& v : vals) {
        Binding sub = b;
        sub[plan.var] = v;
        Outcome o = eval(child, sub);
        if (o.p > 0)
          for (int c : o.support)
            if (out.support.count(c))
              throw ProbError(ProbError::IndependenceViolation,
                              "overlapping choice support at an independent projection");
        out.support.insert(o.support.begin(), o.support.end());
        prod *= 1.0 - o.p;
      }
      out.p = 1.0 - prod;
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// chi unfolding into a union of conjunctive queries over base predicates

struct Subst {
  std::map<std::string, Term> map;

  Term walk(Term t) const {
    while (t.is_var()) {
      auto it = map.find(t.name);
      if (it == map.end()) break;
      t = it->second;
    }
    return t;
  }
  // prefer keeping `keep` variables as representatives
  bool unify(const Term& a, const Term& b, const std::set<std::string>& keep) {
    Term x = walk(a), y = walk(b);
    if (x == y) return true;
    if (x.is_var() && y.is_var()) {
      if (keep.count(x.name) && !keep.count(y.name)) std::swap(x, y);
      map[x.name] = y;
      return true;
    }
    if (x.is_var()) {
      map[x.name] = y;
      return true;
    }
    if (y.is_var()) {
      map[y.name] = x;
      return true;
    }
    return false;
  }
  Literal apply(const Literal& l) const {
    Literal out = l;
    if (l.kind == Literal::Builtin) {
      out.lhs = walk(l.lhs);
      out.rhs = walk(l.rhs);
    } else {
      for (auto& t : out.atom.args) t = walk(t);
    }
    return out;
  }
};

Rule rename_for_unfold(const Rule& r, int k) {
  Rule out = r;
  auto ren = [&](Term t) {
    if (t.is_var()) t.name += "$" + std::to_string(k);
    return t;
  };
  for (auto& h : out.heads)
    for (auto& t : h.args) t = ren(t);
  for (auto& l : out.body) {
    if (l.kind == Literal::Builtin) {
      l.lhs = ren(l.lhs);
      l.rhs = ren(l.rhs);
    } else {
      for (auto& t : l.atom.args) t = ren(t);
    }
  }
  return out;
}

// returns the disjuncts, capped; empty vector signals blow-up
std::vector<std::vector<Literal>> unfold_chi(const std::vector<Literal>& body,
                                             const std::vector<Rule>& chi,
                                             const std::set<std::string>& keep_vars,
                                             size_t max_disjuncts = 64) {
  std::set<std::string> chi_heads;
  for (const auto& r : chi) chi_heads.insert(r.head().pred);

  struct State {
    std::vector<Literal> todo;
    std::vector<Literal> done;
    Subst sub;
  };
  int fresh = 0;
  std::vector<State> work{{body, {}, {}}};
  std::vector<std::vector<Literal>> out;
  while (!work.empty()) {
    State st = std::move(work.back());
    work.pop_back();
    if (st.todo.empty()) {
      std::vector<Literal> cq;
      for (const auto& l : st.done) cq.push_back(st.sub.apply(l));
      out.push_back(std::move(cq));
      if (out.size() > max_disjuncts) return {};
      continue;
    }
    Literal l = st.todo.back();
    st.todo.pop_back();
    if (l.kind != Literal::Positive || !chi_heads.count(l.atom.pred)) {
      st.done.push_back(std::move(l));
      work.push_back(std::move(st));
      continue;
    }
    Literal cur = st.sub.apply(l);
    for (const auto& r : chi) {
      if (r.head().pred != cur.atom.pred) continue;
      Rule rr = rename_for_unfold(r, fresh++);
      State next = st;
      bool ok = rr.head().args.size() == cur.atom.args.size();
      for (size_t ai = 0; ai < cur.atom.args.size() && ok; ++ai)
        ok = next.sub.unify(cur.atom.args[ai], rr.head().args[ai], keep_vars);
      if (!ok) continue;
      for (const auto& bl : rr.body) next.todo.push_back(bl);
      work.push_back(std::move(next));
    }
  }
  return out;
}

} // namespace

std::string SafePlan::repr(int indent) const {
  std::string pad(size_t(indent) * 2, ' ');
  std::ostringstream os;
  switch (kind) {
    case DetBool:
    case GroundConj: {
      os << pad << (kind == DetBool ? "exists" : "ground") << " {";
      for (size_t i = 0; i < lits.size(); ++i) os << (i ? ", " : "") << lits[i].repr();
      os << "}";
      break;
    }
    case Project:
      os << pad << (exclusive_sum ? "project-exclusive " : "project-independent ") << var << "\n";
      os << children[0].repr(indent + 1);
      break;
    case Join:
      os << pad << "independent-join\n";
      for (size_t i = 0; i < children.size(); ++i) {
        if (i) os << "\n";
        os << children[i].repr(indent + 1);
      }
      break;
  }
  return os.str();
}

LiftResult lift_or_compile(const std::vector<Literal>& cq, const std::set<std::string>& bound,
                           const ProbContext& ctx) {
  return lift_rec(cq, bound, ctx);
}

double eval_safe_plan(const SafePlan& plan, const ProbContext& ctx, const Binding& binding) {
  PlanEval ev{&ctx};
  double p = ev.eval(plan, binding).p;
  if (p < -1e-9 || p > 1.0 + 1e-9)
    throw ProbError(ProbError::IndependenceViolation,
                    "plan evaluation produced a probability outside [0,1]");
  return p;
}

MarginalResult marginal_answers(const std::vector<Term>& head, const std::vector<Literal>& body,
                                const ProbContext& ctx, const MarginalOptions& opt) {
  MarginalResult res;

  std::set<std::string> head_vars;
  for (const auto& t : head)
    if (t.is_var()) head_vars.insert(t.name);

  // candidate answers: evaluate over the union of all possible worlds
  Model support = ctx.chi.empty() ? ctx.support_model()
                                  : seminaive_eval(ctx.support_model(), ctx.chi);
  std::map<Row, Binding> candidates;
  match_conjunction(support, body, [&](const Binding& b) {
    Row row = instantiate_head(head, b);
    Binding hb;
    for (const auto& v : head_vars)
      if (b.count(v)) hb.emplace(v, b.at(v));
    candidates.emplace(std::move(row), std::move(hb));
    return true;
  });

  auto cqs = unfold_chi(body, ctx.chi, head_vars);
  std::optional<SafePlan> plan;
  std::string witness = "query unfolds to a union of conjunctive queries";
  if (cqs.size() == 1) {
    auto lifted = lift_or_compile(cqs[0], head_vars, ctx);
    plan = lifted.plan;
    if (!plan) witness = lifted.witness;
  }

  if (plan) {
    res.strategy = "lifted";
    res.plan_text = plan->repr();
    for (const auto& [row, hb] : candidates) {
      double p = eval_safe_plan(*plan, ctx, hb);
      if (p > 0) res.answers[row] = p;
    }
    return res;
  }

  res.strategy = "compiled";
  res.plan_text = witness;
  EventPool pool;
  ProvenanceTable pt = build_provenance(head, body, ctx, pool);
  for (const auto& [row, ev] : pt.rows) {
    double p = compile_and_count(ev, pool, ctx.choices, opt.circuit_cap, &res.stats);
    if (p < -1e-9 || p > 1.0 + 1e-9)
      throw ProbError(ProbError::IndependenceViolation,
                      "counting produced a probability outside [0,1]");
    if (p > 0) res.answers[row] = p;
  }
  return res;
}

} // namespace nlq
