#include "nlq/ir.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

namespace nlq {

namespace {
bool identifier_like(const std::string& s) {
  if (s.empty() || !(std::islower(static_cast<unsigned char>(s[0])) || s[0] == '_'))
    return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return true;
}
} // namespace

std::string Value::repr() const {
  switch (kind) {
    case Sym: return identifier_like(s) ? s : "\"" + s + "\"";
    case Str: return "\"" + s + "\"";
    case Int: return std::to_string(i);
    case Null: return "_:n" + std::to_string(i);
    case Real: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.12g", d);
      std::string out = buf;
      if (out.find('.') == std::string::npos && out.find('e') == std::string::npos &&
          out.find("inf") == std::string::npos && out.find("nan") == std::string::npos)
        out += ".0";
      return out;
    }
  }
  return "?";
}

Term Term::from_value(const Value& v) {
  switch (v.kind) {
    case Value::Sym: return constant(v.s);
    case Value::Str: return str(v.s);
    case Value::Int: return integer(v.i);
    case Value::Real: return real(v.d);
    case Value::Null: return null(v.i);
  }
  return {};
}

Value Term::ground_value() const {
  switch (kind) {
    case Constant:
    case StrLit: return Value::sym(name); // quoting is surface syntax only
    case IntLit: return Value::integer(i);
    case RealLit: return Value::real(d);
    case NullT: return Value::null(i);
    case Variable: break;
  }
  assert(false && "ground_value on a variable");
  return {};
}

std::string Term::repr() const {
  switch (kind) {
    case Constant:
    case Variable: return name;
    case StrLit: return "\"" + name + "\"";
    case NullT: return "_:n" + std::to_string(i);
    case IntLit: return std::to_string(i);
    case RealLit: return Value::real(d).repr();
  }
  return "?";
}

bool Atom::is_ground() const {
  return std::all_of(args.begin(), args.end(), [](const Term& t) { return t.is_ground(); });
}

Row Atom::ground_row() const {
  Row r;
  r.reserve(args.size());
  for (const auto& t : args) r.push_back(t.ground_value());
  return r;
}

std::string Atom::repr() const {
  std::string out = pred + "(";
  for (size_t i = 0; i < args.size(); ++i) {
    if (i) out += ", ";
    out += args[i].repr();
  }
  return out + ")";
}

const char* cmp_op_text(CmpOp op) {
  switch (op) {
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
  }
  return "?";
}

std::string Literal::repr() const {
  switch (kind) {
    case Positive: return atom.repr();
    case Negative: return "~" + atom.repr();
    case Builtin: return lhs.repr() + " " + cmp_op_text(op) + " " + rhs.repr();
  }
  return "?";
}

const char* agg_func_name(AggFunc f) {
  switch (f) {
    case AggFunc::Max: return "max";
    case AggFunc::Min: return "min";
    case AggFunc::Sum: return "sum";
    case AggFunc::Count: return "count";
    case AggFunc::Mean: return "mean";
    case AggFunc::Percentile: return "compute_percentile";
    case AggFunc::Overlay: return "create_region_overlay";
  }
  return "?";
}

std::optional<AggFunc> agg_func_from_name(const std::string& name) {
  if (name == "max") return AggFunc::Max;
  if (name == "min") return AggFunc::Min;
  if (name == "sum") return AggFunc::Sum;
  if (name == "count") return AggFunc::Count;
  if (name == "mean" || name == "avg") return AggFunc::Mean;
  if (name == "compute_percentile") return AggFunc::Percentile;
  if (name == "create_region_overlay") return AggFunc::Overlay;
  return std::nullopt;
}

const char* rule_class_name(RuleClass c) {
  switch (c) {
    case RuleClass::SigmaFull: return "sigma";
    case RuleClass::Existential: return "sigma1";
    case RuleClass::Chi: return "chi";
    case RuleClass::Per: return "per";
    case RuleClass::Aggregate: return "agg";
  }
  return "?";
}

namespace {

void collect_vars(const Term& t, std::vector<std::string>& out) {
  if (t.is_var() && std::find(out.begin(), out.end(), t.name) == out.end())
    out.push_back(t.name);
}

void collect_vars(const Atom& a, std::vector<std::string>& out) {
  for (const auto& t : a.args) collect_vars(t, out);
}

} // namespace

std::vector<std::string> Rule::head_vars() const {
  std::vector<std::string> out;
  for (const auto& h : heads) collect_vars(h, out);
  if (agg)
    for (const auto& v : agg->vars) collect_vars(v, out);
  return out;
}

std::vector<std::string> Rule::body_vars() const {
  std::vector<std::string> out;
  for (const auto& l : body) {
    if (l.kind == Literal::Builtin) {
      collect_vars(l.lhs, out);
      collect_vars(l.rhs, out);
    } else {
      collect_vars(l.atom, out);
    }
  }
  return out;
}

std::vector<std::string> Rule::existential_vars() const {
  auto hv = head_vars();
  auto bv = body_vars();
  std::vector<std::string> out;
  for (const auto& v : hv)
    if (std::find(bv.begin(), bv.end(), v) == bv.end()) out.push_back(v);
  return out;
}

std::string Rule::repr() const {
  std::string out;
  for (size_t i = 0; i < heads.size(); ++i) {
    if (i) out += " & ";
    if (agg && int(i) == 0) {
      // render the aggregate slot in place
      std::string h = heads[0].pred + "(";
      for (size_t j = 0; j < heads[0].args.size() + 1; ++j) {
        size_t src = j < size_t(agg_pos) ? j : j - 1;
        if (j) h += ", ";
        if (int(j) == agg_pos) {
          h += std::string(agg_func_name(agg->func)) + "(";
          for (size_t k = 0; k < agg->vars.size(); ++k) {
            if (k) h += ", ";
            h += agg->vars[k].repr();
          }
          if (agg->func == AggFunc::Percentile) h += ", " + Value::real(agg->param).repr();
          h += ")";
        } else {
          h += heads[0].args[src].repr();
        }
      }
      out += h + ")";
    } else if (cls == RuleClass::Per && i == 0) {
      std::string h = heads[0].pred + "(";
      for (size_t j = 0; j < heads[0].args.size(); ++j) {
        if (j) h += ", ";
        h += heads[0].args[j].repr();
      }
      if (!heads[0].args.empty()) h += ", ";
      out += h + "PROB)";
    } else {
      out += heads[i].repr();
    }
  }
  out += " :- ";
  for (size_t i = 0; i < body.size(); ++i) {
    if (i) out += ", ";
    out += body[i].repr();
  }
  if (!cond.empty()) {
    out += " // (";
    for (size_t i = 0; i < cond.size(); ++i) {
      if (i) out += ", ";
      out += cond[i].repr();
    }
    out += ")";
  }
  return out + ".";
}

std::string ProbChoice::repr() const {
  std::string out;
  for (size_t i = 0; i < alternatives.size(); ++i) {
    if (i) out += " | ";
    out += alternatives[i].first.repr() + " : " + Value::real(alternatives[i].second).repr();
  }
  return out + ".";
}

std::string Query::repr() const {
  std::string out = name + "(";
  for (size_t i = 0; i < head.size(); ++i) {
    if (i) out += ", ";
    out += head[i].repr();
  }
  out += ") :- ";
  for (size_t i = 0; i < body.size(); ++i) {
    if (i) out += ", ";
    out += body[i].repr();
  }
  return out + ".";
}

std::string Program::repr() const {
  std::ostringstream os;
  for (const auto& [name, d] : decls) {
    if (d.cls == SchemaClass::Target)
      os << "@target " << name << "/" << d.arity << "\n";
  }
  for (const auto& f : facts_d) os << f.repr() << ".\n";
  for (const auto& c : choices) os << c.repr() << "\n";
  for (const auto& r : sigma) os << r.repr() << "\n";
  for (const auto& r : chi) os << r.repr() << "\n";
  if (!facts_d1.empty() || !sigma1.empty()) os << "@existential\n";
  for (const auto& f : facts_d1) os << f.repr() << ".\n";
  for (const auto& r : sigma1) os << r.repr() << "\n";
  if (!pers.empty() || !aggs.empty() || !queries.empty()) os << "@deterministic-facts\n";
  for (const auto& r : pers) os << r.repr() << "\n";
  for (const auto& r : aggs) os << r.repr() << "\n";
  for (const auto& q : queries) os << q.repr() << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Validation

namespace {

struct Validator {
  const Program& p;
  std::vector<Violation> out;

  void add(std::string msg, int line) { out.push_back({std::move(msg), line}); }

  bool pred_in(const std::string& name, SchemaClass cls) const {
    const auto* d = p.decl(name);
    return d && d->cls == cls;
  }

  void check_arities(const Rule& r) {
    auto check = [&](const Atom& a, int extra) {
      const auto* d = p.decl(a.pred);
      if (d && int(a.args.size()) + extra != d->arity)
        add("arity mismatch for " + a.pred + ": got " +
                std::to_string(a.args.size() + extra) + ", declared " +
                std::to_string(d->arity),
            r.line);
    };
    for (const auto& h : r.heads) check(h, (r.agg || r.cls == RuleClass::Per) ? 1 : 0);
    for (const auto& l : r.body)
      if (l.kind != Literal::Builtin) check(l.atom, 0);
  }

  void check_no_nulls(const Rule& r) {
    auto has_null = [](const Atom& a) {
      return std::any_of(a.args.begin(), a.args.end(),
                         [](const Term& t) { return t.kind == Term::NullT; });
    };
    for (const auto& h : r.heads)
      if (has_null(h)) add("labeled null in user rule head", r.line);
    for (const auto& l : r.body)
      if (l.kind != Literal::Builtin && has_null(l.atom))
        add("labeled null in user rule body", r.line);
  }

  // Builtins and negated atoms must have every variable bound by a positive
  // body atom; rule safety also requires head variables bound.
  void check_safety(const Rule& r) {
    std::vector<std::string> bound;
    for (const auto* lits : {&r.body, &r.cond})
      for (const auto& l : *lits)
        if (l.kind == Literal::Positive) collect_vars(l.atom, bound);
    auto is_bound = [&](const std::string& v) {
      return std::find(bound.begin(), bound.end(), v) != bound.end();
    };
    for (const auto& l : r.body) {
      std::vector<std::string> vs;
      if (l.kind == Literal::Builtin) {
        collect_vars(l.lhs, vs);
        collect_vars(l.rhs, vs);
      } else if (l.kind == Literal::Negative) {
        collect_vars(l.atom, vs);
      }
      for (const auto& v : vs)
        if (!is_bound(v))
          add("variable " + v + " in " + l.repr() + " not bound by a positive atom", r.line);
    }
    if (r.cls != RuleClass::Existential) {
      auto hv = r.head_vars();
      for (const auto& v : hv) {
        if (r.cls == RuleClass::Per && !r.heads[0].args.empty() &&
            r.heads[0].args.back().is_var() && r.heads[0].args.back().name == v)
          continue; // PROB variable is bound by reification
        if (!is_bound(v)) add("unbound head variable " + v, r.line);
      }
    }
  }

  void check_negation_free(const Rule& r, const char* where) {
    for (const auto& l : r.body)
      if (l.kind == Literal::Negative) add(std::string("negation in ") + where, r.line);
  }

  void run() {
    // Predicate class partition is enforced by construction of decls; check
    // facts against declarations.
    for (const auto* facts : {&p.facts_d, &p.facts_d1}) {
      for (const auto& f : *facts) {
        if (!f.is_ground()) add("non-ground fact " + f.repr(), 0);
        const auto* d = p.decl(f.pred);
        if (d && d->cls != SchemaClass::Deterministic)
          add("fact over non-deterministic predicate " + f.pred, 0);
        if (d && int(f.args.size()) != d->arity)
          add("arity mismatch in fact " + f.repr(), 0);
      }
    }

    // Probabilistic constraints.
    std::set<Atom> seen_alt;
    for (const auto& c : p.choices) {
      if (c.alternatives.empty()) add("empty probabilistic constraint", c.line);
      double sum = 0;
      for (const auto& [a, prob] : c.alternatives) {
        if (!a.is_ground()) add("non-ground probabilistic atom " + a.repr(), c.line);
        if (!pred_in(a.pred, SchemaClass::Probabilistic))
          add("probabilistic atom over non-probabilistic predicate " + a.pred, c.line);
        if (prob <= 0.0 || prob > 1.0)
          add("probability " + Value::real(prob).repr() + " outside (0,1] in " + a.repr(),
              c.line);
        if (!seen_alt.insert(a).second)
          add("atom " + a.repr() + " appears in two probabilistic constraints", c.line);
        sum += prob;
      }
      if (sum > 1.0 + 1e-12)
        add("alternative probabilities sum to " + Value::real(sum).repr() + " > 1", c.line);
    }

    for (const auto& r : p.sigma) {
      check_arities(r);
      check_no_nulls(r);
      check_safety(r);
      for (const auto& l : r.body) {
        if (l.kind == Literal::Builtin) continue;
        if (pred_in(l.atom.pred, SchemaClass::Probabilistic))
          add("probabilistic atom " + l.atom.pred + " in sigma rule", r.line);
      }
      if (pred_in(r.head().pred, SchemaClass::Probabilistic))
        add("probabilistic head in sigma rule", r.line);
    }
    StratificationError serr;
    if (!stratify(p.sigma, &serr))
      add("sigma does not stratify: " + serr.message, 0);

    for (const auto& r : p.sigma1) {
      check_arities(r);
      check_no_nulls(r);
      check_negation_free(r, "existential rule");
      if (!r.has_existential())
        add("existential rule without existential head variable", r.line);
      for (const auto& l : r.body)
        if (l.kind == Literal::Positive && pred_in(l.atom.pred, SchemaClass::Probabilistic))
          add("probabilistic atom in existential rule body", r.line);
    }

    // chi: full TGDs over R_D u R_P, no negation, no recursion.
    for (const auto& r : p.chi) {
      check_arities(r);
      check_no_nulls(r);
      check_safety(r);
      check_negation_free(r, "chi");
      if (r.has_existential()) add("existential variable in chi rule", r.line);
      for (const auto& l : r.body)
        if (l.kind == Literal::Negative) add("negation in chi", r.line);
    }
    if (has_recursion(p.chi)) add("recursion in chi", 0);

    // PERs: body over R_D u R_P, head in T with trailing PROB variable.
    for (const auto& r : p.pers) {
      check_arities(r);
      check_safety(r);
      check_negation_free(r, "PER");
      if (!pred_in(r.head().pred, SchemaClass::Target))
        add("PER head " + r.head().pred + " is not a target predicate", r.line);
      if (r.heads[0].args.empty() || !r.heads[0].args.back().is_var())
        add("PER head lacks a distinguished probability variable", r.line);
    }

    // Aggregation rules: body over R_D u T, no negation, no recursion.
    for (const auto& r : p.aggs) {
      check_arities(r);
      check_safety(r);
      check_negation_free(r, "aggregation rule");
      for (const auto& l : r.body)
        if (l.kind == Literal::Positive && pred_in(l.atom.pred, SchemaClass::Probabilistic))
          add("probabilistic atom in aggregation rule body", r.line);
    }
    if (has_recursion(p.aggs)) add("recursion in aggregation rules", 0);
  }

  static bool has_recursion(const std::vector<Rule>& rules) {
    // recursion iff some head predicate depends on itself through a body atom
    for (const auto& r : rules)
      for (const auto& h : r.heads)
        for (const auto& l : r.body)
          if (l.kind != Literal::Builtin &&
              dependency_closure({l.atom.pred}, rules).count(h.pred))
            return true;
    return false;
  }
};

} // namespace

ValidationReport validate_program(const Program& p) {
  Validator v{p, {}};
  v.run();
  return {std::move(v.out)};
}

// ---------------------------------------------------------------------------
// Stratification

int Stratification::stratum_of(const std::string& pred) const {
  for (size_t i = 0; i < strata.size(); ++i)
    if (strata[i].count(pred)) return int(i);
  return -1;
}

std::optional<Stratification> stratify(const std::vector<Rule>& rules,
                                       StratificationError* err) {
  // Dependency graph over predicates: edge head -> body predicate, labeled
  // negative when the body literal is negated.
  std::set<std::string> preds;
  std::map<std::string, std::map<std::string, bool>> edges; // head -> {body -> has_neg}
  for (const auto& r : rules) {
    for (const auto& h : r.heads) {
      preds.insert(h.pred);
      for (const auto& l : r.body) {
        if (l.kind == Literal::Builtin) continue;
        preds.insert(l.atom.pred);
        bool neg = l.kind == Literal::Negative;
        auto& slot = edges[h.pred][l.atom.pred];
        slot = slot || neg;
      }
    }
  }

  // Longest-path style level assignment: level(h) >= level(b) for positive,
  // level(h) >= level(b) + 1 for negative. A negative cycle forces levels
  // beyond |preds| and is reported.
  std::map<std::string, int> level;
  for (const auto& pr : preds) level[pr] = 0;
  int n = int(preds.size());
  bool changed = true;
  int guard = 0;
  while (changed) {
    changed = false;
    if (++guard > n + 2) {
      if (err) {
        // Recover a witness cycle through a negative edge.
        for (const auto& [h, bs] : edges) {
          for (const auto& [b, neg] : bs) {
            if (!neg) continue;
            if (dependency_closure({b}, rules).count(h)) {
              err->cycle = {h, b};
              err->message = "recursion through negation: " + h + " ~> " + b + " ~> " + h;
              return std::nullopt;
            }
          }
        }
        err->message = "recursion through negation";
      }
      return std::nullopt;
    }
    for (const auto& [h, bs] : edges) {
      for (const auto& [b, neg] : bs) {
        int need = level[b] + (neg ? 1 : 0);
        if (level[h] < need) {
          level[h] = need;
          changed = true;
        }
      }
    }
  }

  int max_level = 0;
  for (const auto& [pr, lv] : level) max_level = std::max(max_level, lv);
  Stratification s;
  s.strata.resize(max_level + 1);
  for (const auto& [pr, lv] : level) s.strata[lv].insert(pr);
  if (s.strata.empty()) s.strata.emplace_back();
  return s;
}

std::set<std::string> dependency_closure(const std::set<std::string>& target,
                                         const std::vector<Rule>& rules) {
  std::set<std::string> out = target;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& r : rules) {
      bool head_in = std::any_of(r.heads.begin(), r.heads.end(),
                                 [&](const Atom& h) { return out.count(h.pred) > 0; });
      if (!head_in) continue;
      for (const auto& l : r.body) {
        if (l.kind == Literal::Builtin) continue;
        if (out.insert(l.atom.pred).second) changed = true;
      }
    }
  }
  return out;
}

} // namespace nlq
