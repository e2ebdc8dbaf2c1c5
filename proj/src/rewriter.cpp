#include "nlq/rewriter.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <unordered_set>

namespace nlq {

// ---------------------------------------------------------------------------
// Sticky marking

MarkedRuleSet check_sticky(const std::vector<Rule>& sigma1) {
  MarkedRuleSet out;
  out.rules = sigma1;
  out.marking.resize(sigma1.size());

  // body positions (predicate, index) that carry a marked variable somewhere
  std::set<std::pair<std::string, int>> marked_body_pos;

  // mark every body occurrence of `var` in rule ri
  auto mark_var = [&](size_t ri, const std::string& var) {
    bool changed = false;
    const Rule& r = out.rules[ri];
    for (size_t li = 0; li < r.body.size(); ++li) {
      const auto& lit = r.body[li];
      if (lit.kind == Literal::Builtin) continue;
      for (size_t ai = 0; ai < lit.atom.args.size(); ++ai)
        if (lit.atom.args[ai].is_var() && lit.atom.args[ai].name == var) {
          changed |= out.marking[ri].insert({int(li), int(ai)}).second;
          changed |= marked_body_pos.insert({lit.atom.pred, int(ai)}).second;
        }
    }
    return changed;
  };

  // base: body variables absent from the head
  for (size_t ri = 0; ri < out.rules.size(); ++ri) {
    const Rule& r = out.rules[ri];
    std::set<std::string> head_vars;
    for (const auto& h : r.heads)
      for (const auto& t : h.args)
        if (t.is_var()) head_vars.insert(t.name);
    for (const auto& v : r.body_vars())
      if (!head_vars.count(v)) mark_var(ri, v);
  }

  // propagate: a marked body position (p, i) marks, in every rule whose head
  // produces p, the body occurrences of the variable at head position i
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& pos : std::set<std::pair<std::string, int>>(marked_body_pos)) {
      for (size_t ri = 0; ri < out.rules.size(); ++ri) {
        for (const auto& h : out.rules[ri].heads) {
          if (h.pred != pos.first || size_t(pos.second) >= h.args.size()) continue;
          const Term& t = h.args[size_t(pos.second)];
          if (t.is_var()) changed |= mark_var(ri, t.name);
        }
      }
    }
  }

  // verdict: a marked variable occurring twice in one body breaks stickiness
  for (size_t ri = 0; ri < out.rules.size(); ++ri) {
    const Rule& r = out.rules[ri];
    std::map<std::string, int> marked_occ;
    for (const auto& [li, ai] : out.marking[ri]) {
      const Term& t = r.body[size_t(li)].atom.args[size_t(ai)];
      if (++marked_occ[t.name] == 2) {
        out.sticky = false;
        out.witness_var = t.name;
        out.witness_line = r.line;
        out.message = "marked variable " + t.name + " occurs more than once in the body of " +
                      r.repr();
        return out;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Piece unification

namespace {

// union-find over term names; constants are roots that may not merge
struct Unifier {
  std::map<std::string, Term> binding; // var -> representative term

  Term find(Term t) {
    while (t.is_var()) {
      auto it = binding.find(t.name);
      if (it == binding.end()) break;
      t = it->second;
    }
    return t;
  }

  bool unify(const Term& a, const Term& b) {
    Term x = find(a), y = find(b);
    if (x == y) return true;
    if (x.is_var()) {
      binding[x.name] = y;
      return true;
    }
    if (y.is_var()) {
      binding[y.name] = x;
      return true;
    }
    return false; // two distinct ground terms
  }

  Term apply(const Term& t) { return find(t); }

  Atom apply(const Atom& a) {
    Atom out;
    out.pred = a.pred;
    for (const auto& t : a.args) out.args.push_back(apply(t));
    return out;
  }

  Literal apply(const Literal& l) {
    Literal out = l;
    if (l.kind == Literal::Builtin) {
      out.lhs = apply(l.lhs);
      out.rhs = apply(l.rhs);
    } else {
      out.atom = apply(l.atom);
    }
    return out;
  }
};

Rule rename_rule(const Rule& r, const std::string& suffix) {
  auto ren = [&](Term t) {
    if (t.is_var()) t.name += suffix;
    return t;
  };
  Rule out = r;
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

// canonical key: body literals sorted by a shape string, then variables
// renamed in order of appearance
std::string canonical_key(const Rule& r) {
  auto shape = [](const Literal& l) {
    Literal c = l;
    auto wipe = [](Term& t) {
      if (t.is_var()) t.name = "_";
    };
    if (c.kind == Literal::Builtin) {
      wipe(c.lhs);
      wipe(c.rhs);
    } else {
      for (auto& t : c.atom.args) wipe(t);
    }
    return c.repr();
  };
  std::vector<int> order(r.body.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return shape(r.body[size_t(a)]) < shape(r.body[size_t(b)]); });

  std::map<std::string, std::string> names;
  auto ren = [&](Term t) {
    if (t.is_var()) {
      auto it = names.find(t.name);
      if (it == names.end()) it = names.emplace(t.name, "V" + std::to_string(names.size())).first;
      t.name = it->second;
    }
    return t;
  };
  std::string key;
  for (const auto& h : r.heads) {
    Atom a = h;
    for (auto& t : a.args) t = ren(t);
    key += a.repr() + "&";
  }
  key += ":-";
  for (int i : order) {
    Literal l = r.body[size_t(i)];
    if (l.kind == Literal::Builtin) {
      l.lhs = ren(l.lhs);
      l.rhs = ren(l.rhs);
    } else {
      for (auto& t : l.atom.args) t = ren(t);
    }
    key += l.repr() + ",";
  }
  return key;
}

void dedup_body(Rule& r) {
  std::vector<Literal> out;
  for (auto& l : r.body) {
    bool seen = false;
    for (const auto& o : out)
      if (o == l) seen = true;
    if (!seen) out.push_back(std::move(l));
  }
  r.body = std::move(out);
}

// all variable occurrences of `var` in literals of r outside `piece` indices,
// in builtins, or in the head
bool occurs_outside_piece(const Rule& r, const std::string& var, const std::set<int>& piece) {
  for (const auto& h : r.heads)
    for (const auto& t : h.args)
      if (t.is_var() && t.name == var) return true;
  for (size_t li = 0; li < r.body.size(); ++li) {
    const auto& l = r.body[li];
    if (l.kind == Literal::Builtin) {
      if ((l.lhs.is_var() && l.lhs.name == var) || (l.rhs.is_var() && l.rhs.name == var))
        return true;
      continue;
    }
    if (piece.count(int(li)) && l.kind == Literal::Positive) continue;
    for (const auto& t : l.atom.args)
      if (t.is_var() && t.name == var) return true;
  }
  return false;
}

// one attempted rewriting of rule r: piece atoms (indices into r.body) against
// the head conjunction of s1 (already freshly renamed)
std::optional<Rule> rewrite_piece(const Rule& r, const std::vector<int>& piece_atoms,
                                  const Rule& s1) {
  // piece_atoms[hi] == -1 skips head atom hi (a piece may cover a strict
  // subset of a conjunctive head; the chase materializes the whole head)
  Unifier u;
  std::set<int> piece;
  for (size_t hi = 0; hi < s1.heads.size(); ++hi) {
    if (piece_atoms[hi] < 0) continue;
    const Atom& h = s1.heads[hi];
    const Atom& a = r.body[size_t(piece_atoms[hi])].atom;
    if (h.pred != a.pred || h.args.size() != a.args.size()) return std::nullopt;
    for (size_t ai = 0; ai < h.args.size(); ++ai)
      if (!u.unify(h.args[ai], a.args[ai])) return std::nullopt;
    piece.insert(piece_atoms[hi]);
  }
  if (piece.empty()) return std::nullopt;

  // existential positions may only absorb piece-local rule variables
  auto ex = s1.existential_vars();
  std::set<std::string> frontier;
  for (const auto& l : s1.body)
    if (l.kind != Literal::Builtin)
      for (const auto& t : l.atom.args)
        if (t.is_var()) frontier.insert(t.name);
  std::set<std::string> ex_reps;
  for (const auto& z : ex) {
    Term rep = u.find(Term::var(z));
    if (!rep.is_var()) return std::nullopt; // bound to a constant
    if (frontier.count(rep.name)) return std::nullopt; // merged with a frontier var
    if (!ex_reps.insert(rep.name).second) return std::nullopt; // two nulls merged
    // the representative must belong to the rule and live only in the piece;
    // any rule variable unified into this class must also be piece-local
    for (const auto& v : r.body_vars()) {
      Term vr = u.find(Term::var(v));
      if (vr.is_var() && vr.name == rep.name && occurs_outside_piece(r, v, piece))
        return std::nullopt;
    }
    if (occurs_outside_piece(r, rep.name, piece)) return std::nullopt;
  }

  Rule out;
  out.cls = r.cls;
  out.line = r.line;
  for (const auto& h : r.heads) out.heads.push_back(u.apply(h));
  for (size_t li = 0; li < r.body.size(); ++li)
    if (!piece.count(int(li))) out.body.push_back(u.apply(r.body[size_t(li)]));
  for (const auto& l : s1.body) out.body.push_back(u.apply(l));
  dedup_body(out);
  return out;
}

} // namespace

bool subsumes(const Rule& general, const Rule& specific) {
  if (general.heads.size() != specific.heads.size()) return false;
  // backtracking homomorphism from general into specific
  std::map<std::string, Term> sub;
  auto match_term = [&](const Term& g, const Term& s) {
    if (!g.is_var()) return g == s;
    auto it = sub.find(g.name);
    if (it != sub.end()) return it->second == s;
    sub.emplace(g.name, s);
    return true;
  };
  auto match_atom = [&](const Atom& g, const Atom& s, std::vector<std::string>& added) {
    if (g.pred != s.pred || g.args.size() != s.args.size()) return false;
    for (size_t i = 0; i < g.args.size(); ++i) {
      bool fresh = g.args[i].is_var() && !sub.count(g.args[i].name);
      if (!match_term(g.args[i], s.args[i])) return false;
      if (fresh) added.push_back(g.args[i].name);
    }
    return true;
  };

  std::function<bool(size_t)> go = [&](size_t gi) -> bool {
    if (gi == general.body.size()) return true;
    const Literal& gl = general.body[gi];
    for (const auto& sl : specific.body) {
      if (gl.kind != sl.kind) continue;
      std::vector<std::string> added;
      bool ok;
      if (gl.kind == Literal::Builtin) {
        ok = gl.op == sl.op;
        if (ok) {
          bool f1 = gl.lhs.is_var() && !sub.count(gl.lhs.name);
          ok = match_term(gl.lhs, sl.lhs);
          if (ok && f1) added.push_back(gl.lhs.name);
          bool f2 = gl.rhs.is_var() && !sub.count(gl.rhs.name);
          ok = ok && match_term(gl.rhs, sl.rhs);
          if (ok && f2) added.push_back(gl.rhs.name);
        }
      } else {
        ok = match_atom(gl.atom, sl.atom, added);
      }
      if (ok && go(gi + 1)) return true;
      for (const auto& v : added) sub.erase(v);
    }
    return false;
  };

  // heads must map exactly
  for (size_t hi = 0; hi < general.heads.size(); ++hi) {
    std::vector<std::string> added;
    if (!match_atom(general.heads[hi], specific.heads[hi], added)) return false;
  }
  return go(0);
}

RewriteResult xrewrite(const std::vector<Rule>& sigma, const std::vector<Rule>& sigma1,
                       size_t budget) {
  auto marked = check_sticky(sigma1);
  if (!marked.sticky) throw RewriteError(RewriteError::NotSticky, marked.message);

  std::set<std::string> rewritable;
  for (const auto& s : sigma1)
    for (const auto& h : s.heads) rewritable.insert(h.pred);

  RewriteResult res;
  std::unordered_set<std::string> seen;
  std::deque<int> work;

  auto push = [&](Rule r, int parent, int via, const std::string& note) {
    std::string key = canonical_key(r);
    if (!seen.insert(key).second) return;
    if (res.all.size() >= budget)
      throw RewriteError(RewriteError::BudgetExceeded,
                         "rewriting exceeded the budget of " + std::to_string(budget) +
                             " generated rules");
    res.all.push_back({std::move(r), parent, via, note});
    work.push_back(int(res.all.size()) - 1);
  };

  for (const auto& r : sigma) push(r, -1, -1, "input");

  int fresh = 0;
  while (!work.empty()) {
    int ri = work.front();
    work.pop_front();
    Rule r = res.all[size_t(ri)].rule; // copy: res.all may reallocate
    for (size_t si = 0; si < sigma1.size(); ++si) {
      Rule s1 = rename_rule(sigma1[si], "#" + std::to_string(fresh++));
      // enumerate ordered choices of distinct body atoms matching the head preds
      std::vector<std::vector<int>> candidates(s1.heads.size());
      for (size_t hi = 0; hi < s1.heads.size(); ++hi)
        for (size_t li = 0; li < r.body.size(); ++li)
          if (r.body[li].kind == Literal::Positive && r.body[li].atom.pred == s1.heads[hi].pred)
            candidates[hi].push_back(int(li));
      std::vector<int> pick(s1.heads.size(), -1);
      std::function<void(size_t)> choose = [&](size_t hi) {
        if (hi == s1.heads.size()) {
          if (auto rewritten = rewrite_piece(r, pick, s1))
            push(std::move(*rewritten), ri, int(si), "piece over " + s1.heads[0].pred);
          return;
        }
        pick[hi] = -1; // a head atom may stay unmatched
        choose(hi + 1);
        for (int li : candidates[hi]) {
          if (std::find(pick.begin(), pick.begin() + hi, li) != pick.begin() + hi) continue;
          pick[hi] = li;
          choose(hi + 1);
        }
        pick[hi] = -1;
      };
      if (!s1.heads.empty()) choose(0);
    }

    // factorization: two body atoms over a rewritable predicate that share a
    // variable at an existential head position can only match the same chase
    // null, so they may be merged before piece rewriting
    for (size_t si = 0; si < sigma1.size(); ++si) {
      for (const auto& h : sigma1[si].heads) {
        std::set<int> ex_pos;
        auto ex = sigma1[si].existential_vars();
        for (size_t ai = 0; ai < h.args.size(); ++ai)
          if (h.args[ai].is_var() &&
              std::find(ex.begin(), ex.end(), h.args[ai].name) != ex.end())
            ex_pos.insert(int(ai));
        if (ex_pos.empty()) continue;
        for (size_t i = 0; i < r.body.size(); ++i) {
          if (r.body[i].kind != Literal::Positive || r.body[i].atom.pred != h.pred) continue;
          for (size_t j = i + 1; j < r.body.size(); ++j) {
            if (r.body[j].kind != Literal::Positive || r.body[j].atom.pred != h.pred) continue;
            const Atom& a1 = r.body[i].atom;
            const Atom& a2 = r.body[j].atom;
            if (a1.args.size() != a2.args.size() || a1.args.size() != h.args.size()) continue;
            bool shares = false;
            for (int p : ex_pos)
              if (a1.args[size_t(p)].is_var() && a1.args[size_t(p)] == a2.args[size_t(p)])
                shares = true;
            if (!shares) continue;
            Unifier u;
            bool ok = true;
            for (size_t ai = 0; ai < a1.args.size(); ++ai)
              ok = ok && u.unify(a1.args[ai], a2.args[ai]);
            if (!ok) continue;
            Rule merged;
            merged.cls = r.cls;
            merged.line = r.line;
            for (const auto& hh : r.heads) merged.heads.push_back(u.apply(hh));
            for (size_t li = 0; li < r.body.size(); ++li)
              if (li != j) merged.body.push_back(u.apply(r.body[li]));
            dedup_body(merged);
            push(std::move(merged), ri, int(si), "factorize " + h.pred);
          }
        }
      }
    }
  }

  for (size_t i = 0; i < res.all.size(); ++i) {
    const Rule& r = res.all[i].rule;
    bool mentions = false;
    for (const auto& l : r.body)
      if (l.kind != Literal::Builtin && rewritable.count(l.atom.pred)) mentions = true;
    if (!mentions) {
      res.rules.push_back(r);
      res.rule_sources.push_back(int(i));
    }
  }
  return res;
}

std::vector<const RewriteStep*> RewriteResult::chain(size_t i) const {
  std::vector<const RewriteStep*> out;
  int cur = rule_sources[i];
  while (cur >= 0) {
    out.push_back(&all[size_t(cur)]);
    cur = all[size_t(cur)].parent;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

SplitAux split_aux(const std::vector<Rule>& sigma_prime, const Program& prog) {
  std::set<std::string> excluded;
  for (const auto& [name, d] : prog.decls)
    if (d.cls == SchemaClass::Probabilistic) excluded.insert(name);
  for (const auto& r : prog.chi)
    for (const auto& h : r.heads) excluded.insert(h.pred);
  for (const auto& r : prog.pers)
    for (const auto& h : r.heads) excluded.insert(h.pred);

  std::vector<Rule> closure_rules = sigma_prime;
  closure_rules.insert(closure_rules.end(), prog.chi.begin(), prog.chi.end());

  SplitAux out;
  for (const auto& r : sigma_prime) {
    std::set<std::string> body_preds;
    for (const auto& l : r.body)
      if (l.kind != Literal::Builtin) body_preds.insert(l.atom.pred);
    auto closure = dependency_closure(body_preds, closure_rules);
    bool independent = true;
    for (const auto& p : closure)
      if (excluded.count(p)) independent = false;
    (independent ? out.aux : out.rest).push_back(r);
  }
  return out;
}

} // namespace nlq
