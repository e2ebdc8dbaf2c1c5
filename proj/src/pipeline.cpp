#include "nlq/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include <json.hpp>

namespace nlq {

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void collect_vars(const Literal& l, std::set<std::string>& out) {
  if (l.kind == Literal::Builtin) {
    if (l.lhs.is_var()) out.insert(l.lhs.name);
    if (l.rhs.is_var()) out.insert(l.rhs.name);
  } else {
    for (const auto& t : l.atom.args)
      if (t.is_var()) out.insert(t.name);
  }
}

// head row with the probability spliced in at the PROB slot
Row head_row_with_prob(const Rule& per, const Row& tuple, double p) {
  Row row = tuple;
  int pos = per.agg_pos >= 0 ? per.agg_pos : int(row.size());
  row.insert(row.begin() + pos, Value::real(p));
  return row;
}

void reify_one(const Program& prog, const Rule& per, size_t index, const Model& m,
               const MarginalOptions& opt, Model& out, PipelineTrace* trace) {
  ProbContext ctx = ProbContext::make(m, prog.choices, prog.chi);
  const std::vector<Term>& head_terms = per.head().args;

  PerTrace pt;
  pt.head_pred = per.head().pred;

  AnswerProbs probs;
  if (per.cond.empty()) {
    MarginalResult r = marginal_answers(head_terms, per.body, ctx, opt);
    probs = std::move(r.answers);
    pt.strategy = r.strategy;
    pt.plan_text = r.plan_text;
    pt.stats = r.stats;
  } else {
    // conditional PER: Pr(body & cond) / Pr(cond), side-local variables
    // existentially quantified
    std::vector<Literal> both = per.body;
    both.insert(both.end(), per.cond.begin(), per.cond.end());
    MarginalResult numer = marginal_answers(head_terms, both, ctx, opt);

    std::set<std::string> cond_vars;
    for (const auto& l : per.cond) collect_vars(l, cond_vars);
    std::vector<Term> denom_head;
    std::vector<size_t> denom_pos; // positions of the denominator key in the head tuple
    for (size_t i = 0; i < head_terms.size(); ++i)
      if (head_terms[i].is_var() && cond_vars.count(head_terms[i].name)) {
        bool dup = false;
        for (size_t j : denom_pos) dup = dup || head_terms[j] == head_terms[i];
        if (dup) continue;
        denom_head.push_back(head_terms[i]);
        denom_pos.push_back(i);
      }
    MarginalResult denom = marginal_answers(denom_head, per.cond, ctx, opt);

    pt.strategy = numer.strategy;
    pt.plan_text = numer.plan_text;
    pt.stats = numer.stats;
    for (const auto& [tuple, pn] : numer.answers) {
      Row key;
      for (size_t j : denom_pos) key.push_back(tuple[j]);
      auto it = denom.answers.find(key);
      if (it == denom.answers.end() || it->second <= 0) {
        ++pt.dropped_conditions;
        continue;
      }
      probs[tuple] = pn / it->second;
    }
  }

  for (const auto& [tuple, p] : probs) {
    out.insert(per.head().pred, head_row_with_prob(per, tuple, p));
    out.insert(per_witness_pred(index), tuple);
  }
  pt.answers = probs.size();
  if (trace) trace->pers.push_back(std::move(pt));
}

} // namespace

std::string per_witness_pred(size_t per_index) { return "__q_per" + std::to_string(per_index); }

Model reify_pers(const Program& p, const Model& m, const MarginalOptions& opt,
                 PipelineTrace* trace) {
  Model out = m;
  for (size_t i = 0; i < p.pers.size(); ++i) reify_one(p, p.pers[i], i, m, opt, out, trace);
  return out;
}

AnswerSet extract_answers(const Query& q, const Model& m_prime) {
  std::set<Row> rows;
  match_conjunction(m_prime, q.body, [&](const Binding& b) {
    Row row;
    row.reserve(q.head.size());
    for (const auto& t : q.head) {
      if (t.is_var()) {
        auto it = b.find(t.name);
        if (it == b.end())
          throw EvalError(EvalError::UnboundVariable, "answer variable " + t.name + " unbound");
        row.push_back(it->second);
      } else {
        row.push_back(t.ground_value());
      }
    }
    rows.insert(std::move(row));
    return true;
  });
  AnswerSet out;
  out.query = q;
  out.rows.assign(rows.begin(), rows.end());
  return out;
}

PipelineResult answer_query(const Program& p, const Query& q, const PipelineOptions& opt) {
  PipelineResult res;
  PipelineTrace& tr = res.trace;
  auto t0 = std::chrono::steady_clock::now();

  // Step 1: D' = D u D1, Sigma' = xrewrite(Sigma, Sigma1)
  Model d_prime;
  RewriteResult rw;
  try {
    for (const auto& a : p.facts_d) d_prime.insert(a.pred, a.ground_row());
    for (const auto& a : p.facts_d1) d_prime.insert(a.pred, a.ground_row());
    rw = xrewrite(p.sigma, p.sigma1, opt.rewrite_budget);
  } catch (const RewriteError& e) {
    throw PipelineError("1 (rewriting)", e.what(), e.kind == RewriteError::BudgetExceeded);
  } catch (const std::exception& e) {
    throw PipelineError("1 (rewriting)", e.what());
  }
  tr.sigma_prime = rw.rules.size();
  tr.step_ms[0] = ms_since(t0);

  // Step 2: split Aux off Sigma' and materialize M; an aggregation rule runs
  // here only when its dependency closure avoids the probabilistic layer
  t0 = std::chrono::steady_clock::now();
  Model m;
  std::vector<Rule> a2, a4;
  SplitAux sp;
  try {
    sp = split_aux(rw.rules, p);

    std::set<std::string> excluded;
    for (const auto& [name, d] : p.decls)
      if (d.cls == SchemaClass::Probabilistic) excluded.insert(name);
    for (const auto& r : p.chi) excluded.insert(r.head().pred);
    for (const auto& r : p.pers) excluded.insert(r.head().pred);

    std::vector<Rule> closure_rules = rw.rules;
    closure_rules.insert(closure_rules.end(), p.chi.begin(), p.chi.end());
    closure_rules.insert(closure_rules.end(), p.aggs.begin(), p.aggs.end());
    for (const auto& r : p.aggs) {
      std::set<std::string> targets;
      for (const auto& l : r.body)
        if (l.kind != Literal::Builtin) targets.insert(l.atom.pred);
      auto closure = dependency_closure(targets, closure_rules);
      bool independent = true;
      for (const auto& pred : closure)
        if (excluded.count(pred)) independent = false;
      (independent ? a2 : a4).push_back(r);
    }

    m = seminaive_eval(d_prime, sp.aux);
    eval_postprocessing_layer(m, a2, opt.overlay);
  } catch (const std::exception& e) {
    throw PipelineError("2 (materialization)", e.what());
  }
  tr.aux = sp.aux.size();
  tr.rest = sp.rest.size();
  tr.m_size = m.total_tuples();
  tr.step_ms[1] = ms_since(t0);

  // Step 3: reify PER probabilities into B
  t0 = std::chrono::steady_clock::now();
  Model b;
  try {
    b = reify_pers(p, m, opt.prob, &tr);
  } catch (const ProbError& e) {
    throw PipelineError("3 (reification)", e.what(),
                        e.kind == ProbError::CapExceeded ||
                            e.kind == ProbError::CircuitBudgetExceeded);
  } catch (const std::exception& e) {
    throw PipelineError("3 (reification)", e.what());
  }
  tr.b_size = b.total_tuples();
  tr.step_ms[2] = ms_since(t0);

  // Step 4: M' = eval(B, Rest u A)
  t0 = std::chrono::steady_clock::now();
  try {
    res.m_prime = seminaive_eval(b, sp.rest);
    eval_postprocessing_layer(res.m_prime, a4, opt.overlay);
  } catch (const std::exception& e) {
    throw PipelineError("4 (post-processing)", e.what());
  }
  tr.m_prime_size = res.m_prime.total_tuples();
  tr.step_ms[3] = ms_since(t0);

  // Step 5: answers by homomorphism matching
  t0 = std::chrono::steady_clock::now();
  try {
    res.answers = extract_answers(q, res.m_prime);
  } catch (const std::exception& e) {
    throw PipelineError("5 (extraction)", e.what());
  }
  tr.step_ms[4] = ms_since(t0);
  return res;
}

std::string PipelineTrace::render() const {
  std::ostringstream os;
  os << "step 1: |sigma'| = " << sigma_prime << "\n";
  os << "step 2: |aux| = " << aux << ", |rest| = " << rest << ", |M| = " << m_size << "\n";
  os << "step 3: |B| = " << b_size << "\n";
  for (size_t i = 0; i < pers.size(); ++i) {
    const PerTrace& pt = pers[i];
    os << "  per[" << i << "] " << pt.head_pred << ": " << pt.strategy << ", answers = "
       << pt.answers;
    if (pt.dropped_conditions) os << ", dropped conditions = " << pt.dropped_conditions;
    if (pt.strategy == "compiled")
      os << ", circuit nodes = " << pt.stats.nodes << ", cache hits = " << pt.stats.cache_hits;
    os << "\n";
    if (!pt.plan_text.empty()) {
      std::istringstream lines(pt.plan_text);
      std::string line;
      while (std::getline(lines, line)) os << "    " << line << "\n";
    }
  }
  os << "step 4: |M'| = " << m_prime_size << "\n";
  return os.str();
}

std::string PipelineTrace::to_json() const {
  nlohmann::json j;
  j["sigma_prime"] = sigma_prime;
  j["aux"] = aux;
  j["rest"] = rest;
  j["m_size"] = m_size;
  j["b_size"] = b_size;
  j["m_prime_size"] = m_prime_size;
  j["step_ms"] = step_ms;
  j["pers"] = nlohmann::json::array();
  for (const auto& pt : pers) {
    nlohmann::json e;
    e["head"] = pt.head_pred;
    e["strategy"] = pt.strategy;
    e["plan"] = pt.plan_text;
    e["answers"] = pt.answers;
    e["dropped_conditions"] = pt.dropped_conditions;
    e["circuit_nodes"] = pt.stats.nodes;
    e["cache_hits"] = pt.stats.cache_hits;
    j["pers"].push_back(e);
  }
  return j.dump(2);
}

} // namespace nlq
