#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nlq/engine.hpp"
#include "nlq/parser.hpp"
#include "nlq/pipeline.hpp"
#include "nlq/prob.hpp"
#include "nlq/rewriter.hpp"
#include "nlq/synth.hpp"

using namespace nlq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;
constexpr int kExitBudget = 2;

struct FactBinding {
  std::string pred;
  std::string path;
  FactFileOptions opt;
  bool probabilistic = false;
};

// Pred=path[,csv][,header][,prob][,choice][,uniform=P]
bool parse_binding(const std::string& text, FactBinding& out, std::string& err) {
  auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    err = "expected Pred=path in '" + text + "'";
    return false;
  }
  out.pred = text.substr(0, eq);
  std::string rest = text.substr(eq + 1);
  std::stringstream ss(rest);
  std::string part;
  bool first = true;
  while (std::getline(ss, part, ',')) {
    if (first) {
      out.path = part;
      first = false;
    } else if (part == "csv") {
      out.opt.csv = true;
    } else if (part == "header") {
      out.opt.header = true;
    } else if (part == "prob") {
      out.opt.has_prob_column = true;
      out.probabilistic = true;
    } else if (part == "choice") {
      out.opt.choice_group = true;
      out.probabilistic = true;
    } else if (part.rfind("uniform=", 0) == 0) {
      out.opt.uniform_prob = std::strtod(part.c_str() + 8, nullptr);
      out.probabilistic = true;
    } else {
      err = "unknown fact-file option '" + part + "'";
      return false;
    }
  }
  if (out.path.empty()) {
    err = "empty path in '" + text + "'";
    return false;
  }
  return true;
}

std::string fmt_real(double d, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, d);
  return buf;
}

std::string fmt_value(const Value& v, int precision) {
  switch (v.kind) {
    case Value::Sym: return v.s;
    case Value::Str: return v.s;
    case Value::Int: return std::to_string(v.i);
    case Value::Real: return fmt_real(v.d, precision);
    case Value::Null: return "_:" + std::to_string(v.i);
  }
  return "";
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void print_answers(std::ostream& os, const AnswerSet& ans, const std::string& format,
                   int precision) {
  if (format == "csv") {
    for (const auto& row : ans.rows) {
      for (size_t i = 0; i < row.size(); ++i) {
        if (i) os << ",";
        os << csv_cell(fmt_value(row[i], precision));
      }
      os << "\n";
    }
    return;
  }
  if (format == "json") {
    nlohmann::ordered_json j;
    j["query"] = ans.query.repr();
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : ans.rows) {
      nlohmann::ordered_json r = nlohmann::ordered_json::array();
      for (const auto& v : row) {
        switch (v.kind) {
          case Value::Sym:
          case Value::Str: r.push_back(v.s); break;
          case Value::Int: r.push_back(v.i); break;
          case Value::Real: r.push_back(v.d); break;
          case Value::Null: r.push_back("_:" + std::to_string(v.i)); break;
        }
      }
      j["rows"].push_back(std::move(r));
    }
    os << j.dump(2) << "\n";
    return;
  }
  // table
  os << ans.query.name << " (" << ans.rows.size() << " row"
     << (ans.rows.size() == 1 ? "" : "s") << ")\n";
  for (const auto& row : ans.rows) {
    os << "  (";
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) os << ", ";
      os << fmt_value(row[i], precision);
    }
    os << ")\n";
  }
}

int load_program(const std::vector<std::string>& paths,
                 const std::vector<std::string>& fact_specs, Program& out) {
  std::string text;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) {
      std::cerr << "error: cannot open program file '" << p << "'\n";
      return kExitUserError;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    text += ss.str();
    text += "\n";
  }
  auto parsed = parse_program({text, paths.empty() ? "<none>" : paths.front()});
  for (const auto& d : parsed.diagnostics) std::cerr << d.render(paths.front()) << "\n";
  if (!parsed.ok()) return kExitUserError;
  out = std::move(parsed.program);

  for (const auto& spec : fact_specs) {
    FactBinding b;
    std::string err;
    if (!parse_binding(spec, b, err)) {
      std::cerr << "error: " << err << "\n";
      return kExitUserError;
    }
    std::ifstream in(b.path);
    if (!in) {
      std::cerr << "error: cannot open fact file '" << b.path << "'\n";
      return kExitUserError;
    }
    const auto* d = out.decl(b.pred);
    if (!d) {
      std::cerr << "error: predicate '" << b.pred << "' does not occur in the program\n";
      return kExitUserError;
    }
    PredicateDecl decl = *d;
    if (b.probabilistic) decl.cls = SchemaClass::Probabilistic;
    auto facts = parse_fact_file(in, decl, b.opt);
    for (const auto& diag : facts.diagnostics) std::cerr << diag.render(b.path) << "\n";
    if (!facts.ok()) return kExitUserError;
    for (auto& a : facts.facts) out.facts_d.push_back(std::move(a));
    for (auto& c : facts.choices) {
      c.id = int(out.choices.size());
      out.choices.push_back(std::move(c));
    }
    if (b.probabilistic) out.decls[b.pred].cls = SchemaClass::Probabilistic;
  }

  // fact files may turn predicates probabilistic after parse-time rule
  // classification: migrate the affected full rules from sigma to chi
  {
    std::set<std::string> prob_preds;
    for (const auto& [name, d] : out.decls)
      if (d.cls == SchemaClass::Probabilistic) prob_preds.insert(name);
    for (const auto& r : out.chi) prob_preds.insert(r.head().pred);
    bool moved = true;
    while (moved) {
      moved = false;
      for (auto it = out.sigma.begin(); it != out.sigma.end(); ++it) {
        bool touches = false;
        for (const auto& l : it->body)
          if (l.kind != Literal::Builtin && prob_preds.count(l.atom.pred)) touches = true;
        if (!touches) continue;
        Rule r = *it;
        r.cls = RuleClass::Chi;
        prob_preds.insert(r.head().pred);
        out.decls[r.head().pred].cls = SchemaClass::Probabilistic;
        out.chi.push_back(std::move(r));
        out.sigma.erase(it);
        moved = true;
        break;
      }
    }
  }

  auto report = validate_program(out);
  if (!report.ok()) {
    for (const auto& v : report.violations)
      std::cerr << "error: " << v.message << " (line " << v.line << ")\n";
    return kExitUserError;
  }
  return kExitOk;
}

// step-2 state rebuilt through the public module APIs, for --explain / --oracle
struct Materialized {
  RewriteResult rw;
  SplitAux sp;
  Model m;
};

Materialized materialize(const Program& p, size_t rewrite_budget) {
  Materialized out;
  Model d_prime;
  for (const auto& a : p.facts_d) d_prime.insert(a.pred, a.ground_row());
  for (const auto& a : p.facts_d1) d_prime.insert(a.pred, a.ground_row());
  out.rw = xrewrite(p.sigma, p.sigma1, rewrite_budget);
  out.sp = split_aux(out.rw.rules, p);
  out.m = seminaive_eval(d_prime, out.sp.aux);
  return out;
}

// brute-force cross-check of every PER against the possible-world oracle;
// prints the largest per-tuple deviation
int run_oracle_check(const Program& p, const MarginalOptions& opt, int precision) {
  auto mat = materialize(p, 100000);
  ProbContext ctx = ProbContext::make(mat.m, p.choices, p.chi);
  PipelineTrace tr;
  Model b = reify_pers(p, mat.m, opt, &tr);

  double max_delta = 0;
  size_t checked = 0;
  for (const auto& per : p.pers) {
    const auto& head_terms = per.head().args;
    AnswerProbs expected;
    if (per.cond.empty()) {
      expected = oracle_answers(head_terms, per.body, ctx, opt.world_cap);
    } else {
      std::vector<Literal> both = per.body;
      both.insert(both.end(), per.cond.begin(), per.cond.end());
      auto numer = oracle_answers(head_terms, both, ctx, opt.world_cap);
      std::set<std::string> cond_vars;
      for (const auto& l : per.cond)
        for (const auto& t : (l.kind == Literal::Builtin ? std::vector<Term>{l.lhs, l.rhs}
                                                         : l.atom.args))
          if (t.is_var()) cond_vars.insert(t.name);
      std::vector<Term> denom_head;
      std::vector<size_t> denom_pos;
      for (size_t i = 0; i < head_terms.size(); ++i)
        if (head_terms[i].is_var() && cond_vars.count(head_terms[i].name)) {
          bool dup = false;
          for (size_t j : denom_pos) dup = dup || head_terms[j] == head_terms[i];
          if (dup) continue;
          denom_head.push_back(head_terms[i]);
          denom_pos.push_back(i);
        }
      auto denom = oracle_answers(denom_head, per.cond, ctx, opt.world_cap);
      for (const auto& [tuple, pn] : numer) {
        Row key;
        for (size_t j : denom_pos) key.push_back(tuple[j]);
        auto it = denom.find(key);
        if (it == denom.end() || it->second <= 0) continue;
        expected[tuple] = pn / it->second;
      }
    }
    // reified rows carry the probability at the PROB slot
    const auto* rel = b.rel(per.head().pred);
    int pos = per.agg_pos >= 0 ? per.agg_pos : int(head_terms.size());
    for (const auto& [tuple, pe] : expected) {
      Row row = tuple;
      row.insert(row.begin() + pos, Value::real(0));
      double got = -1;
      if (rel)
        for (const auto& r : rel->rows) {
          bool same = r.size() == row.size();
          for (size_t i = 0; same && i < r.size(); ++i)
            if (int(i) != pos && !(r[i] == row[i])) same = false;
          if (same) {
            got = r[size_t(pos)].as_double();
            break;
          }
        }
      if (got < 0) {
        std::cerr << "oracle check: missing reified tuple for " << per.head().pred << "\n";
        return kExitUserError;
      }
      max_delta = std::max(max_delta, std::abs(got - pe));
      ++checked;
    }
  }
  std::cout << "oracle check: " << checked << " tuples across " << p.pers.size()
            << " rules, max |dp| = " << fmt_real(max_delta, precision) << "\n";
  return kExitOk;
}

void print_explain_report(std::ostream& os, const Program& p, const Materialized& mat,
                          const PipelineTrace& tr) {
  os << "rewritten rule set (" << mat.rw.rules.size() << " rules):\n";
  for (size_t i = 0; i < mat.rw.rules.size(); ++i) {
    os << "  " << mat.rw.rules[i].repr() << "\n";
    auto chain = mat.rw.chain(i);
    for (const auto* step : chain)
      if (step->parent >= 0)
        os << "    <- " << step->note << "\n";
  }
  os << "aux rules (" << mat.sp.aux.size() << "):\n";
  for (const auto& r : mat.sp.aux) os << "  " << r.repr() << "\n";
  os << "rest rules (" << mat.sp.rest.size() << "):\n";
  for (const auto& r : mat.sp.rest) os << "  " << r.repr() << "\n";
  (void)p;
  os << tr.render();
  os << "step timings (ms):";
  for (double t : tr.step_ms) os << " " << fmt_real(t, 4);
  os << "\n";
}

int run_command(const std::vector<std::string>& program_paths,
                const std::vector<std::string>& fact_specs, const std::string& query_name,
                bool oracle, bool explain, bool explain_only, uint64_t world_cap,
                size_t circuit_cap, const std::string& format, int precision,
                const std::string& overlay_dir) {
  Program p;
  if (int rc = load_program(program_paths, fact_specs, p)) return rc;

  std::vector<const Query*> queries;
  for (const auto& q : p.queries)
    if (q.name == query_name) queries.push_back(&q);
  if (queries.empty()) {
    std::cerr << "error: no query named '" << query_name << "' in the program\n";
    return kExitUserError;
  }

  PipelineOptions opt;
  opt.prob.world_cap = world_cap;
  opt.prob.circuit_cap = circuit_cap;
  int overlay_count = 0;
  opt.overlay = [&](const std::string& pred, const Row&, const std::vector<Row>& rows) {
    auto name = pred + "_" + std::to_string(overlay_count++) + ".csv";
    auto path = (std::filesystem::path(overlay_dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    for (const auto& r : rows) {
      for (size_t i = 0; i < r.size(); ++i) {
        if (i) out << ",";
        out << csv_cell(fmt_value(r[i], 17));
      }
      out << "\n";
    }
    std::cerr << "wrote overlay artifact " << path << "\n";
    return Value::str(name);
  };

  try {
    for (const auto* q : queries) {
      auto res = answer_query(p, *q, opt);
      if (explain || explain_only) {
        auto mat = materialize(p, opt.rewrite_budget);
        print_explain_report(std::cout, p, mat, res.trace);
      }
      if (!explain_only) print_answers(std::cout, res.answers, format, precision);
    }
    if (oracle) return run_oracle_check(p, opt.prob, precision);
  } catch (const PipelineError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.budget ? kExitBudget : kExitUserError;
  } catch (const ProbError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind == ProbError::CapExceeded || e.kind == ProbError::CircuitBudgetExceeded
               ? kExitBudget
               : kExitUserError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  }
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"probabilistic ontology query answering"};
  app.require_subcommand(1);

  std::vector<std::string> program_paths, fact_specs;
  std::string query_name = "Ans";
  std::string format = "table";
  std::string overlay_dir = ".";
  bool oracle = false, explain = false;
  uint64_t world_cap = kDefaultWorldCap;
  size_t circuit_cap = kDefaultCircuitCap;
  int precision = 6;
  uint64_t seed = 0;

  auto add_run_options = [&](CLI::App* cmd) {
    cmd->add_option("-p,--program", program_paths, "program file(s)")->required();
    cmd->add_option("-d,--data", fact_specs,
                    "fact file binding Pred=path[,csv][,header][,prob][,choice][,uniform=P]");
    cmd->add_option("-q,--query", query_name, "answer-rule head to evaluate (default Ans)");
    cmd->add_option("--seed", seed, "accepted for reproducible scripting; evaluation is "
                                    "deterministic regardless");
    cmd->add_option("--world-cap", world_cap, "max enumerated total choices for the oracle")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--circuit-cap", circuit_cap, "max expansion nodes per compiled query")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--precision", precision, "significant digits for printed floats")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--overlay-dir", overlay_dir, "directory for grouped-output CSV artifacts");
  };

  auto* run = app.add_subcommand("run", "answer a query");
  add_run_options(run);
  run->add_flag("--oracle", oracle, "cross-check reified probabilities against the "
                                    "possible-world oracle");
  run->add_flag("--explain", explain, "print the rewriting and plan report before answers");
  run->add_option("--format", format, "table|csv|json")
      ->check(CLI::IsMember({"table", "csv", "json"}));

  auto* explain_cmd = app.add_subcommand("explain", "print the rewriting and plan report");
  add_run_options(explain_cmd);

  auto* gen = app.add_subcommand("gen", "generate a synthetic meta-analysis fixture");
  SyntheticDatasetSpec spec;
  std::string out_dir = ".";
  gen->add_option("--studies", spec.studies)->check(CLI::PositiveNumber);
  gen->add_option("--terms", spec.terms)->check(CLI::PositiveNumber);
  gen->add_option("--voxels", spec.voxels)->check(CLI::PositiveNumber);
  gen->add_option("--regions", spec.regions)->check(CLI::PositiveNumber);
  gen->add_option("--term-density", spec.term_density);
  gen->add_option("--focus-density", spec.focus_density);
  gen->add_option("--sigma", spec.sigma)->check(CLI::PositiveNumber);
  gen->add_option("--gen-seed,--seed", spec.seed);
  gen->add_option("-o,--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      for (const auto& path : generate_synthetic(spec, out_dir))
        std::cout << path << "\n";
      return kExitOk;
    }
    bool explain_only = explain_cmd->parsed();
    return run_command(program_paths, fact_specs, query_name, oracle,
                       explain || explain_only, explain_only, world_cap, circuit_cap, format,
                       precision, overlay_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  }
}
