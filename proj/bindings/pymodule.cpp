#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "nlq/parser.hpp"
#include "nlq/pipeline.hpp"
#include "nlq/prob.hpp"
#include "nlq/synth.hpp"

namespace py = pybind11;
using namespace nlq;

namespace {

py::object value_to_py(const Value& v) {
  switch (v.kind) {
    case Value::Sym:
    case Value::Str: return py::cast(v.s);
    case Value::Int: return py::cast(v.i);
    case Value::Real: return py::cast(v.d);
    case Value::Null: return py::cast("_:" + std::to_string(v.i));
  }
  return py::none();
}

py::tuple row_to_py(const Row& r) {
  py::tuple t(r.size());
  for (size_t i = 0; i < r.size(); ++i) t[i] = value_to_py(r[i]);
  return t;
}

Program parse_or_raise(const std::string& text) {
  auto r = parse_program({text, "<python>"});
  if (!r.ok()) {
    std::string msg;
    for (const auto& d : r.diagnostics) {
      if (!msg.empty()) msg += "\n";
      msg += d.render();
    }
    throw std::invalid_argument(msg);
  }
  auto report = validate_program(r.program);
  if (!report.ok()) {
    std::string msg;
    for (const auto& v : report.violations) {
      if (!msg.empty()) msg += "\n";
      msg += v.message;
    }
    throw std::invalid_argument(msg);
  }
  return r.program;
}

py::dict run_impl(const std::string& text, const std::string& query, uint64_t world_cap,
                  size_t circuit_cap) {
  Program p = parse_or_raise(text);
  PipelineOptions opt;
  opt.prob.world_cap = world_cap;
  opt.prob.circuit_cap = circuit_cap;

  py::dict out;
  py::list results;
  for (const auto& q : p.queries) {
    if (q.name != query) continue;
    auto r = answer_query(p, q, opt);
    py::dict one;
    one["query"] = q.repr();
    py::list rows;
    for (const auto& row : r.answers.rows) rows.append(row_to_py(row));
    one["rows"] = std::move(rows);
    one["trace"] = py::module_::import("json").attr("loads")(r.trace.to_json());
    one["trace_text"] = r.trace.render();
    results.append(std::move(one));
  }
  if (py::len(results) == 0)
    throw std::invalid_argument("no query named '" + query + "' in the program");
  out["results"] = std::move(results);
  return out;
}

py::dict marginals_impl(const std::string& text, size_t per_index, bool oracle,
                        uint64_t world_cap, size_t circuit_cap) {
  Program p = parse_or_raise(text);
  if (per_index >= p.pers.size())
    throw std::out_of_range("probability rule index out of range");
  const Rule& per = p.pers[per_index];
  if (!per.cond.empty())
    throw std::invalid_argument("conditional rules are answered through run()");

  Model facts;
  for (const auto& a : p.facts_d) facts.insert(a.pred, a.ground_row());
  for (const auto& a : p.facts_d1) facts.insert(a.pred, a.ground_row());
  Model m = seminaive_eval(facts, p.sigma);
  auto ctx = ProbContext::make(m, p.choices, p.chi);

  py::dict out;
  py::dict probs;
  if (oracle) {
    for (const auto& [row, pr] : oracle_answers(per.head().args, per.body, ctx, world_cap))
      probs[row_to_py(row)] = pr;
    out["strategy"] = "oracle";
  } else {
    MarginalOptions opt{world_cap, circuit_cap};
    auto r = marginal_answers(per.head().args, per.body, ctx, opt);
    for (const auto& [row, pr] : r.answers) probs[row_to_py(row)] = pr;
    out["strategy"] = r.strategy;
    out["plan"] = r.plan_text;
  }
  out["head"] = per.head().pred;
  out["probabilities"] = std::move(probs);
  return out;
}

} // namespace

PYBIND11_MODULE(_nlq, m) {
  m.doc() = "probabilistic ontology query answering";

  m.def("run", &run_impl, py::arg("program"), py::arg("query") = "Ans",
        py::arg("world_cap") = kDefaultWorldCap, py::arg("circuit_cap") = kDefaultCircuitCap,
        "Answer every rule named `query` in `program`; returns rows and the "
        "evaluation trace per query.");

  m.def("marginals", &marginals_impl, py::arg("program"), py::arg("per_index") = 0,
        py::arg("oracle") = false, py::arg("world_cap") = kDefaultWorldCap,
        py::arg("circuit_cap") = kDefaultCircuitCap,
        "Marginal probabilities of one unconditional probability rule, via "
        "lifted/compiled inference or the world-enumeration oracle.");

  m.def(
      "generate_dataset",
      [](const std::string& out_dir, int studies, int terms, int voxels, int regions,
         double term_density, double focus_density, double sigma, uint64_t seed) {
        SyntheticDatasetSpec spec{studies, terms, voxels, regions,
                                  term_density, focus_density, sigma, seed};
        return generate_synthetic(spec, out_dir);
      },
      py::arg("out_dir"), py::arg("studies") = 4, py::arg("terms") = 3, py::arg("voxels") = 8,
      py::arg("regions") = 2, py::arg("term_density") = 0.5, py::arg("focus_density") = 0.25,
      py::arg("sigma") = 2.0, py::arg("seed") = 0,
      "Write the synthetic meta-analysis fixture files; returns their paths.");

  py::register_exception<PipelineError>(m, "PipelineError");
}
