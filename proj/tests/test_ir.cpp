#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nlq/ir.hpp"
#include "nlq/parser.hpp"

using namespace nlq;

static Program parse_ok(const std::string& text) {
  auto r = parse_program({text, "<test>"});
  for (const auto& d : r.diagnostics) CAPTURE(d.render());
  REQUIRE(r.ok());
  return r.program;
}

TEST_CASE("value ordering and equality") {
  CHECK(Value::integer(2) == Value::integer(2));
  CHECK(Value::integer(2) != Value::real(2.0)); // distinct kinds in set semantics
  CHECK(Value::sym("a") < Value::sym("b"));
  CHECK(Value::sym("a") != Value::str("a")); // Sym/Str unified at parse, not here
  CHECK(Value::null(1) != Value::null(2));
  CHECK(ValueHash()(Value::sym("x")) == ValueHash()(Value::sym("x")));
}

TEST_CASE("term ground_value folds quoting away") {
  CHECK(Term::constant("a").ground_value() == Value::sym("a"));
  CHECK(Term::str("spatial attention").ground_value() == Value::sym("spatial attention"));
  CHECK(Term::integer(3).ground_value() == Value::integer(3));
  CHECK(Term::real(0.5).ground_value() == Value::real(0.5));
}

TEST_CASE("repr round trips constants with spaces through quotes") {
  Atom a{"Entity", {Term::str("spatial attention"), Term::var("X")}};
  CHECK(a.repr() == "Entity(\"spatial attention\", X)");
  Atom b{"t1", {Term::constant("a")}};
  CHECK(b.repr() == "t1(a)");
}

TEST_CASE("validation accepts a well-formed program") {
  auto prog = parse_ok(R"(
    t2(a). t2(b).
    @existential
    t1(a). t1(c).
    o(X, Z) :- t1(X).
    @deterministic-facts
    t(X) :- t2(X), o(X, Y).
    @probabilistic
    s(a, b) : 0.3.
    s(b, c) : 0.7.
    r(b) : 0.4 | r(c) : 0.1.
    w(X, Y) :- s(X, Y), r(Y).
    Ans(X, Y) :- w(X, Y).
  )");
  auto report = validate_program(prog);
  for (const auto& v : report.violations) CAPTURE(v.message);
  CHECK(report.ok());
  CHECK(prog.facts_d.size() == 2);
  CHECK(prog.facts_d1.size() == 2);
  CHECK(prog.sigma1.size() == 1);
  CHECK(prog.chi.size() == 1);
  CHECK(prog.choices.size() == 3);
  CHECK(prog.queries.size() == 1);
}

TEST_CASE("validation rejects unsafe rules") {
  // head variable bound only by a negated atom
  auto prog = parse_ok("q(X) :- e(a), ~p(X).");
  auto report = validate_program(prog);
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations[0].message.find("X") != std::string::npos);
}

TEST_CASE("unbound head variables make a rule existential") {
  auto prog = parse_ok("q(X, Y) :- p(X).");
  REQUIRE(prog.sigma1.size() == 1);
  CHECK(prog.sigma1[0].cls == RuleClass::Existential);
  CHECK(prog.sigma1[0].existential_vars() == std::vector<std::string>{"Y"});
}

TEST_CASE("validation rejects unbound builtin and negation-only variables") {
  CHECK_FALSE(validate_program(parse_ok("q(X) :- p(X), Y > 1.")).ok());
  CHECK_FALSE(validate_program(parse_ok("q(X) :- p(X), ~r(Y).")).ok());
  CHECK(validate_program(parse_ok("q(X) :- p(X), X > 1.")).ok());
}

TEST_CASE("validation rejects bad probability annotations") {
  // mass above one
  auto p1 = parse_ok("a(x) : 0.6 | a(y) : 0.7.");
  CHECK_FALSE(validate_program(p1).ok());
  // non-ground probabilistic atom is a parse-or-validate error
  auto r2 = parse_program({"a(X) : 0.5.", "<test>"});
  bool rejected = !r2.ok() || !validate_program(r2.program).ok();
  CHECK(rejected);
  // same atom in two constraints
  auto p3 = parse_ok("a(x) : 0.5. a(x) : 0.25.");
  CHECK_FALSE(validate_program(p3).ok());
}

TEST_CASE("validation rejects negation in probabilistic rules") {
  auto prog = parse_ok(R"(
    c(x) : 0.5.
    w(X) :- c(X), ~d(X).
  )");
  CHECK_FALSE(validate_program(prog).ok());
}

TEST_CASE("stratification rejects recursion through negation with a cycle witness") {
  auto prog = parse_ok(R"(
    p(X) :- e(X), ~q(X).
    q(X) :- e(X), p(X).
  )");
  StratificationError err;
  auto rules = prog.sigma;
  auto strat = stratify(rules, &err);
  REQUIRE_FALSE(strat.has_value());
  bool has_p = false, has_q = false;
  for (const auto& pred : err.cycle) {
    if (pred == "p") has_p = true;
    if (pred == "q") has_q = true;
  }
  CHECK(has_p);
  CHECK(has_q);
}

TEST_CASE("stratification layers negation below its consumers") {
  auto prog = parse_ok(R"(
    reach(X, Y) :- edge(X, Y).
    reach(X, Y) :- reach(X, Z), edge(Z, Y).
    unreach(X, Y) :- node(X), node(Y), ~reach(X, Y).
  )");
  auto strat = stratify(prog.sigma, nullptr);
  REQUIRE(strat.has_value());
  CHECK(strat->stratum_of("unreach") > strat->stratum_of("reach"));
}

TEST_CASE("dependency closure follows head to body edges") {
  auto prog = parse_ok(R"(
    a(X) :- b(X).
    b(X) :- c(X), d(X).
    e(X) :- f(X).
  )");
  auto closure = dependency_closure({"a"}, prog.sigma);
  CHECK(closure.count("a"));
  CHECK(closure.count("b"));
  CHECK(closure.count("c"));
  CHECK(closure.count("d"));
  CHECK_FALSE(closure.count("f"));
}

TEST_CASE("aggregate recursion is rejected") {
  auto prog = parse_ok(R"(
    @target v/2
    v(x, 1).
    u(max(W)) :- u(Z), v(X, W).
  )");
  CHECK_FALSE(validate_program(prog).ok());
}
