#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "nlq/parser.hpp"

using namespace nlq;

static ParseResult parse(const std::string& text) { return parse_program({text, "<test>"}); }

static Program parse_ok(const std::string& text) {
  auto r = parse(text);
  for (const auto& d : r.diagnostics) CAPTURE(d.render());
  REQUIRE(r.ok());
  return r.program;
}

TEST_CASE("facts, probabilistic facts, annotated disjunctions") {
  auto p = parse_ok(R"(
    edge(a, b).          # plain fact
    cost(a, 3).
    weight(a, 0.5).
    s(a, b) : 0.3.
    r(b) : 0.4 | r(c) : 0.1.
  )");
  CHECK(p.facts_d.size() == 3);
  REQUIRE(p.choices.size() == 2);
  CHECK(p.choices[0].alternatives.size() == 1);
  REQUIRE(p.choices[1].alternatives.size() == 2);
  CHECK(p.choices[1].alternatives[0].second == doctest::Approx(0.4));
  CHECK(p.choices[1].bottom_mass() == doctest::Approx(0.5));
  CHECK(p.is_probabilistic("s"));
  CHECK(p.is_probabilistic("r"));
  CHECK_FALSE(p.is_probabilistic("edge"));
}

TEST_CASE("fractional probabilities") {
  auto p = parse_ok("pick(a) : 1/3 | pick(b) : 1/3 | pick(c) : 1/3.");
  REQUIRE(p.choices.size() == 1);
  CHECK(p.choices[0].alternatives[0].second == doctest::Approx(1.0 / 3));
  CHECK(p.choices[0].bottom_mass() == doctest::Approx(0.0));
}

TEST_CASE("rule classes follow probabilistic and target dependency closure") {
  auto p = parse_ok(R"(
    t2(a).
    t(X) :- t2(X), o(X, Y).
    s(a, b) : 0.3.
    w(X, Y) :- s(X, Y), t(X).
    v(X, PROB) :- w(X, Y).
    u(max(W)) :- v(X, W).
  )");
  CHECK(p.sigma.size() == 1);
  REQUIRE(p.chi.size() == 1);
  CHECK(p.chi[0].head().pred == "w");
  REQUIRE(p.pers.size() == 1);
  CHECK(p.pers[0].head().pred == "v");
  CHECK(p.pers[0].head().args.size() == 1); // PROB slot is implicit
  REQUIRE(p.aggs.size() == 1);
  CHECK(p.aggs[0].agg->func == AggFunc::Max);
  // declared arities include the distinguished slots
  CHECK(p.decl("v")->arity == 2);
  CHECK(p.decl("v")->cls == SchemaClass::Target);
  CHECK(p.decl("u")->arity == 1);
}

TEST_CASE("existential section and conjunctive heads") {
  auto p = parse_ok(R"(
    @existential
    t1(a).
    o(X, Z) :- t1(X).
    PartOf(X, Y) & VisualAwareness(Y) :- SpatialAttention(X).
  )");
  CHECK(p.facts_d1.size() == 1);
  REQUIRE(p.sigma1.size() == 2);
  CHECK(p.sigma1[0].existential_vars() == std::vector<std::string>{"Z"});
  REQUIRE(p.sigma1[1].heads.size() == 2);
  CHECK(p.sigma1[1].existential_vars() == std::vector<std::string>{"Y"});
}

TEST_CASE("PER rules with conditioning and PROB placement") {
  auto p = parse_ok(R"(
    Activation(i, j, k) : 0.5.
    TermInStudy(t, s) : 0.8.
    TermAssociation(T) :- TermInStudy(T, S).
    ProbMap(I, J, K, PROB) :- Activation(I, J, K) // TermAssociation("emotion").
  )");
  REQUIRE(p.pers.size() == 1);
  const Rule& per = p.pers[0];
  CHECK(per.cls == RuleClass::Per);
  REQUIRE(per.cond.size() == 1);
  CHECK(per.cond[0].atom.pred == "TermAssociation");
  CHECK(per.cond[0].atom.args[0] == Term::str("emotion"));

  // PROB anywhere but last is rejected
  CHECK_FALSE(parse("Bad(PROB, X) :- p(X).").ok());
  // // without PROB is rejected
  CHECK_FALSE(parse("Bad(X) :- p(X) // q(X).").ok());
}

TEST_CASE("aggregation heads") {
  auto p = parse_ok(R"(
    @target TermProbability/2
    TermProbability(t, 0.5).
    Percentile_95(compute_percentile(P, 95)) :- TermProbability(T, P).
    Counts(X, count(S)) :- Entity(X, S).
    Image(create_region_overlay(I, J, K, P)) :- ProbMap(I, J, K, P).
  )");
  REQUIRE(p.aggs.size() == 3);
  CHECK(p.aggs[0].agg->func == AggFunc::Percentile);
  CHECK(p.aggs[0].agg->param == doctest::Approx(95));
  CHECK(p.aggs[1].agg->func == AggFunc::Count);
  CHECK(p.aggs[1].agg_pos == 1);
  CHECK(p.aggs[2].agg->func == AggFunc::Overlay);
  CHECK(p.aggs[2].agg->vars.size() == 4);
}

TEST_CASE("negation, builtins, and comparison operators") {
  auto p = parse_ok(R"(
    q(X) :- p(X), ~r(X), X > 1, X != 3.
    s(X) :- p(X) & r(X).
  )");
  REQUIRE(p.sigma.size() == 2);
  const auto& body = p.sigma[0].body;
  REQUIRE(body.size() == 4);
  CHECK(body[1].kind == Literal::Negative);
  CHECK(body[2].kind == Literal::Builtin);
  CHECK(body[2].op == CmpOp::Gt);
  CHECK(body[3].op == CmpOp::Ne);
  CHECK(p.sigma[1].body.size() == 2);
}

TEST_CASE("body disjunction desugars to one rule per alternative") {
  auto p = parse_ok("q(X) :- a(X) | b(X), c(X).");
  REQUIRE(p.sigma.size() == 2);
  CHECK(p.sigma[0].body[0].atom.pred == "a");
  CHECK(p.sigma[1].body[0].atom.pred == "b");
  CHECK(p.sigma[0].body[1].atom.pred == "c");
}

TEST_CASE("~exists desugars to a negated auxiliary predicate") {
  auto p = parse_ok(R"(
    Seg(T, R) :- Reported(T, R, S), ~exists(R2, Reported(T, R2, S), R2 != R).
  )");
  REQUIRE(p.sigma.size() == 2); // the main rule and the aux rule
  const Rule* main_rule = nullptr;
  const Rule* aux_rule = nullptr;
  for (const auto& r : p.sigma)
    (r.head().pred == "Seg" ? main_rule : aux_rule) = &r;
  REQUIRE(main_rule);
  REQUIRE(aux_rule);
  REQUIRE(main_rule->body.size() == 2);
  CHECK(main_rule->body[1].kind == Literal::Negative);
  CHECK(main_rule->body[1].atom.pred == aux_rule->head().pred);
  // aux body re-asserts the outer positive context plus the inner conjunction
  bool has_inner = false;
  for (const auto& l : aux_rule->body)
    if (l.kind == Literal::Builtin && l.op == CmpOp::Ne) has_inner = true;
  CHECK(has_inner);
}

TEST_CASE("queries are collected from Ans heads") {
  auto p = parse_ok(R"(
    q(a).
    Ans(X) :- q(X).
    ans(X, Y) :- q(X), q(Y).
  )");
  REQUIRE(p.queries.size() == 2);
  CHECK(p.queries[0].head.size() == 1);
  CHECK(p.queries[1].body.size() == 2);
}

TEST_CASE("target marker declares arity and class") {
  auto p = parse_ok("@target v/3\nq(a).");
  REQUIRE(p.decl("v"));
  CHECK(p.decl("v")->arity == 3);
  CHECK(p.decl("v")->cls == SchemaClass::Target);
}

TEST_CASE("errors recover per statement and report lines") {
  auto r = parse("q(X :- p(X).\nok(a).\nq(1 ~ 2).\nalso(b).");
  CHECK_FALSE(r.ok());
  CHECK(r.diagnostics.size() >= 2);
  // statements after an error still parse
  CHECK(r.program.facts_d.size() == 2);
  for (const auto& d : r.diagnostics) CHECK(d.line >= 1);
}

TEST_CASE("arity conflicts are diagnosed") {
  auto r = parse("p(a). p(a, b).");
  CHECK_FALSE(r.ok());
}

TEST_CASE("round trip: parse(repr(p)) == p") {
  const char* samples[] = {
      R"(
        edge(a, b).
        s(a, b) : 0.3.
        r(b) : 0.4 | r(c) : 0.1.
        t(X) :- t2(X), o(X, Y), X != b.
        w(X, Y) :- s(X, Y), r(Y).
        v(X, PROB) :- w(X, Y).
        u(max(W)) :- v(X, W).
        Ans(X) :- u(X).
      )",
      R"(
        @existential
        o(X, Z) :- t1(X).
        @deterministic-facts
        p(a). q("two words", 3, 0.25).
        m(X) :- q(X, Y, Z) | p(X), X > 0.
        n(X) :- p(X), ~q(X, X, X).
      )",
  };
  for (const char* s : samples) {
    auto p1 = parse_ok(s);
    std::string printed = p1.repr();
    CAPTURE(printed);
    auto p2 = parse_ok(printed);
    CHECK(p1.facts_d == p2.facts_d);
    CHECK(p1.facts_d1 == p2.facts_d1);
    CHECK(p1.sigma == p2.sigma);
    CHECK(p1.sigma1 == p2.sigma1);
    CHECK(p1.chi == p2.chi);
    CHECK(p1.pers.size() == p2.pers.size());
    for (size_t i = 0; i < p1.pers.size(); ++i) {
      CHECK(p1.pers[i] == p2.pers[i]);
      CHECK(p1.pers[i].cond == p2.pers[i].cond);
    }
    CHECK(p1.aggs.size() == p2.aggs.size());
    REQUIRE(p1.choices.size() == p2.choices.size());
    for (size_t i = 0; i < p1.choices.size(); ++i) {
      REQUIRE(p1.choices[i].alternatives.size() == p2.choices[i].alternatives.size());
      for (size_t j = 0; j < p1.choices[i].alternatives.size(); ++j) {
        CHECK(p1.choices[i].alternatives[j].first == p2.choices[i].alternatives[j].first);
        CHECK(p1.choices[i].alternatives[j].second ==
              doctest::Approx(p2.choices[i].alternatives[j].second));
      }
    }
  }
}

TEST_CASE("round trip property on random programs") {
  std::mt19937 rng(7);
  auto pred = [&](int n) { return std::string(1, char('p' + n % 4)); };
  for (int iter = 0; iter < 60; ++iter) {
    std::ostringstream src;
    int nstmt = 1 + int(rng() % 5);
    for (int s = 0; s < nstmt; ++s) {
      int kind = int(rng() % 3);
      if (kind == 0) {
        src << pred(int(rng() % 4)) << "(c" << rng() % 3 << ", " << rng() % 5 << ").\n";
      } else if (kind == 1) {
        src << "h" << rng() % 2 << "(X) :- " << pred(int(rng() % 4)) << "(X, Y)";
        if (rng() % 2) src << ", ~" << pred(int(rng() % 4)) << "(X, X)";
        if (rng() % 2) src << ", Y >= " << rng() % 4;
        src << ".\n";
      } else {
        src << "pc" << s << "(a) : 0." << 1 + rng() % 8 << ".\n";
      }
    }
    auto p1 = parse_ok(src.str());
    auto p2 = parse_ok(p1.repr());
    CAPTURE(src.str());
    CAPTURE(p1.repr());
    CHECK(p1.facts_d == p2.facts_d);
    CHECK(p1.sigma == p2.sigma);
    CHECK(p1.chi == p2.chi);
    CHECK(p1.choices.size() == p2.choices.size());
    CHECK(p1.repr() == p2.repr());
  }
}

TEST_CASE("fact files: tsv, csv, prob column, choice group") {
  PredicateDecl det{"edge", 2, SchemaClass::Deterministic};
  {
    std::istringstream in("a\tb\nb\tc\n");
    auto r = parse_fact_file(in, det, {});
    REQUIRE(r.ok());
    REQUIRE(r.facts.size() == 2);
    CHECK(r.facts[0].pred == "edge");
    CHECK(r.facts[0].args[0] == Term::str("a"));
  }
  {
    std::istringstream in("x,y\n1,2.5\n");
    FactFileOptions opt;
    opt.csv = true;
    opt.header = true;
    auto r = parse_fact_file(in, det, opt);
    REQUIRE(r.ok());
    REQUIRE(r.facts.size() == 1);
    CHECK(r.facts[0].args[0] == Term::integer(1));
    CHECK(r.facts[0].args[1] == Term::real(2.5));
  }
  PredicateDecl prob{"TermInStudy", 2, SchemaClass::Probabilistic};
  {
    std::istringstream in("emotion\ts1\t0.8\nfear\ts1\t0.6\n");
    FactFileOptions opt;
    opt.has_prob_column = true;
    auto r = parse_fact_file(in, prob, opt);
    REQUIRE(r.ok());
    CHECK(r.facts.empty());
    REQUIRE(r.choices.size() == 2); // independent singleton choices
    CHECK(r.choices[0].alternatives[0].second == doctest::Approx(0.8));
  }
  PredicateDecl sel{"SelectedStudy", 1, SchemaClass::Probabilistic};
  {
    std::istringstream in("s1\ns2\ns3\ns4\n");
    FactFileOptions opt;
    opt.choice_group = true;
    opt.uniform_prob = 0.25;
    auto r = parse_fact_file(in, sel, opt);
    REQUIRE(r.ok());
    REQUIRE(r.choices.size() == 1);
    CHECK(r.choices[0].alternatives.size() == 4);
    CHECK(r.choices[0].bottom_mass() == doctest::Approx(0.0));
  }
  {
    std::istringstream in("a\tnot_a_number\n");
    FactFileOptions opt;
    opt.has_prob_column = true;
    auto r = parse_fact_file(in, prob, opt);
    CHECK_FALSE(r.ok());
  }
  {
    std::istringstream in("a\tb\tc\n");
    auto r = parse_fact_file(in, det, {});
    CHECK_FALSE(r.ok()); // arity mismatch
  }
}
