#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "nlq/ir.hpp"

namespace nlq {

struct SourceProgram {
  std::string text;
  std::string origin = "<repl>";
};

struct ParseDiagnostic {
  enum Severity { Error, Warning } severity = Error;
  std::string message;
  int line = 0;
  int column = 0;
  std::string render(const std::string& origin = "") const;
};

struct ParseResult {
  Program program;
  std::vector<ParseDiagnostic> diagnostics;
  bool ok() const {
    for (const auto& d : diagnostics)
      if (d.severity == ParseDiagnostic::Error) return false;
    return true;
  }
};

// Parses the surface dialect: facts, annotated disjunctions, rules with
// builtins / negation / ~exists / body disjunction, PER rules with PROB and
// // conditioning, aggregation heads, and @-section markers. Independent
// statements keep parsing after an error.
ParseResult parse_program(const SourceProgram& src);

struct FactFileOptions {
  bool csv = false;          // default TSV
  bool header = false;       // skip one header row
  bool choice_group = false; // collapse all rows into one annotated disjunction
  bool has_prob_column = false; // trailing numeric probability column
  double uniform_prob = 0;   // >0: assign this probability to every row
};

struct FactFileResult {
  std::vector<Atom> facts;        // deterministic rows
  std::vector<ProbChoice> choices; // probabilistic rows
  std::vector<ParseDiagnostic> diagnostics;
  bool ok() const {
    for (const auto& d : diagnostics)
      if (d.severity == ParseDiagnostic::Error) return false;
    return true;
  }
};

FactFileResult parse_fact_file(std::istream& in, const PredicateDecl& decl,
                               const FactFileOptions& options);

} // namespace nlq
