#pragma once

// Test-only bounded chase: universal-model construction for (D, Sigma u
// Sigma_1) with memoized labeled nulls, used to cross-check the rewriter.

#include <map>
#include <string>
#include <vector>

#include "nlq/engine.hpp"
#include "nlq/ir.hpp"

namespace nlq::testutil {

inline Model bounded_chase(const Model& facts, const std::vector<Rule>& rules, int depth = 4) {
  Model m = facts;
  int64_t next_null = 1;
  // semi-oblivious: one null vector per (rule, frontier binding)
  std::map<std::string, std::map<std::string, Value>> memo;

  for (int round = 0; round < depth; ++round) {
    std::vector<std::pair<std::string, Row>> derived;
    for (size_t ri = 0; ri < rules.size(); ++ri) {
      const Rule& r = rules[ri];
      auto ex = r.existential_vars();
      match_conjunction(m, r.body, [&](const Binding& b) {
        std::string key = std::to_string(ri);
        for (const auto& [v, val] : b) key += "|" + v + "=" + val.repr();
        auto& nulls = memo[key];
        for (const auto& h : r.heads) {
          Row row;
          for (const auto& t : h.args) {
            if (!t.is_var()) {
              row.push_back(t.ground_value());
            } else if (b.count(t.name)) {
              row.push_back(b.at(t.name));
            } else {
              auto it = nulls.find(t.name);
              if (it == nulls.end()) it = nulls.emplace(t.name, Value::null(next_null++)).first;
              row.push_back(it->second);
            }
          }
          derived.emplace_back(h.pred, std::move(row));
        }
        return true;
      });
    }
    bool changed = false;
    for (auto& [pred, row] : derived)
      if (m.insert(pred, std::move(row))) changed = true;
    if (!changed) break;
  }
  return m;
}

// ground (null-free) rows of one predicate: the certain atomic answers
inline std::set<Row> certain_rows(const Model& m, const std::string& pred) {
  std::set<Row> out;
  if (const Relation* r = m.rel(pred)) {
    for (const auto& row : r->rows) {
      bool ground = true;
      for (const auto& v : row)
        if (v.kind == Value::Null) ground = false;
      if (ground) out.insert(row);
    }
  }
  return out;
}

} // namespace nlq::testutil
