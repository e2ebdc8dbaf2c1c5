#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace nlq {

// A ground cell in a relation: symbol constant, string, number, or a
// labeled null produced by the chase (never user-written).
struct Value {
  enum Kind : uint8_t { Sym, Str, Int, Real, Null };

  Kind kind = Sym;
  std::string s;  // Sym / Str payload
  int64_t i = 0;  // Int payload, Null id
  double d = 0.0; // Real payload

  static Value sym(std::string name) {
    Value v;
    v.kind = Sym;
    v.s = std::move(name);
    return v;
  }
  static Value str(std::string text) {
    Value v;
    v.kind = Str;
    v.s = std::move(text);
    return v;
  }
  static Value integer(int64_t x) {
    Value v;
    v.kind = Int;
    v.i = x;
    return v;
  }
  static Value real(double x) {
    Value v;
    v.kind = Real;
    v.d = x;
    return v;
  }
  static Value null(int64_t id) {
    Value v;
    v.kind = Null;
    v.i = id;
    return v;
  }

  bool is_numeric() const { return kind == Int || kind == Real; }
  double as_double() const { return kind == Int ? double(i) : d; }

  bool operator==(const Value& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
      case Sym:
      case Str: return s == o.s;
      case Int:
      case Null: return i == o.i;
      case Real: return d == o.d; // bitwise-ish: set semantics over floats
    }
    return false;
  }
  bool operator!=(const Value& o) const { return !(*this == o); }

  bool operator<(const Value& o) const {
    if (kind != o.kind) return kind < o.kind;
    switch (kind) {
      case Sym:
      case Str: return s < o.s;
      case Int:
      case Null: return i < o.i;
      case Real: return d < o.d;
    }
    return false;
  }

  std::string repr() const;
};

using Row = std::vector<Value>;

struct ValueHash {
  size_t operator()(const Value& v) const {
    size_t h = std::hash<int>()(int(v.kind));
    switch (v.kind) {
      case Value::Sym:
      case Value::Str: h ^= std::hash<std::string>()(v.s) + 0x9e3779b9 + (h << 6); break;
      case Value::Int:
      case Value::Null: h ^= std::hash<int64_t>()(v.i) + 0x9e3779b9 + (h << 6); break;
      case Value::Real: h ^= std::hash<double>()(v.d) + 0x9e3779b9 + (h << 6); break;
    }
    return h;
  }
};

struct RowHash {
  size_t operator()(const Row& r) const {
    size_t h = r.size();
    ValueHash vh;
    for (const auto& v : r) h = h * 1000003u ^ vh(v);
    return h;
  }
};

} // namespace nlq
