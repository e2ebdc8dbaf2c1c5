#include "nlq/parser.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <set>
#include <sstream>

namespace nlq {

std::string ParseDiagnostic::render(const std::string& origin) const {
  std::ostringstream os;
  if (!origin.empty()) os << origin << ":";
  os << line << ":" << column << ": "
     << (severity == Error ? "error: " : "warning: ") << message;
  return os.str();
}

namespace {

// ---------------------------------------------------------------------------
// Lexer

struct Token {
  enum Type {
    Ident,    // bare identifier
    Number,   // integer or real
    String,   // quoted
    Marker,   // @word
    LParen, RParen, Comma, Dot, Pipe, Amp, Tilde, Colon, ColonDash,
    Slash, DoubleSlash,
    Lt, Le, Gt, Ge, EqEq, Ne,
    End, Bad
  } type = End;
  std::string text;
  int64_t int_val = 0;
  double real_val = 0;
  bool is_real = false;
  int line = 1, col = 1;
};

struct Lexer {
  const std::string& src;
  size_t pos = 0;
  int line = 1, col = 1;
  std::vector<ParseDiagnostic>& diags;

  Lexer(const std::string& s, std::vector<ParseDiagnostic>& d) : src(s), diags(d) {}

  char peek(size_t off = 0) const { return pos + off < src.size() ? src[pos + off] : '\0'; }
  char advance() {
    char c = src[pos++];
    if (c == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
    return c;
  }

  void skip_ws() {
    while (pos < src.size()) {
      char c = peek();
      if (c == '#') {
        while (pos < src.size() && peek() != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  Token next() {
    skip_ws();
    Token t;
    t.line = line;
    t.col = col;
    if (pos >= src.size()) return t;
    char c = peek();

    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::string s;
      while (pos < src.size() &&
             (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_'))
        s += advance();
      t.type = Token::Ident;
      t.text = std::move(s);
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
      std::string s;
      if (c == '-') s += advance();
      while (std::isdigit(static_cast<unsigned char>(peek()))) s += advance();
      if (peek() == '.' && std::isdigit(static_cast<unsigned char>(peek(1)))) {
        s += advance();
        while (std::isdigit(static_cast<unsigned char>(peek()))) s += advance();
        if (peek() == 'e' || peek() == 'E') {
          s += advance();
          if (peek() == '+' || peek() == '-') s += advance();
          while (std::isdigit(static_cast<unsigned char>(peek()))) s += advance();
        }
        t.is_real = true;
        t.real_val = std::stod(s);
      } else {
        t.int_val = std::stoll(s);
        t.real_val = double(t.int_val);
      }
      t.type = Token::Number;
      t.text = std::move(s);
      return t;
    }
    if (c == '"' || c == '\'') {
      char quote = advance();
      std::string s;
      while (pos < src.size() && peek() != quote && peek() != '\n') s += advance();
      if (peek() == quote) {
        advance();
      } else {
        diags.push_back({ParseDiagnostic::Error, "unterminated string literal", t.line, t.col});
      }
      t.type = Token::String;
      t.text = std::move(s);
      return t;
    }
    if (c == '@') {
      advance();
      std::string s;
      while (pos < src.size() &&
             (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
              peek() == '-'))
        s += advance();
      t.type = Token::Marker;
      t.text = std::move(s);
      return t;
    }

    advance();
    switch (c) {
      case '(': t.type = Token::LParen; return t;
      case ')': t.type = Token::RParen; return t;
      case ',': t.type = Token::Comma; return t;
      case '.': t.type = Token::Dot; return t;
      case '|': t.type = Token::Pipe; return t;
      case '&': t.type = Token::Amp; return t;
      case '~': t.type = Token::Tilde; return t;
      case ':':
        if (peek() == '-') {
          advance();
          t.type = Token::ColonDash;
        } else {
          t.type = Token::Colon;
        }
        return t;
      case '/':
        if (peek() == '/') {
          advance();
          t.type = Token::DoubleSlash;
        } else {
          t.type = Token::Slash;
        }
        return t;
      case '<':
        if (peek() == '=') {
          advance();
          t.type = Token::Le;
        } else {
          t.type = Token::Lt;
        }
        return t;
      case '>':
        if (peek() == '=') {
          advance();
          t.type = Token::Ge;
        } else {
          t.type = Token::Gt;
        }
        return t;
      case '=':
        if (peek() == '=') {
          advance();
          t.type = Token::EqEq;
          return t;
        }
        break;
      case '!':
        if (peek() == '=') {
          advance();
          t.type = Token::Ne;
          return t;
        }
        break;
    }
    t.type = Token::Bad;
    t.text = std::string(1, c);
    return t;
  }
};

// ---------------------------------------------------------------------------
// Parsed intermediate forms (before desugaring / classification)

struct ExistsBlock {
  std::vector<std::string> vars;
  std::vector<Literal> inner;
};

struct PLiteral {
  // exactly one of {lit, exists} is meaningful
  bool is_exists = false;
  Literal lit;
  ExistsBlock exists;
};

// one body unit: list of disjunctive alternatives, each a conjunction
using Unit = std::vector<std::vector<PLiteral>>;

enum class Mode { Default, Existential, Probabilistic };

struct PClause {
  std::vector<Atom> heads;
  bool is_per = false;
  std::optional<AggSpec> agg;
  int agg_pos = -1;
  std::vector<Unit> body;
  std::vector<Unit> cond;
  Mode mode = Mode::Default;
  int line = 0;
};

struct PFact {
  std::vector<std::pair<Atom, double>> alts; // one entry = plain fact
  bool probabilistic = false;
  Mode mode = Mode::Default;
  int line = 0;
};

struct Parser {
  std::vector<Token> toks;
  size_t ti = 0;
  std::vector<ParseDiagnostic>& diags;

  std::vector<PClause> clauses;
  std::vector<PFact> facts;
  std::map<std::string, PredicateDecl> decls;
  Mode mode = Mode::Default;

  explicit Parser(std::vector<ParseDiagnostic>& d) : diags(d) {}

  const Token& cur() const { return toks[ti]; }
  const Token& peek(size_t off = 1) const {
    return toks[std::min(ti + off, toks.size() - 1)];
  }
  const Token& eat() { return toks[std::min(ti++, toks.size() - 1)]; }
  bool at(Token::Type t) const { return cur().type == t; }
  bool accept(Token::Type t) {
    if (!at(t)) return false;
    ++ti;
    return true;
  }
  void error(const std::string& msg) {
    diags.push_back({ParseDiagnostic::Error, msg, cur().line, cur().col});
  }
  void error_at(const Token& t, const std::string& msg) {
    diags.push_back({ParseDiagnostic::Error, msg, t.line, t.col});
  }

  // skip to the next statement boundary after an error
  void synchronize() {
    while (!at(Token::End) && !at(Token::Marker)) {
      if (accept(Token::Dot)) return;
      ++ti;
    }
  }

  static bool is_variable_name(const std::string& s) {
    return !s.empty() && (std::isupper(static_cast<unsigned char>(s[0])) || s[0] == '_');
  }

  std::optional<Term> parse_term() {
    if (at(Token::Ident)) {
      const auto& t = eat();
      if (is_variable_name(t.text)) return Term::var(t.text);
      return Term::constant(t.text);
    }
    if (at(Token::Number)) {
      const auto& t = eat();
      return t.is_real ? Term::real(t.real_val) : Term::integer(t.int_val);
    }
    if (at(Token::String)) return Term::str(eat().text);
    error("expected a term");
    return std::nullopt;
  }

  // atom in body position: Pred(t1, ..., tn)
  std::optional<Atom> parse_atom() {
    if (!at(Token::Ident)) {
      error("expected a predicate name");
      return std::nullopt;
    }
    Atom a;
    a.pred = eat().text;
    if (!accept(Token::LParen)) {
      error("expected '(' after predicate " + a.pred);
      return std::nullopt;
    }
    if (!accept(Token::RParen)) {
      do {
        auto t = parse_term();
        if (!t) return std::nullopt;
        a.args.push_back(*t);
      } while (accept(Token::Comma));
      if (!accept(Token::RParen)) {
        error("expected ')' in atom " + a.pred);
        return std::nullopt;
      }
    }
    return a;
  }

  std::optional<CmpOp> cmp_at_cursor() const {
    switch (cur().type) {
      case Token::Lt: return CmpOp::Lt;
      case Token::Le: return CmpOp::Le;
      case Token::Gt: return CmpOp::Gt;
      case Token::Ge: return CmpOp::Ge;
      case Token::EqEq: return CmpOp::Eq;
      case Token::Ne: return CmpOp::Ne;
      default: return std::nullopt;
    }
  }

  // one conjunct: atom, ~atom, ~exists(...), builtin, or parenthesized group
  bool parse_pliteral_seq(std::vector<PLiteral>& out);

  std::optional<Unit> parse_unit() {
    Unit unit;
    if (accept(Token::LParen)) {
      // parenthesized group: conjunctions separated by '|'
      do {
        std::vector<PLiteral> conj;
        if (!parse_pliteral_seq(conj)) return std::nullopt;
        unit.push_back(std::move(conj));
      } while (accept(Token::Pipe));
      if (!accept(Token::RParen)) {
        error("expected ')'");
        return std::nullopt;
      }
      return unit;
    }

    PLiteral pl;
    if (accept(Token::Tilde)) {
      if (at(Token::Ident) && cur().text == "exists" && peek().type == Token::LParen) {
        eat();
        eat(); // exists (
        // leading variables, then inner literals
        while (at(Token::Ident) && is_variable_name(cur().text) &&
               peek().type == Token::Comma) {
          pl.exists.vars.push_back(eat().text);
          eat(); // comma
        }
        if (pl.exists.vars.empty()) {
          error("~exists requires at least one quantified variable");
          return std::nullopt;
        }
        do {
          std::vector<PLiteral> inner;
          if (!parse_pliteral_seq(inner)) return std::nullopt;
          for (auto& i : inner) {
            if (i.is_exists) {
              error("nested ~exists is not supported");
              return std::nullopt;
            }
            pl.exists.inner.push_back(std::move(i.lit));
          }
        } while (accept(Token::Comma) || accept(Token::Amp));
        if (!accept(Token::RParen)) {
          error("expected ')' closing ~exists");
          return std::nullopt;
        }
        pl.is_exists = true;
        unit.push_back({std::move(pl)});
        return unit;
      }
      auto a = parse_atom();
      if (!a) return std::nullopt;
      pl.lit = Literal::neg(std::move(*a));
      unit.push_back({std::move(pl)});
      return unit;
    }

    // builtin: term op term (lookahead: next token is not '(')
    if ((at(Token::Ident) && peek().type != Token::LParen) || at(Token::Number) ||
        at(Token::String)) {
      auto lhs = parse_term();
      if (!lhs) return std::nullopt;
      auto op = cmp_at_cursor();
      if (!op) {
        error("expected comparison operator");
        return std::nullopt;
      }
      eat();
      auto rhs = parse_term();
      if (!rhs) return std::nullopt;
      pl.lit = Literal::builtin(*op, std::move(*lhs), std::move(*rhs));
      unit.push_back({std::move(pl)});
      return unit;
    }

    auto a = parse_atom();
    if (!a) return std::nullopt;
    // allow top-level disjunction between plain atoms
    if (at(Token::Pipe)) {
      unit.push_back({PLiteral{false, Literal::pos(std::move(*a)), {}}});
      while (accept(Token::Pipe)) {
        auto b = parse_atom();
        if (!b) return std::nullopt;
        unit.push_back({PLiteral{false, Literal::pos(std::move(*b)), {}}});
      }
      return unit;
    }
    pl.lit = Literal::pos(std::move(*a));
    unit.push_back({std::move(pl)});
    return unit;
  }

  bool parse_body(std::vector<Unit>& body, std::vector<Unit>& cond) {
    bool in_cond = false;
    for (;;) {
      auto u = parse_unit();
      if (!u) return false;
      (in_cond ? cond : body).push_back(std::move(*u));
      if (accept(Token::Comma) || accept(Token::Amp)) continue;
      if (at(Token::DoubleSlash)) {
        if (in_cond) {
          error("multiple '//' separators in one rule");
          return false;
        }
        eat();
        in_cond = true;
        continue;
      }
      break;
    }
    return true;
  }

  // head atom, recognizing PROB arguments and aggregation slots
  bool parse_head(PClause& c) {
    do {
      if (!at(Token::Ident)) {
        error("expected a head predicate");
        return false;
      }
      Atom h;
      h.pred = eat().text;
      if (!accept(Token::LParen)) {
        error("expected '(' in head of " + h.pred);
        return false;
      }
      int pos = 0;
      int prob_pos = -1;
      if (!accept(Token::RParen)) {
        do {
          if (at(Token::Ident) && cur().text == "PROB") {
            eat();
            if (c.is_per) {
              error("PROB may appear only once in a head");
              return false;
            }
            c.is_per = true;
            prob_pos = pos;
            // PROB is the distinguished trailing slot; not stored as an arg
          } else if (at(Token::Ident) && peek().type == Token::LParen &&
                     agg_func_from_name(cur().text)) {
            if (c.agg) {
              error("at most one aggregation slot per head");
              return false;
            }
            AggSpec spec;
            spec.func = *agg_func_from_name(eat().text);
            eat(); // (
            do {
              if (at(Token::Number) && spec.func == AggFunc::Percentile) {
                const auto& n = eat();
                spec.param = n.real_val;
              } else {
                auto t = parse_term();
                if (!t) return false;
                if (!t->is_var()) {
                  error("aggregation arguments must be variables");
                  return false;
                }
                spec.vars.push_back(std::move(*t));
              }
            } while (accept(Token::Comma));
            if (!accept(Token::RParen)) {
              error("expected ')' closing aggregation");
              return false;
            }
            if (spec.vars.empty()) {
              error("aggregation needs a variable argument");
              return false;
            }
            if (spec.func != AggFunc::Overlay && spec.vars.size() != 1) {
              error("aggregation takes a single variable");
              return false;
            }
            c.agg = std::move(spec);
            c.agg_pos = pos;
          } else {
            auto t = parse_term();
            if (!t) return false;
            h.args.push_back(std::move(*t));
          }
          ++pos;
        } while (accept(Token::Comma));
        if (!accept(Token::RParen)) {
          error("expected ')' in head of " + h.pred);
          return false;
        }
      }
      if (c.is_per && c.agg) {
        error("a head cannot mix PROB and aggregation");
        return false;
      }
      if (c.is_per && prob_pos != pos - 1) {
        error("PROB must be the last head argument");
        return false;
      }
      c.heads.push_back(std::move(h));
    } while (accept(Token::Amp));
    return true;
  }

  void parse_marker() {
    const Token& m = eat();
    if (m.text == "existential") {
      mode = Mode::Existential;
    } else if (m.text == "deterministic-facts") {
      mode = Mode::Default;
    } else if (m.text == "probabilistic") {
      mode = Mode::Probabilistic;
    } else if (m.text == "target") {
      if (!at(Token::Ident)) {
        error("expected predicate name after @target");
        return;
      }
      std::string name = eat().text;
      if (!accept(Token::Slash) || !at(Token::Number)) {
        error("expected /arity after @target " + name);
        return;
      }
      int arity = int(eat().int_val);
      decls[name] = {name, arity, SchemaClass::Target};
    } else {
      error_at(m, "unknown section marker @" + m.text);
    }
  }

  // probability literal: number, possibly number '/' number
  std::optional<double> parse_probability() {
    if (!at(Token::Number)) {
      error("expected a probability");
      return std::nullopt;
    }
    const Token& n = eat();
    double p = n.real_val;
    if (!n.is_real && accept(Token::Slash)) {
      if (!at(Token::Number)) {
        error("expected denominator");
        return std::nullopt;
      }
      const Token& d = eat();
      if (d.real_val == 0) {
        error("zero denominator in probability");
        return std::nullopt;
      }
      p = double(n.int_val) / d.real_val;
    }
    return p;
  }

  void parse_statement() {
    if (at(Token::Marker)) {
      parse_marker();
      return;
    }
    int stmt_line = cur().line;

    PClause c;
    c.mode = mode;
    c.line = stmt_line;
    if (!parse_head(c)) {
      synchronize();
      return;
    }

    if (accept(Token::ColonDash)) {
      if (at(Token::Dot)) {
        error("empty rule body");
        synchronize();
        return;
      }
      if (!parse_body(c.body, c.cond)) {
        synchronize();
        return;
      }
      if (!accept(Token::Dot)) error("expected '.' at end of rule");
      if (!c.cond.empty() && !c.is_per)
        error("'//' conditioning is only valid in a rule with a PROB head");
      clauses.push_back(std::move(c));
      return;
    }

    // fact or annotated disjunction
    if (c.heads.size() != 1 || c.is_per || c.agg) {
      error("malformed fact");
      synchronize();
      return;
    }
    PFact f;
    f.mode = mode;
    f.line = stmt_line;
    if (accept(Token::Colon)) {
      f.probabilistic = true;
      auto p = parse_probability();
      if (!p) {
        synchronize();
        return;
      }
      f.alts.emplace_back(std::move(c.heads[0]), *p);
      while (accept(Token::Pipe)) {
        auto a = parse_atom();
        if (!a || !accept(Token::Colon)) {
          error("expected atom : probability");
          synchronize();
          return;
        }
        auto pi = parse_probability();
        if (!pi) {
          synchronize();
          return;
        }
        f.alts.emplace_back(std::move(*a), *pi);
      }
    } else {
      f.probabilistic = (mode == Mode::Probabilistic);
      f.alts.emplace_back(std::move(c.heads[0]), 1.0);
    }
    if (!accept(Token::Dot)) error("expected '.' at end of fact");
    facts.push_back(std::move(f));
  }

  void run(const std::string& text) {
    Lexer lex(text, diags);
    for (;;) {
      Token t = lex.next();
      bool end = t.type == Token::End;
      if (t.type == Token::Bad)
        diags.push_back(
            {ParseDiagnostic::Error, "unexpected character '" + t.text + "'", t.line, t.col});
      toks.push_back(std::move(t));
      if (end) break;
    }
    while (!at(Token::End)) parse_statement();
  }
};

bool Parser::parse_pliteral_seq(std::vector<PLiteral>& out) {
  do {
    auto u = parse_unit();
    if (!u) return false;
    if (u->size() != 1) {
      error("nested disjunction is not supported here");
      return false;
    }
    for (auto& pl : (*u)[0]) out.push_back(std::move(pl));
  } while (accept(Token::Comma) || accept(Token::Amp));
  // undo the trailing separator consumption when the caller handles it
  return true;
}

// ---------------------------------------------------------------------------
// Desugaring and classification

struct Builder {
  Parser& ps;
  std::vector<ParseDiagnostic>& diags;
  Program prog;
  int exists_counter = 0;

  void error(int line, const std::string& msg) {
    diags.push_back({ParseDiagnostic::Error, msg, line, 1});
  }

  static void collect_term_vars(const Term& t, std::set<std::string>& out) {
    if (t.is_var()) out.insert(t.name);
  }
  static void collect_lit_vars(const Literal& l, std::set<std::string>& out) {
    if (l.kind == Literal::Builtin) {
      collect_term_vars(l.lhs, out);
      collect_term_vars(l.rhs, out);
    } else {
      for (const auto& t : l.atom.args) collect_term_vars(t, out);
    }
  }

  // expand disjunctive units into plain conjunctions (cross product)
  static std::vector<std::vector<PLiteral>> expand_units(const std::vector<Unit>& units) {
    std::vector<std::vector<PLiteral>> out = {{}};
    for (const auto& unit : units) {
      std::vector<std::vector<PLiteral>> next;
      for (const auto& base : out) {
        for (const auto& alt : unit) {
          auto copy = base;
          for (const auto& pl : alt) copy.push_back(pl);
          next.push_back(std::move(copy));
        }
      }
      out = std::move(next);
    }
    return out;
  }

  // Replace ~exists blocks with negated auxiliary atoms; the auxiliary rule
  // repeats the outer positive atoms so its head variables stay bound.
  std::vector<Literal> desugar_exists(const std::vector<PLiteral>& conj, int line,
                                      std::vector<Rule>& aux_rules) {
    std::vector<Literal> plain;
    std::vector<const ExistsBlock*> blocks;
    for (const auto& pl : conj) {
      if (pl.is_exists)
        blocks.push_back(&pl.exists);
      else
        plain.push_back(pl.lit);
    }
    for (const auto* b : blocks) {
      std::set<std::string> inner_vars;
      for (const auto& l : b->inner) collect_lit_vars(l, inner_vars);
      for (const auto& v : b->vars) inner_vars.erase(v);
      std::set<std::string> outer_vars;
      for (const auto& l : plain)
        if (l.kind == Literal::Positive) collect_lit_vars(l, outer_vars);

      Atom head;
      head.pred = "__ex" + std::to_string(exists_counter++);
      for (const auto& v : inner_vars)
        if (outer_vars.count(v)) head.args.push_back(Term::var(v));

      Rule aux;
      aux.heads = {head};
      aux.line = line;
      for (const auto& l : plain)
        if (l.kind == Literal::Positive) aux.body.push_back(l);
      for (const auto& l : b->inner) aux.body.push_back(l);
      aux_rules.push_back(std::move(aux));
      plain.push_back(Literal::neg(head));
    }
    return plain;
  }

  void declare(const std::string& pred, int arity, SchemaClass cls, int line) {
    auto it = prog.decls.find(pred);
    if (it == prog.decls.end()) {
      prog.decls[pred] = {pred, arity, cls};
      return;
    }
    if (it->second.arity != arity)
      error(line, "predicate " + pred + " used with arities " +
                      std::to_string(it->second.arity) + " and " + std::to_string(arity));
    if (it->second.cls != cls) {
      // deterministic default loses against an explicit stronger class
      if (it->second.cls == SchemaClass::Deterministic) {
        it->second.cls = cls;
      } else if (cls != SchemaClass::Deterministic) {
        error(line, "predicate " + pred + " declared in two schema classes");
      }
    }
  }

  void note_use(const Atom& a, int line) {
    if (!prog.decls.count(a.pred))
      prog.decls[a.pred] = {a.pred, int(a.args.size()), SchemaClass::Deterministic};
    else if (prog.decls[a.pred].arity != int(a.args.size()))
      error(line, "predicate " + a.pred + " used with arities " +
                      std::to_string(prog.decls[a.pred].arity) + " and " +
                      std::to_string(a.args.size()));
  }

  Program build() {
    prog.decls = ps.decls;

    // facts and choices first: they pin the schema classes
    int choice_id = 0;
    for (auto& f : ps.facts) {
      if (f.probabilistic) {
        ProbChoice c;
        c.id = choice_id++;
        c.line = f.line;
        for (auto& [a, p] : f.alts) {
          declare(a.pred, int(a.args.size()), SchemaClass::Probabilistic, f.line);
          c.alternatives.emplace_back(std::move(a), p);
        }
        prog.choices.push_back(std::move(c));
      } else {
        auto& a = f.alts[0].first;
        declare(a.pred, int(a.args.size()), SchemaClass::Deterministic, f.line);
        if (!a.is_ground()) {
          error(f.line, "non-ground fact " + a.repr());
          continue;
        }
        (f.mode == Mode::Existential ? prog.facts_d1 : prog.facts_d)
            .push_back(std::move(a));
      }
    }

    // desugared rule list with pending classification
    struct Pending {
      Rule rule;
      Mode mode;
      bool is_query = false;
    };
    std::vector<Pending> pending;
    std::vector<Rule> aux_rules;

    for (auto& c : ps.clauses) {
      auto bodies = expand_units(c.body);
      auto conds = expand_units(c.cond);
      if (conds.size() > 1) {
        error(c.line, "disjunction in a '//' condition is not supported");
        continue;
      }
      for (auto& conj : bodies) {
        Rule r;
        r.heads = c.heads;
        r.line = c.line;
        r.agg = c.agg;
        r.agg_pos = c.agg_pos;
        r.body = desugar_exists(conj, c.line, aux_rules);
        if (!conds.empty()) {
          for (const auto& pl : conds[0]) {
            if (pl.is_exists) {
              error(c.line, "~exists in a '//' condition is not supported");
              continue;
            }
            r.cond.push_back(pl.lit);
          }
        }
        bool is_query = !c.is_per && !c.agg &&
                        (r.heads.size() == 1 &&
                         (r.heads[0].pred == "Ans" || r.heads[0].pred == "ans"));
        if (c.is_per) {
          r.cls = RuleClass::Per;
        } else if (c.agg) {
          r.cls = RuleClass::Aggregate;
        }
        pending.push_back({std::move(r), c.mode, is_query});
      }
    }

    // declarations from heads and bodies
    for (auto& p : pending) {
      const Rule& r = p.rule;
      if (p.is_query) {
        for (const auto& l : r.body)
          if (l.kind != Literal::Builtin) note_use(l.atom, r.line);
        continue;
      }
      for (const auto& h : r.heads) {
        int arity = int(h.args.size());
        if (r.cls == RuleClass::Per) {
          declare(h.pred, arity + 1, SchemaClass::Target, r.line);
        } else if (r.cls == RuleClass::Aggregate) {
          declare(h.pred, arity + 1, SchemaClass::Deterministic, r.line);
        } else {
          declare(h.pred, arity, SchemaClass::Deterministic, r.line);
        }
      }
      for (const auto* lits : {&r.body, &r.cond})
        for (const auto& l : *lits)
          if (l.kind != Literal::Builtin) note_use(l.atom, r.line);
    }
    for (auto& r : aux_rules) {
      declare(r.head().pred, int(r.head().args.size()), SchemaClass::Deterministic, r.line);
      for (const auto& l : r.body)
        if (l.kind != Literal::Builtin) note_use(l.atom, r.line);
    }

    // probabilistic-dependent predicate closure (chi heads)
    std::set<std::string> p_dep;
    for (const auto& [name, d] : prog.decls)
      if (d.cls == SchemaClass::Probabilistic) p_dep.insert(name);
    std::set<std::string> t_dep;
    for (const auto& [name, d] : prog.decls)
      if (d.cls == SchemaClass::Target) t_dep.insert(name);

    auto body_touches = [](const Rule& r, const std::set<std::string>& s) {
      for (const auto& l : r.body)
        if (l.kind != Literal::Builtin && s.count(l.atom.pred)) return true;
      return false;
    };

    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& p : pending) {
        if (p.is_query || p.rule.cls == RuleClass::Per) continue;
        if (p.rule.cls == RuleClass::Aggregate) {
          if (body_touches(p.rule, t_dep) || body_touches(p.rule, p_dep))
            for (const auto& h : p.rule.heads)
              if (t_dep.insert(h.pred).second) changed = true;
          continue;
        }
        if (body_touches(p.rule, p_dep))
          for (const auto& h : p.rule.heads)
            if (p_dep.insert(h.pred).second) changed = true;
        if (body_touches(p.rule, t_dep))
          for (const auto& h : p.rule.heads)
            if (t_dep.insert(h.pred).second) changed = true;
      }
    }

    for (auto& p : pending) {
      Rule& r = p.rule;
      if (p.is_query) {
        Query q;
        q.name = r.heads[0].pred;
        q.head = r.heads[0].args;
        q.body = r.body;
        prog.queries.push_back(std::move(q));
        continue;
      }
      if (r.cls == RuleClass::Per) {
        prog.pers.push_back(std::move(r));
        continue;
      }
      if (r.cls == RuleClass::Aggregate) {
        prog.aggs.push_back(std::move(r));
        continue;
      }
      bool existential = p.mode == Mode::Existential || r.has_existential();
      if (existential) {
        r.cls = RuleClass::Existential;
        prog.sigma1.push_back(std::move(r));
        continue;
      }
      if (r.heads.size() > 1) {
        error(r.line, "conjunctive heads are only allowed in existential rules");
        continue;
      }
      if (body_touches(r, t_dep) || t_dep.count(r.head().pred)) {
        r.cls = RuleClass::Aggregate; // plain post-processing view over targets
        prog.aggs.push_back(std::move(r));
      } else if (body_touches(r, p_dep) || p_dep.count(r.head().pred)) {
        r.cls = RuleClass::Chi;
        prog.chi.push_back(std::move(r));
      } else {
        r.cls = RuleClass::SigmaFull;
        prog.sigma.push_back(std::move(r));
      }
    }

    // auxiliary ~exists rules live with sigma
    for (auto& r : aux_rules) {
      if (body_touches(r, p_dep)) {
        error(r.line, "~exists over probabilistic predicates is not supported");
        continue;
      }
      r.cls = RuleClass::SigmaFull;
      prog.sigma.push_back(std::move(r));
    }

    return std::move(prog);
  }
};

} // namespace

ParseResult parse_program(const SourceProgram& src) {
  ParseResult result;
  Parser parser(result.diagnostics);
  parser.run(src.text);
  Builder builder{parser, result.diagnostics, {}, 0};
  result.program = builder.build();
  return result;
}

// ---------------------------------------------------------------------------
// Fact files

namespace {

std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cell);
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

Term cell_to_term(const std::string& cell) {
  if (cell.empty()) return Term::str("");
  char* end = nullptr;
  if (cell.find_first_not_of("+-0123456789.eE") == std::string::npos &&
      cell.find_first_of("0123456789") != std::string::npos) {
    if (cell.find('.') == std::string::npos && cell.find('e') == std::string::npos &&
        cell.find('E') == std::string::npos) {
      long long v = std::strtoll(cell.c_str(), &end, 10);
      if (end && *end == '\0') return Term::integer(v);
    }
    double d = std::strtod(cell.c_str(), &end);
    if (end && *end == '\0') return Term::real(d);
  }
  (void)end;
  return Term::str(cell);
}

} // namespace

FactFileResult parse_fact_file(std::istream& in, const PredicateDecl& decl,
                               const FactFileOptions& options) {
  FactFileResult res;
  char sep = options.csv ? ',' : '\t';
  bool probabilistic = decl.cls == SchemaClass::Probabilistic;
  std::string line;
  int lineno = 0;
  ProbChoice group;
  group.id = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (options.header && lineno == 1) continue;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto cells = split_line(line, sep);

    double prob = options.uniform_prob > 0 ? options.uniform_prob : 1.0;
    int data_cols = int(cells.size());
    if (probabilistic && options.has_prob_column) {
      data_cols -= 1;
      if (data_cols < 0) data_cols = 0;
      const std::string& pc = cells.back();
      char* end = nullptr;
      double p = std::strtod(pc.c_str(), &end);
      if (!end || *end != '\0' || pc.empty()) {
        res.diagnostics.push_back({ParseDiagnostic::Error,
                                   "non-numeric probability '" + pc + "'", lineno, 1});
        continue;
      }
      prob = p;
    }
    if (data_cols != decl.arity) {
      res.diagnostics.push_back(
          {ParseDiagnostic::Error,
           "arity mismatch: " + decl.name + "/" + std::to_string(decl.arity) + " row has " +
               std::to_string(data_cols) + " columns",
           lineno, 1});
      continue;
    }
    if (probabilistic && (prob <= 0.0 || prob > 1.0)) {
      res.diagnostics.push_back({ParseDiagnostic::Error,
                                 "probability " + std::to_string(prob) + " outside (0,1]",
                                 lineno, 1});
      continue;
    }

    Atom a;
    a.pred = decl.name;
    for (int i = 0; i < data_cols; ++i) a.args.push_back(cell_to_term(cells[i]));

    if (!probabilistic) {
      res.facts.push_back(std::move(a));
    } else if (options.choice_group) {
      group.alternatives.emplace_back(std::move(a), prob);
    } else {
      ProbChoice c;
      c.id = int(res.choices.size());
      c.alternatives.emplace_back(std::move(a), prob);
      res.choices.push_back(std::move(c));
    }
  }
  if (options.choice_group && !group.alternatives.empty())
    res.choices.push_back(std::move(group));
  return res;
}

} // namespace nlq
