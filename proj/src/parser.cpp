#include "nbreplay/parser.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <optional>

#include "nbreplay/errors.hpp"

namespace nbreplay {

const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = {
      // core library
      "read_text", "write_text", "lines", "split", "len", "sum", "upper", "show", "connect", "task_cmd", "task_fn",
      "compute", "push",
      // collection helpers
      "str", "join", "keys", "values", "get", "range", "map", "filter", "fold", "tally", "merge_sum", "words",
      "float", "int", "min", "max", "sort", "slice", "abs"};
  return names;
}

bool is_builtin(std::string_view name) {
  const auto& names = builtin_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

namespace {

enum class Tok {
  Int,
  Float,
  String,
  Name,
  LParen,
  RParen,
  LBracket,
  RBracket,
  LBrace,
  RBrace,
  Comma,
  Colon,
  Assign,
  Op,
  Sep,
  End,
};

struct Token {
  Tok kind;
  std::string text;
  int line;
  int column;
  std::size_t offset;
  std::size_t length;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    int depth = 0;
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
        continue;
      }
      if (c == '\n') {
        if (depth == 0) out.push_back(make(Tok::Sep, "\n", pos_, 1));
        advance();
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
        advance();
        continue;
      }
      const std::size_t start = pos_;
      const int line = line_;
      const int col = col_;
      auto emit = [&](Tok kind, std::string text) {
        out.push_back(Token{kind, std::move(text), line, col, start, pos_ - start});
      };
      if (std::isdigit(static_cast<unsigned char>(c))) {
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        bool is_float = false;
        if (pos_ + 1 < src_.size() && src_[pos_] == '.' && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
          is_float = true;
          advance();
          while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        }
        emit(is_float ? Tok::Float : Tok::Int, std::string(src_.substr(start, pos_ - start)));
        continue;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
          advance();
        }
        emit(Tok::Name, std::string(src_.substr(start, pos_ - start)));
        continue;
      }
      if (c == '"') {
        advance();
        std::string value;
        bool closed = false;
        while (pos_ < src_.size()) {
          char d = src_[pos_];
          if (d == '"') {
            advance();
            closed = true;
            break;
          }
          if (d == '\n') break;
          if (d == '\\') {
            if (pos_ + 1 >= src_.size()) break;
            char e = src_[pos_ + 1];
            switch (e) {
              case '"': value.push_back('"'); break;
              case '\\': value.push_back('\\'); break;
              case 'n': value.push_back('\n'); break;
              case 't': value.push_back('\t'); break;
              default: throw SyntaxError(std::string("unknown escape '\\") + e + "'", line_, col_);
            }
            advance();
            advance();
            continue;
          }
          value.push_back(d);
          advance();
        }
        if (!closed) throw SyntaxError("unterminated string literal", line, col);
        emit(Tok::String, std::move(value));
        continue;
      }
      auto two = src_.substr(pos_, 2);
      if (two == "==" || two == "!=" || two == "<=" || two == ">=" || two == "++") {
        advance();
        advance();
        emit(Tok::Op, std::string(two));
        continue;
      }
      advance();
      switch (c) {
        case '(': ++depth; emit(Tok::LParen, "("); break;
        case ')': depth = std::max(0, depth - 1); emit(Tok::RParen, ")"); break;
        case '[': ++depth; emit(Tok::LBracket, "["); break;
        case ']': depth = std::max(0, depth - 1); emit(Tok::RBracket, "]"); break;
        case '{': ++depth; emit(Tok::LBrace, "{"); break;
        case '}': depth = std::max(0, depth - 1); emit(Tok::RBrace, "}"); break;
        case ',': emit(Tok::Comma, ","); break;
        case ':': emit(Tok::Colon, ":"); break;
        case ';': emit(Tok::Sep, ";"); break;
        case '=': emit(Tok::Assign, "="); break;
        case '+': case '-': case '*': case '/': case '%': case '<': case '>':
          emit(Tok::Op, std::string(1, c));
          break;
        default:
          throw SyntaxError(std::string("unexpected character '") + c + "'", line, col);
      }
    }
    out.push_back(Token{Tok::End, "", line_, col_, pos_, 0});
    return out;
  }

 private:
  Token make(Tok kind, std::string text, std::size_t offset, std::size_t len) const {
    return Token{kind, std::move(text), line_, col_, offset, len};
  }

  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

class Parser {
 public:
  Parser(std::string_view src, std::vector<Token> toks) : src_(src), toks_(std::move(toks)) {}

  CellAST parse_cell() {
    CellAST ast;
    skip_separators();
    while (peek().kind != Tok::End) {
      ast.statements.push_back(statement());
      if (peek().kind != Tok::End && peek().kind != Tok::Sep) {
        fail("expected end of statement, found '" + describe(peek()) + "'");
      }
      skip_separators();
    }
    return ast;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  const Token& next() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }

  static std::string describe(const Token& t) {
    if (t.kind == Tok::End) return "end of input";
    if (t.kind == Tok::Sep) return t.text == "\n" ? "newline" : ";";
    return t.text;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw SyntaxError(msg, peek().line, peek().column); }
  [[noreturn]] static void fail_at(const Token& t, const std::string& msg) { throw SyntaxError(msg, t.line, t.column); }

  const Token& expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what + ", found '" + describe(peek()) + "'");
    return next();
  }

  bool accept_op(std::string_view op) {
    if (peek().kind == Tok::Op && peek().text == op) {
      ++pos_;
      return true;
    }
    return false;
  }

  void skip_separators() {
    while (peek().kind == Tok::Sep) ++pos_;
  }

  Span span_from(const Token& first) const {
    const Token& last = toks_[pos_ == 0 ? 0 : pos_ - 1];
    return Span{first.line, first.column, first.offset, last.offset + last.length - first.offset};
  }

  void check_assignable(const Token& name) const {
    if (is_builtin(name.text)) fail_at(name, "cannot assign to builtin '" + name.text + "'");
    if (name.text == "fn" || name.text == "true" || name.text == "false") {
      fail_at(name, "cannot assign to keyword '" + name.text + "'");
    }
  }

  Statement statement() {
    const Token& first = peek();
    Statement st;
    if (first.kind == Tok::Name && first.text == "fn") {
      ++pos_;
      const Token& name = expect(Tok::Name, "function name");
      check_assignable(name);
      FnDef def;
      def.name = name.text;
      expect(Tok::LParen, "'('");
      if (peek().kind != Tok::RParen) {
        while (true) {
          const Token& p = expect(Tok::Name, "parameter name");
          if (is_builtin(p.text)) fail_at(p, "parameter shadows builtin '" + p.text + "'");
          if (std::find(def.params.begin(), def.params.end(), p.text) != def.params.end()) {
            fail_at(p, "duplicate parameter '" + p.text + "'");
          }
          def.params.push_back(p.text);
          if (peek().kind == Tok::Comma) {
            ++pos_;
            continue;
          }
          break;
        }
      }
      expect(Tok::RParen, "')'");
      expect(Tok::Assign, "'='");
      params_ = &def.params;
      def.body = expression();
      params_ = nullptr;
      st.node = std::move(def);
    } else if (first.kind == Tok::Name && first.text == "push" && peek(1).kind == Tok::LParen) {
      pos_ += 2;
      const Token& target = expect(Tok::Name, "push target variable");
      check_assignable(target);
      expect(Tok::Comma, "','");
      Push p{target.text, expression()};
      expect(Tok::RParen, "')'");
      st.node = std::move(p);
    } else if (first.kind == Tok::Name && peek(1).kind == Tok::Assign) {
      check_assignable(first);
      pos_ += 2;
      st.node = Assign{first.text, expression()};
    } else if (first.kind == Tok::Name && peek(1).kind == Tok::LBracket && try_index_set(st)) {
      // handled
    } else {
      st.node = ExprStmt{expression()};
    }
    st.span = span_from(first);
    st.source = std::string(src_.substr(st.span.offset, st.span.length));
    return st;
  }

  bool try_index_set(Statement& st) {
    const std::size_t saved = pos_;
    const Token& target = next();
    ++pos_;  // '['
    ExprPtr key;
    try {
      key = expression();
    } catch (const SyntaxError&) {
      pos_ = saved;
      return false;
    }
    if (peek().kind != Tok::RBracket || peek(1).kind != Tok::Assign) {
      pos_ = saved;
      return false;
    }
    check_assignable(target);
    pos_ += 2;
    st.node = IndexSet{target.text, std::move(key), expression()};
    return true;
  }

  ExprPtr make_expr(const Token& first, decltype(Expr::node) node) const {
    auto e = std::make_shared<Expr>();
    e->node = std::move(node);
    e->span = span_from(first);
    return e;
  }

  ExprPtr expression() { return comparison(); }

  ExprPtr comparison() {
    const Token& first = peek();
    ExprPtr lhs = additive();
    while (peek().kind == Tok::Op) {
      std::optional<BinaryOp> op;
      const std::string& t = peek().text;
      if (t == "==") op = BinaryOp::Eq;
      else if (t == "!=") op = BinaryOp::Ne;
      else if (t == "<") op = BinaryOp::Lt;
      else if (t == ">") op = BinaryOp::Gt;
      else if (t == "<=") op = BinaryOp::Le;
      else if (t == ">=") op = BinaryOp::Ge;
      if (!op) break;
      ++pos_;
      ExprPtr rhs = additive();
      lhs = make_expr(first, Binary{*op, std::move(lhs), std::move(rhs)});
    }
    return lhs;
  }

  ExprPtr additive() {
    const Token& first = peek();
    ExprPtr lhs = multiplicative();
    while (peek().kind == Tok::Op) {
      std::optional<BinaryOp> op;
      const std::string& t = peek().text;
      if (t == "+") op = BinaryOp::Add;
      else if (t == "-") op = BinaryOp::Sub;
      else if (t == "++") op = BinaryOp::Concat;
      if (!op) break;
      ++pos_;
      ExprPtr rhs = multiplicative();
      lhs = make_expr(first, Binary{*op, std::move(lhs), std::move(rhs)});
    }
    return lhs;
  }

  ExprPtr multiplicative() {
    const Token& first = peek();
    ExprPtr lhs = unary();
    while (peek().kind == Tok::Op) {
      std::optional<BinaryOp> op;
      const std::string& t = peek().text;
      if (t == "*") op = BinaryOp::Mul;
      else if (t == "/") op = BinaryOp::Div;
      else if (t == "%") op = BinaryOp::Mod;
      if (!op) break;
      ++pos_;
      ExprPtr rhs = unary();
      lhs = make_expr(first, Binary{*op, std::move(lhs), std::move(rhs)});
    }
    return lhs;
  }

  ExprPtr unary() {
    const Token& first = peek();
    if (accept_op("-")) {
      // Fold negative literals so that INT64_MIN is expressible.
      if (peek().kind == Tok::Int) {
        const Token& lit = next();
        return make_expr(first, IntLit{parse_int(lit, true)});
      }
      if (peek().kind == Tok::Float) {
        const Token& lit = next();
        return make_expr(first, FloatLit{-parse_float(lit)});
      }
      return make_expr(first, Negate{unary()});
    }
    return postfix();
  }

  ExprPtr postfix() {
    const Token& first = peek();
    ExprPtr e = primary();
    while (peek().kind == Tok::LBracket) {
      ++pos_;
      ExprPtr key = expression();
      expect(Tok::RBracket, "']'");
      e = make_expr(first, Index{std::move(e), std::move(key)});
    }
    return e;
  }

  static std::int64_t parse_int(const Token& t, bool negative) {
    std::string text = negative ? "-" + t.text : t.text;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail_at(t, "integer literal out of range");
    return v;
  }

  static double parse_float(const Token& t) { return std::strtod(t.text.c_str(), nullptr); }

  NameClass classify(const std::string& name) const {
    if (params_ && std::find(params_->begin(), params_->end(), name) != params_->end()) return NameClass::Param;
    if (is_builtin(name)) return NameClass::Builtin;
    return NameClass::Global;
  }

  ExprPtr primary() {
    const Token& first = peek();
    switch (first.kind) {
      case Tok::Int:
        ++pos_;
        return make_expr(first, IntLit{parse_int(first, false)});
      case Tok::Float:
        ++pos_;
        return make_expr(first, FloatLit{parse_float(first)});
      case Tok::String:
        ++pos_;
        return make_expr(first, StringLit{first.text});
      case Tok::Name: {
        ++pos_;
        if (first.text == "true" || first.text == "false") return make_expr(first, BoolLit{first.text == "true"});
        if (first.text == "fn") fail_at(first, "unexpected 'fn' inside an expression");
        if (peek().kind == Tok::LParen) {
          ++pos_;
          std::vector<ExprPtr> args = expression_list(Tok::RParen, "')'");
          NameClass cls = classify(first.text);
          if (first.text == "push") fail_at(first, "push(...) is a statement, not an expression");
          return make_expr(first, Call{first.text, cls, std::move(args)});
        }
        return make_expr(first, NameRef{first.text, classify(first.text)});
      }
      case Tok::LParen: {
        ++pos_;
        ExprPtr inner = expression();
        expect(Tok::RParen, "')'");
        return inner;
      }
      case Tok::LBracket: {
        ++pos_;
        return make_expr(first, ListLit{expression_list(Tok::RBracket, "']'")});
      }
      case Tok::LBrace: {
        ++pos_;
        MapLit m;
        while (peek().kind != Tok::RBrace) {
          ExprPtr k = expression();
          expect(Tok::Colon, "':'");
          ExprPtr v = expression();
          m.entries.emplace_back(std::move(k), std::move(v));
          if (peek().kind == Tok::Comma) {
            ++pos_;
            continue;
          }
          break;
        }
        expect(Tok::RBrace, "'}'");
        return make_expr(first, std::move(m));
      }
      default:
        fail("expected an expression, found '" + describe(first) + "'");
    }
  }

  std::vector<ExprPtr> expression_list(Tok close, const char* what) {
    std::vector<ExprPtr> out;
    while (peek().kind != close) {
      out.push_back(expression());
      if (peek().kind == Tok::Comma) {
        ++pos_;
        continue;
      }
      break;
    }
    expect(close, what);
    return out;
  }

  std::string_view src_;
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  const std::vector<std::string>* params_ = nullptr;
};

}  // namespace

CellAST parse_cell(std::string_view code) {
  Lexer lex(code);
  Parser p(code, lex.run());
  return p.parse_cell();
}

FnDef parse_function_source(std::string_view source) {
  CellAST ast = parse_cell(source);
  if (ast.statements.size() != 1 || !std::holds_alternative<FnDef>(ast.statements[0].node)) {
    throw SyntaxError("function source must contain exactly one fn definition", 1, 1);
  }
  return std::get<FnDef>(ast.statements[0].node);
}

}  // namespace nbreplay
