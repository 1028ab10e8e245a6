#include "simil/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

namespace simil {

namespace {

// ---------------------------------------------------------------------------
// Document model and parser

struct Value {
  enum class Kind { Number, String, Bool, Array, Table };
  Kind kind = Kind::Number;
  std::string text;  // raw number token or decoded string
  bool flag = false;
  std::vector<Value> items;
  std::vector<std::pair<std::string, Value>> table;
  int line = 0, column = 0;
};

struct Entry {
  std::string key;
  Value value;
  int line = 0, column = 0;
};

struct Section {
  std::string name;
  std::vector<Entry> entries;
  int line = 0;
};

bool is_key_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
}

class Parser {
 public:
  explicit Parser(const std::string& text) : s_(text) {}

  std::vector<Section> parse() {
    std::vector<Section> sections;
    std::set<std::string> seen;
    while (true) {
      skip_blank();
      if (eof()) break;
      char c = peek();
      if (c == '#') {
        skip_comment();
      } else if (c == '\n' || c == '\r') {
        advance();
      } else if (c == '[') {
        int line = line_, col = col_;
        advance();
        skip_blank();
        std::string name = dotted_name();
        skip_blank();
        expect(']');
        end_of_line();
        if (!seen.insert(name).second) throw ParseError(line, col, "duplicate section [" + name + "]");
        sections.push_back({name, {}, line});
      } else if (is_key_char(c)) {
        if (sections.empty()) fail("key outside of any [section]");
        int line = line_, col = col_;
        std::string key = bare_key();
        skip_blank();
        expect('=');
        skip_blank();
        Value v = value();
        end_of_line();
        for (const Entry& e : sections.back().entries)
          if (e.key == key) throw ParseError(line, col, "duplicate key '" + key + "'");
        sections.back().entries.push_back({key, std::move(v), line, col});
      } else {
        fail(std::string("unexpected character '") + c + "'");
      }
    }
    return sections;
  }

 private:
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  void advance() {
    if (eof()) return;
    if (s_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, col_, msg); }

  void skip_blank() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) advance();
  }
  void skip_comment() {
    while (!eof() && peek() != '\n') advance();
  }
  // Inside arrays and inline tables newlines and comments are whitespace.
  void skip_space() {
    while (!eof()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        advance();
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }
  void expect(char c) {
    if (peek() != c) {
      if (eof()) fail(std::string("expected '") + c + "' before end of input");
      fail(std::string("expected '") + c + "', found '" + peek() + "'");
    }
    advance();
  }
  void end_of_line() {
    skip_blank();
    if (peek() == '#') skip_comment();
    if (peek() == '\r') advance();
    if (!eof() && peek() != '\n') fail(std::string("unexpected '") + peek() + "' after value");
  }

  std::string bare_key() {
    std::string key;
    while (!eof() && is_key_char(peek())) {
      key += peek();
      advance();
    }
    if (key.empty()) fail("expected a key");
    return key;
  }
  std::string dotted_name() {
    std::string name = bare_key();
    while (peek() == '.') {
      advance();
      name += '.';
      name += bare_key();
    }
    return name;
  }

  Value value() {
    Value v;
    v.line = line_;
    v.column = col_;
    char c = peek();
    if (c == '"') {
      v.kind = Value::Kind::String;
      advance();
      while (true) {
        if (eof() || peek() == '\n') fail("unterminated string");
        char ch = peek();
        advance();
        if (ch == '"') break;
        if (ch == '\\') {
          char esc = peek();
          advance();
          switch (esc) {
            case '"': v.text += '"'; break;
            case '\\': v.text += '\\'; break;
            case 'n': v.text += '\n'; break;
            case 't': v.text += '\t'; break;
            default: fail(std::string("unknown escape '\\") + esc + "'");
          }
        } else {
          v.text += ch;
        }
      }
    } else if (c == '[') {
      v.kind = Value::Kind::Array;
      advance();
      skip_space();
      while (peek() != ']') {
        v.items.push_back(value());
        skip_space();
        if (peek() == ',') {
          advance();
          skip_space();
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
      advance();
    } else if (c == '{') {
      v.kind = Value::Kind::Table;
      advance();
      skip_space();
      while (peek() != '}') {
        int line = line_, col = col_;
        std::string key = bare_key();
        skip_space();
        expect('=');
        skip_space();
        Value item = value();
        for (const auto& [k, _] : v.table)
          if (k == key) throw ParseError(line, col, "duplicate key '" + key + "' in inline table");
        v.table.emplace_back(key, std::move(item));
        skip_space();
        if (peek() == ',') {
          advance();
          skip_space();
        } else if (peek() != '}') {
          fail("expected ',' or '}' in inline table");
        }
      }
      advance();
    } else if (c == 't' || c == 'f') {
      v.kind = Value::Kind::Bool;
      std::string word = bare_key();
      if (word == "true") {
        v.flag = true;
      } else if (word != "false") {
        throw ParseError(v.line, v.column, "unknown literal '" + word + "'");
      }
    } else if (c == '-' || c == '+' || (c >= '0' && c <= '9')) {
      v.kind = Value::Kind::Number;
      v.text = number_token();
    } else if (eof() || c == '\n') {
      fail("missing value");
    } else {
      fail(std::string("unexpected '") + c + "' at start of value");
    }
    return v;
  }

  std::string number_token() {
    std::string t;
    auto digits = [&] {
      std::size_t n = 0;
      while (peek() >= '0' && peek() <= '9') {
        t += peek();
        advance();
        ++n;
      }
      return n;
    };
    if (peek() == '-' || peek() == '+') {
      t += peek();
      advance();
    }
    if (digits() == 0) fail("malformed number");
    if (peek() == '.') {
      t += '.';
      advance();
      if (digits() == 0) fail("malformed number: digits expected after '.'");
    }
    if (peek() == 'e' || peek() == 'E') {
      t += 'e';
      advance();
      if (peek() == '-' || peek() == '+') {
        t += peek();
        advance();
      }
      if (digits() == 0) fail("malformed number: exponent digits expected");
    }
    if (is_key_char(peek()) || peek() == '.') fail("malformed number");
    return t;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int line_ = 1, col_ = 1;
};

// ---------------------------------------------------------------------------
// Validation

const char* kind_word(Value::Kind k) {
  switch (k) {
    case Value::Kind::Number: return "a number";
    case Value::Kind::String: return "a string";
    case Value::Kind::Bool: return "a boolean";
    case Value::Kind::Array: return "an array";
    case Value::Kind::Table: return "an inline table";
  }
  return "a value";
}

class Reader {
 public:
  explicit Reader(const std::vector<Section>& sections) {
    for (const Section& s : sections) {
      sections_[s.name] = &s;
      for (const Entry& e : s.entries) entries_[s.name + "." + e.key] = &e.value;
    }
  }

  void issue(const std::string& key, const std::string& msg) { issues_.push_back({key, msg}); }
  std::vector<ValidationError::Issue>& issues() { return issues_; }

  bool has_section(const std::string& name) const { return sections_.count(name) != 0; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const Value* get(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.insert(key);
    return it->second;
  }

  // Finishes with an issue per key or section nobody asked for.
  void report_unused(const std::set<std::string>& known_sections) {
    for (const auto& [name, _] : sections_)
      if (!known_sections.count(name)) issue(name, "unknown section");
    for (const auto& [key, _] : entries_) {
      std::string section = key.substr(0, key.rfind('.'));
      if (known_sections.count(section) && !used_.count(key)) issue(key, "unknown or unused key");
    }
  }

  bool require_kind(const std::string& key, const Value& v, Value::Kind k) {
    if (v.kind == k) return true;
    issue(key, std::string("expected ") + kind_word(k) + ", found " + kind_word(v.kind));
    return false;
  }

  std::optional<double> number_of(const std::string& key, const Value& v) {
    if (!require_kind(key, v, Value::Kind::Number)) return std::nullopt;
    double x = std::strtod(v.text.c_str(), nullptr);
    if (!std::isfinite(x)) {
      issue(key, "number out of range");
      return std::nullopt;
    }
    return x;
  }
  std::optional<long long> integer_of(const std::string& key, const Value& v) {
    if (!require_kind(key, v, Value::Kind::Number)) return std::nullopt;
    if (v.text.find_first_of(".e") != std::string::npos) {
      issue(key, "expected an integer");
      return std::nullopt;
    }
    long long out = 0;
    const char* b = v.text.c_str() + (v.text[0] == '+' ? 1 : 0);
    auto [p, ec] = std::from_chars(b, v.text.c_str() + v.text.size(), out);
    if (ec != std::errc() || p != v.text.c_str() + v.text.size()) {
      issue(key, "integer out of range");
      return std::nullopt;
    }
    return out;
  }

  double number(const std::string& key, double def, bool required = false) {
    const Value* v = get(key);
    if (!v) {
      if (required) issue(key, "missing");
      return def;
    }
    return number_of(key, *v).value_or(def);
  }
  int integer(const std::string& key, int def, bool required = false) {
    const Value* v = get(key);
    if (!v) {
      if (required) issue(key, "missing");
      return def;
    }
    auto x = integer_of(key, *v);
    if (!x) return def;
    if (*x < -2147483647LL || *x > 2147483647LL) {
      issue(key, "integer out of range");
      return def;
    }
    return static_cast<int>(*x);
  }
  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    const Value* v = get(key);
    if (!v || !require_kind(key, *v, Value::Kind::Number)) return def;
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v->text.data(), v->text.data() + v->text.size(), out);
    if (ec != std::errc() || p != v->text.data() + v->text.size()) {
      issue(key, "expected an unsigned 64-bit integer");
      return def;
    }
    return out;
  }
  std::string string(const std::string& key, const std::string& def, bool required = false) {
    const Value* v = get(key);
    if (!v) {
      if (required) issue(key, "missing");
      return def;
    }
    return require_kind(key, *v, Value::Kind::String) ? v->text : def;
  }

  std::optional<std::vector<double>> vector_of(const std::string& key, const Value& v) {
    if (!require_kind(key, v, Value::Kind::Array)) return std::nullopt;
    std::vector<double> out;
    for (const Value& item : v.items) {
      auto x = number_of(key, item);
      if (!x) return std::nullopt;
      out.push_back(*x);
    }
    return out;
  }
  std::optional<Matrix> matrix_of(const std::string& key, const Value& v) {
    if (!require_kind(key, v, Value::Kind::Array)) return std::nullopt;
    if (v.items.empty()) {
      issue(key, "matrix needs at least one row");
      return std::nullopt;
    }
    std::vector<std::vector<double>> rows;
    for (const Value& r : v.items) {
      auto row = vector_of(key, r);
      if (!row) return std::nullopt;
      if (row->empty() || (!rows.empty() && row->size() != rows.front().size())) {
        issue(key, "matrix rows must be non-empty and of equal length");
        return std::nullopt;
      }
      rows.push_back(std::move(*row));
    }
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
  }
  std::optional<Matrix> matrix(const std::string& key) {
    const Value* v = get(key);
    if (!v) {
      issue(key, "missing");
      return std::nullopt;
    }
    return matrix_of(key, *v);
  }

 private:
  std::map<std::string, const Section*> sections_;
  std::map<std::string, const Value*> entries_;
  std::set<std::string> used_;
  std::vector<ValidationError::Issue> issues_;
};

// A polynomial is an array of terms [coef, p_1, ..., p_n].
std::optional<Polynomial> read_polynomial(Reader& rd, const std::string& key, int n) {
  const Value* v = rd.get(key);
  if (!v) {
    rd.issue(key, "missing");
    return std::nullopt;
  }
  if (!rd.require_kind(key, *v, Value::Kind::Array)) return std::nullopt;
  std::vector<Monomial> terms;
  for (const Value& t : v->items) {
    auto nums = rd.vector_of(key, t);
    if (!nums) return std::nullopt;
    if (static_cast<int>(nums->size()) != n + 1) {
      rd.issue(key, "each term is [coef, p1.." + std::string("pn] with n = ") + std::to_string(n));
      return std::nullopt;
    }
    Monomial m;
    m.coef = (*nums)[0];
    for (int i = 1; i <= n; ++i) {
      double p = (*nums)[i];
      if (p < 0 || p != std::floor(p)) {
        rd.issue(key, "exponents must be non-negative integers");
        return std::nullopt;
      }
      m.powers.push_back(static_cast<int>(p));
    }
    terms.push_back(std::move(m));
  }
  try {
    return Polynomial(n, std::move(terms));
  } catch (const Error& e) {
    rd.issue(key, e.what());
    return std::nullopt;
  }
}

std::optional<SdeSystem> read_system(Reader& rd, const std::string& sec, bool allow_partner) {
  if (!rd.has_section(sec)) {
    rd.issue(sec, "missing section");
    return std::nullopt;
  }
  bool ok = true;
  DriftInput input = DriftInput::Own;
  std::string input_name = rd.string(sec + ".input", "own");
  if (input_name == "partner") {
    if (allow_partner) {
      input = DriftInput::Partner;
    } else {
      rd.issue(sec + ".input", "only system.y may read its partner's state");
      ok = false;
    }
  } else if (input_name != "own") {
    rd.issue(sec + ".input", "expected \"own\" or \"partner\"");
    ok = false;
  }

  std::optional<DriftSpec> drift;
  int n = 0;
  std::string drift_kind = rd.string(sec + ".drift", "", true);
  if (drift_kind == "linear" || drift_kind == "affine") {
    auto A = rd.matrix(sec + ".A");
    if (A && A->rows() != A->cols()) {
      rd.issue(sec + ".A", "drift matrix must be square");
      A.reset();
    }
    if (A) n = static_cast<int>(A->rows());
    if (drift_kind == "linear") {
      if (A) drift = LinearDrift{*A};
    } else {
      const Value* av = rd.get(sec + ".a");
      std::optional<std::vector<double>> a;
      if (!av) {
        rd.issue(sec + ".a", "missing");
      } else {
        a = rd.vector_of(sec + ".a", *av);
      }
      if (A && a) {
        if (static_cast<int>(a->size()) != n) {
          rd.issue(sec + ".a", "length must match A");
        } else {
          drift = AffineDrift{*A, Eigen::Map<const Vector>(a->data(), n)};
        }
      }
    }
  } else if (drift_kind == "polynomial") {
    n = rd.integer(sec + ".dim", 0, true);
    if (n < 1 || n > 64) {
      if (rd.has(sec + ".dim")) rd.issue(sec + ".dim", "must be in 1..64");
      n = 0;
    } else {
      std::vector<Polynomial> comps;
      bool all = true;
      for (int i = 1; i <= n; ++i) {
        auto p = read_polynomial(rd, sec + ".f" + std::to_string(i), n);
        if (p) {
          comps.push_back(std::move(*p));
        } else {
          all = false;
        }
      }
      if (all) drift = PolynomialDrift{std::move(comps)};
    }
  } else if (!drift_kind.empty()) {
    rd.issue(sec + ".drift", "expected \"linear\", \"affine\" or \"polynomial\"");
  }

  std::optional<DiffusionSpec> diff;
  std::string diff_kind = rd.string(sec + ".diffusion", "", true);
  if (diff_kind == "constant") {
    auto B = rd.matrix(sec + ".B");
    if (B) {
      if (n > 0 && B->rows() != n) {
        rd.issue(sec + ".B", "needs one row per state component");
      } else {
        diff = ConstantDiffusion{*B};
      }
    }
  } else if (diff_kind == "linear_state" || diff_kind == "polynomial") {
    int d = rd.integer(sec + ".noise_dim", 0, true);
    if (d < 1 || d > 64) {
      if (rd.has(sec + ".noise_dim")) rd.issue(sec + ".noise_dim", "must be in 1..64");
    } else if (n > 0) {
      if (diff_kind == "linear_state") {
        std::vector<Matrix> mats;
        for (int l = 1; l <= d; ++l) {
          std::string key = sec + ".S" + std::to_string(l);
          auto S = rd.matrix(key);
          if (!S) continue;
          if (S->rows() != n || S->cols() != n) {
            rd.issue(key, "must be n x n with n the state dimension");
            continue;
          }
          mats.push_back(*S);
        }
        if (static_cast<int>(mats.size()) == d) diff = LinearInStateDiffusion{std::move(mats)};
      } else {
        std::vector<Polynomial> entries;
        for (int i = 1; i <= n; ++i)
          for (int l = 1; l <= d; ++l) {
            auto p = read_polynomial(rd, sec + ".s" + std::to_string(i) + "_" + std::to_string(l), n);
            if (p) entries.push_back(std::move(*p));
          }
        if (static_cast<int>(entries.size()) == n * d) diff = PolynomialDiffusion{d, std::move(entries)};
      }
    }
  } else if (!diff_kind.empty()) {
    rd.issue(sec + ".diffusion", "expected \"constant\", \"linear_state\" or \"polynomial\"");
  }

  if (!ok || !drift || !diff) return std::nullopt;
  try {
    return SdeSystem(std::move(*drift), std::move(*diff), input);
  } catch (const Error& e) {
    rd.issue(sec, e.what());
    return std::nullopt;
  }
}

std::optional<MappingK> read_map(Reader& rd, const std::string& key) {
  const Value* v = rd.get(key);
  if (!v) return std::nullopt;
  if (!rd.require_kind(key, *v, Value::Kind::Table)) return std::nullopt;
  std::map<std::string, const Value*> fields;
  for (const auto& [k, item] : v->table) fields[k] = &item;
  auto field = [&](const std::string& name) -> const Value* {
    auto it = fields.find(name);
    if (it == fields.end()) {
      rd.issue(key + "." + name, "missing");
      return nullptr;
    }
    const Value* out = it->second;
    fields.erase(it);
    return out;
  };
  const Value* kind = field("kind");
  if (!kind || !rd.require_kind(key + ".kind", *kind, Value::Kind::String)) return std::nullopt;
  std::optional<MappingK> out;
  try {
    if (kind->text == "linear") {
      const Value* m = field("matrix");
      auto K = m ? rd.matrix_of(key + ".matrix", *m) : std::nullopt;
      if (K) out = MappingK::linear(*K);
    } else if (kind->text == "affine") {
      const Value* m = field("matrix");
      const Value* b = field("offset");
      auto K = m ? rd.matrix_of(key + ".matrix", *m) : std::nullopt;
      auto off = b ? rd.vector_of(key + ".offset", *b) : std::nullopt;
      if (K && off) {
        if (static_cast<Eigen::Index>(off->size()) != K->rows()) {
          rd.issue(key + ".offset", "length must match the matrix");
        } else {
          out = MappingK::affine(*K, Eigen::Map<const Vector>(off->data(), off->size()));
        }
      }
    } else if (kind->text == "tabulated1d") {
      const Value* kn = field("knots");
      const Value* va = field("values");
      auto knots = kn ? rd.vector_of(key + ".knots", *kn) : std::nullopt;
      auto values = va ? rd.vector_of(key + ".values", *va) : std::nullopt;
      if (knots && values) out = MappingK::tabulated(std::move(*knots), std::move(*values));
    } else {
      rd.issue(key + ".kind", "expected \"linear\", \"affine\" or \"tabulated1d\"");
    }
  } catch (const Error& e) {
    rd.issue(key, e.what());
    out.reset();
  }
  for (const auto& [name, _] : fields) rd.issue(key + "." + name, "unknown field");
  return out;
}

// Which [task] option keys each task reads.
const std::map<TaskKind, std::vector<std::string>>& task_keys() {
  static const std::map<TaskKind, std::vector<std::string>> keys = {
      {TaskKind::Estimate, {"lipschitz"}},
      {TaskKind::Optimize, {"family", "restarts", "max_iter", "step", "tol", "opt_seed"}},
      {TaskKind::Dissipation, {"max_samples"}},
      {TaskKind::Spectrum, {"which", "lyap_horizon", "lyap_dt", "n_seeds", "lyap_seed", "epsilon"}},
      {TaskKind::Slln, {}},
      {TaskKind::Kstar1d, {"x_lo", "x_hi", "ode_steps", "lipschitz"}},
      {TaskKind::HartmanGrobman, {"epsilon", "delta", "grid_size"}},
      {TaskKind::Probe, {"n_samples", "radius", "probe_seed"}},
      {TaskKind::MaxPrinciple,
       {"family", "restarts", "max_iter", "step", "tol", "opt_seed", "probes", "probe_seed", "basis_degree"}},
  };
  return keys;
}

void read_task_options(Reader& rd, TaskKind task, TaskOptions& o) {
  const auto& allowed = task_keys().at(task);
  auto wants = [&](const char* k) { return std::find(allowed.begin(), allowed.end(), k) != allowed.end(); };
  auto key = [](const char* k) { return std::string("task.") + k; };

  if (wants("lipschitz")) {
    o.lipschitz = rd.number(key("lipschitz"), o.lipschitz);
    if (o.lipschitz < 0) rd.issue(key("lipschitz"), "must be >= 0 (0 selects the probed value)");
  }
  if (wants("family")) {
    o.family = rd.string(key("family"), o.family);
    if (o.family != "linear" && o.family != "affine" && o.family != "tabulated1d")
      rd.issue(key("family"), "expected \"linear\", \"affine\" or \"tabulated1d\"");
  }
  if (wants("restarts")) {
    o.restarts = rd.integer(key("restarts"), o.restarts);
    if (o.restarts < 1) rd.issue(key("restarts"), "must be >= 1");
  }
  if (wants("max_iter")) {
    o.max_iter = rd.integer(key("max_iter"), o.max_iter);
    if (o.max_iter < 1) rd.issue(key("max_iter"), "must be >= 1");
  }
  if (wants("step")) {
    o.step = rd.number(key("step"), o.step);
    if (!(o.step > 0)) rd.issue(key("step"), "must be > 0");
  }
  if (wants("tol")) {
    o.tol = rd.number(key("tol"), o.tol);
    if (!(o.tol > 0)) rd.issue(key("tol"), "must be > 0");
  }
  if (wants("opt_seed")) o.opt_seed = rd.u64(key("opt_seed"), o.opt_seed);
  if (wants("probes")) {
    o.probes = rd.integer(key("probes"), o.probes);
    if (o.probes < 1) rd.issue(key("probes"), "must be >= 1");
  }
  if (wants("probe_seed")) o.probe_seed = rd.u64(key("probe_seed"), o.probe_seed);
  if (wants("basis_degree")) {
    o.basis_degree = rd.integer(key("basis_degree"), o.basis_degree);
    if (o.basis_degree < 1 || o.basis_degree > 3) rd.issue(key("basis_degree"), "must be in 1..3");
  }
  if (wants("which")) {
    o.which = rd.string(key("which"), o.which);
    if (o.which != "x" && o.which != "y" && o.which != "both")
      rd.issue(key("which"), "expected \"x\", \"y\" or \"both\"");
  }
  if (wants("lyap_horizon")) {
    o.lyap_horizon = rd.number(key("lyap_horizon"), o.lyap_horizon);
    if (!(o.lyap_horizon > 0)) rd.issue(key("lyap_horizon"), "must be > 0");
  }
  if (wants("lyap_dt")) {
    o.lyap_dt = rd.number(key("lyap_dt"), o.lyap_dt);
    if (!(o.lyap_dt > 0)) rd.issue(key("lyap_dt"), "must be > 0");
  }
  if (wants("n_seeds")) {
    o.n_seeds = rd.integer(key("n_seeds"), o.n_seeds);
    if (o.n_seeds < 8) rd.issue(key("n_seeds"), "must be >= 8");
  }
  if (wants("lyap_seed")) o.lyap_seed = rd.u64(key("lyap_seed"), o.lyap_seed);
  if (wants("epsilon")) {
    o.epsilon = rd.number(key("epsilon"), o.epsilon);
    if (!(o.epsilon > 0)) rd.issue(key("epsilon"), "must be > 0");
  }
  if (wants("x_lo")) o.x_lo = rd.number(key("x_lo"), o.x_lo);
  if (wants("x_hi")) o.x_hi = rd.number(key("x_hi"), o.x_hi);
  if (wants("x_lo") && wants("x_hi") && !(o.x_lo < o.x_hi)) rd.issue(key("x_hi"), "must exceed task.x_lo");
  if (wants("ode_steps")) {
    o.ode_steps = rd.integer(key("ode_steps"), o.ode_steps);
    if (o.ode_steps < 2) rd.issue(key("ode_steps"), "must be >= 2");
  }
  if (wants("delta")) {
    o.delta = rd.number(key("delta"), o.delta);
    if (o.delta < 0) rd.issue(key("delta"), "must be >= 0 (0 selects the contraction formula)");
  }
  if (wants("grid_size")) {
    o.grid_size = rd.integer(key("grid_size"), o.grid_size);
    if (o.grid_size < 5) rd.issue(key("grid_size"), "must be >= 5");
  }
  if (wants("n_samples")) {
    o.n_samples = rd.integer(key("n_samples"), o.n_samples);
    if (o.n_samples < 1000) rd.issue(key("n_samples"), "must be >= 1000");
  }
  if (wants("radius")) {
    o.radius = rd.number(key("radius"), o.radius);
    if (!(o.radius > 0)) rd.issue(key("radius"), "must be > 0");
  }
  if (wants("max_samples")) {
    o.max_samples = rd.integer(key("max_samples"), o.max_samples);
    if (o.max_samples < 10) rd.issue(key("max_samples"), "must be >= 10");
  }
}

bool needs_map(TaskKind t) {
  return t == TaskKind::Estimate || t == TaskKind::Dissipation || t == TaskKind::Slln;
}

// ---------------------------------------------------------------------------
// Emission

std::string num(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  (void)ec;
  return std::string(buf, p);
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

std::string vec_text(const double* data, Eigen::Index n) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < n; ++i) out += (i ? ", " : "") + num(data[i]);
  return out + "]";
}
std::string vec_text(const Vector& v) { return vec_text(v.data(), v.size()); }
std::string vec_text(const std::vector<double>& v) { return vec_text(v.data(), static_cast<Eigen::Index>(v.size())); }

std::string mat_text(const Matrix& m) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Vector row = m.row(i).transpose();
    out += (i ? ", " : "") + vec_text(row);
  }
  return out + "]";
}

std::string poly_text(const Polynomial& p) {
  std::string out = "[";
  bool first = true;
  for (const Monomial& m : p.terms()) {
    out += first ? "[" : ", [";
    first = false;
    out += num(m.coef);
    for (int pw : m.powers) out += ", " + std::to_string(pw);
    out += "]";
  }
  return out + "]";
}

void emit_system(std::ostream& os, const std::string& name, const SdeSystem& s) {
  os << "[" << name << "]\n";
  os << "input = " << (s.drift_input() == DriftInput::Partner ? "\"partner\"" : "\"own\"") << "\n";
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, LinearDrift>) {
          os << "drift = \"linear\"\nA = " << mat_text(d.A) << "\n";
        } else if constexpr (std::is_same_v<T, AffineDrift>) {
          os << "drift = \"affine\"\nA = " << mat_text(d.A) << "\na = " << vec_text(d.a) << "\n";
        } else {
          os << "drift = \"polynomial\"\ndim = " << d.components.size() << "\n";
          for (std::size_t i = 0; i < d.components.size(); ++i)
            os << "f" << i + 1 << " = " << poly_text(d.components[i]) << "\n";
        }
      },
      s.drift_spec());
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ConstantDiffusion>) {
          os << "diffusion = \"constant\"\nB = " << mat_text(d.B) << "\n";
        } else if constexpr (std::is_same_v<T, LinearInStateDiffusion>) {
          os << "diffusion = \"linear_state\"\nnoise_dim = " << d.A.size() << "\n";
          for (std::size_t l = 0; l < d.A.size(); ++l) os << "S" << l + 1 << " = " << mat_text(d.A[l]) << "\n";
        } else {
          os << "diffusion = \"polynomial\"\nnoise_dim = " << d.noise_dim << "\n";
          int n = s.dim();
          for (int i = 0; i < n; ++i)
            for (int l = 0; l < d.noise_dim; ++l)
              os << "s" << i + 1 << "_" << l + 1 << " = " << poly_text(d.entries[i * d.noise_dim + l]) << "\n";
        }
      },
      s.diffusion_spec());
  os << "\n";
}

std::string map_text(const MappingK& K) {
  return std::visit(
      [](const auto& m) -> std::string {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearMap>) {
          return "{kind = \"linear\", matrix = " + mat_text(m.K) + "}";
        } else if constexpr (std::is_same_v<T, AffineMap>) {
          return "{kind = \"affine\", matrix = " + mat_text(m.K) + ", offset = " + vec_text(m.b) + "}";
        } else {
          return "{kind = \"tabulated1d\", knots = " + vec_text(m.knots()) + ", values = " + vec_text(m.values()) +
                 "}";
        }
      },
      K.variant());
}

bool same_vector(const Vector& a, const Vector& b) { return a.size() == b.size() && a == b; }

}  // namespace

// ---------------------------------------------------------------------------

ValidationError::ValidationError(std::vector<Issue> issues)
    : Error(ErrorCode::ValidationError,
            [&] {
              std::string msg = "invalid config:";
              for (const Issue& i : issues) msg += "\n  " + i.key + ": " + i.message;
              return msg;
            }()),
      issues_(std::move(issues)) {}

bool ValidationError::mentions(const std::string& key) const {
  return std::any_of(issues_.begin(), issues_.end(), [&](const Issue& i) { return i.key == key; });
}

const char* task_name(TaskKind task) {
  switch (task) {
    case TaskKind::Estimate: return "estimate";
    case TaskKind::Optimize: return "optimize";
    case TaskKind::Dissipation: return "dissipation";
    case TaskKind::Spectrum: return "spectrum";
    case TaskKind::Slln: return "slln";
    case TaskKind::Kstar1d: return "kstar-1d";
    case TaskKind::HartmanGrobman: return "hartman-grobman";
    case TaskKind::Probe: return "probe";
    case TaskKind::MaxPrinciple: return "maxprinciple";
  }
  return "unknown";
}

std::optional<TaskKind> task_from_name(const std::string& name) {
  for (const auto& [t, _] : task_keys())
    if (name == task_name(t)) return t;
  return std::nullopt;
}

EnsembleConfig RunConfig::ensemble_config() const {
  EnsembleConfig c;
  c.sys_x = sys_x;
  c.sys_y = sys_y;
  c.x0 = x0;
  c.y0 = y0;
  c.grid = TimeGrid(horizon, n_steps);
  c.n_paths = n_paths;
  c.master_seed = master_seed;
  c.workers = workers;
  return c;
}

bool RunConfig::operator==(const RunConfig& o) const {
  return name == o.name && sys_x == o.sys_x && sys_y == o.sys_y && same_vector(x0, o.x0) && same_vector(y0, o.y0) &&
         y0_from_map == o.y0_from_map && horizon == o.horizon && n_steps == o.n_steps && n_paths == o.n_paths &&
         master_seed == o.master_seed && workers == o.workers && K == o.K && task == o.task &&
         options == o.options && out_dir == o.out_dir;
}

RunConfig parse_config(const std::string& text) {
  std::vector<Section> sections = Parser(text).parse();
  Reader rd(sections);
  RunConfig cfg;

  cfg.name = rd.string("run.name", "");

  auto sx = read_system(rd, "system.x", false);
  auto sy = read_system(rd, "system.y", true);
  if (sx) cfg.sys_x = *sx;
  if (sy) cfg.sys_y = *sy;
  if (sx && sy) {
    if (sx->noise_dim() != sy->noise_dim())
      rd.issue("system.y", "noise dimension differs from system.x (the Brownian motion is shared)");
    if (sy->drift_input() == DriftInput::Partner && sx->dim() != sy->dim())
      rd.issue("system.y.input", "a partner-driven drift needs equal state dimensions");
  }

  std::string task_text = rd.string("task.name", "", true);
  auto task = task_from_name(task_text);
  if (!task_text.empty() && !task) rd.issue("task.name", "unknown task '" + task_text + "'");
  if (task) {
    cfg.task = *task;
    read_task_options(rd, cfg.task, cfg.options);
  }

  cfg.K = read_map(rd, "map.K");

  if (const Value* v = rd.get("initial.x0")) {
    if (auto x = rd.vector_of("initial.x0", *v)) cfg.x0 = Eigen::Map<const Vector>(x->data(), x->size());
  } else {
    rd.issue("initial.x0", "missing");
  }
  if (sx && cfg.x0.size() > 0 && cfg.x0.size() != sx->dim()) rd.issue("initial.x0", "length must match system.x");

  const Value* yv = rd.get("initial.y0");
  if (task && cfg.task == TaskKind::HartmanGrobman) {
    if (yv) rd.issue("initial.y0", "set by the constructed conjugacy for task hartman-grobman; remove it");
  } else if (!yv) {
    rd.issue("initial.y0", "missing (a vector or \"K(x0)\")");
  } else if (yv->kind == Value::Kind::String) {
    if (yv->text != "K(x0)") {
      rd.issue("initial.y0", "the only directive is \"K(x0)\"");
    } else if (!cfg.K) {
      rd.issue("initial.y0", "\"K(x0)\" needs map.K");
    } else {
      cfg.y0_from_map = true;
      if (cfg.x0.size() == cfg.K->dim()) {
        cfg.y0 = cfg.K->apply(cfg.x0);
      } else if (cfg.x0.size() > 0) {
        rd.issue("map.K", "dimension must match initial.x0");
      }
    }
  } else if (auto y = rd.vector_of("initial.y0", *yv)) {
    cfg.y0 = Eigen::Map<const Vector>(y->data(), y->size());
    if (sy && cfg.y0.size() != sy->dim()) rd.issue("initial.y0", "length must match system.y");
  }

  if (!rd.has_section("grid")) rd.issue("grid", "missing section");
  cfg.horizon = rd.number("grid.T", cfg.horizon, true);
  if (!(cfg.horizon > 0)) rd.issue("grid.T", "must be > 0");
  cfg.n_steps = rd.integer("grid.n_steps", cfg.n_steps, true);
  if (cfg.n_steps < 1) rd.issue("grid.n_steps", "must be >= 1");

  cfg.n_paths = rd.integer("ensemble.n_paths", cfg.n_paths, true);
  if (cfg.n_paths < 1) rd.issue("ensemble.n_paths", "must be >= 1");
  cfg.master_seed = rd.u64("ensemble.master_seed", cfg.master_seed);
  cfg.workers = rd.integer("ensemble.workers", cfg.workers);
  if (cfg.workers < 1) rd.issue("ensemble.workers", "must be >= 1");

  cfg.out_dir = rd.string("output.dir", cfg.out_dir);

  if (task) {
    if (needs_map(cfg.task) && !cfg.K && !rd.has("map.K"))
      rd.issue("map.K", std::string("required by task ") + task_name(cfg.task));
    if (cfg.K && sx && cfg.K->dim() != sx->dim()) rd.issue("map.K", "dimension must match the systems");
    bool scalar = sx && sy && sx->dim() == 1 && sy->dim() == 1;
    if ((cfg.task == TaskKind::Optimize || cfg.task == TaskKind::MaxPrinciple)) {
      if (cfg.K && cfg.options.family != cfg.K->kind())
        rd.issue("map.K", "initial map kind must match task.family");
      if (cfg.options.family == "tabulated1d" && !cfg.K && !rd.has("map.K"))
        rd.issue("map.K", "family tabulated1d needs initial knots");
    }
    if (cfg.task == TaskKind::Kstar1d && sx && sy && !scalar) rd.issue("system.x", "kstar-1d needs scalar systems");
    if (cfg.task == TaskKind::Kstar1d && cfg.x0.size() == 1 &&
        !(cfg.options.x_lo <= cfg.x0[0] && cfg.x0[0] <= cfg.options.x_hi))
      rd.issue("initial.x0", "the anchor must lie in [task.x_lo, task.x_hi]");
    if (cfg.task == TaskKind::HartmanGrobman && sx && sy && !scalar)
      rd.issue("system.x", "hartman-grobman needs scalar systems");
  }

  rd.report_unused({"run", "system.x", "system.y", "initial", "grid", "ensemble", "map", "task", "output"});
  if (!rd.issues().empty()) throw ValidationError(std::move(rd.issues()));
  return cfg;
}

std::string emit_config(const RunConfig& c) {
  std::ostringstream os;
  os << "# simil run configuration\n\n";
  os << "[run]\nname = " << quoted(c.name) << "\n\n";
  emit_system(os, "system.x", c.sys_x);
  emit_system(os, "system.y", c.sys_y);
  os << "[initial]\nx0 = " << vec_text(c.x0) << "\n";
  if (c.task != TaskKind::HartmanGrobman) os << "y0 = " << (c.y0_from_map ? "\"K(x0)\"" : vec_text(c.y0)) << "\n";
  os << "\n[grid]\nT = " << num(c.horizon) << "\nn_steps = " << c.n_steps << "\n\n";
  os << "[ensemble]\nn_paths = " << c.n_paths << "\nmaster_seed = " << c.master_seed << "\nworkers = " << c.workers
     << "\n\n";
  if (c.K) os << "[map]\nK = " << map_text(*c.K) << "\n\n";

  const TaskOptions& o = c.options;
  os << "[task]\nname = " << quoted(task_name(c.task)) << "\n";
  for (const std::string& k : task_keys().at(c.task)) {
    os << k << " = ";
    if (k == "lipschitz") os << num(o.lipschitz);
    else if (k == "family") os << quoted(o.family);
    else if (k == "restarts") os << o.restarts;
    else if (k == "max_iter") os << o.max_iter;
    else if (k == "step") os << num(o.step);
    else if (k == "tol") os << num(o.tol);
    else if (k == "opt_seed") os << o.opt_seed;
    else if (k == "probes") os << o.probes;
    else if (k == "probe_seed") os << o.probe_seed;
    else if (k == "basis_degree") os << o.basis_degree;
    else if (k == "which") os << quoted(o.which);
    else if (k == "lyap_horizon") os << num(o.lyap_horizon);
    else if (k == "lyap_dt") os << num(o.lyap_dt);
    else if (k == "n_seeds") os << o.n_seeds;
    else if (k == "lyap_seed") os << o.lyap_seed;
    else if (k == "epsilon") os << num(o.epsilon);
    else if (k == "x_lo") os << num(o.x_lo);
    else if (k == "x_hi") os << num(o.x_hi);
    else if (k == "ode_steps") os << o.ode_steps;
    else if (k == "delta") os << num(o.delta);
    else if (k == "grid_size") os << o.grid_size;
    else if (k == "n_samples") os << o.n_samples;
    else if (k == "radius") os << num(o.radius);
    else if (k == "max_samples") os << o.max_samples;
    os << "\n";
  }
  os << "\n[output]\ndir = " << quoted(c.out_dir) << "\n";
  return os.str();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : emit_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace simil
