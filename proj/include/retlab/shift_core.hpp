#pragma once

// Alphabet, cylinder patterns, shift-invariant measures and exact
// elementary probabilities on the one-sided full shift.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <charconv>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "retlab/error.hpp"
#include "retlab/numeric.hpp"

namespace retlab {

using Symbol = unsigned;

/// A cylinder word [a_1 ... a_l]; its length is the cylinder depth n_A.
class Pattern {
 public:
  Pattern() = default;
  explicit Pattern(std::vector<Symbol> symbols) : symbols_(std::move(symbols)) {
    require(!symbols_.empty(), ErrorCode::invalid_argument, "pattern must be non-empty");
  }

  /// Digits 0-9 then letters a-z, e.g. "0120".
  static Pattern parse(std::string_view text) {
    std::vector<Symbol> symbols;
    symbols.reserve(text.size());
    for (char c : text) {
      if (c >= '0' && c <= '9') {
        symbols.push_back(static_cast<Symbol>(c - '0'));
      } else if (c >= 'a' && c <= 'z') {
        symbols.push_back(static_cast<Symbol>(10 + c - 'a'));
      } else {
        throw Error(ErrorCode::invalid_argument,
                    "invalid pattern symbol '" + std::string(1, c) + "'");
      }
    }
    return Pattern(std::move(symbols));
  }

  [[nodiscard]] std::size_t length() const noexcept { return symbols_.size(); }
  [[nodiscard]] std::span<const Symbol> symbols() const noexcept { return symbols_; }
  [[nodiscard]] Symbol operator[](std::size_t i) const { return symbols_[i]; }
  [[nodiscard]] Symbol front() const { return symbols_.front(); }
  [[nodiscard]] Symbol back() const { return symbols_.back(); }
  [[nodiscard]] Symbol max_symbol() const {
    return *std::max_element(symbols_.begin(), symbols_.end());
  }

  [[nodiscard]] std::string str() const {
    std::string s;
    s.reserve(symbols_.size());
    for (Symbol a : symbols_) s.push_back(a < 10 ? char('0' + a) : char('a' + (a - 10)));
    return s;
  }

  void validate(unsigned q) const {
    require(!symbols_.empty(), ErrorCode::invalid_argument, "pattern must be non-empty");
    if (max_symbol() >= q) {
      throw Error(ErrorCode::alphabet_mismatch,
                  "pattern '" + str() + "' uses a symbol outside the alphabet of size " +
                      std::to_string(q));
    }
  }

  friend bool operator==(const Pattern&, const Pattern&) = default;

 private:
  std::vector<Symbol> symbols_;
};

/// KMP failure function: border[i] = longest proper border of the prefix of
/// length i, for i = 0..l (border[0] = 0 by convention).
inline std::vector<std::size_t> border_table(const Pattern& pattern) {
  const std::size_t l = pattern.length();
  std::vector<std::size_t> border(l + 1, 0);
  std::size_t k = 0;
  for (std::size_t i = 1; i < l; ++i) {
    while (k > 0 && pattern[i] != pattern[k]) k = border[k];
    if (pattern[i] == pattern[k]) ++k;
    border[i + 1] = k;
  }
  return border;
}

/// All periods p in [0, l) (p = 0 included), ascending, derived from the
/// border chain of the full word.
inline std::vector<std::size_t> periods(const Pattern& pattern) {
  const std::size_t l = pattern.length();
  auto border = border_table(pattern);
  std::vector<std::size_t> result{0};
  for (std::size_t b = border[l]; b > 0; b = border[b]) result.push_back(l - b);
  std::sort(result.begin(), result.end());
  return result;
}

inline bool is_period(const Pattern& pattern, std::size_t p) {
  for (std::size_t i = 0; i + p < pattern.length(); ++i) {
    if (pattern[i] != pattern[i + p]) return false;
  }
  return true;
}

enum class MeasureKind { uniform, bernoulli, markov };

/// Exact integer weights for scaled iteration: every probability equals
/// numerator / denominator with one common denominator.
struct ExactWeights {
  BigInt denominator;
  std::vector<BigInt> initial;     // q entries
  std::vector<BigInt> transition;  // q*q entries, row-major; rows equal for i.i.d.
};

/// Uniform, Bernoulli or Markov shift-invariant measure with exact rational
/// parameters and double mirrors.
class Measure {
 public:
  static Measure uniform(unsigned q) {
    require(q >= 2, ErrorCode::invalid_argument, "alphabet size must be at least 2");
    Measure m;
    m.kind_ = MeasureKind::uniform;
    m.q_ = q;
    m.initial_.assign(q, Rational(1, q));
    m.finish();
    return m;
  }

  static Measure bernoulli(std::vector<Rational> p) {
    require(p.size() >= 2, ErrorCode::invalid_argument, "alphabet size must be at least 2");
    Rational total = 0;
    for (const auto& x : p) {
      require(sgn(x) > 0, ErrorCode::invalid_argument, "Bernoulli weights must be positive");
      total += x;
    }
    require(std::fabs(to_double(total) - 1.0) <= 1e-12, ErrorCode::invalid_argument,
            "Bernoulli weights must sum to 1");
    for (auto& x : p) x = canonical(x / total);
    Measure m;
    m.kind_ = MeasureKind::bernoulli;
    m.q_ = static_cast<unsigned>(p.size());
    m.initial_ = std::move(p);
    m.finish();
    return m;
  }

  /// Row-major q*q strictly positive stochastic matrix; the stationary
  /// vector is solved exactly.
  static Measure markov(std::vector<Rational> matrix) {
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(double(matrix.size()))));
    require(n >= 2 && n * n == matrix.size(), ErrorCode::invalid_argument,
            "transition matrix must be square with size at least 2");
    for (std::size_t i = 0; i < n; ++i) {
      Rational row = 0;
      for (std::size_t j = 0; j < n; ++j) {
        require(sgn(matrix[i * n + j]) > 0, ErrorCode::invalid_argument,
                "transition matrix entries must be strictly positive");
        row += matrix[i * n + j];
      }
      require(std::fabs(to_double(row) - 1.0) <= 1e-12, ErrorCode::invalid_argument,
              "transition matrix rows must sum to 1");
      for (std::size_t j = 0; j < n; ++j) matrix[i * n + j] = canonical(matrix[i * n + j] / row);
    }
    Measure m;
    m.kind_ = MeasureKind::markov;
    m.q_ = static_cast<unsigned>(n);
    m.transition_ = std::move(matrix);
    m.initial_ = stationary(m.transition_, n);
    m.finish();
    // pi P = pi, checked in floating point as an independent sanity check.
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += m.initial_d_[i] * m.transition_d_[i * n + j];
      require(std::fabs(acc - m.initial_d_[j]) <= 1e-12, ErrorCode::invalid_argument,
              "stationary vector check failed");
    }
    return m;
  }

  /// "uniform:Q", "bernoulli:p0,p1,...", "markov:r0c0,r0c1;r1c0,r1c1".
  static Measure parse(std::string_view text) {
    auto colon = text.find(':');
    require(colon != std::string_view::npos, ErrorCode::invalid_argument,
            "measure spec must look like type:params");
    auto type = text.substr(0, colon);
    auto rest = text.substr(colon + 1);
    auto split = [](std::string_view s, char sep) {
      std::vector<std::string_view> parts;
      std::size_t start = 0;
      while (true) {
        auto pos = s.find(sep, start);
        parts.push_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
      }
      return parts;
    };
    if (type == "uniform") {
      unsigned q = 0;
      auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), q);
      require(ec == std::errc() && ptr == rest.data() + rest.size(), ErrorCode::invalid_argument,
              "uniform measure needs an integer alphabet size");
      return uniform(q);
    }
    if (type == "bernoulli") {
      std::vector<Rational> p;
      for (auto part : split(rest, ',')) p.push_back(parse_rational(part));
      return bernoulli(std::move(p));
    }
    if (type == "markov") {
      std::vector<Rational> matrix;
      auto rows = split(rest, ';');
      for (auto row : rows) {
        auto cells = split(row, ',');
        require(cells.size() == rows.size(), ErrorCode::invalid_argument,
                "markov rows must have q entries");
        for (auto cell : cells) matrix.push_back(parse_rational(cell));
      }
      return markov(std::move(matrix));
    }
    throw Error(ErrorCode::invalid_argument, "unknown measure type '" + std::string(type) + "'");
  }

  /// {type, q, p?, P?}; numbers or "a/b" strings; pi is never accepted.
  static Measure from_json(const nlohmann::json& j) {
    require(j.is_object(), ErrorCode::invalid_argument, "measure config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& key = it.key();
      require(key == "type" || key == "q" || key == "p" || key == "P",
              ErrorCode::invalid_argument, "unknown measure key '" + key + "'");
    }
    require(j.contains("type") && j.at("type").is_string(), ErrorCode::invalid_argument,
            "measure config needs a string 'type'");
    const auto type = j.at("type").get<std::string>();
    auto number = [](const nlohmann::json& v) {
      if (v.is_string()) return parse_rational(v.get<std::string>());
      require(v.is_number(), ErrorCode::invalid_argument, "expected a number");
      if (v.is_number_integer()) return Rational(v.get<long>());
      return rational_from_double(v.get<double>());
    };
    std::optional<unsigned> q;
    if (j.contains("q")) {
      require(j.at("q").is_number_unsigned(), ErrorCode::invalid_argument, "q must be a positive integer");
      q = j.at("q").get<unsigned>();
    }
    Measure m;
    if (type == "uniform") {
      require(q.has_value(), ErrorCode::invalid_argument, "uniform measure needs q");
      require(!j.contains("p") && !j.contains("P"), ErrorCode::invalid_argument,
              "uniform measure takes no parameters");
      m = uniform(*q);
    } else if (type == "bernoulli") {
      require(j.contains("p") && j.at("p").is_array() && !j.contains("P"),
              ErrorCode::invalid_argument, "bernoulli measure needs array 'p'");
      std::vector<Rational> p;
      for (const auto& v : j.at("p")) p.push_back(number(v));
      m = bernoulli(std::move(p));
    } else if (type == "markov") {
      require(j.contains("P") && j.at("P").is_array() && !j.contains("p"),
              ErrorCode::invalid_argument, "markov measure needs matrix 'P'");
      std::vector<Rational> matrix;
      for (const auto& row : j.at("P")) {
        require(row.is_array() && row.size() == j.at("P").size(), ErrorCode::invalid_argument,
                "markov matrix must be square");
        for (const auto& v : row) matrix.push_back(number(v));
      }
      m = markov(std::move(matrix));
    } else {
      throw Error(ErrorCode::invalid_argument, "unknown measure type '" + type + "'");
    }
    require(!q || *q == m.q(), ErrorCode::invalid_argument, "q does not match the parameters");
    return m;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    switch (kind_) {
      case MeasureKind::uniform:
        j = {{"type", "uniform"}, {"q", q_}};
        break;
      case MeasureKind::bernoulli: {
        j = {{"type", "bernoulli"}, {"q", q_}};
        auto& p = j["p"] = nlohmann::json::array();
        for (const auto& x : initial_) p.push_back(to_string(x));
        break;
      }
      case MeasureKind::markov: {
        j = {{"type", "markov"}, {"q", q_}};
        auto& rows = j["P"] = nlohmann::json::array();
        for (unsigned a = 0; a < q_; ++a) {
          auto row = nlohmann::json::array();
          for (unsigned b = 0; b < q_; ++b) row.push_back(to_string(transition(a, b)));
          rows.push_back(row);
        }
        auto& pi = j["pi"] = nlohmann::json::array();
        for (const auto& x : initial_) pi.push_back(to_string(x));
        break;
      }
    }
    return j;
  }

  [[nodiscard]] MeasureKind kind() const noexcept { return kind_; }
  [[nodiscard]] unsigned q() const noexcept { return q_; }
  [[nodiscard]] bool is_markov() const noexcept { return kind_ == MeasureKind::markov; }
  [[nodiscard]] bool is_uniform() const noexcept { return kind_ == MeasureKind::uniform; }

  /// Law of a single coordinate: p for i.i.d. measures, pi for Markov.
  [[nodiscard]] const Rational& initial(Symbol a) const { return initial_[a]; }
  [[nodiscard]] double initial_d(Symbol a) const { return initial_d_[a]; }

  /// Probability of symbol b following symbol a.
  [[nodiscard]] const Rational& transition(Symbol a, Symbol b) const {
    return is_markov() ? transition_[a * q_ + b] : initial_[b];
  }
  [[nodiscard]] double transition_d(Symbol a, Symbol b) const {
    return is_markov() ? transition_d_[a * q_ + b] : initial_d_[b];
  }

  [[nodiscard]] const ExactWeights& exact_weights() const noexcept { return weights_; }

  /// Measure of the cylinder word w.
  [[nodiscard]] Rational word_measure(std::span<const Symbol> word) const {
    require(!word.empty(), ErrorCode::invalid_argument, "empty word");
    Rational r = initial(word[0]);
    for (std::size_t i = 1; i < word.size(); ++i) r *= transition(word[i - 1], word[i]);
    return r;
  }

  /// Exact n-step transition matrix (row-major q*q).
  [[nodiscard]] std::vector<Rational> transition_power(std::size_t n) const {
    std::vector<Rational> result(std::size_t(q_) * q_, Rational(0));
    for (unsigned i = 0; i < q_; ++i) result[i * q_ + i] = 1;
    for (std::size_t step = 0; step < n; ++step) {
      std::vector<Rational> next(std::size_t(q_) * q_, Rational(0));
      for (unsigned i = 0; i < q_; ++i)
        for (unsigned k = 0; k < q_; ++k)
          for (unsigned j = 0; j < q_; ++j)
            next[i * q_ + j] += result[i * q_ + k] * transition(k, j);
      result = std::move(next);
    }
    return result;
  }

 private:
  static std::vector<Rational> stationary(const std::vector<Rational>& P, std::size_t n) {
    // Solve pi (P - I) = 0 with sum(pi) = 1: rows of the system are the
    // columns of P - I, the last one replaced by the normalisation.
    std::vector<std::vector<Rational>> a(n, std::vector<Rational>(n + 1, Rational(0)));
    for (std::size_t row = 0; row + 1 < n; ++row) {
      for (std::size_t i = 0; i < n; ++i) a[row][i] = P[i * n + row] - (i == row ? 1 : 0);
    }
    for (std::size_t i = 0; i <= n; ++i) a[n - 1][i] = 1;
    for (std::size_t col = 0; col < n; ++col) {
      std::size_t pivot = col;
      while (pivot < n && sgn(a[pivot][col]) == 0) ++pivot;
      require(pivot < n, ErrorCode::invalid_argument, "singular stationary system");
      std::swap(a[pivot], a[col]);
      for (std::size_t row = 0; row < n; ++row) {
        if (row == col || sgn(a[row][col]) == 0) continue;
        Rational factor = a[row][col] / a[col][col];
        for (std::size_t k = col; k <= n; ++k) a[row][k] -= factor * a[col][k];
      }
    }
    std::vector<Rational> pi(n);
    for (std::size_t i = 0; i < n; ++i) pi[i] = canonical(a[i][n] / a[i][i]);
    return pi;
  }

  void finish() {
    initial_d_.resize(q_);
    for (unsigned a = 0; a < q_; ++a) initial_d_[a] = to_double(initial_[a]);
    transition_d_.resize(transition_.size());
    for (std::size_t i = 0; i < transition_.size(); ++i) transition_d_[i] = to_double(transition_[i]);

    BigInt d = 1;
    for (const auto& x : initial_) d = lcm(d, BigInt(x.get_den()));
    for (const auto& x : transition_) d = lcm(d, BigInt(x.get_den()));
    weights_.denominator = d;
    weights_.initial.resize(q_);
    weights_.transition.resize(std::size_t(q_) * q_);
    for (unsigned a = 0; a < q_; ++a) {
      Rational scaled = initial_[a] * d;
      weights_.initial[a] = scaled.get_num();
      for (unsigned b = 0; b < q_; ++b) {
        Rational t = transition(a, b) * d;
        weights_.transition[a * q_ + b] = t.get_num();
      }
    }
  }

  MeasureKind kind_ = MeasureKind::uniform;
  unsigned q_ = 0;
  std::vector<Rational> initial_;
  std::vector<Rational> transition_;
  std::vector<double> initial_d_;
  std::vector<double> transition_d_;
  ExactWeights weights_;
};

struct Probability {
  Rational exact;
  double value = 0.0;
};

inline Probability make_probability(Rational r) {
  r.canonicalize();
  double v = to_double(r);
  return {std::move(r), v};
}

/// mu([a_1 ... a_l]).
inline Probability pattern_measure(const Pattern& pattern, const Measure& measure) {
  pattern.validate(measure.q());
  return make_probability(measure.word_measure(pattern.symbols()));
}

/// mu(A ∩ T^{-i} A) for i >= 1.
inline Probability overlap_measure(const Pattern& pattern, std::size_t i, const Measure& measure) {
  require(i >= 1, ErrorCode::invalid_argument, "overlap shift must be at least 1");
  pattern.validate(measure.q());
  const std::size_t l = pattern.length();
  if (i < l) {
    if (!is_period(pattern, i)) return make_probability(Rational(0));
    std::vector<Symbol> merged(pattern.symbols().begin(), pattern.symbols().end());
    for (std::size_t j = l - i; j < l; ++j) merged.push_back(pattern[j]);
    return make_probability(measure.word_measure(merged));
  }
  const Rational mu = measure.word_measure(pattern.symbols());
  if (!measure.is_markov()) return make_probability(mu * mu);
  // i - l free symbols between the copies: i - l + 1 transitions bridge them.
  auto bridge = measure.transition_power(i - l + 1);
  const Rational& link = bridge[pattern.back() * measure.q() + pattern.front()];
  return make_probability(mu * link / measure.initial(pattern.front()) * mu);
}

enum class FamilyKind { constant, periodic, fibonacci, champernowne, explicit_list };

/// A sequence of shrinking cylinders A_n. Generated families are indexed by
/// the word length n in [min_length, max_length]; explicit families by the
/// list index n in [0, size).
struct PatternFamily {
  FamilyKind kind = FamilyKind::fibonacci;
  Symbol symbol = 0;
  Pattern word;
  std::vector<Pattern> members;
  std::size_t min_length = 1;
  std::size_t max_length = 64;

  static PatternFamily constant(Symbol s, std::size_t lo, std::size_t hi) {
    PatternFamily f;
    f.kind = FamilyKind::constant;
    f.symbol = s;
    f.min_length = lo;
    f.max_length = hi;
    return f;
  }
  static PatternFamily periodic(Pattern w, std::size_t lo, std::size_t hi) {
    PatternFamily f;
    f.kind = FamilyKind::periodic;
    f.word = std::move(w);
    f.min_length = lo;
    f.max_length = hi;
    return f;
  }
  static PatternFamily fibonacci(std::size_t lo, std::size_t hi) {
    PatternFamily f;
    f.kind = FamilyKind::fibonacci;
    f.min_length = lo;
    f.max_length = hi;
    return f;
  }
  static PatternFamily champernowne(std::size_t lo, std::size_t hi) {
    PatternFamily f;
    f.kind = FamilyKind::champernowne;
    f.min_length = lo;
    f.max_length = hi;
    return f;
  }
  static PatternFamily explicit_list(std::vector<Pattern> list) {
    PatternFamily f;
    f.kind = FamilyKind::explicit_list;
    require(!list.empty(), ErrorCode::invalid_argument, "explicit family needs patterns");
    f.members = std::move(list);
    f.min_length = 0;
    f.max_length = f.members.size() - 1;
    return f;
  }

  /// "constant:0", "periodic:01", "fibonacci", "champernowne", "explicit:01,110".
  static PatternFamily parse(std::string_view text, std::size_t lo, std::size_t hi) {
    auto colon = text.find(':');
    auto type = text.substr(0, colon);
    auto arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    if (type == "constant") return constant(arg.empty() ? 0 : Pattern::parse(arg).front(), lo, hi);
    if (type == "periodic") return periodic(Pattern::parse(arg), lo, hi);
    if (type == "fibonacci") return fibonacci(lo, hi);
    if (type == "champernowne") return champernowne(lo, hi);
    if (type == "explicit") {
      std::vector<Pattern> list;
      std::size_t start = 0;
      while (start <= arg.size()) {
        auto pos = arg.find(',', start);
        list.push_back(Pattern::parse(arg.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
      }
      return explicit_list(std::move(list));
    }
    throw Error(ErrorCode::invalid_argument, "unknown family '" + std::string(text) + "'");
  }

  [[nodiscard]] std::string name() const {
    switch (kind) {
      case FamilyKind::constant: return "constant:" + Pattern(std::vector<Symbol>{symbol}).str();
      case FamilyKind::periodic: return "periodic:" + word.str();
      case FamilyKind::fibonacci: return "fibonacci";
      case FamilyKind::champernowne: return "champernowne";
      case FamilyKind::explicit_list: return "explicit";
    }
    return "?";
  }

  /// Prefix period m for constant/periodic families, 0 otherwise.
  [[nodiscard]] std::size_t period() const noexcept {
    if (kind == FamilyKind::constant) return 1;
    if (kind == FamilyKind::periodic) return word.length();
    return 0;
  }
};

/// Fibonacci word prefix from the substitution 0 -> 01, 1 -> 0.
inline std::vector<Symbol> fibonacci_prefix(std::size_t n) {
  std::vector<Symbol> w{0};
  while (w.size() < n) {
    std::vector<Symbol> next;
    next.reserve(2 * w.size());
    for (Symbol a : w) {
      if (a == 0) {
        next.push_back(0);
        next.push_back(1);
      } else {
        next.push_back(0);
      }
    }
    w = std::move(next);
  }
  w.resize(n);
  return w;
}

/// Concatenated base-q numerals 1, 2, 3, ... (base-q Champernowne word).
inline std::vector<Symbol> champernowne_prefix(std::size_t n, unsigned q) {
  std::vector<Symbol> w;
  for (std::uint64_t k = 1; w.size() < n; ++k) {
    std::vector<Symbol> digits;
    for (std::uint64_t x = k; x > 0; x /= q) digits.push_back(static_cast<Symbol>(x % q));
    w.insert(w.end(), digits.rbegin(), digits.rend());
  }
  w.resize(n);
  return w;
}

inline Pattern family_member(const PatternFamily& family, std::size_t n, unsigned q = 2) {
  if (n < family.min_length || n > family.max_length) {
    throw Error(ErrorCode::out_of_range,
                "family member " + std::to_string(n) + " outside [" +
                    std::to_string(family.min_length) + ", " + std::to_string(family.max_length) + "]");
  }
  switch (family.kind) {
    case FamilyKind::constant:
      return Pattern(std::vector<Symbol>(n, family.symbol));
    case FamilyKind::periodic: {
      std::vector<Symbol> w(n);
      for (std::size_t i = 0; i < n; ++i) w[i] = family.word[i % family.word.length()];
      return Pattern(std::move(w));
    }
    case FamilyKind::fibonacci:
      return Pattern(fibonacci_prefix(n));
    case FamilyKind::champernowne:
      return Pattern(champernowne_prefix(n, q));
    case FamilyKind::explicit_list:
      return family.members[n];
  }
  throw Error(ErrorCode::invalid_argument, "bad family kind");
}

}  // namespace retlab
