#pragma once

// Trajectory sampling of hitting and return times, Kolmogorov-Smirnov
// distance to Exp(1), and the generalized hitting time tau_f of a [0,1]-valued
// finite-depth observable, sampled and computed exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "retlab/avoidance.hpp"
#include "retlab/error.hpp"
#include "retlab/laplace.hpp"
#include "retlab/numeric.hpp"
#include "retlab/parallel.hpp"
#include "retlab/shift_core.hpp"

namespace retlab {

// ---------------------------------------------------------------------------
// Random numbers: "retlab-ctr-v1".
//
// Trajectory i of seed s draws from a splitmix64 sequence whose starting
// state is mix(s ^ mix(i + gamma)); output n is mix(start + n * gamma).

inline constexpr std::string_view kRngName = "retlab-ctr-v1";
inline constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : state_(splitmix64_mix(seed ^ splitmix64_mix(stream + kGamma))) {}

  std::uint64_t next() noexcept {
    state_ += kGamma;
    return splitmix64_mix(state_);
  }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Draws symbols of a measure from a CounterRng. Uniform measures over a
/// power-of-two alphabet consume raw bits; everything else inverts the
/// cumulative row in double precision.
class SymbolStream {
 public:
  SymbolStream(const Measure& measure, std::uint64_t seed, std::uint64_t stream)
      : rng_(seed, stream), q_(measure.q()), markov_(measure.is_markov()) {
    if (measure.is_uniform() && (q_ & (q_ - 1)) == 0) {
      bits_ = 0;
      while ((1u << bits_) < q_) ++bits_;
    }
    auto fill = [&](std::vector<double>& row, auto weight) {
      row.resize(q_);
      double acc = 0;
      for (unsigned b = 0; b < q_; ++b) row[b] = acc += weight(b);
      row.back() = 1.0;
    };
    fill(first_, [&](unsigned b) { return measure.initial_d(b); });
    rows_.resize(markov_ ? q_ : 1);
    for (unsigned a = 0; a < rows_.size(); ++a) fill(rows_[a], [&](unsigned b) { return measure.transition_d(a, b); });
  }

  Symbol first() { return bits_ ? draw_bits() : invert(first_); }
  Symbol next(Symbol previous) {
    if (bits_) return draw_bits();
    return invert(rows_[markov_ ? previous : 0]);
  }
  CounterRng& rng() noexcept { return rng_; }

 private:
  Symbol draw_bits() {
    if (left_ < bits_) {
      buffer_ = rng_.next();
      left_ = 64;
    }
    const auto s = static_cast<Symbol>(buffer_ & ((1u << bits_) - 1));
    buffer_ >>= bits_;
    left_ -= bits_;
    return s;
  }
  Symbol invert(const std::vector<double>& row) {
    const double u = rng_.uniform();
    Symbol b = 0;
    while (u >= row[b]) ++b;
    return b;
  }

  CounterRng rng_;
  unsigned q_;
  bool markov_;
  unsigned bits_ = 0;
  std::uint64_t buffer_ = 0;
  unsigned left_ = 0;
  std::vector<double> first_;
  std::vector<std::vector<double>> rows_;
};

// ---------------------------------------------------------------------------
// Sampling statistics.

struct SampleOptions {
  std::size_t N = 100000;
  std::uint64_t seed = 20240611;
  unsigned jobs = 1;
  std::size_t tail_k_max = 20;
  double cap_factor = 1000;  // per-trajectory cap = cap_factor / mu
  bool keep_samples = false;
  std::vector<double> t_grid = default_t_grid();
};

struct SampleStats {
  std::string kind;
  std::string target;
  std::string rng{kRngName};
  std::uint64_t seed = 0;
  std::size_t N = 0;
  std::size_t used = 0;
  std::size_t capped = 0;
  std::uint64_t cap = 0;
  double mu = 0;  // scaling used for the scaled laws
  double mean = 0;
  double variance = 0;
  std::vector<double> tail;  // empirical P(tau > k), k = 0..tail_k_max
  std::vector<double> t_grid;
  std::vector<double> scaled_cdf;  // empirical P(mu tau <= t)
  double ks = 0;
  double kac_product = 0;  // mean * mu
  double kac_sigma = 0;    // standard error of mean * mu
  std::vector<std::uint64_t> samples;
};

/// sup_t |F_n(t) - (1 - e^{-t})| for the empirical law of the given values.
inline double ks_exponential(std::vector<double> values) {
  require(!values.empty(), ErrorCode::invalid_argument, "no samples");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0;
  for (std::size_t i = 0; i < values.size();) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    const double F = -std::expm1(-std::max(0.0, values[i]));
    d = std::max({d, std::fabs(static_cast<double>(i) / n - F), std::fabs(static_cast<double>(j) / n - F)});
    i = j;
  }
  return d;
}

inline double ks_exponential(std::span<const std::uint64_t> taus, double mu) {
  std::vector<double> scaled(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) scaled[i] = mu * static_cast<double>(taus[i]);
  return ks_exponential(std::move(scaled));
}

namespace detail {

inline SampleStats summarize(std::string kind, std::string target, std::vector<std::uint64_t> raw, double mu,
                             std::uint64_t cap, const SampleOptions& opt) {
  SampleStats s;
  s.kind = std::move(kind);
  s.target = std::move(target);
  s.seed = opt.seed;
  s.N = opt.N;
  s.cap = cap;
  s.mu = mu;
  std::vector<std::uint64_t> taus;
  taus.reserve(raw.size());
  for (auto t : raw) {
    if (t == 0) {
      ++s.capped;
    } else {
      taus.push_back(t);
    }
  }
  s.used = taus.size();
  require(s.used > 0, ErrorCode::budget_exceeded, "every trajectory hit the step cap");
  std::sort(taus.begin(), taus.end());
  CompensatedSum sum, sq;
  for (auto t : taus) sum.add(static_cast<double>(t));
  s.mean = sum.value() / static_cast<double>(s.used);
  for (auto t : taus) sq.add((static_cast<double>(t) - s.mean) * (static_cast<double>(t) - s.mean));
  s.variance = s.used > 1 ? sq.value() / static_cast<double>(s.used - 1) : 0.0;
  const double n = static_cast<double>(s.used);
  s.tail.resize(opt.tail_k_max + 1);
  for (std::size_t k = 0; k <= opt.tail_k_max; ++k) {
    auto above = taus.end() - std::upper_bound(taus.begin(), taus.end(), static_cast<std::uint64_t>(k));
    s.tail[k] = static_cast<double>(above) / n;
  }
  s.t_grid = opt.t_grid;
  for (double t : opt.t_grid) {
    // mu tau <= t  <=>  tau <= floor(t / mu)
    const auto limit = static_cast<std::uint64_t>(std::floor(t / mu));
    s.scaled_cdf.push_back(static_cast<double>(std::upper_bound(taus.begin(), taus.end(), limit) - taus.begin()) / n);
  }
  s.ks = ks_exponential(taus, mu);
  s.kac_product = s.mean * mu;
  s.kac_sigma = std::sqrt(s.variance / n) * mu;
  if (opt.keep_samples) s.samples = std::move(taus);
  return s;
}

inline std::uint64_t step_cap(double cap_factor, double mu) {
  const double cap = std::ceil(cap_factor / mu);
  require(cap < 9e18, ErrorCode::budget_exceeded, "step cap does not fit in 64 bits");
  return static_cast<std::uint64_t>(cap);
}

// Runs the pattern automaton from `state` after `prev` was the last symbol read
// at position j0 - 1; returns tau = j - l + 1 at the first full match, or 0
// when tau would exceed the cap.
inline std::uint64_t run_to_match(const AvoidanceAutomaton& dfa, SymbolStream& in, std::size_t state,
                                  Symbol prev, std::uint64_t j0, std::uint64_t cap) {
  const std::size_t l = dfa.length();
  const std::uint64_t last = cap + l - 1;
  for (std::uint64_t j = j0; j <= last; ++j) {
    prev = in.next(prev);
    state = dfa.next(state, prev);
    if (state == l) return j - l + 1;
  }
  return 0;
}

}  // namespace detail

/// tau_A = first k >= 1 with an occurrence of the pattern at shift k, on N
/// stationary trajectories.
inline SampleStats sample_hitting(const Measure& measure, const Pattern& pattern, const SampleOptions& opt = {}) {
  require(opt.N >= 1, ErrorCode::invalid_argument, "N must be at least 1");
  pattern.validate(measure.q());
  const AvoidanceAutomaton dfa(pattern, measure.q());
  const double mu = pattern_measure(pattern, measure).value;
  const auto cap = detail::step_cap(opt.cap_factor, mu);
  std::vector<std::uint64_t> raw(opt.N);
  parallel_for(opt.N, opt.jobs, [&](std::size_t i) {
    SymbolStream in(measure, opt.seed, i);
    const Symbol x0 = in.first();
    raw[i] = detail::run_to_match(dfa, in, 0, x0, 1, cap);
  });
  return detail::summarize("hitting", pattern.str(), std::move(raw), mu, cap, opt);
}

/// First return to the pattern cylinder from the conditioned start: the
/// pattern occupies positions 0..l-1 and the chain continues from its last
/// symbol.
inline SampleStats sample_return(const Measure& measure, const Pattern& pattern, const SampleOptions& opt = {}) {
  require(opt.N >= 1, ErrorCode::invalid_argument, "N must be at least 1");
  pattern.validate(measure.q());
  const AvoidanceAutomaton dfa(pattern, measure.q());
  const double mu = pattern_measure(pattern, measure).value;
  const auto cap = detail::step_cap(opt.cap_factor, mu);
  std::vector<std::uint64_t> raw(opt.N);
  parallel_for(opt.N, opt.jobs, [&](std::size_t i) {
    SymbolStream in(measure, opt.seed, i);
    raw[i] = detail::run_to_match(dfa, in, dfa.restart_state(), pattern.back(), pattern.length(), cap);
  });
  return detail::summarize("return", pattern.str(), std::move(raw), mu, cap, opt);
}

inline bool kac_ok(const SampleStats& s, double sigmas = 3) {
  return std::fabs(s.kac_product - 1) <= sigmas * s.kac_sigma;
}

struct TailComparison {
  bool within = true;
  double worst_excess = -1e300;  // max_k |emp - exact| - band(k)
  std::size_t k_max = 0;
};

/// |empirical - exact| < sigmas * sqrt(p(1-p)/N) + 1e-6 for k <= min(k_max, sizes).
inline TailComparison compare_tails(const SampleStats& s, std::span<const double> exact, double sigmas = 3) {
  TailComparison c;
  c.k_max = std::min(s.tail.size(), exact.size()) - 1;
  const double n = static_cast<double>(s.used);
  for (std::size_t k = 0; k <= c.k_max; ++k) {
    const double p = exact[k];
    const double band = sigmas * std::sqrt(std::max(0.0, p * (1 - p)) / n) + 1e-6;
    const double excess = std::fabs(s.tail[k] - p) - band;
    c.worst_excess = std::max(c.worst_excess, excess);
    if (excess >= 0) c.within = false;
  }
  return c;
}

inline nlohmann::json to_json(const SampleStats& s) {
  nlohmann::json j{{"kind", s.kind},
                   {"target", s.target},
                   {"rng", s.rng},
                   {"seed", s.seed},
                   {"N", s.N},
                   {"used", s.used},
                   {"capped", s.capped},
                   {"cap", s.cap},
                   {"mu", s.mu},
                   {"mean", s.mean},
                   {"variance", s.variance},
                   {"tail", s.tail},
                   {"t_grid", s.t_grid},
                   {"scaled_cdf", s.scaled_cdf},
                   {"ks", s.ks},
                   {"kac_product", s.kac_product},
                   {"kac_sigma", s.kac_sigma},
                   {"kac_ok", kac_ok(s)}};
  return j;
}

// ---------------------------------------------------------------------------
// Observables of finite depth.

/// f(x) = values[x_0 .. x_{w-1}] with rational values in [0, 1]; words not
/// listed have value 0.
class Observable {
 public:
  Observable(unsigned q, std::size_t depth) : q_(q), depth_(depth) {
    require(q >= 2, ErrorCode::invalid_argument, "alphabet size must be at least 2");
    require(depth >= 1, ErrorCode::invalid_argument, "observable depth must be at least 1");
  }

  void set(std::vector<Symbol> word, Rational value) {
    require(word.size() == depth_, ErrorCode::invalid_argument, "observable word has the wrong depth");
    for (auto a : word) require(a < q_, ErrorCode::alphabet_mismatch, "observable symbol outside the alphabet");
    value.canonicalize();
    require(sgn(value) >= 0 && value <= 1, ErrorCode::invalid_argument, "observable values must lie in [0, 1]");
    if (sgn(value) == 0) {
      values_.erase(word);
    } else {
      values_[std::move(word)] = value;
    }
  }

  static Observable indicator(const Pattern& p, unsigned q) { return scaled(p, Rational(1), q); }
  static Observable scaled(const Pattern& p, const Rational& v, unsigned q) {
    p.validate(q);
    Observable f(q, p.length());
    f.set({p.symbols().begin(), p.symbols().end()}, v);
    return f;
  }
  /// 1 on the pattern cylinder, v on the sibling whose last symbol is shifted by one.
  static Observable mixed(const Pattern& p, const Rational& v, unsigned q) {
    auto f = indicator(p, q);
    std::vector<Symbol> sibling(p.symbols().begin(), p.symbols().end());
    sibling.back() = static_cast<Symbol>((sibling.back() + 1) % q);
    f.set(std::move(sibling), v);
    return f;
  }
  static Observable constant(unsigned q, const Rational& v) {
    Observable f(q, 1);
    for (Symbol a = 0; a < q; ++a) f.set({a}, v);
    return f;
  }

  /// "indicator:W", "scaled:W:v", "mixed:W:v", "constant:v".
  static Observable parse(std::string_view text, unsigned q) {
    auto first = text.find(':');
    require(first != std::string_view::npos, ErrorCode::invalid_argument, "observable spec must look like kind:args");
    auto kind = text.substr(0, first);
    auto rest = text.substr(first + 1);
    auto second = rest.find(':');
    auto word = rest.substr(0, second);
    std::optional<Rational> value;
    if (second != std::string_view::npos) value = parse_rational(rest.substr(second + 1));
    if (kind == "indicator") return indicator(Pattern::parse(word), q);
    if (kind == "constant") return constant(q, parse_rational(rest));
    require(value.has_value(), ErrorCode::invalid_argument, "observable spec needs a value");
    if (kind == "scaled") return scaled(Pattern::parse(word), *value, q);
    if (kind == "mixed") return mixed(Pattern::parse(word), *value, q);
    throw Error(ErrorCode::invalid_argument, "unknown observable kind '" + std::string(kind) + "'");
  }

  static Observable from_json(const nlohmann::json& j, unsigned q) {
    require(j.is_object() && j.contains("depth") && j.contains("values"), ErrorCode::invalid_argument,
            "observable JSON needs depth and values");
    Observable f(q, j.at("depth").get<std::size_t>());
    for (const auto& [word, value] : j.at("values").items()) {
      auto p = Pattern::parse(word);
      f.set({p.symbols().begin(), p.symbols().end()},
            value.is_string() ? parse_rational(value.get<std::string>()) : rational_from_double(value.get<double>()));
    }
    return f;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [w, v] : values_) values[Pattern(w).str()] = to_string(v);
    return {{"depth", depth_}, {"values", values}};
  }

  [[nodiscard]] unsigned q() const noexcept { return q_; }
  [[nodiscard]] std::size_t depth() const noexcept { return depth_; }
  [[nodiscard]] const std::map<std::vector<Symbol>, Rational>& values() const noexcept { return values_; }

  /// Least common denominator of all values.
  [[nodiscard]] BigInt denominator() const {
    BigInt d = 1;
    for (const auto& [w, v] : values_) d = lcm(d, v.get_den());
    return d;
  }
  /// mu(supp f).
  [[nodiscard]] Rational support_measure(const Measure& m) const {
    Rational s = 0;
    for (const auto& [w, v] : values_) s += m.word_measure(w);
    return canonical(s);
  }
  /// mu(f = 1).
  [[nodiscard]] Rational one_measure(const Measure& m) const {
    Rational s = 0;
    for (const auto& [w, v] : values_)
      if (v == 1) s += m.word_measure(w);
    return canonical(s);
  }
  [[nodiscard]] Rational l1_norm(const Measure& m) const {
    Rational s = 0;
    for (const auto& [w, v] : values_) s += v * m.word_measure(w);
    return canonical(s);
  }

 private:
  unsigned q_;
  std::size_t depth_;
  std::map<std::vector<Symbol>, Rational> values_;
};

/// Aho-Corasick automaton over the support words. A node of depth w is a full
/// support word and carries the numerator of its value over the common
/// denominator D.
class ObservableAutomaton {
 public:
  explicit ObservableAutomaton(const Observable& f) : q_(f.q()), w_(f.depth()) {
    require(!f.values().empty(), ErrorCode::invalid_argument, "observable must not vanish identically");
    const BigInt D = f.denominator();
    require(D <= BigInt(1'000'000'000), ErrorCode::budget_exceeded, "observable denominator too large");
    denominator_ = D.get_ui();
    depth_.push_back(0);
    value_.push_back(0);
    children_.assign(q_, kNone);
    for (const auto& [word, v] : f.values()) {
      std::size_t node = 0;
      for (auto a : word) {
        if (children_[node * q_ + a] == kNone) {
          children_[node * q_ + a] = depth_.size();
          depth_.push_back(depth_[node] + 1);
          value_.push_back(0);
          children_.resize(children_.size() + q_, kNone);
        }
        node = children_[node * q_ + a];
      }
      const Rational scaled = v * D;
      value_[node] = BigInt(scaled.get_num()).get_ui();
    }
    // Breadth-first completion of the goto function.
    goto_.assign(depth_.size() * q_, 0);
    std::vector<std::size_t> fail(depth_.size(), 0), queue;
    for (unsigned a = 0; a < q_; ++a) {
      const auto c = children_[a];
      if (c != kNone) {
        goto_[a] = c;
        queue.push_back(c);
      }
    }
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const auto node = queue[head];
      for (unsigned a = 0; a < q_; ++a) {
        const auto c = children_[node * q_ + a];
        if (c != kNone) {
          fail[c] = goto_[fail[node] * q_ + a];
          goto_[node * q_ + a] = c;
          queue.push_back(c);
        } else {
          goto_[node * q_ + a] = goto_[fail[node] * q_ + a];
        }
      }
    }
  }

  [[nodiscard]] std::size_t nodes() const noexcept { return depth_.size(); }
  [[nodiscard]] std::size_t next(std::size_t node, Symbol a) const { return goto_[node * q_ + a]; }
  [[nodiscard]] bool full(std::size_t node) const { return depth_[node] == w_; }
  [[nodiscard]] std::uint64_t value(std::size_t node) const { return value_[node]; }
  [[nodiscard]] std::uint64_t denominator() const noexcept { return denominator_; }
  [[nodiscard]] unsigned q() const noexcept { return q_; }
  [[nodiscard]] std::size_t depth() const noexcept { return w_; }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  unsigned q_;
  std::size_t w_;
  std::uint64_t denominator_ = 1;
  std::vector<std::size_t> depth_;
  std::vector<std::uint64_t> value_;
  std::vector<std::size_t> children_;
  std::vector<std::size_t> goto_;
};

namespace detail {

template <class T>
T initial_weight(const Measure& m, Symbol a) {
  if constexpr (std::is_same_v<T, Rational>) {
    return m.initial(a);
  } else {
    return m.initial_d(a);
  }
}
template <class T>
T transition_weight(const Measure& m, Symbol a, Symbol b) {
  if constexpr (std::is_same_v<T, Rational>) {
    return m.transition(a, b);
  } else {
    return m.transition_d(a, b);
  }
}

enum class TaufStart { stationary, on_support, entering_support };

/// Mass over (automaton node, last symbol, partial sum numerator < D). Sums
/// reaching D are absorbed.
template <class T>
class TaufEngine {
 public:
  TaufEngine(const Observable& f, const Measure& m, std::size_t budget)
      : automaton_(f), measure_(m), q_(m.q()), D_(automaton_.denominator()) {
    require(f.q() == m.q(), ErrorCode::alphabet_mismatch, "observable and measure alphabets differ");
    const double states = double(automaton_.nodes()) * q_ * double(D_);
    require(states <= double(budget), ErrorCode::budget_exceeded,
            "tau_f state space " + format_double(states) + " exceeds the budget " + std::to_string(budget));
    size_ = automaton_.nodes() * q_ * D_;
  }

  [[nodiscard]] std::size_t size() const noexcept { return size_; }
  [[nodiscard]] const ObservableAutomaton& automaton() const noexcept { return automaton_; }

  /// Distribution after reading x_0..x_{w-1}, nothing accumulated.
  std::vector<T> initial(TaufStart start) const {
    std::vector<T> mass(automaton_.nodes() * q_, T(0));
    for (Symbol a = 0; a < q_; ++a) mass[index2(automaton_.next(0, a), a)] += initial_weight<T>(measure_, a);
    for (std::size_t step = 1; step < automaton_.depth(); ++step) {
      std::vector<T> next(mass.size(), T(0));
      for (std::size_t node = 0; node < automaton_.nodes(); ++node)
        for (Symbol last = 0; last < q_; ++last) {
          const T& x = mass[index2(node, last)];
          if (x == T(0)) continue;
          for (Symbol a = 0; a < q_; ++a)
            next[index2(automaton_.next(node, a), a)] += x * transition_weight<T>(measure_, last, a);
        }
      mass = std::move(next);
    }
    std::vector<T> out(size_, T(0));
    for (std::size_t node = 0; node < automaton_.nodes(); ++node) {
      if (start == TaufStart::on_support && !automaton_.full(node)) continue;
      for (Symbol last = 0; last < q_; ++last) out[index(node, last, 0)] = mass[index2(node, last)];
    }
    return out;
  }

  /// Reads one symbol and adds f of the word ending there; returns the
  /// absorbed mass. With only_support, transitions not completing a support
  /// word are dropped too (not counted as absorbed).
  T step(std::vector<T>& mass, bool only_support = false) const {
    std::vector<T> next(size_, T(0));
    T absorbed(0);
    for (std::size_t node = 0; node < automaton_.nodes(); ++node)
      for (Symbol last = 0; last < q_; ++last)
        for (std::uint64_t r = 0; r < D_; ++r) {
          const T& x = mass[index(node, last, r)];
          if (x == T(0)) continue;
          for (Symbol a = 0; a < q_; ++a) {
            const auto target = automaton_.next(node, a);
            if (only_support && !automaton_.full(target)) continue;
            const std::uint64_t r2 = r + automaton_.value(target);
            T flow = x * transition_weight<T>(measure_, last, a);
            if (r2 >= D_) {
              absorbed += flow;
            } else {
              next[index(target, a, r2)] += flow;
            }
          }
        }
    mass = std::move(next);
    return absorbed;
  }

 private:
  [[nodiscard]] std::size_t index2(std::size_t node, Symbol last) const { return node * q_ + last; }
  [[nodiscard]] std::size_t index(std::size_t node, Symbol last, std::uint64_t r) const {
    return (node * q_ + last) * D_ + r;
  }

  ObservableAutomaton automaton_;
  Measure measure_;
  unsigned q_;
  std::uint64_t D_;
  std::size_t size_ = 0;
};

template <class T>
T total(const std::vector<T>& v) {
  T s(0);
  for (const auto& x : v) s += x;
  return s;
}

}  // namespace detail

inline constexpr std::size_t kTaufBudget = 1'000'000;

/// Exact mu(tau_f > k), k = 0..K, with tau_f = inf{k >= 1: f(Tx) + ... + f(T^k x) >= 1}.
inline std::vector<Rational> exact_tauf_series(const Observable& f, const Measure& m, std::size_t K,
                                               std::size_t budget = kTaufBudget) {
  detail::TaufEngine<Rational> engine(f, m, budget);
  auto mass = engine.initial(detail::TaufStart::stationary);
  std::vector<Rational> out{canonical(detail::total(mass))};
  for (std::size_t k = 1; k <= K; ++k) {
    engine.step(mass);
    for (auto& x : mass) x.canonicalize();
    out.push_back(canonical(detail::total(mass)));
  }
  return out;
}

/// Floating-point mu(tau_f > k) as values and logs, renormalised each step.
struct TaufSeries {
  std::size_t K = 0;
  double eps = 0;  // mu(supp f)
  std::vector<double> value;
  std::vector<double> log_value;
};

/// Streams log mu(. > k) for the stationary start or, normalised, for the
/// start conditioned on supp f.
class TaufStream {
 public:
  TaufStream(const Observable& f, const Measure& m, detail::TaufStart start, std::size_t budget = kTaufBudget)
      : engine_(f, m, budget), mass_(engine_.initial(start)) {
    const double t = detail::total(mass_);
    require(t > 0, ErrorCode::invalid_argument, "empty start distribution");
    for (auto& x : mass_) x /= t;
  }
  /// log of the tail at the next k (0 first).
  double next_log() {
    if (k_++ > 0) {
      const double absorbed = engine_.step(mass_);
      log_ += std::log1p(-absorbed);
      const double kept = detail::total(mass_);
      if (!(kept > 0)) {
        log_ = -std::numeric_limits<double>::infinity();
        return log_;
      }
      for (auto& x : mass_) x /= kept;
    }
    return log_;
  }

 private:
  detail::TaufEngine<double> engine_;
  std::vector<double> mass_;
  std::size_t k_ = 0;
  double log_ = 0;
};

inline TaufSeries float_tauf_series(const Observable& f, const Measure& m, std::size_t K,
                                    std::size_t budget = kTaufBudget) {
  TaufSeries s;
  s.K = K;
  s.eps = to_double(f.support_measure(m));
  TaufStream stream(f, m, detail::TaufStart::stationary, budget);
  for (std::size_t k = 0; k <= K; ++k) {
    s.log_value.push_back(stream.next_log());
    s.value.push_back(std::exp(s.log_value.back()));
  }
  return s;
}

struct TaufIdentity {
  Rational worst_residual;
  bool zero = true;
  bool k0_consistent = true;  // mu_{A_f}(tau_f > 0) = 1
  std::size_t K = 0;
};

/// mu_{A_f}(tau_f > k) = (s~_f(k) - s~_f(k+1)) / mu(A_f) + mu_{T^{-1}A_f}(tau_f > k+1), exactly.
inline TaufIdentity tauf_identity_check(const Observable& f, const Measure& m, std::size_t K,
                                        std::size_t budget = kTaufBudget) {
  detail::TaufEngine<Rational> engine(f, m, budget);
  const Rational eps = f.support_measure(m);
  auto s = exact_tauf_series(f, m, K + 1, budget);
  auto on = engine.initial(detail::TaufStart::on_support);
  auto entering = engine.initial(detail::TaufStart::stationary);
  engine.step(entering, true);  // the word at shift 1 must lie in supp f
  TaufIdentity id;
  id.K = K;
  id.worst_residual = 0;
  for (std::size_t k = 0; k <= K; ++k) {
    if (k > 0) {
      engine.step(on);
      engine.step(entering);
      for (auto& x : on) x.canonicalize();
      for (auto& x : entering) x.canonicalize();
    }
    const Rational lhs = detail::total(on) / eps;
    const Rational rhs = (s[k] - s[k + 1]) / eps + detail::total(entering) / eps;
    Rational r = abs(lhs - rhs);
    r.canonicalize();
    if (r > id.worst_residual) id.worst_residual = r;
    if (k == 0 && canonical(lhs) != 1) id.k0_consistent = false;
  }
  id.zero = sgn(id.worst_residual) == 0;
  return id;
}

/// Samples tau_f from the stationary start, or from mu conditioned on supp f.
inline SampleStats sample_tauf(const Measure& measure, const Observable& f, bool conditioned,
                               const SampleOptions& opt = {}) {
  require(opt.N >= 1, ErrorCode::invalid_argument, "N must be at least 1");
  require(f.q() == measure.q(), ErrorCode::alphabet_mismatch, "observable and measure alphabets differ");
  const ObservableAutomaton ac(f);
  const double eps = to_double(f.support_measure(measure));
  const auto cap = detail::step_cap(opt.cap_factor, to_double(f.l1_norm(measure)));
  std::vector<std::vector<Symbol>> support;
  std::vector<double> cumulative;
  double acc = 0;
  for (const auto& [w, v] : f.values()) {
    support.push_back(w);
    cumulative.push_back(acc += to_double(measure.word_measure(w)));
  }
  std::vector<std::uint64_t> raw(opt.N);
  parallel_for(opt.N, opt.jobs, [&](std::size_t i) {
    SymbolStream in(measure, opt.seed, i);
    std::size_t node = 0;
    Symbol prev = 0;
    if (conditioned) {
      const double u = in.rng().uniform() * acc;
      std::size_t pick = 0;
      while (pick + 1 < support.size() && u >= cumulative[pick]) ++pick;
      for (auto a : support[pick]) node = ac.next(node, prev = a);
    } else {
      prev = in.first();
      node = ac.next(0, prev);
      for (std::size_t j = 1; j < f.depth(); ++j) node = ac.next(node, prev = in.next(prev));
    }
    std::uint64_t sum = 0;
    raw[i] = 0;
    for (std::uint64_t k = 1; k <= cap; ++k) {
      prev = in.next(prev);
      node = ac.next(node, prev);
      sum += ac.value(node);
      if (sum >= ac.denominator()) {
        raw[i] = k;
        break;
      }
    }
  });
  return detail::summarize(conditioned ? "tauf_return" : "tauf_hitting", f.to_json().dump(), std::move(raw), eps, cap,
                           opt);
}

// ---------------------------------------------------------------------------
// Limit study over observable families.

struct TaufFamily {
  enum class Kind { indicator, scaled, mixed } kind = Kind::indicator;
  Rational value = 1;

  /// "indicator", "scaled:v", "mixed:v".
  static TaufFamily parse(std::string_view text) {
    TaufFamily fam;
    auto colon = text.find(':');
    auto kind = text.substr(0, colon);
    if (colon != std::string_view::npos) fam.value = parse_rational(text.substr(colon + 1));
    if (kind == "indicator") {
      fam.kind = Kind::indicator;
    } else if (kind == "scaled") {
      fam.kind = Kind::scaled;
    } else if (kind == "mixed") {
      fam.kind = Kind::mixed;
    } else {
      throw Error(ErrorCode::invalid_argument, "unknown observable family '" + std::string(kind) + "'");
    }
    require(fam.kind == Kind::indicator || colon != std::string_view::npos, ErrorCode::invalid_argument,
            "observable family needs a value");
    return fam;
  }
  [[nodiscard]] Observable member(const Pattern& p, unsigned q) const {
    switch (kind) {
      case Kind::indicator: return Observable::indicator(p, q);
      case Kind::scaled: return Observable::scaled(p, value, q);
      case Kind::mixed: return Observable::mixed(p, value, q);
    }
    return Observable::indicator(p, q);
  }
  [[nodiscard]] std::string name() const {
    switch (kind) {
      case Kind::indicator: return "indicator";
      case Kind::scaled: return "scaled:" + to_string(value);
      case Kind::mixed: return "mixed:" + to_string(value);
    }
    return "indicator";
  }
};

struct TaufLimitRow {
  std::size_t l = 0;
  std::string pattern;
  double eps = 0;               // mu(supp f)
  double one_measure = 0;       // mu(f = 1)
  double hypothesis_ratio = 0;  // mu(f = 1) / mu(supp f)
  std::vector<LaplacePoint> points;
  double sup_deviation = 0;
  double hitting_sup = 0;  // sup_k |mu(tau_f > k) - e^{-eps k}|
  double return_sup = 0;   // sup_t |mu_{A_f}(eps tau_f > t) - e^{-t}|
  std::size_t steps = 0;
};

struct TaufLimitStudy {
  std::string family;
  std::string observable_family;
  std::vector<TaufLimitRow> rows;
};

inline TaufLimitRow tauf_limit_row(const Observable& f, const Measure& m, std::vector<double> t_grid,
                                   const LaplaceOptions& options = {}) {
  require(!t_grid.empty(), ErrorCode::invalid_argument, "t grid must not be empty");
  std::sort(t_grid.begin(), t_grid.end());
  TaufLimitRow row;
  const Rational eps_exact = f.support_measure(m);
  row.eps = to_double(eps_exact);
  row.one_measure = to_double(f.one_measure(m));
  row.hypothesis_ratio = to_double(f.one_measure(m) / eps_exact);
  const double eps = row.eps;
  TaufStream hit(f, m, detail::TaufStart::stationary);
  TaufStream ret(f, m, detail::TaufStart::on_support);
  const std::size_t n = t_grid.size();
  std::vector<CompensatedSum> sums(n);
  std::vector<bool> done(n, false);
  row.points.resize(n);
  std::size_t remaining = n;
  bool hit_done = false, ret_done = false;
  std::size_t k = 0;
  for (;; ++k) {
    require(k <= options.cap, ErrorCode::budget_exceeded, "tau_f study did not reach tolerance");
    const double ls = hit.next_log();
    const double lr = ret.next_log();
    const double s = std::exp(ls), r = std::exp(lr);
    for (std::size_t i = 0; i < n; ++i) {
      if (done[i]) continue;
      const double a = eps * t_grid[i];
      const double one_minus = -std::expm1(-a);
      const double term = std::exp(-a * double(k) + ls);
      if (term / one_minus < options.tol) {
        done[i] = true;
        --remaining;
        auto& p = row.points[i];
        p.t = t_grid[i];
        p.target = p.t / (p.t + 1);
        p.series_value = one_minus * sums[i].value();
        p.deviation = std::fabs(p.series_value - p.target);
        p.phi_hitting = 1 - p.series_value;
        p.K_used = k;
        p.tail_bound = term / one_minus;
        p.formula_error_bound = term;
      } else {
        sums[i].add(term);
      }
    }
    const double e_lo = std::exp(-eps * double(k)), e_hi = std::exp(-eps * double(k + 1));
    if (!hit_done) {
      row.hitting_sup = std::max(row.hitting_sup, std::fabs(s - e_lo));
      if (std::max(s, e_lo) <= row.hitting_sup) hit_done = true;
    }
    if (!ret_done) {
      row.return_sup = std::max({row.return_sup, std::fabs(r - e_lo), std::fabs(r - e_hi)});
      if (std::max(r, e_lo) <= row.return_sup) ret_done = true;
    }
    if (remaining == 0 && hit_done && ret_done) break;
  }
  row.steps = k;
  for (const auto& p : row.points) row.sup_deviation = std::max(row.sup_deviation, p.deviation);
  return row;
}

inline TaufLimitStudy tauf_limit_study(const PatternFamily& family, const TaufFamily& observables,
                                       const Measure& m, std::size_t lmin, std::size_t lmax,
                                       const std::vector<double>& t_grid, const CriterionOptions& options = {}) {
  require(lmin <= lmax, ErrorCode::invalid_argument, "empty length range");
  TaufLimitStudy study;
  study.family = family.name();
  study.observable_family = observables.name();
  study.rows.resize(lmax - lmin + 1);
  parallel_for(study.rows.size(), options.jobs, [&](std::size_t i) {
    const auto p = family_member(family, lmin + i, m.q());
    auto row = tauf_limit_row(observables.member(p, m.q()), m, t_grid, options.laplace);
    row.l = lmin + i;
    row.pattern = p.str();
    study.rows[i] = std::move(row);
  });
  return study;
}

inline nlohmann::json to_json(const TaufLimitRow& r) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : r.points)
    points.push_back({{"t", p.t},
                      {"series_value", p.series_value},
                      {"target", p.target},
                      {"deviation", p.deviation},
                      {"K_used", p.K_used},
                      {"tail_bound", p.tail_bound}});
  return {{"l", r.l},
          {"pattern", r.pattern},
          {"eps", r.eps},
          {"one_measure", r.one_measure},
          {"hypothesis_ratio", r.hypothesis_ratio},
          {"points", points},
          {"sup_deviation", r.sup_deviation},
          {"hitting_sup", r.hitting_sup},
          {"return_sup", r.return_sup},
          {"steps", r.steps}};
}

inline nlohmann::json to_json(const TaufLimitStudy& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) rows.push_back(to_json(r));
  return {{"family", s.family}, {"observable_family", s.observable_family}, {"rows", rows}};
}

}  // namespace retlab
