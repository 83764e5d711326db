#pragma once

// Pattern-avoidance automaton, exact avoidance counts f_A(n), and the
// sweep-out sequence s~_A(k) = mu(tau_A > k) with the derived hitting and
// return distributions.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "retlab/chain.hpp"
#include "retlab/error.hpp"
#include "retlab/numeric.hpp"
#include "retlab/shift_core.hpp"

namespace retlab {

/// KMP prefix automaton. States 0..l-1 record the longest prefix of the
/// pattern that is a suffix of the input read so far; `length()` is the
/// absorbing "pattern occurred" state.
class AvoidanceAutomaton {
 public:
  AvoidanceAutomaton(const Pattern& pattern, unsigned q) : q_(q), l_(pattern.length()) {
    pattern.validate(q);
    auto border = border_table(pattern);
    restart_ = border[l_];
    next_.assign(l_ * q_, 0);
    for (std::size_t s = 0; s < l_; ++s) {
      for (Symbol a = 0; a < q_; ++a) {
        std::size_t target;
        if (a == pattern[s]) {
          target = s + 1;
        } else if (s == 0) {
          target = 0;
        } else {
          target = next_[border[s] * q_ + a];
        }
        next_[s * q_ + a] = target;
      }
    }
  }

  [[nodiscard]] unsigned q() const noexcept { return q_; }
  [[nodiscard]] std::size_t length() const noexcept { return l_; }
  [[nodiscard]] std::size_t absorbed() const noexcept { return l_; }
  [[nodiscard]] std::size_t next(std::size_t state, Symbol a) const { return next_[state * q_ + a]; }

  /// Where a match continues after the pattern has just been read: the
  /// longest proper border of the pattern.
  [[nodiscard]] std::size_t restart_state() const noexcept { return restart_; }

 private:
  unsigned q_;
  std::size_t l_;
  std::size_t restart_ = 0;
  std::vector<std::size_t> next_;
};

inline AvoidanceAutomaton build_automaton(const Pattern& pattern, unsigned q) {
  return AvoidanceAutomaton(pattern, q);
}

/// Number of length-n strings over q symbols with no occurrence of the pattern.
inline BigInt count_avoiding(const Pattern& pattern, unsigned q, std::size_t n) {
  const AvoidanceAutomaton dfa(pattern, q);
  std::vector<BigInt> counts(dfa.length(), BigInt(0)), next(dfa.length());
  counts[0] = 1;
  for (std::size_t step = 0; step < n; ++step) {
    for (auto& x : next) x = 0;
    for (std::size_t s = 0; s < dfa.length(); ++s) {
      if (sgn(counts[s]) == 0) continue;
      for (Symbol a = 0; a < q; ++a) {
        const auto t = dfa.next(s, a);
        if (t != dfa.absorbed()) next[t] += counts[s];
      }
    }
    counts.swap(next);
  }
  BigInt total = 0;
  for (const auto& c : counts) total += c;
  return total;
}

/// The automaton lifted to the measure: states are (prefix state, last
/// symbol) for Markov measures and prefix states alone otherwise. Edge
/// weights are the conditional law of the next symbol.
class LiftedAutomaton {
 public:
  LiftedAutomaton(const Pattern& pattern, const Measure& measure) : dfa_(pattern, measure.q()) {
    const unsigned q = measure.q();
    contexts_ = measure.is_markov() ? q : 1;
    auto chain = std::make_shared<Chain>();
    chain->states = dfa_.length() * contexts_;
    const auto& w = measure.exact_weights();
    chain->denominator = w.denominator;
    for (unsigned c = 0; c < q; ++c) {
      for (unsigned a = 0; a < q; ++a) {
        chain->weight.push_back(measure.transition_d(c, a));
        chain->weight_num.push_back(w.transition[c * q + a]);
      }
    }
    for (std::size_t s = 0; s < dfa_.length(); ++s) {
      for (unsigned c = 0; c < contexts_; ++c) {
        for (Symbol a = 0; a < q; ++a) {
          const auto t = dfa_.next(s, a);
          ChainEdge e;
          e.from = static_cast<std::uint32_t>(index(s, c));
          e.to = t == dfa_.absorbed() ? kAbsorbed
                                      : static_cast<std::uint32_t>(index(t, context_of(a)));
          e.weight = static_cast<std::uint32_t>(c * q + a);
          chain->edges.push_back(e);
        }
      }
    }
    // Law after the first symbol x_0 (mass already absorbed when l = 1).
    first_float_.assign(chain->states, 0.0);
    first_exact_.assign(chain->states, BigInt(0));
    for (Symbol a = 0; a < q; ++a) {
      const auto t = dfa_.next(0, a);
      if (t == dfa_.absorbed()) continue;
      first_float_[index(t, context_of(a))] += measure.initial_d(a);
      first_exact_[index(t, context_of(a))] += w.initial[a];
    }
    conditioned_ = index(dfa_.restart_state(), context_of(pattern.back()));
    chain_ = std::move(chain);
  }

  [[nodiscard]] const std::shared_ptr<const Chain>& chain() const noexcept { return chain_; }
  [[nodiscard]] const AvoidanceAutomaton& automaton() const noexcept { return dfa_; }
  [[nodiscard]] std::size_t index(std::size_t state, unsigned context) const {
    return state * contexts_ + context;
  }
  [[nodiscard]] unsigned context_of(Symbol a) const { return contexts_ == 1 ? 0 : a; }

  [[nodiscard]] const std::vector<double>& first_symbol_float() const noexcept { return first_float_; }
  [[nodiscard]] const std::vector<BigInt>& first_symbol_exact() const noexcept { return first_exact_; }

  /// State index for the law conditioned on x in A (pattern just read).
  [[nodiscard]] std::size_t conditioned_state() const noexcept { return conditioned_; }

 private:
  AvoidanceAutomaton dfa_;
  unsigned contexts_ = 1;
  std::shared_ptr<const Chain> chain_;
  std::vector<double> first_float_;
  std::vector<BigInt> first_exact_;
  std::size_t conditioned_ = 0;
};

/// Streams log s~(k) for k = 0, 1, 2, ... in log-space floating point.
/// s~(k) is the surviving mass after the window x_0 .. x_{k+l-2}.
class SweepoutStream {
 public:
  SweepoutStream(const Pattern& pattern, const Measure& measure)
      : lifted_(pattern, measure), run_(lifted_.chain(), lifted_.first_symbol_float()),
        l_(pattern.length()) {}

  /// k of the value returned by the next call to next_log().
  [[nodiscard]] std::size_t k() const noexcept { return k_; }

  double next_log() {
    const std::size_t k = k_++;
    if (k == 0) return 0.0;
    while (symbols_read_ < k + l_ - 1) {
      track(run_.step());
      ++symbols_read_;
    }
    return run_.log_mass();
  }

  double next() { return std::exp(next_log()); }

  /// True once the per-step absorbed fraction has been constant to 1e-13
  /// (relative) for 256 steps: from here on s~ decays geometrically.
  [[nodiscard]] bool geometric() const noexcept { return stable_ >= 256; }
  /// log of the per-step survival factor in the geometric regime.
  [[nodiscard]] double log_rate() const noexcept { return std::log1p(-leak_); }

 private:
  void track(double leak) {
    if (leak > 0 && leak_ > 0 && std::fabs(leak - leak_) <= 1e-13 * leak) {
      ++stable_;
    } else {
      stable_ = 0;
    }
    leak_ = leak;
  }

  LiftedAutomaton lifted_;
  FloatRun run_;
  std::size_t l_;
  std::size_t k_ = 0;
  std::size_t symbols_read_ = 1;
  double leak_ = 0;
  std::size_t stable_ = 0;
};

/// Streams the return tail mu_A(tau_A > k), k = 0, 1, ..., from the
/// automaton conditioned on x in A.
class ReturnStream {
 public:
  ReturnStream(const Pattern& pattern, const Measure& measure)
      : lifted_(pattern, measure), run_(lifted_.chain(), initial()) {}

  [[nodiscard]] std::size_t k() const noexcept { return k_; }

  double next_log() {
    if (k_++ > 0) {
      const double leak = run_.step();
      if (leak > 0 && leak_ > 0 && std::fabs(leak - leak_) <= 1e-13 * leak) {
        ++stable_;
      } else {
        stable_ = 0;
      }
      leak_ = leak;
    }
    return run_.log_mass();
  }
  double next() { return std::exp(next_log()); }

  [[nodiscard]] bool geometric() const noexcept { return stable_ >= 256; }
  [[nodiscard]] double log_rate() const noexcept { return std::log1p(-leak_); }

 private:
  std::vector<double> initial() const {
    std::vector<double> v(lifted_.chain()->states, 0.0);
    v[lifted_.conditioned_state()] = 1.0;
    return v;
  }

  LiftedAutomaton lifted_;
  FloatRun run_;
  std::size_t k_ = 0;
  double leak_ = 0;
  std::size_t stable_ = 0;
};

struct SweepoutOptions {
  std::size_t K = 4096;
  bool exact = false;
  std::size_t K_exact = 4096;
};

/// s~(0..K) for one pattern and measure.
struct SweepoutSeries {
  Pattern pattern;
  Measure measure;
  std::size_t K = 0;
  Probability mu;
  std::vector<Rational> exact;  // s~(0..exact.size()-1); full length when is_exact()
  std::vector<double> value;
  std::vector<double> log_value;
  bool exact_requested = false;
  bool exact_fell_back = false;  // exact budget K_exact was smaller than K

  [[nodiscard]] bool is_exact() const noexcept { return !exact.empty() && exact.size() == K + 1; }
  [[nodiscard]] double operator[](std::size_t k) const { return value[k]; }
};

/// Exact s~(0..K) through scaled-integer iteration.
inline std::vector<Rational> exact_sweepout(const Pattern& pattern, const Measure& measure,
                                            std::size_t K) {
  LiftedAutomaton lifted(pattern, measure);
  ExactRun run(lifted.chain(), lifted.first_symbol_exact(), measure.exact_weights().denominator);
  const std::size_t l = pattern.length();
  std::vector<Rational> out;
  out.reserve(K + 1);
  out.emplace_back(1);
  // x_0 is already read; s~(k) needs k + l - 1 symbols.
  std::size_t symbols_read = 1;
  for (std::size_t k = 1; k <= K; ++k) {
    for (; symbols_read < k + l - 1; ++symbols_read) run.step();
    out.push_back(run.mass());
  }
  return out;
}

inline SweepoutSeries sweepout_series(const Pattern& pattern, const Measure& measure,
                                      const SweepoutOptions& options = {}) {
  pattern.validate(measure.q());
  SweepoutSeries series;
  series.pattern = pattern;
  series.measure = measure;
  series.K = options.K;
  series.mu = pattern_measure(pattern, measure);
  series.exact_requested = options.exact;
  series.value.resize(options.K + 1);
  series.log_value.resize(options.K + 1);

  std::size_t float_from = 0;
  if (options.exact) {
    const std::size_t k_exact = std::min(options.K, options.K_exact);
    series.exact = exact_sweepout(pattern, measure, k_exact);
    series.exact_fell_back = k_exact < options.K;
    for (std::size_t k = 0; k <= k_exact; ++k) {
      series.log_value[k] = sgn(series.exact[k]) > 0 ? log_of(series.exact[k])
                                                     : -std::numeric_limits<double>::infinity();
      series.value[k] = to_double(series.exact[k]);
    }
    float_from = k_exact + 1;
  }
  if (float_from <= options.K) {
    SweepoutStream stream(pattern, measure);
    for (std::size_t k = 0; k <= options.K; ++k) {
      const double lv = stream.next_log();
      if (k < float_from) continue;
      series.log_value[k] = lv;
      series.value[k] = std::exp(lv);
    }
  }
  return series;
}

/// Exact return tail mu_A(tau_A > k), k = 0..K, from the conditioned
/// automaton; independent of the sweep-out route.
inline std::vector<Rational> exact_return_tail(const Pattern& pattern, const Measure& measure,
                                               std::size_t K) {
  LiftedAutomaton lifted(pattern, measure);
  std::vector<BigInt> init(lifted.chain()->states, BigInt(0));
  init[lifted.conditioned_state()] = 1;
  ExactRun run(lifted.chain(), std::move(init), BigInt(1));
  std::vector<Rational> out;
  out.reserve(K + 1);
  for (std::size_t k = 0; k <= K; ++k) {
    if (k > 0) run.step();
    out.push_back(run.mass());
  }
  return out;
}

inline std::vector<double> float_return_tail(const Pattern& pattern, const Measure& measure,
                                             std::size_t K) {
  ReturnStream stream(pattern, measure);
  std::vector<double> out(K + 1);
  for (auto& x : out) x = stream.next();
  return out;
}

/// Hitting tail s~(k), return tail mu_A(tau_A > k) = (s~(k) - s~(k+1)) / mu(A)
/// and their difference c_A(k) for k < K.
struct HittingReturnDistributions {
  std::size_t K = 0;
  double mu = 0;
  std::vector<double> hitting_tail;  // k = 0..K
  std::vector<double> return_tail;   // k = 0..K-1
  std::vector<double> c;             // k = 0..K-1
  double sup_c = 0;
  // Exact mirrors, filled when the series is exact.
  std::vector<Rational> hitting_tail_exact;
  std::vector<Rational> return_tail_exact;
  std::vector<Rational> c_exact;
  Rational sup_c_exact;
};

inline HittingReturnDistributions distributions(const SweepoutSeries& series) {
  require(series.K >= 1, ErrorCode::invalid_argument, "distributions need K >= 1");
  HittingReturnDistributions d;
  d.K = series.K;
  d.mu = series.mu.value;
  d.hitting_tail = series.value;
  d.return_tail.resize(series.K);
  d.c.resize(series.K);
  for (std::size_t k = 0; k < series.K; ++k) {
    d.return_tail[k] = (series.value[k] - series.value[k + 1]) / d.mu;
    d.c[k] = series.value[k] - d.return_tail[k];
    d.sup_c = std::max(d.sup_c, std::fabs(d.c[k]));
  }
  if (series.is_exact()) {
    d.hitting_tail_exact = series.exact;
    d.return_tail_exact.resize(series.K);
    d.c_exact.resize(series.K);
    d.sup_c_exact = 0;
    for (std::size_t k = 0; k < series.K; ++k) {
      d.return_tail_exact[k] = canonical((series.exact[k] - series.exact[k + 1]) / series.mu.exact);
      d.c_exact[k] = canonical(series.exact[k] - d.return_tail_exact[k]);
      d.return_tail[k] = to_double(d.return_tail_exact[k]);
      d.c[k] = to_double(d.c_exact[k]);
      if (abs(d.c_exact[k]) > d.sup_c_exact) d.sup_c_exact = abs(d.c_exact[k]);
    }
    d.sup_c = to_double(d.sup_c_exact);
  }
  return d;
}

}  // namespace retlab
