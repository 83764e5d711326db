#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "retlab/monte_carlo.hpp"

using namespace retlab;

namespace {

const Measure kUniform = Measure::uniform(2);
const Measure kMarkov = Measure::parse("markov:9/10,1/10;1/10,9/10");

std::vector<std::vector<Symbol>> all_words(unsigned q, std::size_t n) {
  std::vector<std::vector<Symbol>> out;
  std::vector<Symbol> w(n, 0);
  while (true) {
    out.push_back(w);
    std::size_t i = 0;
    while (i < n && ++w[i] == q) w[i++] = 0;
    if (i == n) break;
  }
  return out;
}

std::size_t occurrences(const std::vector<Symbol>& w, const Pattern& p, std::size_t from, std::size_t to) {
  std::size_t count = 0;
  for (std::size_t i = from; i <= to; ++i) {
    bool hit = i + p.length() <= w.size();
    for (std::size_t j = 0; hit && j < p.length(); ++j) hit = w[i + j] == p[j];
    count += hit;
  }
  return count;
}

SampleOptions options(std::size_t N, std::uint64_t seed) {
  SampleOptions o;
  o.N = N;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(Rng, DeterministicAndStreamSeparated) {
  CounterRng a(7, 0), b(7, 0), c(7, 1), d(8, 0);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs_c |= x != c.next();
    differs_d |= x != d.next();
  }
  EXPECT_TRUE(differs_c);
  EXPECT_TRUE(differs_d);
  // Pinned first outputs of the documented construction.
  CounterRng pinned(0, 0);
  const std::uint64_t start = splitmix64_mix(0 ^ splitmix64_mix(kGamma));
  EXPECT_EQ(pinned.next(), splitmix64_mix(start + kGamma));
  EXPECT_EQ(pinned.next(), splitmix64_mix(start + 2 * kGamma));
}

TEST(Rng, SymbolFrequencies) {
  for (const auto& m : {kUniform, Measure::uniform(3), Measure::parse("bernoulli:1/5,3/10,1/2")}) {
    SymbolStream in(m, 11, 0);
    std::vector<double> counts(m.q(), 0);
    const int n = 200000;
    Symbol prev = in.first();
    for (int i = 0; i < n; ++i) counts[prev = in.next(prev)] += 1;
    for (Symbol a = 0; a < m.q(); ++a) {
      const double p = m.initial_d(a);
      EXPECT_NEAR(counts[a] / n, p, 5 * std::sqrt(p * (1 - p) / n));
    }
  }
}

TEST(KsExponential, SyntheticAndGeometric) {
  CounterRng rng(99, 0);
  std::vector<double> samples(100000);
  for (auto& x : samples) x = -std::log1p(-rng.uniform());
  EXPECT_LT(ks_exponential(samples), 0.01);
  // Geometric(1/2) scaled by 1/2: the jump at t = 1/2 dominates.
  auto s = sample_hitting(kUniform, Pattern::parse("0"), options(100000, 3));
  EXPECT_GT(s.ks, 0.05);
  EXPECT_NEAR(s.ks, 1 - std::exp(-0.5), 0.01);
}

TEST(SampleHitting, GeometricLawAndReproducibility) {
  auto o = options(100000, 20240611);
  auto s = sample_hitting(kUniform, Pattern::parse("0"), o);
  EXPECT_EQ(s.capped, 0u);
  EXPECT_NEAR(s.mean, 2.0, 3 * std::sqrt(2.0 / 100000.0));
  auto again = sample_hitting(kUniform, Pattern::parse("0"), o);
  EXPECT_EQ(to_json(s), to_json(again));
  o.jobs = 3;
  EXPECT_EQ(to_json(sample_hitting(kUniform, Pattern::parse("0"), o)), to_json(s));
  for (std::size_t k = 1; k < s.tail.size(); ++k) EXPECT_LE(s.tail[k], s.tail[k - 1]);
  EXPECT_GE(s.ks, 0.0);
  EXPECT_LE(s.ks, 1.0);
}

TEST(SampleHitting, TailsMatchExactSeries) {
  for (const auto& [m, words] : {std::pair{kUniform, std::vector<std::string>{"0110", "0100101", "11"}},
                                 std::pair{kMarkov, std::vector<std::string>{"0011", "1110", "11"}}}) {
    for (const auto& w : words) {
      auto p = Pattern::parse(w);
      auto s = sample_hitting(m, p, options(100000, 17 + w.size()));
      SweepoutOptions so;
      so.K = 20;
      auto exact = sweepout_series(p, m, so);
      auto cmp = compare_tails(s, exact.value);
      EXPECT_TRUE(cmp.within) << w << " worst " << cmp.worst_excess;
    }
  }
}

TEST(SampleReturn, KacAndReturnTails) {
  for (const auto& [m, words] : {std::pair{kUniform, std::vector<std::string>{"0110", "0100101", "11"}},
                                 std::pair{kMarkov, std::vector<std::string>{"0011", "1110", "11"}}}) {
    for (const auto& w : words) {
      auto p = Pattern::parse(w);
      auto s = sample_return(m, p, options(100000, 5 + w.size()));
      EXPECT_TRUE(kac_ok(s)) << w << " " << s.kac_product << " +- " << s.kac_sigma;
      SweepoutOptions so;
      so.K = 21;
      auto d = distributions(sweepout_series(p, m, so));
      auto cmp = compare_tails(s, d.return_tail);
      EXPECT_TRUE(cmp.within) << w << " worst " << cmp.worst_excess;
    }
  }
}

TEST(SampleReturn, PatternDependenceOfShortReturns) {
  // mu_A(tau > 1) is 1/2 for "11" and 1 for "01": c_A(1) = 1/4 versus -1/4.
  auto s11 = sample_return(kUniform, Pattern::parse("11"), options(100000, 1));
  auto s01 = sample_return(kUniform, Pattern::parse("01"), options(100000, 1));
  EXPECT_NEAR(s11.tail[1], 0.5, 0.01);
  EXPECT_DOUBLE_EQ(s01.tail[1], 1.0);
  SweepoutOptions so;
  so.K = 4;
  so.exact = true;
  auto d11 = distributions(sweepout_series(Pattern::parse("11"), kUniform, so));
  auto d01 = distributions(sweepout_series(Pattern::parse("01"), kUniform, so));
  EXPECT_EQ(d11.c_exact[1], Rational(1, 4));
  EXPECT_EQ(d01.c_exact[1], Rational(-1, 4));
}

TEST(SampleReturn, FibonacciTwelveNearExponential) {
  auto p = family_member(PatternFamily::fibonacci(1, 64), 12);
  auto s = sample_return(kUniform, p, options(100000, 20240611));
  EXPECT_LT(s.ks, 0.02);
  EXPECT_EQ(s.capped, 0u);
}

TEST(Observable, ParsingAndMeasures) {
  auto f = Observable::parse("mixed:0110:1/8", 2);
  EXPECT_EQ(f.depth(), 4u);
  EXPECT_EQ(f.values().size(), 2u);
  EXPECT_EQ(f.denominator(), 8);
  EXPECT_EQ(f.support_measure(kUniform), Rational(1, 8));
  EXPECT_EQ(f.one_measure(kUniform), Rational(1, 16));
  auto back = Observable::from_json(f.to_json(), 2);
  EXPECT_EQ(back.to_json(), f.to_json());
  EXPECT_THROW(Observable::parse("scaled:01:3/2", 2), Error);
  EXPECT_THROW(Observable::parse("indicator:012", 2), Error);
  EXPECT_THROW(Observable::parse("bogus:01", 2), Error);
  Observable empty(2, 2);
  EXPECT_THROW(exact_tauf_series(empty, kUniform, 3), Error);
}

TEST(ExactTauf, IndicatorReducesToSweepout) {
  for (const auto& m : {kUniform, kMarkov, Measure::parse("bernoulli:1/3,2/3")}) {
    for (std::string w : {"0", "11", "010", "0110"}) {
      auto p = Pattern::parse(w);
      auto tauf = exact_tauf_series(Observable::indicator(p, 2), m, 40);
      auto sweep = exact_sweepout(p, m, 40);
      EXPECT_EQ(tauf, sweep) << w;
    }
  }
}

TEST(ExactTauf, HalfIndicatorCountsTwoEntries) {
  for (std::size_t l = 1; l <= 3; ++l) {
    for (const auto& word : all_words(2, l)) {
      Pattern p(word);
      auto tauf = exact_tauf_series(Observable::scaled(p, Rational(1, 2), 2), kUniform, 12);
      for (std::size_t k = 0; k <= 12; ++k) {
        Rational brute = 0;
        for (const auto& x : all_words(2, k + l))
          if (k == 0 || occurrences(x, p, 1, k) <= 1) brute += kUniform.word_measure(x);
        EXPECT_EQ(tauf[k], canonical(brute)) << p.str() << " k=" << k;
      }
    }
  }
}

TEST(ExactTauf, ConstantOneHitsImmediately) {
  auto s = exact_tauf_series(Observable::constant(2, 1), kMarkov, 5);
  EXPECT_EQ(s[0], 1);
  for (std::size_t k = 1; k <= 5; ++k) EXPECT_EQ(s[k], 0);
}

TEST(ExactTauf, FloatSeriesMatchesExact) {
  auto f = Observable::parse("mixed:0110:1/8", 2);
  auto exact = exact_tauf_series(f, kMarkov, 200);
  auto fl = float_tauf_series(f, kMarkov, 200);
  for (std::size_t k = 0; k <= 200; ++k) EXPECT_NEAR(fl.value[k], to_double(exact[k]), 1e-13);
}

TEST(ExactTauf, BudgetIsEnforced) {
  auto f = Observable::parse("scaled:0110:1/999", 2);
  EXPECT_THROW(exact_tauf_series(f, kUniform, 3, 1000), Error);
}

TEST(TaufIdentity, ZeroResidual) {
  for (const auto& m : {kUniform, kMarkov, Measure::parse("bernoulli:1/3,2/3")}) {
    for (std::string spec : {"indicator:0", "scaled:0:1/2", "mixed:0110:1/8", "scaled:101:2/3", "constant:1/3"}) {
      auto id = tauf_identity_check(Observable::parse(spec, 2), m, 10);
      EXPECT_TRUE(id.zero) << spec;
      EXPECT_TRUE(id.k0_consistent) << spec;
    }
  }
}

TEST(SampleTauf, TailsMatchExact) {
  auto f = Observable::parse("mixed:0110:1/8", 2);
  auto exact = exact_tauf_series(f, kMarkov, 20);
  std::vector<double> ex;
  for (const auto& x : exact) ex.push_back(to_double(x));
  auto s = sample_tauf(kMarkov, f, false, options(100000, 4));
  EXPECT_TRUE(compare_tails(s, ex).within);
  auto c = sample_tauf(kUniform, Observable::parse("scaled:0:1/2", 2), true, options(100000, 4));
  // The start is not counted: two further zeros are needed, negative binomial with mean 4.
  EXPECT_NEAR(c.mean, 4.0, 0.03);
}

TEST(TaufLimit, IndicatorMatchesCriterionReport) {
  const std::vector<double> grid{0.25, 0.5, 1, 2, 4};
  auto study = tauf_limit_study(PatternFamily::fibonacci(1, 64), TaufFamily::parse("indicator"), kUniform, 8, 11, grid);
  auto crit = criterion_report(PatternFamily::fibonacci(1, 64), kUniform, 8, 11, grid);
  for (std::size_t i = 0; i < study.rows.size(); ++i) {
    EXPECT_EQ(study.rows[i].hypothesis_ratio, 1.0);
    EXPECT_NEAR(study.rows[i].sup_deviation, crit[i].sup_deviation, 1e-11);
    EXPECT_NEAR(study.rows[i].return_sup, crit[i].c_tilde_sup, 1e-11);
  }
}

TEST(TaufLimit, MixedFamilyReportsRatio) {
  auto study = tauf_limit_study(PatternFamily::fibonacci(1, 64), TaufFamily::parse("mixed:1/8"), kUniform, 6, 10,
                                {0.5, 1, 2});
  for (const auto& r : study.rows) {
    EXPECT_DOUBLE_EQ(r.hypothesis_ratio, 0.5);
    EXPECT_GT(r.sup_deviation, 0.1);  // the hypothesis fails, so no convergence to t/(t+1)
  }
  auto j = to_json(study);
  EXPECT_EQ(j["rows"].size(), 5u);
}

TEST(SampleTauf, ConditionedTailsMatchStream) {
  for (const auto& m : {kUniform, kMarkov}) {
    auto f = Observable::parse("mixed:0110:1/8", 2);
    TaufStream stream(f, m, detail::TaufStart::on_support);
    std::vector<double> exact;
    for (std::size_t k = 0; k <= 20; ++k) exact.push_back(std::exp(stream.next_log()));
    // From 0110 (half the support), 0110 recurs at shift 3 with probability 1/8.
    if (m.is_uniform()) {
      EXPECT_NEAR(exact[3], 15.0 / 16.0, 1e-15);
    }
    auto s = sample_tauf(m, f, true, options(100000, 8));
    EXPECT_TRUE(compare_tails(s, exact).within);
  }
}
