#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "retlab/psi_mixing.hpp"

using namespace retlab;

namespace {

const Measure kMarkov = Measure::parse("markov:9/10,1/10;1/10,9/10");

SweepoutSeries exact_series(const Pattern& p, const Measure& m, std::size_t K) {
  SweepoutOptions opt;
  opt.K = K;
  opt.exact = true;
  opt.K_exact = K;
  return sweepout_series(p, m, opt);
}

Pattern trivially_correlated(std::size_t l) {
  std::vector<Symbol> w(l, 0);
  w.back() = 1;
  return Pattern(w);
}

}  // namespace

TEST(PsiProfile, IndependentMeasuresVanish) {
  for (const auto& m : {Measure::uniform(3), Measure::parse("bernoulli:3/10,7/10")}) {
    auto p = psi_profile(m, 10);
    for (const auto& x : p.exact) EXPECT_EQ(x, 0);
    EXPECT_EQ(p.psi_max, 0.0);
  }
}

TEST(PsiProfile, TwoStateChain) {
  auto p = psi_profile(kMarkov, 40);
  Rational expected(4, 5);
  for (std::size_t k = 0; k <= 40; ++k) {
    EXPECT_EQ(p.exact[k], expected) << k;
    EXPECT_NEAR(p.psi[k], std::pow(0.8, double(k + 1)), 1e-12);
    expected *= Rational(4, 5);
  }
  EXPECT_EQ(p.psi_max_exact, Rational(4, 5));
  auto p3 = psi_profile(Measure::parse("markov:1/2,1/4,1/4;1/3,1/3,1/3;1/10,1/5,7/10"), 30);
  for (std::size_t k = 1; k <= 30; ++k) EXPECT_LE(p3.exact[k], p3.exact[k - 1]);
}

TEST(PsiProfile, ExhaustiveCertificate) {
  for (const auto& m : {kMarkov, Measure::parse("markov:1/2,1/4,1/4;1/3,1/3,1/3;1/10,1/5,7/10"),
                        Measure::parse("markov:1/5,4/5;3/5,2/5"), Measure::parse("bernoulli:1/3,2/3")}) {
    auto c = psi_certificate(m, 3, 4);
    EXPECT_TRUE(c.holds);
    EXPECT_TRUE(c.attained);
    EXPECT_GT(c.pairs, 0u);
  }
}

TEST(PsiProfile, BridgeFormulaMatchesGapEnumeration) {
  auto m = Measure::parse("markov:1/2,1/4,1/4;1/3,1/3,1/3;1/10,1/5,7/10");
  std::vector<std::vector<Symbol>> words{{0}, {2, 1}, {1, 0, 2}, {2, 2}};
  for (std::size_t k = 0; k <= 4; ++k) {
    auto power = m.transition_power(k + 1);
    for (const auto& A : words) {
      for (const auto& B : words) {
        Rational bridge = m.word_measure(A) * power[A.back() * 3 + B.front()] * m.word_measure(B) / m.initial(B.front());
        EXPECT_EQ(canonical(bridge), joint_cylinder_measure(m, A, k, B));
      }
    }
  }
}

TEST(Classify, Examples) {
  auto u = Measure::uniform(2);
  auto constant = classify(family_member(PatternFamily::constant(0, 1, 64), 10), u, 0.1);
  EXPECT_FALSE(constant.member);
  EXPECT_FALSE(constant.cond3);
  EXPECT_EQ(constant.overlap_sup_exact, Rational(1, 2));
  EXPECT_DOUBLE_EQ(constant.cond3_value, 5.0);
  EXPECT_FALSE(constant.reason.empty());

  // The Fibonacci prefix of length 10 has period 5, so the overlap ratio is 2^{-5}.
  auto fib = classify(family_member(PatternFamily::fibonacci(1, 64), 10), u, 0.1);
  EXPECT_EQ(fib.overlap_sup_exact, Rational(1, 32));
  EXPECT_DOUBLE_EQ(fib.cond3_value, 0.3125);
  EXPECT_FALSE(fib.member);

  auto plain = classify(trivially_correlated(10), u, 0.1);
  ASSERT_TRUE(plain.member);
  EXPECT_EQ(*plain.ell_A, 0u);
  EXPECT_EQ(*plain.w_A, 10u);
  EXPECT_EQ(plain.overlap_sup_exact, Rational(1, 1024));
  EXPECT_NEAR(plain.cond3_value, 0.00977, 1e-5);
  EXPECT_NEAR(*plain.q_A, 0.990043, 1e-6);
  EXPECT_THROW(rho_upper(plain), Error);  // epsilon = 0.1 is outside the lemma range
  auto up = rho_upper(classify(trivially_correlated(10), u, 0.099));
  EXPECT_NEAR(up.bound, 0.0010007, 1e-7);
  EXPECT_NEAR(up.bound / plain.mu, 1.0247, 1e-4);

  auto big_mu = classify(Pattern::parse("01"), u, 0.05);
  EXPECT_FALSE(big_mu.cond2);
  EXPECT_FALSE(big_mu.member);

  auto markov = classify(trivially_correlated(12), kMarkov, 0.05);
  ASSERT_TRUE(markov.ell_A.has_value());
  EXPECT_EQ(*markov.ell_A, 13u);  // 0.8^{14} < 0.05 <= 0.8^{13}
  EXPECT_FALSE(classify(trivially_correlated(12), kMarkov, 0.05, 5).cond1);
}

TEST(Bounds, RejectNonMembersAndLargeEpsilon) {
  auto u = Measure::uniform(2);
  auto c = classify(family_member(PatternFamily::constant(0, 1, 64), 10), u, 0.05);
  try {
    rho_upper(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_member);
  }
  auto wide = classify(trivially_correlated(10), u, 0.2);
  ASSERT_TRUE(wide.member);
  EXPECT_THROW(rho_upper(wide), Error);
  auto ok = classify(trivially_correlated(10), u, 0.05);
  EXPECT_THROW(rho_lower(ok, 0), Error);
  EXPECT_THROW(rho_lower(ok, 20), Error);
  EXPECT_NO_THROW(rho_lower(ok, 19));
}

TEST(Bounds, SandwichAndStepInequalitiesOnExactSeries) {
  std::vector<std::pair<Pattern, Measure>> cases{
      {trivially_correlated(8), Measure::uniform(2)},
      {trivially_correlated(10), Measure::uniform(2)},
      {Pattern::parse("0110100010"), Measure::uniform(2)},
      {Pattern::parse("001101"), Measure::uniform(3)},
      {Pattern::parse("0000001"), Measure::parse("bernoulli:1/3,2/3")},
      {Pattern::parse("01011"), kMarkov},
      {Pattern::parse("0110100"), kMarkov},
  };
  std::size_t members = 0;
  for (const auto& [p, m] : cases) {
    for (double eps : {0.05, 0.08, 0.099}) {
      auto c = classify(p, m, eps);
      if (!c.member) continue;
      ++members;
      auto series = exact_series(p, m, 256);
      ASSERT_TRUE(series.is_exact());
      const double rho = escape_rate(p, m, 4096, EscapeOptions{false, false}).rho;
      auto up = rho_upper(c, &series);
      auto low = rho_lower_best(c, &series);
      EXPECT_LE(rho, up.bound) << p.str();
      EXPECT_LE(low.best.bound, rho) << p.str();
      EXPECT_GT(low.best.bound, 0) << p.str();
      EXPECT_TRUE(up.upperexp.holds) << p.str();
      EXPECT_GT(up.upperexp.checked, 0u);
      for (const auto& b : low.all) {
        EXPECT_TRUE(b.lowerexp.holds) << p.str() << " k=" << b.k;
        EXPECT_LE(b.bound, rho);
      }
    }
  }
  EXPECT_GE(members, 4u);
}

TEST(Bounds, FloatSeriesChecksAgreeWithExact) {
  auto p = Pattern::parse("0110100");
  auto c = classify(p, kMarkov, 0.08);
  ASSERT_TRUE(c.member);
  auto exact = exact_series(p, kMarkov, 256);
  SweepoutOptions opt;
  opt.K = 256;
  auto fl = sweepout_series(p, kMarkov, opt);
  auto ue = rho_upper(c, &exact), uf = rho_upper(c, &fl);
  EXPECT_EQ(ue.upperexp.checked, uf.upperexp.checked);
  EXPECT_TRUE(uf.upperexp.holds);
  EXPECT_NEAR(ue.upperexp.worst_slack, uf.upperexp.worst_slack, 1e-9);
  for (std::size_t k = 1; k < 5; ++k) {
    auto le = rho_lower(c, k, &exact), lf = rho_lower(c, k, &fl);
    EXPECT_EQ(le.lowerexp.checked, lf.lowerexp.checked);
    EXPECT_TRUE(lf.lowerexp.holds);
    EXPECT_NEAR(le.lowerexp.worst_slack, lf.lowerexp.worst_slack, 1e-9);
  }
}

TEST(Bounds, RatiosApproachOneWithoutCorrelation) {
  double previous_upper = 1e9, previous_lower = 0;
  for (std::size_t l = 20; l <= 60; l += 10) {
    const double eps = 1.0 / double(l);
    auto c = classify(trivially_correlated(l), Measure::uniform(2), eps);
    ASSERT_TRUE(c.member);
    const double upper = rho_upper(c).bound / c.mu;
    const auto k = static_cast<std::size_t>(std::floor(1 / std::sqrt(eps)));
    const double lower = rho_lower(c, k).bound / c.mu;
    EXPECT_LT(upper, previous_upper);
    EXPECT_GT(lower, previous_lower);
    EXPECT_GE(upper, 1.0);
    EXPECT_LT(lower, 1.0);
    previous_upper = upper;
    previous_lower = lower;
  }
  EXPECT_LT(previous_upper - 1, 1e-12);
  EXPECT_GT(previous_lower, 0.75);
}

TEST(Subadditivity, ExactChecks) {
  auto b = Measure::parse("bernoulli:1/3,2/3");
  for (std::string s : {"0", "01", "0110"}) {
    auto series = exact_series(Pattern::parse(s), b, 64);
    auto r = subadditivity_check(series, s.size(), Rational(0));
    EXPECT_TRUE(r.exact);
    EXPECT_TRUE(r.holds) << s;
    EXPECT_LE(r.worst_slack, 1e-15);
  }
  auto series = exact_series(Pattern::parse("01"), kMarkov, 64);
  auto r = subadditivity_check(series, 2, Rational(4, 5));
  EXPECT_TRUE(r.holds);
  EXPECT_EQ(r.pairs, 63u * 64u / 2u);
  // Dropping the mixing factor breaks it for the persistent chain.
  auto strict = subadditivity_check(exact_series(Pattern::parse("00"), kMarkov, 64), 2, Rational(0));
  EXPECT_FALSE(strict.holds);
  EXPECT_GT(strict.worst_slack, 0);
}

TEST(RateOscillation, StabilisesForMembers) {
  for (std::size_t l = 8; l <= 14; ++l) {
    auto p = trivially_correlated(l);
    SweepoutOptions opt;
    opt.K = 4096;
    EXPECT_LT(rate_oscillation(sweepout_series(p, Measure::uniform(2), opt)), 1e-4);
    EXPECT_LT(rate_oscillation(sweepout_series(p, kMarkov, opt)), 1e-4);
  }
}

TEST(RholimStudy, FibonacciUniform) {
  auto s = rholim_study(PatternFamily::fibonacci(1, 64), Measure::uniform(2), 8, 20, {4096, 256, 2});
  ASSERT_EQ(s.rows.size(), 13u);
  EXPECT_TRUE(s.sandwich_ok);
  EXPECT_LT(s.final_gap, 1e-3);
  std::size_t with_bounds = 0;
  for (const auto& r : s.rows) {
    if (r.bounds_applicable) {
      ++with_bounds;
      EXPECT_TRUE(r.in_sandwich) << r.l;
    }
    if (r.member) {
      EXPECT_LT(r.oscillation, 1e-4);
    }
  }
  EXPECT_GE(with_bounds, 4u);
  EXPECT_TRUE(s.rows.back().member);
  auto j = to_json(s);
  for (const char* key : {"n", "l", "mu", "rho", "lower", "upper", "ratio", "member"})
    EXPECT_TRUE(j["rows"][0].contains(key)) << key;
}

TEST(RholimStudy, ConstantRowsExcludedMarkovSandwiched) {
  auto c = rholim_study(PatternFamily::constant(0, 1, 64), Measure::uniform(2), 8, 16);
  for (const auto& r : c.rows) EXPECT_FALSE(r.member);
  auto m = rholim_study(PatternFamily::champernowne(1, 64), kMarkov, 8, 20);
  EXPECT_TRUE(m.sandwich_ok);
}
