#include <gtest/gtest.h>

#include <functional>
#include <string>

#include "retlab/shift_core.hpp"

using namespace retlab;

namespace {

Measure two_state_markov() { return Measure::parse("markov:9/10,1/10;1/10,9/10"); }

// Sum of mu over all words of length n satisfying pred.
Rational enumerate_mass(const Measure& m, std::size_t n,
                        const std::function<bool(const std::vector<Symbol>&)>& pred) {
  std::vector<Symbol> w(n, 0);
  Rational total = 0;
  while (true) {
    if (pred(w)) total += m.word_measure(w);
    std::size_t i = 0;
    while (i < n && ++w[i] == m.q()) w[i++] = 0;
    if (i == n) break;
  }
  return canonical(total);
}

}  // namespace

TEST(Pattern, ParseAndPrint) {
  auto p = Pattern::parse("0120");
  EXPECT_EQ(p.length(), 4u);
  EXPECT_EQ(p[2], 2u);
  EXPECT_EQ(p.str(), "0120");
  EXPECT_EQ(Pattern::parse("a9").max_symbol(), 10u);
  EXPECT_THROW(Pattern::parse(""), Error);
  EXPECT_THROW(Pattern::parse("0-1"), Error);
}

TEST(Pattern, AlphabetMismatch) {
  try {
    pattern_measure(Pattern::parse("012"), Measure::uniform(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::alphabet_mismatch);
  }
}

TEST(Pattern, PeriodsMatchDirectOverlap) {
  for (std::string s : {"0", "00", "0101", "010010", "0100101001", "011011", "abcab"}) {
    auto p = Pattern::parse(s);
    auto ps = periods(p);
    std::vector<std::size_t> direct;
    for (std::size_t i = 0; i < p.length(); ++i) {
      bool ok = true;
      for (std::size_t j = 0; j + i < p.length(); ++j) ok = ok && s[j] == s[j + i];
      if (ok) direct.push_back(i);
    }
    EXPECT_EQ(ps, direct) << s;
  }
}

TEST(Measure, PatternMeasureExamples) {
  EXPECT_EQ(pattern_measure(Pattern::parse("01"), Measure::uniform(2)).exact, Rational(1, 4));
  EXPECT_EQ(pattern_measure(Pattern::parse("01"), Measure::parse("bernoulli:3/10,7/10")).exact,
            Rational(21, 100));
  auto m = two_state_markov();
  EXPECT_EQ(m.initial(0), Rational(1, 2));
  EXPECT_EQ(pattern_measure(Pattern::parse("01"), m).exact, Rational(1, 20));
}

TEST(Measure, BernoulliMultiplicative) {
  auto m = Measure::parse("bernoulli:1/5,3/10,1/2");
  auto u = Pattern::parse("021");
  auto v = Pattern::parse("12");
  auto uv = Pattern::parse("02112");
  EXPECT_EQ(pattern_measure(uv, m).exact, pattern_measure(u, m).exact * pattern_measure(v, m).exact);
}

TEST(Measure, MarkovStationaryExact) {
  auto m = Measure::parse("markov:1/2,1/4,1/4;1/3,1/3,1/3;1/10,1/5,7/10");
  Rational total = 0;
  for (unsigned j = 0; j < 3; ++j) {
    Rational acc = 0;
    for (unsigned i = 0; i < 3; ++i) acc += m.initial(i) * m.transition(i, j);
    EXPECT_EQ(canonical(acc), m.initial(j));
    total += m.initial(j);
  }
  EXPECT_EQ(total, 1);
}

TEST(Measure, RejectsInvalid) {
  EXPECT_THROW(Measure::parse("bernoulli:1/2,1/3"), Error);
  EXPECT_THROW(Measure::parse("bernoulli:1,0"), Error);
  EXPECT_THROW(Measure::parse("markov:1,0;1/2,1/2"), Error);
  EXPECT_THROW(Measure::parse("markov:1/2,1/2"), Error);
  EXPECT_THROW(Measure::parse("uniform:1"), Error);
  EXPECT_THROW(Measure::parse("gibbs:2"), Error);
}

TEST(Measure, JsonRoundTrip) {
  auto j = nlohmann::json::parse(R"({"type":"markov","q":2,"P":[[0.9,0.1],[0.1,0.9]]})");
  auto m = Measure::from_json(j);
  EXPECT_EQ(m.transition(0, 1), Rational(1, 10));
  auto back = Measure::from_json(nlohmann::json{{"type", "markov"}, {"P", m.to_json()["P"]}});
  EXPECT_EQ(back.initial(1), Rational(1, 2));
  EXPECT_THROW(Measure::from_json(nlohmann::json::parse(R"({"type":"uniform","q":2,"pi":[1]})")),
               Error);
  EXPECT_THROW(Measure::from_json(nlohmann::json::parse(R"({"type":"bernoulli","q":3,"p":[0.5,0.5]})")),
               Error);
}

TEST(Overlap, Examples) {
  auto u = Measure::uniform(2);
  EXPECT_EQ(overlap_measure(Pattern::parse("01"), 1, u).exact, 0);
  EXPECT_EQ(overlap_measure(Pattern::parse("00"), 1, u).exact, Rational(1, 8));
  auto b = Measure::parse("bernoulli:3/10,7/10");
  auto mu = pattern_measure(Pattern::parse("01"), b).exact;
  EXPECT_EQ(overlap_measure(Pattern::parse("01"), 2, b).exact, mu * mu);
}

TEST(Overlap, MatchesEnumeration) {
  std::vector<Measure> measures{Measure::uniform(2), Measure::parse("bernoulli:1/3,2/3"),
                                two_state_markov(), Measure::parse("markov:1/2,1/2;1/5,4/5")};
  for (const auto& m : measures) {
    for (std::string s : {"0", "01", "00", "010", "011", "0110"}) {
      auto p = Pattern::parse(s);
      const auto l = p.length();
      for (std::size_t i = 1; i <= l + 2; ++i) {
        auto oracle = enumerate_mass(m, l + i, [&](const std::vector<Symbol>& w) {
          for (std::size_t j = 0; j < l; ++j)
            if (w[j] != p[j] || w[i + j] != p[j]) return false;
          return true;
        });
        auto got = overlap_measure(p, i, m);
        EXPECT_EQ(got.exact, oracle) << s << " i=" << i;
        EXPECT_LE(got.exact, pattern_measure(p, m).exact);
      }
    }
  }
}

TEST(Family, Members) {
  EXPECT_EQ(family_member(PatternFamily::constant(0, 1, 40), 3).str(), "000");
  EXPECT_EQ(family_member(PatternFamily::parse("periodic:01", 1, 40), 5).str(), "01010");
  EXPECT_EQ(family_member(PatternFamily::fibonacci(1, 40), 6).str(), "010010");
  EXPECT_EQ(family_member(PatternFamily::champernowne(1, 40), 7).str(), "1101110");
  auto ex = PatternFamily::parse("explicit:01,110", 0, 0);
  EXPECT_EQ(family_member(ex, 1).str(), "110");
  try {
    family_member(PatternFamily::fibonacci(4, 8), 9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::out_of_range);
  }
}

TEST(Family, FibonacciMatchesConcatenationRecurrence) {
  // S_1 = "0", S_2 = "01", S_n = S_{n-1} S_{n-2}.
  std::string a = "0", b = "01";
  while (b.size() < 200) {
    std::string c = b + a;
    a = b;
    b = c;
  }
  for (std::size_t n = 1; n <= 200; ++n) {
    EXPECT_EQ(family_member(PatternFamily::fibonacci(1, 200), n).str(), b.substr(0, n));
  }
}

TEST(Numeric, ParseRational) {
  EXPECT_EQ(parse_rational("0.9"), Rational(9, 10));
  EXPECT_EQ(parse_rational("-3/12"), Rational(-1, 4));
  EXPECT_EQ(parse_rational("1e-3"), Rational(1, 1000));
  EXPECT_EQ(parse_rational("2.5E+2"), Rational(250));
  EXPECT_EQ(rational_from_double(0.1), Rational(1, 10));
  EXPECT_THROW(parse_rational("abc"), Error);
  EXPECT_THROW(parse_rational("1/0"), Error);
}

TEST(Numeric, TinyRationalToDouble) {
  Rational tiny(BigInt(1), pow(BigInt(2), 1100));
  EXPECT_GE(to_double(tiny), 0.0);
  EXPECT_NEAR(log_of(tiny), -1100 * std::log(2.0), 1e-9);
}
