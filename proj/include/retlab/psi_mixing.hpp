#pragma once

// psi-mixing profiles, the class A_eps, escape-rate sandwich bounds and the
// rho/mu ratio study.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "retlab/avoidance.hpp"
#include "retlab/correlation.hpp"
#include "retlab/error.hpp"
#include "retlab/numeric.hpp"
#include "retlab/parallel.hpp"
#include "retlab/shift_core.hpp"

namespace retlab {

struct PsiProfile {
  std::size_t k_max = 0;
  std::vector<Rational> exact;  // k = 0..k_max
  std::vector<double> psi;
  Rational psi_max_exact;
  double psi_max = 0;

  [[nodiscard]] const Rational& at(std::size_t k) const {
    require(k <= k_max, ErrorCode::out_of_range, "psi index beyond the computed profile");
    return exact[k];
  }
};

/// psi_k = max_{a,b} |(P^{k+1})_{ab} / pi_b - 1|; identically 0 for i.i.d. measures.
inline PsiProfile psi_profile(const Measure& measure, std::size_t k_max = 256) {
  PsiProfile prof;
  prof.k_max = k_max;
  prof.exact.assign(k_max + 1, Rational(0));
  prof.psi.assign(k_max + 1, 0.0);
  prof.psi_max_exact = 0;
  if (measure.is_markov()) {
    const unsigned q = measure.q();
    auto power = measure.transition_power(1);
    for (std::size_t k = 0; k <= k_max; ++k) {
      Rational worst = 0;
      for (unsigned a = 0; a < q; ++a) {
        for (unsigned b = 0; b < q; ++b) {
          Rational dev = abs(power[a * q + b] / measure.initial(b) - 1);
          if (dev > worst) worst = dev;
        }
      }
      prof.exact[k] = canonical(worst);
      prof.psi[k] = to_double(prof.exact[k]);
      if (prof.exact[k] > prof.psi_max_exact) prof.psi_max_exact = prof.exact[k];
      if (k == k_max) break;
      std::vector<Rational> next(std::size_t(q) * q, Rational(0));
      for (unsigned i = 0; i < q; ++i)
        for (unsigned m = 0; m < q; ++m)
          for (unsigned j = 0; j < q; ++j) next[i * q + j] += power[i * q + m] * measure.transition(m, j);
      for (auto& x : next) x.canonicalize();
      power = std::move(next);
    }
  }
  prof.psi_max = to_double(prof.psi_max_exact);
  return prof;
}

struct PsiCertificate {
  bool holds = true;
  bool attained = true;  // sup over cylinder pairs equals psi_k for every k
  std::size_t pairs = 0;
  double worst_ratio = 0;  // max |mu(A cap T^{-k-n}B) - mu(A)mu(B)| / (psi_k mu(A) mu(B)) over psi_k > 0
};

/// Exhaustive check of |mu(A cap T^{-k-n}B) - mu(A)mu(B)| <= psi_k mu(A)mu(B)
/// over all cylinders A, B of lengths n, m <= max_len and gaps k <= max_gap.
inline PsiCertificate psi_certificate(const Measure& measure, std::size_t max_len = 3, std::size_t max_gap = 4) {
  const auto prof = psi_profile(measure, max_gap);
  const unsigned q = measure.q();
  auto words = [q](std::size_t n) {
    std::vector<std::vector<Symbol>> out;
    std::vector<Symbol> w(n, 0);
    while (true) {
      out.push_back(w);
      std::size_t i = 0;
      while (i < n && ++w[i] == q) w[i++] = 0;
      if (i == n) break;
    }
    return out;
  };
  PsiCertificate cert;
  for (std::size_t k = 0; k <= max_gap; ++k) {
    auto power = measure.transition_power(k + 1);
    Rational sup = 0;
    for (std::size_t n = 1; n <= max_len; ++n) {
      for (const auto& A : words(n)) {
        const Rational muA = measure.word_measure(A);
        for (std::size_t m = 1; m <= max_len; ++m) {
          for (const auto& B : words(m)) {
            const Rational muB = measure.word_measure(B);
            // mu(A cap T^{-k-n}B) = mu(A) P^{k+1}(a_last, b_0) mu(B) / pi(b_0).
            const Rational joint = muA * power[A.back() * q + B.front()] * muB / measure.initial(B.front());
            const Rational gap = abs(joint - muA * muB);
            const Rational allowed = prof.exact[k] * muA * muB;
            ++cert.pairs;
            if (gap > allowed) cert.holds = false;
            const Rational ratio = gap / (muA * muB);
            if (ratio > sup) sup = ratio;
            if (sgn(prof.exact[k]) > 0) cert.worst_ratio = std::max(cert.worst_ratio, to_double(ratio / prof.exact[k]));
          }
        }
      }
    }
    if (canonical(sup) != prof.exact[k]) cert.attained = false;
  }
  return cert;
}

/// Direct version of the joint cylinder measure: sums word_measure over every
/// gap filling. Used by tests to validate the closed bridge formula above.
inline Rational joint_cylinder_measure(const Measure& measure, std::span<const Symbol> A, std::size_t k,
                                       std::span<const Symbol> B) {
  const unsigned q = measure.q();
  std::vector<Symbol> word(A.begin(), A.end());
  word.resize(A.size() + k, 0);
  word.insert(word.end(), B.begin(), B.end());
  Rational total = 0;
  while (true) {
    total += measure.word_measure(word);
    std::size_t i = 0;
    while (i < k && ++word[A.size() + i] == q) word[A.size() + i++] = 0;
    if (i == k) break;
  }
  return canonical(total);
}

struct ClassMembership {
  std::string pattern;
  double epsilon = 0;
  std::size_t n_A = 0;
  std::optional<std::size_t> ell_A;
  std::optional<std::size_t> w_A;  // n_A + ell_A
  bool cond1 = false;              // psi_ell < eps
  bool cond2 = false;              // (n_A + ell) mu(A) < eps
  bool cond3 = false;              // n_A sup_{1<=i<=n_A} mu(A cap T^{-i}A)/mu(A) < eps
  Rational mu_exact;
  double mu = 0;
  Rational overlap_sup_exact;
  double overlap_sup = 0;
  double cond3_value = 0;
  Rational psi_ell_exact;
  double psi_ell = 0;
  Rational psi_max_exact;
  double psi_max = 0;
  std::optional<Rational> q_A_exact;
  std::optional<double> q_A;
  bool member = false;
  std::string reason;
};

inline ClassMembership classify(const Pattern& pattern, const Measure& measure, double epsilon,
                                const PsiProfile& profile) {
  require(epsilon > 0 && std::isfinite(epsilon), ErrorCode::invalid_argument, "epsilon must be positive");
  pattern.validate(measure.q());
  const Rational eps = rational_from_double(epsilon);
  ClassMembership c;
  c.pattern = pattern.str();
  c.epsilon = epsilon;
  c.n_A = pattern.length();
  const auto mu = pattern_measure(pattern, measure);
  c.mu_exact = mu.exact;
  c.mu = mu.value;
  c.psi_max_exact = profile.psi_max_exact;
  c.psi_max = profile.psi_max;

  c.overlap_sup_exact = 0;
  for (std::size_t i = 1; i <= c.n_A; ++i) {
    Rational ratio = overlap_measure(pattern, i, measure).exact / mu.exact;
    if (ratio > c.overlap_sup_exact) c.overlap_sup_exact = ratio;
  }
  c.overlap_sup_exact.canonicalize();
  c.overlap_sup = to_double(c.overlap_sup_exact);
  const Rational cond3 = Rational(static_cast<unsigned long>(c.n_A)) * c.overlap_sup_exact;
  c.cond3_value = to_double(cond3);
  c.cond3 = cond3 < eps;

  // psi is non-increasing and (n + ell) mu increasing, so the least ell with
  // psi_ell < eps is the only candidate worth testing.
  for (std::size_t ell = 0; ell <= profile.k_max; ++ell) {
    if (profile.exact[ell] < eps) {
      c.ell_A = ell;
      break;
    }
  }
  std::vector<std::string> reasons;
  if (c.ell_A) {
    c.cond1 = true;
    c.w_A = c.n_A + *c.ell_A;
    c.psi_ell_exact = profile.exact[*c.ell_A];
    c.psi_ell = to_double(c.psi_ell_exact);
    c.cond2 = Rational(static_cast<unsigned long>(*c.w_A)) * mu.exact < eps;
    if (!c.cond2) reasons.push_back("(n_A + ell_A) mu(A) >= epsilon");
  } else {
    reasons.push_back("no ell <= " + std::to_string(profile.k_max) + " with psi_ell < epsilon");
  }
  if (!c.cond3) reasons.push_back("n_A times the overlap ratio is " + format_double(c.cond3_value) + " >= epsilon");
  c.member = c.cond1 && c.cond2 && c.cond3;
  if (c.member) {
    const Rational wmu = Rational(static_cast<unsigned long>(*c.w_A)) * mu.exact;
    Rational qa = 1 - wmu * (1 + c.psi_ell_exact + 2 * wmu);
    qa.canonicalize();
    c.q_A_exact = qa;
    c.q_A = to_double(qa);
  } else {
    for (std::size_t i = 0; i < reasons.size(); ++i) c.reason += (i ? "; " : "") + reasons[i];
  }
  return c;
}

inline ClassMembership classify(const Pattern& pattern, const Measure& measure, double epsilon,
                                std::size_t k_max = 256) {
  return classify(pattern, measure, epsilon, psi_profile(measure, k_max));
}

struct StepCheck {
  std::size_t checked = 0;  // number of admissible m tested
  bool holds = true;
  double worst_slack = 0;  // max over m of (lhs - rhs) / rhs in the violating direction; <= 0 when holding
};

struct UpperBound {
  double bound = 0;
  double q_A = 0;
  std::size_t w_A = 0;
  StepCheck upperexp;  // s~(m w) >= s~((m-1) w) q_A
};

namespace detail {

inline void require_bounds_applicable(const ClassMembership& c) {
  if (!c.member) throw Error(ErrorCode::non_member, "pattern " + c.pattern + " is not in the class: " + c.reason);
  require(c.epsilon < 0.1, ErrorCode::not_applicable, "the sandwich bounds need epsilon < 0.1");
}

// Relative slack used when only a floating-point series is available.
inline constexpr double kFloatSlack = 1e-12;

}  // namespace detail

/// rho_A <= -log(q_A) / w_A with the inductive step checked on the series.
inline UpperBound rho_upper(const ClassMembership& c, const SweepoutSeries* series = nullptr) {
  detail::require_bounds_applicable(c);
  UpperBound u;
  u.w_A = *c.w_A;
  u.q_A = *c.q_A;
  const double wmu = static_cast<double>(u.w_A) * c.mu;
  u.bound = -std::log1p(-wmu * (1 + c.psi_ell + 2 * wmu)) / static_cast<double>(u.w_A);
  if (!series) return u;
  const std::size_t w = u.w_A;
  for (std::size_t m = 1; m * w <= series->K; ++m) {
    ++u.upperexp.checked;
    const std::size_t prev = (m - 1) * w, cur = m * w;
    const double slack = -std::expm1(series->log_value[cur] - series->log_value[prev] + u.bound * double(w));
    u.upperexp.worst_slack = std::max(u.upperexp.worst_slack, slack);
    bool ok;
    if (series->is_exact()) {
      ok = series->exact[cur] >= series->exact[prev] * *c.q_A_exact;
    } else {
      ok = slack <= detail::kFloatSlack;
    }
    if (!ok) u.upperexp.holds = false;
  }
  return u;
}

struct LowerBound {
  std::size_t k = 0;
  double bound = 0;
  double bracket = 0;  // 1 - k w mu (1 - eps - k eps (1 + psi_max)) (1 - psi_ell)
  bool vacuous = false;
  StepCheck lowerexp;  // s~(m (k+1) w) <= s~((k+1) w) p_hat(k)^{m-1}
};

/// rho_A >= -log(bracket) / ((k + 1) w_A) for 1 <= k < 1/eps.
inline LowerBound rho_lower(const ClassMembership& c, std::size_t k, const SweepoutSeries* series = nullptr) {
  detail::require_bounds_applicable(c);
  require(k >= 1 && static_cast<double>(k) < 1.0 / c.epsilon, ErrorCode::invalid_argument,
          "lower-bound k must satisfy 1 <= k < 1/epsilon");
  LowerBound b;
  b.k = k;
  const double w = static_cast<double>(*c.w_A);
  const double kd = static_cast<double>(k);
  const double eps = c.epsilon;
  const double inner = (1 - eps - kd * eps * (1 + c.psi_max)) * (1 - c.psi_ell);
  const double x = kd * w * c.mu * inner;
  b.bracket = 1 - x;
  if (!(inner > 0) || !(x < 1)) {
    b.vacuous = true;
    b.bound = 0;
  } else {
    b.bound = -std::log1p(-x) / ((kd + 1) * w);
  }
  if (!series) return b;
  const std::size_t span = (k + 1) * *c.w_A;
  const std::size_t kw = k * *c.w_A;
  if (kw > series->K || span > series->K) return b;
  // p_hat(k) = 1 - mu(A^{k w})(1 - psi_ell), with mu(A^{n}) = 1 - s~(n).
  if (series->is_exact()) {
    Rational p_hat = 1 - (1 - series->exact[kw]) * (1 - c.psi_ell_exact);
    p_hat.canonicalize();
    Rational rhs = series->exact[span];
    for (std::size_t m = 2; m * span <= series->K; ++m) {
      rhs *= p_hat;
      rhs.canonicalize();
      ++b.lowerexp.checked;
      const auto& lhs = series->exact[m * span];
      if (lhs > rhs) b.lowerexp.holds = false;
      b.lowerexp.worst_slack = std::max(b.lowerexp.worst_slack, to_double((lhs - rhs) / rhs));
    }
  } else {
    const double log_p_hat = std::log1p(-(-std::expm1(series->log_value[kw])) * (1 - c.psi_ell));
    for (std::size_t m = 2; m * span <= series->K; ++m) {
      ++b.lowerexp.checked;
      const double log_rhs = series->log_value[span] + static_cast<double>(m - 1) * log_p_hat;
      const double slack = std::expm1(series->log_value[m * span] - log_rhs);
      b.lowerexp.worst_slack = std::max(b.lowerexp.worst_slack, slack);
      if (slack > detail::kFloatSlack) b.lowerexp.holds = false;
    }
  }
  return b;
}

struct LowerScan {
  LowerBound best;
  std::vector<LowerBound> all;
};

/// Scans k = 1 .. ceil(1/eps) - 1 and keeps the largest bound.
inline LowerScan rho_lower_best(const ClassMembership& c, const SweepoutSeries* series = nullptr) {
  detail::require_bounds_applicable(c);
  LowerScan scan;
  for (std::size_t k = 1; static_cast<double>(k) < 1.0 / c.epsilon; ++k) {
    scan.all.push_back(rho_lower(c, k, series));
    if (scan.all.size() == 1 || scan.all.back().bound > scan.best.bound) scan.best = scan.all.back();
  }
  return scan;
}

struct SubadditivityResult {
  bool holds = true;
  double worst_slack = -1e300;  // max log s~(m+k+n) - log s~(m) - log s~(k) - log(1 + psi)
  std::size_t pairs = 0;
  bool exact = false;
};

/// s~(m + k + n_A) <= s~(m) s~(k) (1 + psi_max) for every m, k >= 0 with
/// m + k + n_A <= K; exact when the series is.
inline SubadditivityResult subadditivity_check(const SweepoutSeries& series, std::size_t n_A,
                                               const Rational& psi_max) {
  SubadditivityResult r;
  r.exact = series.is_exact();
  const Rational factor = 1 + psi_max;
  const double log_factor = std::log1p(to_double(psi_max));
  for (std::size_t m = 0; m + n_A <= series.K; ++m) {
    for (std::size_t k = 0; m + k + n_A <= series.K; ++k) {
      ++r.pairs;
      const std::size_t top = m + k + n_A;
      const double slack = series.log_value[top] - series.log_value[m] - series.log_value[k] - log_factor;
      r.worst_slack = std::max(r.worst_slack, slack);
      if (r.exact) {
        if (series.exact[top] > series.exact[m] * series.exact[k] * factor) r.holds = false;
      } else if (slack > detail::kFloatSlack) {
        r.holds = false;
      }
    }
  }
  return r;
}

/// max - min of -log s~(k)/k over the last quarter of [K/2, K].
inline double rate_oscillation(const SweepoutSeries& series) {
  const std::size_t K = series.K;
  require(K >= 8, ErrorCode::series_too_short, "oscillation needs K >= 8");
  const std::size_t lo = K / 2 + 3 * (K - K / 2) / 4;
  double mn = 1e300, mx = -1e300;
  for (std::size_t k = std::max<std::size_t>(lo, 1); k <= K; ++k) {
    const double v = -series.log_value[k] / static_cast<double>(k);
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  return mx - mn;
}

struct RholimRow {
  std::size_t n = 0;
  std::size_t l = 0;
  double epsilon = 0;
  double mu = 0;
  double rho = 0;
  std::optional<double> lower;
  std::optional<std::size_t> lower_k;
  std::optional<double> upper;
  double ratio = 0;
  bool member = false;
  bool bounds_applicable = false;
  bool in_sandwich = false;
  bool upperexp_holds = true;
  bool lowerexp_holds = true;
  double oscillation = 0;
  std::string reason;
};

struct RholimStudy {
  std::string family;
  std::vector<RholimRow> rows;
  bool sandwich_ok = true;    // every row with bounds
  bool gap_decreasing = true; // |ratio - 1| along all rows
  double final_gap = 0;
};

struct RholimOptions {
  std::size_t K = 4096;
  std::size_t psi_k_max = 256;
  unsigned jobs = 1;
};

/// Classifies member l with eps = 1/l and compares rho/mu with the sandwich.
inline RholimStudy rholim_study(const PatternFamily& family, const Measure& measure, std::size_t lmin,
                                std::size_t lmax, const RholimOptions& options = {}) {
  require(lmin <= lmax && lmin >= 1, ErrorCode::invalid_argument, "empty length range");
  const auto profile = psi_profile(measure, options.psi_k_max);
  RholimStudy study;
  study.family = family.name();
  study.rows.resize(lmax - lmin + 1);
  parallel_for(study.rows.size(), options.jobs, [&](std::size_t i) {
    const std::size_t l = lmin + i;
    const auto pattern = family_member(family, l, measure.q());
    SweepoutOptions so;
    so.K = options.K;
    const auto series = sweepout_series(pattern, measure, so);
    const auto esc = escape_rate(pattern, measure, series, EscapeOptions{false, false});
    RholimRow row;
    row.n = l;
    row.l = l;
    row.epsilon = 1.0 / static_cast<double>(l);
    row.mu = esc.mu_A;
    row.rho = esc.rho;
    row.ratio = esc.ratio;
    row.oscillation = rate_oscillation(series);
    const auto c = classify(pattern, measure, row.epsilon, profile);
    row.member = c.member;
    row.reason = c.reason;
    if (c.member && c.epsilon < 0.1) {
      row.bounds_applicable = true;
      const auto up = rho_upper(c, &series);
      const auto low = rho_lower_best(c, &series);
      row.upper = up.bound;
      row.lower = low.best.bound;
      row.lower_k = low.best.k;
      row.upperexp_holds = up.upperexp.holds;
      for (const auto& b : low.all) row.lowerexp_holds = row.lowerexp_holds && b.lowerexp.holds;
      row.in_sandwich = *row.lower <= row.rho && row.rho <= *row.upper;
    } else if (c.member) {
      row.reason = "epsilon >= 0.1: bounds not applicable";
    }
    study.rows[i] = row;
  });
  for (std::size_t i = 0; i < study.rows.size(); ++i) {
    const auto& r = study.rows[i];
    if (r.bounds_applicable && !(r.in_sandwich && r.upperexp_holds && r.lowerexp_holds)) study.sandwich_ok = false;
    if (i > 0 && !(std::fabs(r.ratio - 1) < std::fabs(study.rows[i - 1].ratio - 1))) study.gap_decreasing = false;
  }
  study.final_gap = std::fabs(study.rows.back().ratio - 1);
  return study;
}

inline nlohmann::json to_json(const PsiProfile& p) {
  std::vector<std::string> exact;
  for (const auto& x : p.exact) exact.push_back(to_string(x));
  return {{"k_max", p.k_max}, {"psi", p.psi}, {"psi_exact", exact}, {"psi_max", p.psi_max}};
}

inline nlohmann::json to_json(const ClassMembership& c) {
  auto opt = [](const auto& o) -> nlohmann::json { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  return {{"pattern", c.pattern},
          {"epsilon", c.epsilon},
          {"n_A", c.n_A},
          {"ell_A", opt(c.ell_A)},
          {"w_A", opt(c.w_A)},
          {"condition_1", c.cond1},
          {"condition_2", c.cond2},
          {"condition_3", c.cond3},
          {"condition_3_value", c.cond3_value},
          {"mu", c.mu},
          {"mu_exact", to_string(c.mu_exact)},
          {"overlap_sup", c.overlap_sup},
          {"overlap_sup_exact", to_string(c.overlap_sup_exact)},
          {"psi_ell", c.psi_ell},
          {"psi_max", c.psi_max},
          {"q_A", opt(c.q_A)},
          {"member", c.member},
          {"reason", c.reason}};
}

inline nlohmann::json to_json(const RholimRow& r) {
  auto opt = [](const auto& o) -> nlohmann::json { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  return {{"n", r.n},
          {"l", r.l},
          {"epsilon", r.epsilon},
          {"mu", r.mu},
          {"rho", r.rho},
          {"lower", opt(r.lower)},
          {"lower_k", opt(r.lower_k)},
          {"upper", opt(r.upper)},
          {"ratio", r.ratio},
          {"member", r.member},
          {"bounds_applicable", r.bounds_applicable},
          {"in_sandwich", r.in_sandwich},
          {"upperexp_holds", r.upperexp_holds},
          {"lowerexp_holds", r.lowerexp_holds},
          {"oscillation", r.oscillation},
          {"reason", r.reason}};
}

inline nlohmann::json to_json(const RholimStudy& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) rows.push_back(to_json(r));
  return {{"family", s.family},
          {"rows", rows},
          {"sandwich_ok", s.sandwich_ok},
          {"gap_decreasing", s.gap_decreasing},
          {"final_gap", s.final_gap}};
}

}  // namespace retlab
