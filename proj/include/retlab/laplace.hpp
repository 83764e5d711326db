#pragma once

// Laplace transforms of the scaled hitting and return times written through
// the sweep-out sequence, and the exponential-limit criterion report.

#include <algorithm>
#include <cmath>
#include <span>
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

inline const std::vector<double>& default_t_grid() {
  static const std::vector<double> grid{0.1, 0.25, 0.5, 1, 2, 4, 10};
  return grid;
}

struct LaplaceValue {
  double value = 0;
  std::size_t K_used = 0;   // terms k = 0..K_used-1 summed
  double tail_bound = 0;    // e^{-mu K t} s~(K) / (1 - e^{-mu t})
  double error_bound = 0;   // certified bound on |value - exact value|
};

/// (1 - e^{-mu t}) sum_{k>=0} e^{-mu k t} e^{log_value[k]} for any
/// non-increasing tail, truncated at the least K with
/// e^{-mu K t} e^{log_value[K]} / (1 - e^{-mu t}) < tol.
inline LaplaceValue laplace_sum(std::span<const double> log_value, double mu, double t, double tol = 1e-9) {
  require(t > 0 && std::isfinite(t), ErrorCode::invalid_argument, "t must be positive");
  require(tol > 0, ErrorCode::invalid_argument, "tolerance must be positive");
  require(!log_value.empty(), ErrorCode::invalid_argument, "empty series");
  const double a = mu * t;
  const double one_minus = -std::expm1(-a);
  const std::size_t K = log_value.size() - 1;
  CompensatedSum sum;
  for (std::size_t k = 0; k <= K; ++k) {
    const double term = std::exp(-a * static_cast<double>(k) + log_value[k]);
    const double bound = term / one_minus;
    if (bound < tol) {
      LaplaceValue v;
      v.value = one_minus * sum.value();
      v.K_used = k;
      v.tail_bound = bound;
      v.error_bound = one_minus * bound;
      return v;
    }
    sum.add(term);
  }
  // Extrapolate the decay of e^{-mu k t} s~(k) from the second half of the series.
  double rate = a;
  if (K >= 2) rate += (log_value[K / 2] - log_value[K]) / static_cast<double>(K - K / 2);
  const double needed = -std::log(tol * one_minus) / rate;
  const auto required = static_cast<std::size_t>(std::max(static_cast<double>(K + 1), std::ceil(needed)));
  throw SeriesTooShort("series of length " + std::to_string(K) + " does not reach tolerance " +
                           format_double(tol) + " at t = " + format_double(t) + "; about K = " +
                           std::to_string(required) + " is required",
                       required);
}

inline LaplaceValue laplace_series(const SweepoutSeries& series, double t, double tol = 1e-9) {
  return laplace_sum(series.log_value, series.mu.value, t, tol);
}

inline LaplaceValue phi_hitting(const SweepoutSeries& series, double t, double tol = 1e-9) {
  auto v = laplace_series(series, t, tol);
  v.value = 1.0 - v.value;
  return v;
}

/// 1 - (e^{mu t} - 1)/mu + (e^{mu t} - 1)/mu * laplace_series.
inline LaplaceValue phi_return(const SweepoutSeries& series, double t, double tol = 1e-9) {
  auto v = laplace_series(series, t, tol);
  const double c = std::expm1(series.mu.value * t) / series.mu.value;
  v.value = 1.0 - c * (1.0 - v.value);
  v.error_bound *= c;
  return v;
}

struct DirectSum {
  double value = 0;
  double tail_bound = 0;
};

/// sum_{k>=1} e^{-mu k t} mu(tau = k) with mu(tau = k) = s~(k-1) - s~(k).
inline DirectSum direct_phi_hitting(const HittingReturnDistributions& d, double t) {
  const double a = d.mu * t;
  CompensatedSum sum;
  const bool exact = !d.hitting_tail_exact.empty();
  for (std::size_t k = 1; k <= d.K; ++k) {
    const double mass = exact ? to_double(d.hitting_tail_exact[k - 1] - d.hitting_tail_exact[k])
                              : d.hitting_tail[k - 1] - d.hitting_tail[k];
    sum.add(std::exp(-a * static_cast<double>(k)) * mass);
  }
  return {sum.value(), std::exp(-a * static_cast<double>(d.K + 1)) * d.hitting_tail[d.K]};
}

/// sum_{k>=1} e^{-mu k t} mu_A(tau = k) from the return tail.
inline DirectSum direct_phi_return(const HittingReturnDistributions& d, double t) {
  const double a = d.mu * t;
  CompensatedSum sum;
  const bool exact = !d.return_tail_exact.empty();
  const std::size_t last = d.K - 1;
  for (std::size_t k = 1; k <= last; ++k) {
    const double mass = exact ? to_double(d.return_tail_exact[k - 1] - d.return_tail_exact[k])
                              : d.return_tail[k - 1] - d.return_tail[k];
    sum.add(std::exp(-a * static_cast<double>(k)) * mass);
  }
  return {sum.value(), std::exp(-a * static_cast<double>(last + 1)) * d.return_tail[last]};
}

/// x (1 - log x), continuous at 0.
/// Exact residuals of the sweep-out identities for k = 1..K. The return
/// tail comes from the conditioned automaton, not from differences of s~.
struct IdentityResiduals {
  std::size_t K = 0;
  Rational telescoping;  // s~(k-1) - s~(k) vs mu(A) mu_A(tau > k-1)
  Rational lemma;        // s~(k) - (1 - mu) s~(k-1) vs mu c_A(k-1)
  Rational recursive;    // s~(k) vs (1-mu)^k + mu sum_j (1-mu)^{k-1-j} c_A(j)

  [[nodiscard]] bool zero() const { return telescoping == 0 && lemma == 0 && recursive == 0; }
};

inline IdentityResiduals identity_residuals(const Pattern& pattern, const Measure& measure, std::size_t K) {
  require(K >= 1, ErrorCode::invalid_argument, "K must be at least 1");
  const auto s = exact_sweepout(pattern, measure, K);
  const auto ret = exact_return_tail(pattern, measure, K);
  const Rational mu = pattern_measure(pattern, measure).exact;
  const Rational keep = 1 - mu;
  auto worse = [](Rational& slot, const Rational& diff) {
    const Rational a = abs(diff);
    if (a > slot) slot = a;
  };
  IdentityResiduals r;
  r.K = K;
  Rational recursive = 1;
  for (std::size_t k = 1; k <= K; ++k) {
    const Rational c = s[k - 1] - ret[k - 1];
    worse(r.telescoping, s[k - 1] - s[k] - mu * ret[k - 1]);
    worse(r.lemma, s[k] - keep * s[k - 1] - mu * c);
    recursive = canonical(keep * recursive + mu * c);
    worse(r.recursive, s[k] - recursive);
  }
  return r;
}

inline double hsv_term(double x, double shift) {
  return x <= 0 ? 0.0 : x * (shift - std::log(x));
}

struct LaplacePoint {
  double t = 0;
  double series_value = 0;
  double target = 0;
  double deviation = 0;
  double phi_hitting = 0;
  double phi_return = 0;
  double phi_hitting_direct = 0;
  double phi_return_direct = 0;
  double formula_error_bound = 0;  // on series_value; scaled for phi_return
  double direct_hitting_tail = 0;
  double direct_return_tail = 0;
  std::size_t K_used = 0;
  double tail_bound = 0;
  double return_tail_at_t = 0;  // mu_A(mu tau_A > t)
  double c_tilde_t = 0;         // |mu_A(mu tau_A > t) - e^{-t}|
};

struct LaplaceReport {
  std::string pattern;
  std::size_t l = 0;
  double mu = 0;
  std::string mu_exact;
  double tol = 0;
  std::vector<LaplacePoint> points;
  double sup_deviation = 0;
  double c_tilde = 0;      // sup over the t grid
  double c_tilde_sup = 0;  // sup over all t >= 0 (every breakpoint of the step function)
  double sup_c = 0;        // sup_k |s~(k) - mu_A(tau > k)|
  double equiv2 = 0;       // sup_k |s~(k) - (1 - mu) s~(k-1)| / mu
  bool monotone_in_t = true;
  double hsv_c_tilde_bound = 0;  // 4 mu + c (1 - log c)
  double hsv_c_bound = 0;        // 2 mu + c~ (2 - log c~)
  bool hsv_ok = true;            // both inequalities with slack 1e-3
  std::size_t steps = 0;
};

struct LaplaceOptions {
  double tol = 1e-9;
  std::size_t cap = 500'000'000;
  double hsv_slack = 1e-3;
};

/// One streamed pass over s~(k) and mu_A(tau > k) evaluating every t of the
/// grid together with the c-sequence diagnostics. Memory is O(automaton).
inline LaplaceReport laplace_report(const Pattern& pattern, const Measure& measure, std::vector<double> t_grid,
                                    const LaplaceOptions& options = {}) {
  require(!t_grid.empty(), ErrorCode::invalid_argument, "t grid must not be empty");
  for (double t : t_grid) require(t > 0 && std::isfinite(t), ErrorCode::invalid_argument, "t must be positive");
  require(options.tol > 0, ErrorCode::invalid_argument, "tolerance must be positive");
  std::sort(t_grid.begin(), t_grid.end());
  t_grid.erase(std::unique(t_grid.begin(), t_grid.end()), t_grid.end());

  const auto mu_p = pattern_measure(pattern, measure);
  const double mu = mu_p.value;
  LaplaceReport report;
  report.pattern = pattern.str();
  report.l = pattern.length();
  report.mu = mu;
  report.mu_exact = to_string(mu_p.exact);
  report.tol = options.tol;

  const std::size_t n = t_grid.size();
  struct Acc {
    double a, one_minus;
    CompensatedSum sum, hit, ret;
    bool done = false;
    std::size_t k_at_t;
  };
  std::vector<Acc> acc(n);
  report.points.resize(n);
  std::size_t k_grid_max = 0;
  for (std::size_t i = 0; i < n; ++i) {
    acc[i].a = mu * t_grid[i];
    acc[i].one_minus = -std::expm1(-acc[i].a);
    acc[i].k_at_t = static_cast<std::size_t>(std::floor(t_grid[i] / mu));
    k_grid_max = std::max(k_grid_max, acc[i].k_at_t);
    report.points[i].t = t_grid[i];
    report.points[i].target = t_grid[i] / (t_grid[i] + 1);
  }

  SweepoutStream hitting(pattern, measure);
  ReturnStream returning(pattern, measure);
  double ls_prev = 0, lr_prev = 0;
  std::size_t remaining = n;
  bool c_done = false, tilde_done = false;
  std::size_t k = 0;
  for (;; ++k) {
    require(k <= options.cap, ErrorCode::budget_exceeded,
            "Laplace report did not reach tolerance within " + std::to_string(options.cap) + " steps");
    const double ls = hitting.next_log();
    const double lr = returning.next_log();
    const double s = std::exp(ls);
    const double r = std::exp(lr);
    const double hit_mass = k > 0 ? -std::expm1(ls - ls_prev) * std::exp(ls_prev) : 0.0;
    const double ret_mass = k > 0 ? -std::expm1(lr - lr_prev) * std::exp(lr_prev) : 0.0;

    for (std::size_t i = 0; i < n; ++i) {
      auto& A = acc[i];
      if (k == A.k_at_t) {
        report.points[i].return_tail_at_t = r;
        report.points[i].c_tilde_t = std::fabs(r - std::exp(-t_grid[i]));
      }
      if (A.done) continue;
      const double weight = std::exp(-A.a * static_cast<double>(k));
      A.hit.add(weight * hit_mass);
      A.ret.add(weight * ret_mass);
      const double term = weight * s;
      const double bound = term / A.one_minus;
      if (bound < options.tol) {
        A.done = true;
        --remaining;
        auto& p = report.points[i];
        const double S = A.one_minus * A.sum.value();
        const double c = std::expm1(A.a) / mu;
        p.K_used = k;
        p.tail_bound = bound;
        p.series_value = S;
        p.deviation = std::fabs(S - p.target);
        p.phi_hitting = 1.0 - S;
        p.phi_return = 1.0 - c * (1.0 - S);
        p.formula_error_bound = A.one_minus * bound;
        p.phi_hitting_direct = A.hit.value();
        p.phi_return_direct = A.ret.value();
        p.direct_hitting_tail = std::exp(-A.a * static_cast<double>(k + 1)) * s;
        p.direct_return_tail = std::exp(-A.a * static_cast<double>(k + 1)) * r;
      } else {
        A.sum.add(term);
      }
    }

    if (!c_done) {
      report.sup_c = std::max(report.sup_c, std::fabs(s - r));
      if (k > 0) {
        const double e2 = std::exp(ls_prev) * std::fabs(std::expm1(ls - ls_prev) + mu) / mu;
        report.equiv2 = std::max(report.equiv2, e2);
      }
      if (k > 0 && std::max(s, r) <= report.sup_c) {
        c_done = true;
      } else if (hitting.geometric() && returning.geometric()) {
        report.sup_c = std::max(report.sup_c, detail::geometric_gap_sup(s, hitting.log_rate(), r, returning.log_rate()));
        c_done = true;
      }
    }
    if (!tilde_done) {
      const double e_lo = std::exp(-mu * static_cast<double>(k));
      const double e_hi = std::exp(-mu * static_cast<double>(k + 1));
      report.c_tilde_sup = std::max({report.c_tilde_sup, std::fabs(r - e_lo), std::fabs(r - e_hi)});
      if (std::max(r, e_lo) <= report.c_tilde_sup) {
        tilde_done = true;
      } else if (returning.geometric()) {
        const double y = returning.log_rate();
        report.c_tilde_sup = std::max({report.c_tilde_sup, detail::geometric_gap_sup(r, y, e_lo, -mu),
                                       detail::geometric_gap_sup(r, y, e_hi, -mu)});
        tilde_done = true;
      }
    }
    ls_prev = ls;
    lr_prev = lr;
    if (remaining == 0 && c_done && tilde_done && k >= k_grid_max) break;
  }
  report.steps = k;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = report.points[i];
    report.sup_deviation = std::max(report.sup_deviation, p.deviation);
    report.c_tilde = std::max(report.c_tilde, p.c_tilde_t);
    if (i > 0 && !(p.series_value > report.points[i - 1].series_value)) report.monotone_in_t = false;
  }
  report.hsv_c_tilde_bound = 4 * mu + hsv_term(report.sup_c, 1.0);
  report.hsv_c_bound = 2 * mu + hsv_term(report.c_tilde_sup, 2.0);
  report.hsv_ok = report.c_tilde_sup <= report.hsv_c_tilde_bound + options.hsv_slack &&
                  report.sup_c <= report.hsv_c_bound + options.hsv_slack;
  return report;
}

/// Worst |formula - direct sum| beyond the certified bounds over the grid.
inline double laplace_consistency_excess(const LaplaceReport& r) {
  double worst = -1e300;
  for (const auto& p : r.points) {
    const double c = std::expm1(r.mu * p.t) / r.mu;
    const double hit = std::fabs(p.phi_hitting - p.phi_hitting_direct) - p.formula_error_bound - p.direct_hitting_tail;
    const double ret = std::fabs(p.phi_return - p.phi_return_direct) - c * p.formula_error_bound - p.direct_return_tail;
    worst = std::max({worst, hit, ret});
  }
  return worst;
}

struct CriterionOptions {
  LaplaceOptions laplace;
  unsigned jobs = 1;
};

inline std::vector<LaplaceReport> criterion_report(const PatternFamily& family, const Measure& measure,
                                                   std::size_t lmin, std::size_t lmax,
                                                   const std::vector<double>& t_grid,
                                                   const CriterionOptions& options = {}) {
  require(lmin <= lmax, ErrorCode::invalid_argument, "empty length range");
  std::vector<LaplaceReport> out(lmax - lmin + 1);
  parallel_for(out.size(), options.jobs, [&](std::size_t i) {
    out[i] = laplace_report(family_member(family, lmin + i, measure.q()), measure, t_grid, options.laplace);
  });
  return out;
}

inline nlohmann::json to_json(const LaplacePoint& p, const LaplaceReport& r) {
  return {{"l", r.l},
          {"mu", r.mu},
          {"t", p.t},
          {"series_value", p.series_value},
          {"target", p.target},
          {"deviation", p.deviation},
          {"K_used", p.K_used},
          {"tail_bound", p.tail_bound},
          {"phi_hitting", p.phi_hitting},
          {"phi_return", p.phi_return},
          {"phi_hitting_direct", p.phi_hitting_direct},
          {"phi_return_direct", p.phi_return_direct},
          {"return_tail_at_t", p.return_tail_at_t},
          {"c_tilde_t", p.c_tilde_t}};
}

inline nlohmann::json to_json(const LaplaceReport& r) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : r.points) points.push_back(to_json(p, r));
  return {{"pattern", r.pattern},
          {"l", r.l},
          {"mu", r.mu},
          {"mu_exact", r.mu_exact},
          {"tol", r.tol},
          {"points", points},
          {"sup_deviation", r.sup_deviation},
          {"c_tilde", r.c_tilde},
          {"c_tilde_sup", r.c_tilde_sup},
          {"sup_c", r.sup_c},
          {"equiv2", r.equiv2},
          {"monotone_in_t", r.monotone_in_t},
          {"hsv_c_tilde_bound", r.hsv_c_tilde_bound},
          {"hsv_c_bound", r.hsv_c_bound},
          {"hsv_ok", r.hsv_ok},
          {"steps", r.steps}};
}

}  // namespace retlab
