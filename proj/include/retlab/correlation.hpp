#pragma once

// Correlation polynomial h_A(z), the rational generating function of the
// avoidance counts, its dominant root and the escape-rate report.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "retlab/avoidance.hpp"
#include "retlab/chain.hpp"
#include "retlab/error.hpp"
#include "retlab/numeric.hpp"
#include "retlab/parallel.hpp"
#include "retlab/shift_core.hpp"

namespace retlab {

/// h_A(z) = sum over periods p of z^(l-1-p); 0/1 coefficients, degree l-1.
struct CorrelationPolynomial {
  std::size_t length = 0;
  std::vector<std::size_t> periods;  // ascending, 0 first
  std::vector<int> coeffs;           // coeffs[j] multiplies z^j, j = 0..l-1

  /// h(z) / z^(l-1) = sum z^(-p); bounded for z >= 1.
  [[nodiscard]] double scaled(double z) const {
    CompensatedSum s;
    for (auto p : periods) s.add(std::pow(z, -static_cast<double>(p)));
    return s.value();
  }
  /// h'(z) / z^(l-2) = sum (l-1-p) z^(-p).
  [[nodiscard]] double scaled_derivative(double z) const {
    CompensatedSum s;
    for (auto p : periods) s.add(static_cast<double>(length - 1 - p) * std::pow(z, -static_cast<double>(p)));
    return s.value();
  }
  [[nodiscard]] double operator()(double z) const {
    return std::pow(z, static_cast<double>(length - 1)) * scaled(z);
  }
  [[nodiscard]] double derivative(double z) const {
    if (length == 1) return 0.0;
    return std::pow(z, static_cast<double>(length - 2)) * scaled_derivative(z);
  }
  [[nodiscard]] BigInt at(long z) const {
    BigInt r = 0;
    for (auto p : periods) r += pow(BigInt(z), length - 1 - p);
    return r;
  }
  [[nodiscard]] BigInt derivative_at(long z) const {
    BigInt r = 0;
    for (auto p : periods)
      if (length - 1 - p > 0) r += BigInt(static_cast<unsigned long>(length - 1 - p)) * pow(BigInt(z), length - 2 - p);
    return r;
  }
};

inline CorrelationPolynomial correlation_polynomial(const Pattern& pattern) {
  CorrelationPolynomial h;
  h.length = pattern.length();
  h.periods = periods(pattern);
  h.coeffs.assign(h.length, 0);
  for (auto p : h.periods) h.coeffs[h.length - 1 - p] = 1;
  return h;
}

/// f(0..N) from F(z) = z h(z) / (1 + (z - q) h(z)) expanded in 1/z.
inline std::vector<BigInt> gf_coefficients(const CorrelationPolynomial& h, unsigned q, std::size_t N) {
  require(q >= 2, ErrorCode::invalid_argument, "alphabet size must be at least 2");
  const std::size_t l = h.length;
  auto c = [&](std::ptrdiff_t j) -> long {
    return j < 0 || j >= static_cast<std::ptrdiff_t>(l) ? 0 : h.coeffs[j];
  };
  // Denominator 1 + (z - q) h(z) = sum d_i z^i (d_l = 1); numerator sum e_i z^i.
  std::vector<BigInt> d(l + 1), e(l + 1);
  for (std::size_t i = 0; i <= l; ++i) {
    const auto si = static_cast<std::ptrdiff_t>(i);
    d[i] = (i == 0 ? 1 : 0) + c(si - 1) - static_cast<long>(q) * c(si);
    e[i] = c(si - 1);
  }
  std::vector<BigInt> f(N + 1);
  for (std::size_t n = 0; n <= N; ++n) {
    BigInt v = n <= l ? e[l - n] : BigInt(0);
    for (std::size_t j = 1; j <= std::min(n, l); ++j) v -= d[l - j] * f[n - j];
    f[n] = v;
  }
  return f;
}

enum class RootMethod { bisection, unit_root, spectral_fallback };

inline const char* root_method_name(RootMethod m) {
  switch (m) {
    case RootMethod::bisection: return "bisection";
    case RootMethod::unit_root: return "unit_root";
    case RootMethod::spectral_fallback: return "spectral_fallback";
  }
  return "?";
}

struct RootResult {
  double root = 0;     // r_A
  double deficit = 0;  // q - r_A, kept separately for precision
  RootMethod method = RootMethod::bisection;
  bool fallback = false;
  std::optional<double> spectral;  // q * lambda from the transfer operator
  double spectral_mismatch = 0;
};

namespace detail {

// g(d) = 1 - d h(q - d), positive on (0, d*) where q - d* is the dominant root.
inline double root_gap(const CorrelationPolynomial& h, double q, double d) {
  const double z = q - d;
  const double log_dh = std::log(d) + static_cast<double>(h.length - 1) * std::log(z);
  return 1.0 - std::exp(log_dh) * h.scaled(z);
}

inline double root_gap_derivative(const CorrelationPolynomial& h, double q, double d) {
  const double z = q - d;
  const double hz = h(z);
  return -hz + d * h.derivative(z);
}

}  // namespace detail

/// Uniform-measure transfer operator of the avoidance automaton, started
/// from the first-symbol law; lambda is its dominant eigenvalue.
inline SpectralResult transfer_spectral(const Pattern& pattern, const Measure& measure) {
  LiftedAutomaton lifted(pattern, measure);
  return power_iteration(lifted.chain(), lifted.first_symbol_float());
}

/// Largest real root of 1 + (z - q) h(z) in [1, q), by scanning the deficit
/// d = q - z upward, bisection to 1e-14 relative and a Newton polish.
inline RootResult dominant_root(const CorrelationPolynomial& h, unsigned q_int) {
  require(q_int >= 2, ErrorCode::invalid_argument, "alphabet size must be at least 2");
  const double q = q_int;
  RootResult result;
  const double d_max = q - 1.0;
  // P(1) = 1 + (1 - q) h(1) evaluated exactly.
  const BigInt p_at_one = 1 + (1 - static_cast<long>(q_int)) * h.at(1);

  double lo = 0.0;
  double hi = 0.0;
  bool bracketed = false;
  double d = 0.5 / h.scaled(q) * std::pow(q, -static_cast<double>(h.length - 1));
  while (d < d_max) {
    if (detail::root_gap(h, q, d) <= 0.0) {
      hi = d;
      bracketed = true;
      break;
    }
    lo = d;
    d *= 1.25;
  }
  if (!bracketed) {
    if (sgn(p_at_one) == 0) {
      result.root = 1.0;
      result.deficit = d_max;
      result.method = RootMethod::unit_root;
      return result;
    }
    if (sgn(p_at_one) < 0) {
      hi = d_max;
      bracketed = true;
    }
  }
  if (!bracketed) {
    result.method = RootMethod::spectral_fallback;
    result.fallback = true;
    return result;
  }
  while (hi - lo > 1e-14 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (detail::root_gap(h, q, mid) > 0.0) lo = mid; else hi = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 4; ++it) {
    const double g = detail::root_gap(h, q, x);
    const double gp = detail::root_gap_derivative(h, q, x);
    if (gp == 0.0 || !std::isfinite(gp)) break;
    const double next = x - g / gp;
    if (!(next > 0.0) || next >= q || std::fabs(next - x) > 1e-6 * x) break;
    x = next;
  }
  result.deficit = x;
  result.root = q - x;
  return result;
}

/// dominant_root cross-validated against the spectral radius of the
/// uniform avoidance transfer operator; mismatch > 1e-9 is an error.
inline RootResult dominant_root(const Pattern& pattern, unsigned q) {
  auto h = correlation_polynomial(pattern);
  auto result = dominant_root(h, q);
  const auto spectral = transfer_spectral(pattern, Measure::uniform(q));
  const double qlambda = q * spectral.lambda;
  result.spectral = qlambda;
  if (result.method == RootMethod::spectral_fallback) {
    result.root = qlambda;
    result.deficit = q * spectral.one_minus_lambda;
    return result;
  }
  // A repeated unit root makes power iteration converge only polynomially.
  if (result.method == RootMethod::unit_root) return result;
  result.spectral_mismatch = std::fabs(q * spectral.one_minus_lambda - result.deficit);
  if (result.spectral_mismatch > 1e-9) {
    throw Error(ErrorCode::invalid_argument,
                "dominant root " + format_double(result.root) + " disagrees with spectral radius " +
                    format_double(qlambda) + " for pattern " + pattern.str());
  }
  return result;
}

namespace detail {

// sup_{j >= 0} |A x^j - B y^j| with 0 < x, y < 1: the derivative in j
// vanishes at most once, so the candidates are j = 0 and the integers
// around that critical point.
inline double geometric_gap_sup(double A, double log_x, double B, double log_y) {
  auto gap = [&](double j) { return std::fabs(A * std::exp(j * log_x) - B * std::exp(j * log_y)); };
  double best = gap(0);
  if (log_x != log_y && A > 0 && B > 0) {
    const double arg = (B * log_y) / (A * log_x);
    if (arg > 0) {
      const double j = std::log(arg) / (log_x - log_y);
      if (j > 0 && std::isfinite(j)) best = std::max({best, gap(std::floor(j)), gap(std::ceil(j))});
    }
  }
  return best;
}

}  // namespace detail

/// sup_k |s~(k) - e^{-k r}| for several rates r. The stream stops when no
/// later k can raise any of the sups, or once s~ has entered its geometric
/// regime, where the remaining sup is evaluated in closed form.
inline std::vector<double> sup_deviation_from_exponentials(const Pattern& pattern, const Measure& measure,
                                                           const std::vector<double>& rates,
                                                           std::size_t cap = 200'000'000) {
  std::vector<double> sup(rates.size(), 0.0);
  SweepoutStream stream(pattern, measure);
  for (std::size_t k = 0;; ++k) {
    require(k <= cap, ErrorCode::budget_exceeded,
            "sup deviation did not settle within " + std::to_string(cap) + " steps");
    const double log_s = stream.next_log();
    const double s = std::exp(log_s);
    bool settled = true;
    for (std::size_t j = 0; j < rates.size(); ++j) {
      const double e = std::exp(-static_cast<double>(k) * rates[j]);
      sup[j] = std::max(sup[j], std::fabs(s - e));
      if (std::max(s, e) > sup[j]) settled = false;
    }
    if (settled && k > 0) break;
    if (stream.geometric()) {
      for (std::size_t j = 0; j < rates.size(); ++j) {
        const double e = std::exp(-static_cast<double>(k) * rates[j]);
        sup[j] = std::max(sup[j], detail::geometric_gap_sup(s, stream.log_rate(), e, -rates[j]));
      }
      break;
    }
  }
  return sup;
}

/// Least-squares slope of -log s~(k) over k in [K/2, K].
inline double rho_fit(const SweepoutSeries& series) {
  require(series.K >= 64, ErrorCode::invalid_argument, "escape-rate fit needs K >= 64");
  std::vector<double> xs, ys;
  for (std::size_t k = series.K / 2; k <= series.K; ++k) {
    xs.push_back(static_cast<double>(k));
    ys.push_back(-series.log_value[k]);
  }
  return least_squares_slope(xs, ys);
}

struct EscapeRateReport {
  std::string pattern;
  std::size_t l = 0;
  std::optional<double> root;
  std::optional<double> root_expansion;
  std::optional<double> root_expansion_error;  // |r - expansion|, via the deficits
  std::optional<std::string> root_method;
  std::optional<double> rho_closed;
  double rho_spectral = 0;
  double rho_fit = 0;
  double rho = 0;  // rho_closed when available, else rho_spectral
  double mu_A = 0;
  std::string mu_A_exact;
  double ratio = 0;
  std::optional<double> ratio_closed_limit;
  double sup_dev_exp = 0;
  double sup_dev_mu = 0;
  double fit_gap = 0;  // |rho - rho_fit|
  std::size_t K = 0;
  bool spectral_converged = false;
};

struct EscapeOptions {
  bool require_closed = false;
  bool deviations = true;
};

inline EscapeRateReport escape_rate(const Pattern& pattern, const Measure& measure,
                                    const SweepoutSeries& series, const EscapeOptions& options = {}) {
  require(series.pattern == pattern, ErrorCode::invalid_argument, "series belongs to another pattern");
  if (options.require_closed && !measure.is_uniform()) {
    throw Error(ErrorCode::not_applicable, "closed-form escape rate needs the uniform measure");
  }
  EscapeRateReport r;
  r.pattern = pattern.str();
  r.l = pattern.length();
  r.K = series.K;
  r.mu_A = series.mu.value;
  r.mu_A_exact = to_string(series.mu.exact);

  const auto spectral = transfer_spectral(pattern, measure);
  r.spectral_converged = spectral.converged;
  r.rho_spectral = -std::log1p(-spectral.one_minus_lambda);

  if (measure.is_uniform()) {
    const unsigned q = measure.q();
    const auto h = correlation_polynomial(pattern);
    const auto root = dominant_root(pattern, q);
    r.root = root.root;
    r.root_method = root_method_name(root.method);
    r.rho_closed = -std::log1p(-root.deficit / q);
    const double qd = q;
    const double scale = std::pow(qd, -static_cast<double>(r.l - 1));
    const double hs = h.scaled(qd);
    const double expansion_deficit = scale * (1.0 / hs + std::pow(qd, -static_cast<double>(r.l)) *
                                                             h.scaled_derivative(qd) / (hs * hs * hs));
    r.root_expansion = qd - expansion_deficit;
    r.root_expansion_error = std::fabs(root.deficit - expansion_deficit);
    r.ratio_closed_limit = to_double(Rational(pow(BigInt(q), r.l - 1), h.at(q)));
  }
  r.rho = r.rho_closed.value_or(r.rho_spectral);
  r.ratio = r.rho / r.mu_A;
  r.rho_fit = rho_fit(series);
  r.fit_gap = std::fabs(r.rho - r.rho_fit);
  if (options.deviations) {
    auto sups = sup_deviation_from_exponentials(pattern, measure, {r.rho, r.mu_A});
    r.sup_dev_exp = sups[0];
    r.sup_dev_mu = sups[1];
  }
  return r;
}

inline EscapeRateReport escape_rate(const Pattern& pattern, const Measure& measure, std::size_t K = 4096,
                                    const EscapeOptions& options = {}) {
  SweepoutOptions so;
  so.K = K;
  return escape_rate(pattern, measure, sweepout_series(pattern, measure, so), options);
}

inline nlohmann::json to_json(const EscapeRateReport& r) {
  auto opt = [](const auto& v) -> nlohmann::json {
    if (v) return *v;
    return nullptr;
  };
  return {{"pattern", r.pattern},
          {"l", r.l},
          {"root", opt(r.root)},
          {"root_expansion", opt(r.root_expansion)},
          {"root_expansion_error", opt(r.root_expansion_error)},
          {"root_method", opt(r.root_method)},
          {"rho_closed", opt(r.rho_closed)},
          {"rho_spectral", r.rho_spectral},
          {"rho_fit", r.rho_fit},
          {"rho", r.rho},
          {"mu_A", r.mu_A},
          {"mu_A_exact", r.mu_A_exact},
          {"ratio", r.ratio},
          {"ratio_closed_limit", opt(r.ratio_closed_limit)},
          {"sup_dev_exp", r.sup_dev_exp},
          {"sup_dev_mu", r.sup_dev_mu},
          {"fit_gap", r.fit_gap},
          {"K", r.K},
          {"spectral_converged", r.spectral_converged}};
}

/// Limit of rho/mu along a family shrinking to a periodic point of period m.
struct PeriodicLimit {
  std::size_t m = 0;
  double measured = 0;     // ratio at the longest length
  double closed = 0;       // 1 - q^{-m}
  double stated = 0;       // 1 + q^{-m}
  double measured_minus_closed = 0;
  double measured_minus_stated = 0;
  bool discrepancy = false;  // measured value rules out the stated constant
};

struct RatioStudy {
  std::string family;
  std::vector<EscapeRateReport> rows;
  std::optional<PeriodicLimit> periodic;
};

struct RatioStudyOptions {
  std::size_t K = 4096;
  unsigned jobs = 1;
  double discrepancy_tolerance = 1e-3;
};

inline RatioStudy ratio_study(const PatternFamily& family, const Measure& measure, std::size_t lmin,
                              std::size_t lmax, const RatioStudyOptions& options = {}) {
  require(lmin <= lmax, ErrorCode::invalid_argument, "empty length range");
  RatioStudy study;
  study.family = family.name();
  study.rows.resize(lmax - lmin + 1);
  parallel_for(study.rows.size(), options.jobs, [&](std::size_t i) {
    const auto pattern = family_member(family, lmin + i, measure.q());
    study.rows[i] = escape_rate(pattern, measure, options.K);
  });
  if (family.period() > 0) {
    PeriodicLimit p;
    p.m = family.period();
    const double qm = std::pow(static_cast<double>(measure.q()), -static_cast<double>(p.m));
    p.measured = study.rows.back().ratio;
    p.closed = 1.0 - qm;
    p.stated = 1.0 + qm;
    p.measured_minus_closed = p.measured - p.closed;
    p.measured_minus_stated = p.measured - p.stated;
    p.discrepancy = std::fabs(p.measured_minus_stated) > options.discrepancy_tolerance;
    study.periodic = p;
  }
  return study;
}

inline nlohmann::json to_json(const RatioStudy& s) {
  nlohmann::json j;
  j["family"] = s.family;
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : s.rows) rows.push_back(to_json(r));
  if (s.periodic) {
    const auto& p = *s.periodic;
    j["periodic_limit"] = {{"m", p.m},
                           {"measured", p.measured},
                           {"closed_form", p.closed},
                           {"stated", p.stated},
                           {"measured_minus_closed_form", p.measured_minus_closed},
                           {"measured_minus_stated", p.measured_minus_stated},
                           {"discrepancy", p.discrepancy}};
  } else {
    j["periodic_limit"] = nullptr;
  }
  return j;
}

}  // namespace retlab
