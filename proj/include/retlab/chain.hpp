#pragma once

// Sparse substochastic transfer operator with an absorbing sink, iterated
// either in exact scaled-integer arithmetic or in normalised log-space
// floating point.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "retlab/error.hpp"
#include "retlab/numeric.hpp"

namespace retlab {

inline constexpr std::uint32_t kAbsorbed = std::numeric_limits<std::uint32_t>::max();

struct ChainEdge {
  std::uint32_t from;
  std::uint32_t to;  // kAbsorbed for the sink
  std::uint32_t weight;
};

/// Edge weights are the measure's transition probabilities, stored both as
/// doubles and as integer numerators over a common denominator.
struct Chain {
  std::size_t states = 0;
  std::vector<ChainEdge> edges;
  std::vector<double> weight;
  std::vector<BigInt> weight_num;
  BigInt denominator = 1;
};

/// Exact iteration: the state vector holds integer numerators over an
/// implicit denominator that is multiplied by the chain denominator per step.
class ExactRun {
 public:
  ExactRun(std::shared_ptr<const Chain> chain, std::vector<BigInt> numerators, BigInt denominator)
      : chain_(std::move(chain)), v_(std::move(numerators)), denom_(std::move(denominator)) {
    require(v_.size() == chain_->states, ErrorCode::invalid_argument, "initial vector size mismatch");
    scratch_.resize(v_.size());
  }

  void step() {
    for (auto& x : scratch_) x = 0;
    for (const auto& e : chain_->edges) {
      if (e.to == kAbsorbed) continue;
      const BigInt& src = v_[e.from];
      if (sgn(src) == 0) continue;
      mpz_addmul(scratch_[e.to].get_mpz_t(), src.get_mpz_t(),
                 chain_->weight_num[e.weight].get_mpz_t());
    }
    v_.swap(scratch_);
    denom_ *= chain_->denominator;
  }

  void mask(const std::vector<bool>& keep) {
    for (std::size_t i = 0; i < v_.size(); ++i)
      if (!keep[i]) v_[i] = 0;
  }

  [[nodiscard]] Rational mass() const {
    BigInt total = 0;
    for (const auto& x : v_) total += x;
    Rational r(total, denom_);
    r.canonicalize();
    return r;
  }

  [[nodiscard]] const std::vector<BigInt>& numerators() const noexcept { return v_; }
  [[nodiscard]] const BigInt& denominator() const noexcept { return denom_; }

 private:
  std::shared_ptr<const Chain> chain_;
  std::vector<BigInt> v_;
  std::vector<BigInt> scratch_;
  BigInt denom_;
};

/// Floating-point iteration. The vector is kept normalised to total mass 1
/// and the log of the surviving mass is accumulated from the absorbed
/// fraction, so tiny leaks and very long horizons do not lose precision.
class FloatRun {
 public:
  FloatRun(std::shared_ptr<const Chain> chain, std::vector<double> initial)
      : chain_(std::move(chain)), v_(std::move(initial)) {
    require(v_.size() == chain_->states, ErrorCode::invalid_argument, "initial vector size mismatch");
    scratch_.resize(v_.size());
    double total = 0;
    for (double x : v_) total += x;
    if (total <= 0) {
      dead_ = true;
    } else {
      for (double& x : v_) x /= total;
      log_mass_.add(std::log(total));
    }
  }

  /// Advances one symbol; returns the fraction of the current mass absorbed.
  double step() {
    if (dead_) return 0.0;
    for (auto& x : scratch_) x = 0;
    double leak = 0;
    for (const auto& e : chain_->edges) {
      const double contribution = v_[e.from] * chain_->weight[e.weight];
      if (e.to == kAbsorbed) {
        leak += contribution;
      } else {
        scratch_[e.to] += contribution;
      }
    }
    v_.swap(scratch_);
    renormalise(leak);
    return leak;
  }

  void mask(const std::vector<bool>& keep) {
    if (dead_) return;
    double dropped = 0;
    for (std::size_t i = 0; i < v_.size(); ++i) {
      if (!keep[i]) {
        dropped += v_[i];
        v_[i] = 0;
      }
    }
    renormalise(dropped);
  }

  [[nodiscard]] double log_mass() const noexcept {
    return dead_ ? -std::numeric_limits<double>::infinity() : log_mass_.value();
  }
  [[nodiscard]] double mass() const noexcept { return dead_ ? 0.0 : std::exp(log_mass_.value()); }
  [[nodiscard]] bool dead() const noexcept { return dead_; }
  [[nodiscard]] const std::vector<double>& distribution() const noexcept { return v_; }

 private:
  void renormalise(double lost) {
    double total = 0;
    for (double x : v_) total += x;
    if (total <= 0 || lost >= 1.0) {
      dead_ = true;
      return;
    }
    for (double& x : v_) x /= total;
    log_mass_.add(std::log1p(-lost));
  }

  std::shared_ptr<const Chain> chain_;
  std::vector<double> v_;
  std::vector<double> scratch_;
  CompensatedSum log_mass_;
  bool dead_ = false;
};

struct SpectralResult {
  double lambda = 0;            // dominant eigenvalue of the substochastic operator
  double one_minus_lambda = 0;  // computed from the absorbed flux, no cancellation
  std::size_t iterations = 0;
  bool converged = false;
};

/// Power iteration on the chain started from `initial` (positive vector).
/// Converged when the absorbed fraction changes by less than `tol`
/// relative to itself on 16 consecutive steps, after at least 2 * states + 32.
inline SpectralResult power_iteration(std::shared_ptr<const Chain> chain, std::vector<double> initial,
                                      double tol = 1e-12, std::size_t max_iter = 2'000'000) {
  const std::size_t states = chain->states;
  FloatRun run(std::move(chain), std::move(initial));
  SpectralResult result;
  double previous = -1;
  std::size_t stable = 0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    const double leak = run.step();
    result.iterations = it;
    result.one_minus_lambda = leak;
    if (run.dead()) {
      result.one_minus_lambda = 1;
      result.converged = true;
      break;
    }
    if (leak > 0 && previous > 0 && std::fabs(leak - previous) <= tol * leak) {
      if (++stable >= 16 && it >= 2 * states + 32) {
        result.converged = true;
        break;
      }
    } else {
      stable = 0;
    }
    if (leak == 0 && it > states + 1) {
      // No flux into the sink at all: the operator is stochastic on its support.
      result.converged = true;
      break;
    }
    previous = leak;
  }
  result.lambda = 1.0 - result.one_minus_lambda;
  return result;
}

}  // namespace retlab
