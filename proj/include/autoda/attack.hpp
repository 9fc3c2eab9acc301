#ifndef AUTODA_ATTACK_HPP
#define AUTODA_ATTACK_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "autoda/core.hpp"
#include "autoda/dsl.hpp"
#include "autoda/rng.hpp"

namespace autoda {

// Piecewise-linear feedback gain. Continuous on [0,1] with f(0.25) = 1:
// below the anchor the multiplier shrinks the step, above it grows it.
inline double f_of_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("f_of_p: p must lie in [0,1]");
  if (p <= 0.25) return 0.5 + 2.0 * p;
  return (5.0 + 4.0 * p) / 6.0;  // == 5/6 + 2p/3, exact at the endpoints
}

// Exponential moving acceptance estimate. k is 1 when the last proposal was
// both adversarial and strictly closer, 0 otherwise.
inline double update_p(double p, int k) { return 0.95 * p + 0.05 * static_cast<double>(k); }

inline double update_s(double s, double p) { return s * std::pow(f_of_p(p), 0.1); }

// The (p, s) feedback state. p stays in [0,1]; s stays positive.
struct StepController {
  double p = 0.25;
  double s = 0.001;

  void update(bool improved) {
    p = update_p(p, improved ? 1 : 0);
    s = update_s(s, p);
  }
};

struct AttackConfig {
  std::int64_t max_queries = 10000;
  double initial_s = 0.001;
  double initial_p = 0.25;
  std::uint64_t seed = 0;
  bool clamp = true;
  bool record_accepted = false;
};

// Proposal step of the random walk. Implementations never touch the oracle.
// DSL-backed proposals are pure given (inputs, rng state); the Boundary
// baseline keeps internal step-size state fed through on_result.
class ProposalFn {
 public:
  virtual ~ProposalFn() = default;
  virtual InputVector propose(const InputVector& x, const InputVector& x0, Rng& rng, double s) = 0;
  virtual void on_result(bool /*accepted*/) {}
};

// Runs a generate program: draws one fresh standard-normal noise vector per
// call, then evaluates with (x0 = original, x1 = current point).
class DslProposal : public ProposalFn {
 public:
  explicit DslProposal(dsl::GenProgram program) : program_(std::move(program)) {}

  InputVector propose(const InputVector& x, const InputVector& x0, Rng& rng, double s) override {
    std::vector<double> noise(x0.size());
    rng.fill_normal(noise);
    InputVector noise_vec(std::move(noise), x0.shape);
    dsl::EvalContext ctx;
    ctx.x0 = &x0;
    ctx.x1 = &x;
    ctx.noise = &noise_vec;
    ctx.s = s;
    ctx.rng = &rng;
    return dsl::evaluate(program_, ctx);
  }

  const dsl::GenProgram& program() const { return program_; }

 private:
  dsl::GenProgram program_;
};

// Orthogonal-step + source-step random walk. One candidate per call combining
// both steps; its own windowed success-rate controller rescales the steps by
// the adaptation rate, independent of the engine's (p, s) loop.
class BoundaryProposal : public ProposalFn {
 public:
  explicit BoundaryProposal(double spherical_step = 0.01, double source_step = 0.01,
                            double adaptation_rate = 1.5)
      : spherical_step_(spherical_step), source_step_(source_step), rate_(adaptation_rate) {}

  InputVector propose(const InputVector& x, const InputVector& x0, Rng& rng, double /*s*/) override {
    const std::size_t n = x.size();
    std::vector<double> src(n);  // x0 - x, pointing back to the original
    for (std::size_t i = 0; i < n; ++i) src[i] = x0.data[i] - x.data[i];
    double norm = 0;
    for (double v : src) norm += v * v;
    norm = std::sqrt(norm);

    std::vector<double> pert(n);
    rng.fill_normal(pert);
    double proj = 0;
    for (std::size_t i = 0; i < n; ++i) proj += pert[i] * src[i];
    proj /= norm * norm;
    for (std::size_t i = 0; i < n; ++i) pert[i] -= proj * src[i];
    double pert_norm = 0;
    for (double v : pert) pert_norm += v * v;
    pert_norm = std::sqrt(pert_norm);
    double scale = spherical_step_ * norm / pert_norm;
    // new source direction keeps length == norm after the spherical move
    double shrink = std::sqrt(1.0 + spherical_step_ * spherical_step_);
    std::vector<double> nsd(n);
    double nsd_norm = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nsd[i] = (src[i] - scale * pert[i]) / shrink;
      nsd_norm += nsd[i] * nsd[i];
    }
    nsd_norm = std::sqrt(nsd_norm);
    double length = (source_step_ * norm + nsd_norm - norm) / nsd_norm;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x0.data[i] - nsd[i] + length * nsd[i];
    return InputVector(std::move(out), x.shape);
  }

  void on_result(bool accepted) override {
    ++window_total_;
    if (accepted) ++window_hits_;
    if (window_total_ < kWindow) return;
    double frac = static_cast<double>(window_hits_) / static_cast<double>(window_total_);
    if (frac > 0.5) {
      spherical_step_ *= rate_;
      source_step_ *= rate_;
    } else if (frac < 0.2) {
      spherical_step_ /= rate_;
      source_step_ /= rate_;
    }
    window_total_ = 0;
    window_hits_ = 0;
  }

  double spherical_step() const { return spherical_step_; }
  double source_step() const { return source_step_; }

 private:
  static constexpr int kWindow = 25;
  double spherical_step_;
  double source_step_;
  double rate_;
  int window_total_ = 0;
  int window_hits_ = 0;
};

inline std::unique_ptr<ProposalFn> boundary_attack_proposal() {
  return std::make_unique<BoundaryProposal>();
}

// The random-walk loop. One initial budgeted query validates x1; afterwards
// each iteration proposes, clamps, queries once, keeps strict improvements,
// and advances the controller. A proposal with non-finite components costs no
// query but still counts k = 0; a run whose failures outnumber max_queries is
// cut off so a fully broken program cannot spin forever.
inline AttackTrace run_attack(const DecisionOracle& oracle, const InputVector& x0, Label original_label,
                              const InputVector& x1, ProposalFn& proposal, const AttackConfig& config) {
  if (x0.shape != x1.shape) throw ShapeMismatch("run_attack: x0 and x1 shapes differ");
  if (config.max_queries < 1) throw ConfigError("run_attack: max_queries must be >= 1");
  if (!(config.initial_s > 0)) throw ConfigError("run_attack: initial_s must be > 0");

  QueryBudget budget{config.max_queries};
  Rng rng(config.seed);
  AttackTrace trace;
  trace.seed = config.seed;

  if (!is_adversarial(oracle, x1, original_label, budget))
    throw StartingPointNotAdversarial("starting point shares the original label");

  InputVector x = x1;
  double d_min = l2_distance(x, x0);
  trace.points.push_back({budget.used, d_min, true});
  if (config.record_accepted) trace.accepted_examples.emplace_back(budget.used, x);

  StepController ctrl{config.initial_p, config.initial_s};
  while (!budget.exhausted() && trace.numeric_failures <= config.max_queries) {
    ++trace.proposals_attempted;
    bool improved = false;
    bool failed = false;
    InputVector candidate;
    try {
      candidate = proposal.propose(x, x0, rng, ctrl.s);
    } catch (const NumericError&) {
      failed = true;
    }
    if (!failed && !all_finite(candidate)) failed = true;
    if (failed) {
      ++trace.numeric_failures;
    } else {
      if (config.clamp) candidate = clamp_to_domain(std::move(candidate));
      bool adversarial = is_adversarial(oracle, candidate, original_label, budget);
      double dist = l2_distance(candidate, x0);
      if (adversarial && dist < d_min) {
        x = std::move(candidate);
        d_min = dist;
        improved = true;
        if (config.record_accepted) trace.accepted_examples.emplace_back(budget.used, x);
      }
      trace.points.push_back({budget.used, d_min, improved});
    }
    proposal.on_result(improved);
    ctrl.update(improved);
  }

  trace.final_example = std::move(x);
  return trace;
}

}  // namespace autoda

#endif  // AUTODA_ATTACK_HPP
