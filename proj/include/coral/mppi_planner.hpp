#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Dense>

#include "coral/cost_engine.hpp"
#include "coral/planar_sim.hpp"
#include "coral/rng.hpp"
#include "coral/types.hpp"

namespace coral {

struct MppiParams {
  int K = 256;
  int H = 32;
  Vec2 sigma{0.01, 0.01};  ///< per-channel perturbation std, m
  double u_max = 0.05;
  double beta = 1.0;
  double phi_ess = 0.2;
  int bisection_steps = 25;
  double lambda_lo = 1e-8;
  std::uint64_t seed = 0;
  int threads = 0;  ///< rollout workers; 0 = hardware concurrency

  /// Throws ParameterDomainError when an invariant is violated.
  void check() const;
};

/// K x 2H, row i = (eps_0x, eps_0z, eps_1x, ...). Row-major so a sample is contiguous.
using Perturbations = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// H x 2 control sequence.
using ControlSeq = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

struct NominalPlan {
  ControlSeq U;
  double last_lambda = 0.0;
  double last_ess = 0.0;
  double last_best_cost = 0.0;
  bool lambda_unreachable = false;
  std::uint64_t rng = 0;  ///< perturbation stream state

  static NominalPlan zeros(const MppiParams& p);
};

// Weighting helpers, generic over Eigen column expressions.

/// S_i = J_i - min_j J_j; +inf stays +inf.
template <typename Derived>
Eigen::VectorXd shifted_costs(const Eigen::MatrixBase<Derived>& J) {
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < J.size(); ++i) {
    if (std::isfinite(J(i))) m = std::min(m, J(i));
  }
  Eigen::VectorXd S(J.size());
  for (Eigen::Index i = 0; i < J.size(); ++i) {
    S(i) = std::isfinite(J(i)) ? J(i) - m : std::numeric_limits<double>::infinity();
  }
  return S;
}

/// W = softmax(-S / lambda) over shifted costs (min S = 0, so no overflow).
template <typename Derived>
Eigen::VectorXd softmax_weights(const Eigen::MatrixBase<Derived>& S, double lambda) {
  Eigen::VectorXd w = (-S.derived().array() / lambda).exp().matrix();
  return w / w.sum();
}

template <typename Derived>
double effective_sample_size(const Eigen::MatrixBase<Derived>& W) {
  return 1.0 / W.squaredNorm();
}

template <typename Derived>
double ess_at(const Eigen::MatrixBase<Derived>& S, double lambda) {
  return effective_sample_size(softmax_weights(S, lambda));
}

struct LambdaSelection {
  double lambda = 0.0;
  double ess = 0.0;
  /// ESS target lies outside [ESS(lambda_lo), ESS(lambda_hi)]; lambda is still the midpoint.
  bool unreachable = false;
};

/// Bisection on ESS(lambda) = phi*K over [lambda_lo, 5*max(1e-3, max S)].
/// Throws PlannerError when every cost is non-finite.
LambdaSelection select_lambda(const Eigen::VectorXd& costs, const MppiParams& params);

/// i.i.d. N(0, diag(sigma^2)) draws, serial so results do not depend on threading.
Perturbations sample_perturbations(const MppiParams& params, Rng& rng);

/// Rollout inputs shared by every sample.
struct RolloutContext {
  const SimState* world = nullptr;
  const WorldBelief* belief = nullptr;
  const CostEvaluator* cost = nullptr;
  const SimConfig* sim = nullptr;
  std::size_t start_stage = 0;
};

/// Sim steps per control interval.
int substeps(const SimConfig& sim);

/// J_i = (sum_t q(x_{i,t+1}, u_{i,t}) + phi(x_H)) / H. Non-finite costs become +inf.
Eigen::VectorXd rollout_costs(const NominalPlan& plan, const Perturbations& eps,
                              const RolloutContext& ctx, const MppiParams& params);

/// Cost of one explicit control sequence, evaluated exactly like a rollout sample.
double sequence_cost(const ControlSeq& U, const RolloutContext& ctx, const MppiParams& params);

/// U <- clip(U + beta * sum_i W_i eps_i).
NominalPlan update_nominal(const NominalPlan& plan, const Perturbations& eps,
                           const Eigen::VectorXd& costs, double lambda, const MppiParams& params);

struct PlanStep {
  Control u0{0, 0};
  NominalPlan plan;  ///< shifted for the next call
  LambdaSelection lambda;
  double best_cost = 0.0;
  int infinite_samples = 0;
};

/// sample -> rollout -> lambda -> update, then shift-and-repeat.
PlanStep plan_step(const NominalPlan& plan, const RolloutContext& ctx, const MppiParams& params);

}  // namespace coral
