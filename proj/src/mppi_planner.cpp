#include "coral/mppi_planner.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace coral {

void MppiParams::check() const {
  if (K < 2) throw ParameterDomainError("MPPI: K must be >= 2");
  if (H < 1) throw ParameterDomainError("MPPI: H must be >= 1");
  if (!(phi_ess > 0.0 && phi_ess <= 1.0)) throw ParameterDomainError("MPPI: phi_ess in (0, 1]");
  if (!(sigma.array() >= 0.0).all()) throw ParameterDomainError("MPPI: sigma must be >= 0");
  if (!(u_max > 0.0)) throw ParameterDomainError("MPPI: u_max must be > 0");
  if (bisection_steps < 1) throw ParameterDomainError("MPPI: bisection_steps must be >= 1");
}

NominalPlan NominalPlan::zeros(const MppiParams& p) {
  NominalPlan n;
  n.U = ControlSeq::Zero(p.H, 2);
  n.rng = p.seed;
  return n;
}

LambdaSelection select_lambda(const Eigen::VectorXd& costs, const MppiParams& params) {
  const Eigen::VectorXd S = shifted_costs(costs);
  double s_max = 0.0;
  bool any = false;
  for (Eigen::Index i = 0; i < S.size(); ++i) {
    if (std::isfinite(S(i))) {
      s_max = std::max(s_max, S(i));
      any = true;
    }
  }
  if (!any) throw PlannerError("every rollout cost is non-finite");

  const double target = params.phi_ess * static_cast<double>(S.size());
  double lo = params.lambda_lo;
  double hi = 5.0 * std::max(1e-3, s_max);
  LambdaSelection out;
  out.unreachable = ess_at(S, lo) >= target || ess_at(S, hi) < target;
  for (int it = 0; it < params.bisection_steps; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ess_at(S, mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.lambda = 0.5 * (lo + hi);
  out.ess = ess_at(S, out.lambda);
  return out;
}

Perturbations sample_perturbations(const MppiParams& params, Rng& rng) {
  Perturbations eps(params.K, 2 * params.H);
  for (Eigen::Index i = 0; i < eps.rows(); ++i) {
    for (Eigen::Index t = 0; t < params.H; ++t) {
      eps(i, 2 * t) = params.sigma.x() * rng.normal();
      eps(i, 2 * t + 1) = params.sigma.y() * rng.normal();
    }
  }
  return eps;
}

int substeps(const SimConfig& sim) {
  return std::max(1, static_cast<int>(std::lround(sim.control_period / sim.dt)));
}

namespace {

Control clip(const Control& u, double u_max) { return u.cwiseMax(-u_max).cwiseMin(u_max); }

template <typename Row>
double rollout_one(const ControlSeq& U, const Row& eps_row, const RolloutContext& ctx,
                   const MppiParams& params, int n_sub) {
  SimState x = fork(*ctx.world);
  std::size_t cursor = ctx.start_stage;
  double total = 0.0;
  for (int t = 0; t < params.H; ++t) {
    Control u = U.row(t).transpose();
    if (eps_row.size() > 0) u += Control{eps_row(2 * t), eps_row(2 * t + 1)};
    u = clip(u, params.u_max);
    for (int k = 0; k < n_sub; ++k) step_inplace(x, u, *ctx.belief, *ctx.sim);
    const StageStatus st = ctx.cost->status(x, cursor);
    cursor = st.active_stage;
    total += ctx.cost->running(x, u, st);
  }
  total += ctx.cost->terminal(x);
  const double J = total / params.H;
  return std::isfinite(J) ? J : std::numeric_limits<double>::infinity();
}

}  // namespace

Eigen::VectorXd rollout_costs(const NominalPlan& plan, const Perturbations& eps,
                              const RolloutContext& ctx, const MppiParams& params) {
  const int K = static_cast<int>(eps.rows());
  const int n_sub = substeps(*ctx.sim);
  Eigen::VectorXd J(K);
  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) J(i) = rollout_one(plan.U, eps.row(i), ctx, params, n_sub);
  };
  int n_threads = params.threads > 0 ? params.threads
                                     : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, K);
  if (n_threads == 1) {
    work(0, K);
    return J;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  const int chunk = (K + n_threads - 1) / n_threads;
  for (int w = 0; w < n_threads; ++w) {
    const int b = w * chunk, e = std::min(K, b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& th : pool) th.join();
  return J;
}

double sequence_cost(const ControlSeq& U, const RolloutContext& ctx, const MppiParams& params) {
  const Eigen::RowVectorXd none(0);
  return rollout_one(U, none, ctx, params, substeps(*ctx.sim));
}

NominalPlan update_nominal(const NominalPlan& plan, const Perturbations& eps,
                           const Eigen::VectorXd& costs, double lambda, const MppiParams& params) {
  const Eigen::VectorXd W = softmax_weights(shifted_costs(costs), lambda);
  const Eigen::RowVectorXd dU = W.transpose() * eps;
  NominalPlan next = plan;
  for (Eigen::Index t = 0; t < next.U.rows(); ++t) {
    next.U.row(t) += params.beta * Eigen::RowVector2d{dU(2 * t), dU(2 * t + 1)};
  }
  next.U = next.U.cwiseMax(-params.u_max).cwiseMin(params.u_max);
  next.last_lambda = lambda;
  return next;
}

PlanStep plan_step(const NominalPlan& plan, const RolloutContext& ctx, const MppiParams& params) {
  params.check();
  NominalPlan current = plan;
  if (current.U.rows() != params.H) current.U = ControlSeq::Zero(params.H, 2);

  Rng rng(current.rng);
  const Perturbations eps = sample_perturbations(params, rng);
  current.rng = rng.next_u64();

  const Eigen::VectorXd J = rollout_costs(current, eps, ctx, params);
  PlanStep out;
  out.infinite_samples = static_cast<int>((!J.array().isFinite()).count());
  out.lambda = select_lambda(J, params);
  out.best_cost = J.minCoeff();

  NominalPlan updated = update_nominal(current, eps, J, out.lambda.lambda, params);
  updated.last_ess = out.lambda.ess;
  updated.last_best_cost = out.best_cost;
  updated.lambda_unreachable = out.lambda.unreachable;
  out.u0 = updated.U.row(0).transpose();

  // shift-and-repeat warm start
  const Eigen::Index H = updated.U.rows();
  if (H > 1) {
    updated.U.topRows(H - 1) = updated.U.bottomRows(H - 1).eval();
  }
  out.plan = std::move(updated);
  return out;
}

}  // namespace coral
