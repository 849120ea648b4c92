#include "compfit/optimizer.hpp"

#include <cmath>
#include <sstream>

namespace compfit {

void NROptions::validate() const {
  if (!(armijo_alpha > 0.0 && armijo_alpha < 0.5)) {
    throw std::invalid_argument("armijo_alpha must lie in (0, 0.5)");
  }
  if (!(min_step > 0.0)) throw std::invalid_argument("min_step must be positive");
  if (max_iters < 0) throw std::invalid_argument("max_iters must be non-negative");
  if (max_curvature_retries < 0) {
    throw std::invalid_argument("max_curvature_retries must be non-negative");
  }
  if (!(grad_tol >= 0.0)) throw std::invalid_argument("grad_tol must be non-negative");
}

NonFiniteError::NonFiniteError(int iteration, const std::string& what)
    : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what),
      iteration_(iteration) {}

std::string to_string(CurvatureStatus status) {
  switch (status) {
    case CurvatureStatus::PositiveSemidefinite: return "psd";
    case CurvatureStatus::Indefinite: return "indefinite";
    case CurvatureStatus::Singular: return "singular";
  }
  return "unknown";
}

std::string to_string(FitStatus status) {
  switch (status) {
    case FitStatus::Converged: return "converged";
    case FitStatus::MaxIters: return "max_iters";
    case FitStatus::StalledNegativeCurvature: return "stalled_negative_curvature";
  }
  return "unknown";
}

StepSolution solve_step(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient) {
  if (hessian.rows() != hessian.cols() || hessian.rows() != gradient.size()) {
    throw std::invalid_argument("solve_step: dimension mismatch");
  }
  StepSolution out;
  const double scale = hessian.norm();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = eig.eigenvalues().minCoeff();
  out.status = out.min_eigenvalue >= -1e-10 * scale ? CurvatureStatus::PositiveSemidefinite
                                                    : CurvatureStatus::Indefinite;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
  out.direction = ldlt.solve(gradient);
  const double g_norm = gradient.norm();
  const double residual = (hessian * out.direction - gradient).norm();
  out.relative_residual = g_norm > 0.0 ? residual / g_norm : residual;
  if (ldlt.info() != Eigen::Success || !out.direction.allFinite() ||
      residual > 1e-10 * g_norm) {
    out.status = CurvatureStatus::Singular;
  }
  return out;
}

LineSearchResult line_search(const Eigen::VectorXd& theta, const Eigen::VectorXd& nu,
                             double loss, const Eigen::VectorXd& gradient,
                             const std::function<double(const Eigen::VectorXd&)>& loss_fn,
                             const NROptions& options) {
  const double slope = gradient.dot(nu);
  if (!(slope > 0.0)) {
    std::ostringstream msg;
    msg << "line search needs a descent direction (g'nu = " << slope << ")";
    throw std::invalid_argument(msg.str());
  }
  LineSearchResult out;
  for (double tau = 1.0; tau >= options.min_step; tau *= 0.5) {
    Eigen::VectorXd candidate = theta - tau * nu;
    const double value = loss_fn(candidate);
    ++out.evaluations;
    if (value <= loss - options.armijo_alpha * tau * slope) {
      out.accepted = true;
      out.tau = tau;
      out.theta = std::move(candidate);
      out.loss = value;
      return out;
    }
  }
  return out;
}

Eigen::VectorXd curvature_escape(const Eigen::VectorXd& nu, const Eigen::VectorXd& gradient,
                                 std::mt19937_64& rng) {
  const double nu_norm = nu.norm();
  if (!(nu_norm > 0.0) || nu.size() < 2) {
    throw std::invalid_argument("curvature_escape needs a non-zero direction in >= 2 dimensions");
  }
  const Eigen::VectorXd unit = nu / nu_norm;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd d(nu.size());
  double d_norm = 0.0;
  while (!(d_norm > 1e-8)) {
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = normal(rng);
    // Two Gram-Schmidt passes keep the orthogonality error at rounding level.
    d -= unit.dot(d) * unit;
    d -= unit.dot(d) * unit;
    d_norm = d.norm();
  }
  d *= nu_norm / d_norm;
  if (gradient.dot(d) < 0.0) d = -d;
  return d;
}

NRResult minimize(const Objective& objective, const Eigen::VectorXd& theta0,
                  const NROptions& options) {
  options.validate();
  if (theta0.size() != objective.dimension()) {
    throw std::invalid_argument("initial point has the wrong dimension");
  }
  std::mt19937_64 rng(options.rng_seed);
  const auto loss_fn = [&](const Eigen::VectorXd& t) { return objective.loss(t); };

  NRResult res;
  res.theta = theta0;
  Objective::Derivatives d = objective.evaluate(res.theta);
  if (!std::isfinite(d.loss) || !d.gradient.allFinite()) {
    throw NonFiniteError(0, "non-finite loss or gradient at the initial point");
  }
  res.loss_trajectory.push_back(d.loss);

  for (int iter = 0;; ++iter) {
    res.grad_norm = d.gradient.lpNorm<Eigen::Infinity>();
    res.hessian = d.hessian;
    if (res.grad_norm < options.grad_tol) {
      res.status = FitStatus::Converged;
      break;
    }
    if (iter == options.max_iters) {
      res.status = FitStatus::MaxIters;
      break;
    }

    const StepSolution step = solve_step(d.hessian, d.gradient);
    StepRecord rec;
    rec.iteration = iter;
    rec.loss_before = d.loss;
    rec.grad_norm = res.grad_norm;
    rec.curvature = step.status;

    LineSearchResult ls;
    Eigen::VectorXd direction = step.direction;
    const bool newton_usable = step.status == CurvatureStatus::PositiveSemidefinite &&
                               d.gradient.dot(step.direction) > 0.0;
    if (newton_usable) {
      ls = line_search(res.theta, direction, d.loss, d.gradient, loss_fn, options);
    }
    // Escape directions are drawn orthogonal to the Newton direction, or to
    // the gradient when no Newton direction exists.
    const Eigen::VectorXd base =
        step.status == CurvatureStatus::Singular ? Eigen::VectorXd(d.gradient) : step.direction;
    while (!ls.accepted && rec.escapes < options.max_curvature_retries) {
      ++rec.escapes;
      ++res.curvature_retries;
      direction = curvature_escape(base, d.gradient, rng);
      if (!(d.gradient.dot(direction) > 0.0)) continue;
      ls = line_search(res.theta, direction, d.loss, d.gradient, loss_fn, options);
    }
    if (!ls.accepted) {
      res.status = FitStatus::StalledNegativeCurvature;
      break;
    }

    rec.tau = ls.tau;
    rec.directional_derivative = d.gradient.dot(direction);
    if (!(ls.loss <= d.loss - options.armijo_alpha * ls.tau * rec.directional_derivative)) {
      throw std::logic_error("accepted step violates the Armijo condition");
    }
    res.theta = ls.theta;
    ++res.iters;
    d = objective.evaluate(res.theta);
    if (!std::isfinite(d.loss) || !d.gradient.allFinite()) {
      throw NonFiniteError(res.iters, "non-finite loss or gradient");
    }
    if (!(d.loss <= res.loss_trajectory.back())) {
      throw std::logic_error("loss increased across an accepted step");
    }
    rec.loss_after = d.loss;
    res.loss_trajectory.push_back(d.loss);
    res.steps.push_back(rec);
  }
  return res;
}

// ---------------------------------------------------------------------------

double CompressorObjective::loss(const Eigen::VectorXd& theta) const {
  return problem_.loss(ThetaRaw::from_vector(theta));
}

Objective::Derivatives CompressorObjective::evaluate(const Eigen::VectorXd& theta) const {
  const LossProblem::Evaluation ev = problem_.evaluate(ThetaRaw::from_vector(theta), strategy_);
  return {ev.loss, ev.gradient, ev.hessian.matrix};
}

FitResult fit(const LossProblem& problem, const ThetaRaw& theta_init, const NROptions& options) {
  const CompressorObjective objective(problem, options.strategy);
  const NRResult nr = minimize(objective, theta_init.vector(), options);
  FitResult out;
  out.theta = ThetaRaw::from_vector(nr.theta);
  out.params = constrain(out.theta, problem.bounds(), problem.sample_rate());
  out.loss_trajectory = nr.loss_trajectory;
  out.grad_norm = nr.grad_norm;
  out.hessian = Hessian{nr.hessian, true};
  out.status = nr.status;
  out.iters = nr.iters;
  out.curvature_retries = nr.curvature_retries;
  out.steps = nr.steps;
  return out;
}

FitResult fit(const AudioBuffer& x, const AudioBuffer& y, const ThetaRaw& theta_init,
              const FitConfig& config) {
  pair_validate(x, y);
  const LossProblem problem(
      x, y, plan_chunks(x.size(), x.sample_rate(), config.chunk_sec, config.overlap_sec),
      config.bounds, config.loss);
  return fit(problem, theta_init, config.nr);
}

std::vector<ChainEntry> fit_chain(const std::vector<LabeledPair>& corpus,
                                  const ThetaRaw& theta_init, const FitConfig& config) {
  std::vector<ChainEntry> out;
  out.reserve(corpus.size());
  ThetaRaw next = theta_init;
  for (const LabeledPair& item : corpus) {
    ChainEntry entry;
    entry.label = item.label;
    entry.init = next;
    try {
      entry.result = fit(item.x, item.y, next, config);
      if (entry.result->status == FitStatus::Converged) {
        next = entry.result->theta;
      }
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace compfit
