#pragma once

// Damped Newton-Raphson with backtracking (Armijo) line search and a random
// orthogonal escape when the Newton direction cannot be used.
//
// The core works on any twice-differentiable Objective of arbitrary dimension;
// fit() and fit_chain() wrap it for the compressor loss.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "compfit/autodiff.hpp"
#include "compfit/compressor.hpp"
#include "compfit/signal_io.hpp"

namespace compfit {

struct NROptions {
  double armijo_alpha = 1e-4;
  int max_iters = 50;
  double grad_tol = 1e-9;  // on the infinity norm
  double min_step = 0x1p-30;
  int max_curvature_retries = 10;
  std::uint64_t rng_seed = 0;
  HessianStrategy strategy = HessianStrategy::FwdRev;

  void validate() const;
};

/// A loss with gradient and Hessian. evaluate() must return a symmetric
/// Hessian.
class Objective {
 public:
  struct Derivatives {
    double loss = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
  };

  virtual ~Objective() = default;
  virtual Eigen::Index dimension() const = 0;
  virtual double loss(const Eigen::VectorXd& theta) const = 0;
  virtual Derivatives evaluate(const Eigen::VectorXd& theta) const = 0;
};

/// Thrown when the loss or gradient stops being finite.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(int iteration, const std::string& what);
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

enum class CurvatureStatus { PositiveSemidefinite, Indefinite, Singular };
std::string to_string(CurvatureStatus status);

struct StepSolution {
  Eigen::VectorXd direction;  // solves H nu = g when status != Singular
  CurvatureStatus status = CurvatureStatus::PositiveSemidefinite;
  double min_eigenvalue = 0.0;
  double relative_residual = 0.0;  // |H nu - g| / |g|
};

/// Solves H nu = g with an LDL' factorisation. H counts as PSD when its
/// smallest eigenvalue is >= -1e-10 |H|; Singular when the factorisation
/// fails or the residual exceeds 1e-10 |g|.
StepSolution solve_step(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient);

struct LineSearchResult {
  bool accepted = false;
  double tau = 0.0;
  Eigen::VectorXd theta;  // theta - tau nu when accepted
  double loss = 0.0;
  int evaluations = 0;
};

/// Backtracking from tau = 1, halving until
///   L(theta - tau nu) <= L(theta) - alpha tau g'nu
/// or tau < min_step. Throws std::invalid_argument unless g'nu > 0.
LineSearchResult line_search(const Eigen::VectorXd& theta, const Eigen::VectorXd& nu,
                             double loss, const Eigen::VectorXd& gradient,
                             const std::function<double(const Eigen::VectorXd&)>& loss_fn,
                             const NROptions& options);

/// Random direction orthogonal to nu with |d| = |nu|, signed so g'd >= 0.
Eigen::VectorXd curvature_escape(const Eigen::VectorXd& nu, const Eigen::VectorXd& gradient,
                                 std::mt19937_64& rng);

enum class FitStatus { Converged, MaxIters, StalledNegativeCurvature };
std::string to_string(FitStatus status);

struct StepRecord {
  int iteration = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  double grad_norm = 0.0;
  double tau = 0.0;
  double directional_derivative = 0.0;  // g'nu of the accepted direction
  CurvatureStatus curvature = CurvatureStatus::PositiveSemidefinite;
  int escapes = 0;  // orthogonal directions tried before acceptance
};

struct NRResult {
  Eigen::VectorXd theta;
  std::vector<double> loss_trajectory;  // loss at the start and after each step
  double grad_norm = 0.0;
  Eigen::MatrixXd hessian;
  FitStatus status = FitStatus::MaxIters;
  int iters = 0;
  int curvature_retries = 0;
  std::vector<StepRecord> steps;
};

NRResult minimize(const Objective& objective, const Eigen::VectorXd& theta0,
                  const NROptions& options = {});

// ---------------------------------------------------------------------------

/// The compressor loss as an Objective over ThetaRaw vectors.
class CompressorObjective : public Objective {
 public:
  CompressorObjective(const LossProblem& problem, HessianStrategy strategy)
      : problem_(problem), strategy_(strategy) {}

  Eigen::Index dimension() const override { return 5; }
  double loss(const Eigen::VectorXd& theta) const override;
  Derivatives evaluate(const Eigen::VectorXd& theta) const override;

 private:
  const LossProblem& problem_;
  HessianStrategy strategy_;
};

struct FitConfig {
  double chunk_sec = 12.0;
  double overlap_sec = 1.0;
  ParamBounds bounds{};
  LossOptions loss{};
  NROptions nr{};
};

struct FitResult {
  ThetaRaw theta;
  CompressorParams params;
  std::vector<double> loss_trajectory;
  double grad_norm = 0.0;
  Hessian hessian;
  FitStatus status = FitStatus::MaxIters;
  int iters = 0;
  int curvature_retries = 0;
  std::vector<StepRecord> steps;

  double final_loss() const { return loss_trajectory.back(); }
};

FitResult fit(const LossProblem& problem, const ThetaRaw& theta_init, const NROptions& options);
FitResult fit(const AudioBuffer& x, const AudioBuffer& y, const ThetaRaw& theta_init,
              const FitConfig& config = {});

struct LabeledPair {
  double label = 0.0;
  AudioBuffer x;
  AudioBuffer y;
};

struct ChainEntry {
  double label = 0.0;
  ThetaRaw init;
  std::optional<FitResult> result;  // empty when the fit threw
  std::string error;
};

/// Fits the pairs in the given order, each from the previous converged theta.
/// A fit that throws or does not converge is recorded and skipped as a warm
/// start.
std::vector<ChainEntry> fit_chain(const std::vector<LabeledPair>& corpus,
                                  const ThetaRaw& theta_init, const FitConfig& config = {});

}  // namespace compfit
