#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "semdiff/diffusion.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/schedule.hpp"

namespace semdiff {

// Jointly Gaussian toy: x0 ~ N(prior_mean, prior_cov), y = A x0 + n with
// n ~ N(0, obs_var I), and x_t drawn from the conditional forward kernel with
// y as the condition.
struct LinearGaussianToy {
  Eigen::VectorXd prior_mean;
  Eigen::MatrixXd prior_cov;
  Eigen::MatrixXd A;
  double obs_var = 0.1;
  DiffusionSchedule schedule;

  std::size_t dim() const { return static_cast<std::size_t>(prior_mean.size()); }
  // Throws InvalidArgument on inconsistent sizes, asymmetric or indefinite
  // prior covariance, or negative observation noise.
  void validate() const;

  // Two-dimensional default used by the consistency experiment (T = 10).
  static LinearGaussianToy default_toy();
};

struct ToyDraw {
  Eigen::VectorXd x0, y, x_t;
  std::size_t t = 0;
};

// One joint draw at step t (t = 0 picks t uniformly in 1..T).
ToyDraw draw_toy(const LinearGaussianToy& toy, std::size_t t, Rng& rng);

// E[x0 | x_t, y] by Gaussian conditioning. Throws NumericalError if the
// observation covariance is singular.
Eigen::VectorXd analytic_posterior_mean(const LinearGaussianToy& toy, const Eigen::VectorXd& x_t,
                                        const Eigen::VectorXd& y, std::size_t t);
// Cov[x0 | x_t, y] (independent of the observed values).
Eigen::MatrixXd analytic_posterior_cov(const LinearGaussianToy& toy, std::size_t t);

// Bayes residual E||x0 - E[x0 | x_t, y]||^2 / d averaged over t uniform in 1..T.
double bayes_floor(const LinearGaussianToy& toy);

// Per-step linear regressor x0_hat = b_t + W_t [x_t; y] fitted by least squares.
class ToyRegressor {
 public:
  void fit(std::span<const ToyDraw> draws, std::size_t steps);
  Eigen::VectorXd predict(const Eigen::VectorXd& x_t, const Eigen::VectorXd& y, std::size_t t) const;
  // False if some step had too few samples for a full-rank fit.
  bool well_posed() const noexcept { return well_posed_; }

 private:
  struct Bin {
    Eigen::VectorXd intercept, feature_mean;
    Eigen::MatrixXd slope;  // (d, 2d)
    bool empty = true;
  };
  std::vector<Bin> bins_;
  Eigen::VectorXd global_mean_;
  bool well_posed_ = true;
};

struct ConsistencyRow {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double mse_to_analytic = 0.0;  // per coordinate
  double heldout_loss = 0.0;     // per-coordinate MSE against x0
  bool well_posed = true;
};

// Fits the regressor on n training draws for each n and scores it on
// eval_draws held-out draws.
std::vector<ConsistencyRow> consistency_experiment(const LinearGaussianToy& toy,
                                                   std::span<const std::size_t> n_list,
                                                   std::uint64_t seed, std::size_t eval_draws = 2000);

// X0Predictor returning the analytic posterior mean; images are flattened
// to the toy dimension and the condition tensor is taken as y.
class AnalyticDenoiser : public X0Predictor {
 public:
  explicit AnalyticDenoiser(const LinearGaussianToy& toy) : toy_(toy) {}
  Tensor predict_x0(const Tensor& x_t, const Tensor& cond, std::size_t t) const override;

 private:
  const LinearGaussianToy& toy_;
};

// Textbook DDPM step 1/sqrt(alpha_t) (x_t - beta_t / sqrt(1 - abar_t) eps_hat)
// + sigma_t z with sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t), computed
// from the raw betas. rng == nullptr disables the noise term.
Tensor vanilla_ddpm_reference_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t,
                                   std::span<const double> betas, Rng* rng);
// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps from the raw betas.
Tensor vanilla_ddpm_forward(const Tensor& x0, const Tensor& eps, std::size_t t,
                            std::span<const double> betas);

}  // namespace semdiff
