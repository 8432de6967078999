#include "semdiff/oracle.hpp"

#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff {
namespace {

struct Observation {
  Eigen::MatrixXd H;  // (2d, d)
  Eigen::MatrixXd R;  // (2d, 2d)
};

// [x_t; y] = H x0 + noise with noise covariance R.
Observation observation_model(const LinearGaussianToy& toy, std::size_t t) {
  const auto d = static_cast<Eigen::Index>(toy.dim());
  const auto c = forward_coefficients(toy.schedule, t);
  const double a = c.signal, b = c.condition, delta = c.noise_std * c.noise_std;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  Observation o;
  o.H.resize(2 * d, d);
  o.H.topRows(d) = a * I + b * toy.A;
  o.H.bottomRows(d) = toy.A;
  o.R.resize(2 * d, 2 * d);
  o.R.topLeftCorner(d, d) = (b * b * toy.obs_var + delta) * I;
  o.R.topRightCorner(d, d) = b * toy.obs_var * I;
  o.R.bottomLeftCorner(d, d) = b * toy.obs_var * I;
  o.R.bottomRightCorner(d, d) = toy.obs_var * I;
  return o;
}

// Gain K = Sigma H^T S^{-1}.
Eigen::MatrixXd kalman_gain(const LinearGaussianToy& toy, const Observation& o) {
  const Eigen::MatrixXd S = o.H * toy.prior_cov * o.H.transpose() + o.R;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  const double scale = S.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(scale, 1.0)) {
    throw NumericalError("observation covariance is singular");
  }
  return ldlt.solve(o.H * toy.prior_cov).transpose();
}

// Symmetric square root; handles semi-definite priors.
Eigen::MatrixXd prior_root(const LinearGaussianToy& toy) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(toy.prior_cov);
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

ToyDraw draw_with_root(const LinearGaussianToy& toy, const Eigen::MatrixXd& root, std::size_t t,
                       Rng& rng) {
  const auto d = static_cast<Eigen::Index>(toy.dim());
  ToyDraw draw;
  draw.t = t != 0 ? t
                  : static_cast<std::size_t>(
                        rng.uniform_int(1, static_cast<std::int64_t>(toy.schedule.steps())));
  Eigen::VectorXd z(d), n(d), eps(d);
  for (auto i = 0; i < d; ++i) z[i] = rng.normal();
  for (auto i = 0; i < d; ++i) n[i] = std::sqrt(toy.obs_var) * rng.normal();
  for (auto i = 0; i < d; ++i) eps[i] = rng.normal();
  draw.x0 = toy.prior_mean + root * z;
  draw.y = toy.A * draw.x0 + n;
  const auto c = forward_coefficients(toy.schedule, draw.t);
  draw.x_t = c.signal * draw.x0 + c.condition * draw.y + c.noise_std * eps;
  return draw;
}

}  // namespace

void LinearGaussianToy::validate() const {
  const auto d = prior_mean.size();
  if (d == 0) throw InvalidArgument("toy dimension must be positive");
  if (prior_cov.rows() != d || prior_cov.cols() != d || A.rows() != d || A.cols() != d) {
    throw InvalidArgument("toy matrices must be d x d");
  }
  if (!prior_cov.isApprox(prior_cov.transpose(), 1e-12) && prior_cov.norm() > 0) {
    throw InvalidArgument("prior covariance must be symmetric");
  }
  if (prior_cov.norm() > 0) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(prior_cov);
    if (eig.eigenvalues().minCoeff() < -1e-12) {
      throw InvalidArgument("prior covariance must be positive semi-definite");
    }
  }
  if (!(obs_var >= 0.0)) throw InvalidArgument("observation noise variance must be >= 0");
  if (schedule.steps() == 0) throw InvalidArgument("toy schedule is empty");
}

LinearGaussianToy LinearGaussianToy::default_toy() {
  LinearGaussianToy toy;
  toy.prior_mean = Eigen::Vector2d(0.3, -0.2);
  toy.prior_cov.resize(2, 2);
  toy.prior_cov << 0.25, 0.1, 0.1, 0.16;
  toy.A.resize(2, 2);
  toy.A << 1.0, 0.3, 0.0, 0.7;
  toy.obs_var = 0.1;
  toy.schedule = build_schedule(10, 0.01, 0.2, WeightSchedule::kLinear);
  return toy;
}

ToyDraw draw_toy(const LinearGaussianToy& toy, std::size_t t, Rng& rng) {
  return draw_with_root(toy, prior_root(toy), t, rng);
}

Eigen::VectorXd analytic_posterior_mean(const LinearGaussianToy& toy, const Eigen::VectorXd& x_t,
                                        const Eigen::VectorXd& y, std::size_t t) {
  const auto d = static_cast<Eigen::Index>(toy.dim());
  if (x_t.size() != d || y.size() != d) throw ShapeError("toy observation has the wrong dimension");
  const Observation o = observation_model(toy, t);
  Eigen::VectorXd obs(2 * d);
  obs << x_t, y;
  return toy.prior_mean + kalman_gain(toy, o) * (obs - o.H * toy.prior_mean);
}

Eigen::MatrixXd analytic_posterior_cov(const LinearGaussianToy& toy, std::size_t t) {
  const Observation o = observation_model(toy, t);
  return toy.prior_cov - kalman_gain(toy, o) * o.H * toy.prior_cov;
}

double bayes_floor(const LinearGaussianToy& toy) {
  double total = 0.0;
  for (std::size_t t = 1; t <= toy.schedule.steps(); ++t) total += analytic_posterior_cov(toy, t).trace();
  return total / static_cast<double>(toy.schedule.steps() * toy.dim());
}

void ToyRegressor::fit(std::span<const ToyDraw> draws, std::size_t steps) {
  if (draws.empty()) throw InvalidArgument("regressor needs at least one draw");
  const auto d = draws.front().x0.size();
  bins_.assign(steps + 1, Bin{});
  well_posed_ = true;

  // Means are accumulated as offsets from a reference value so that constant
  // targets reproduce the constant exactly.
  const Eigen::VectorXd ref = draws.front().x0;
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(d);
  for (const auto& s : draws) offset += s.x0 - ref;
  global_mean_ = ref + offset / static_cast<double>(draws.size());

  std::vector<std::vector<const ToyDraw*>> by_step(steps + 1);
  for (const auto& s : draws) {
    if (s.t < 1 || s.t > steps) throw InvalidArgument("draw step out of range");
    by_step[s.t].push_back(&s);
  }
  for (std::size_t t = 1; t <= steps; ++t) {
    const auto& rows = by_step[t];
    Bin& bin = bins_[t];
    if (rows.empty()) {
      well_posed_ = false;
      continue;
    }
    bin.empty = false;
    const auto m = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd X(m, 2 * d), Y(m, d);
    for (Eigen::Index i = 0; i < m; ++i) {
      X.row(i) << rows[i]->x_t.transpose(), rows[i]->y.transpose();
      Y.row(i) = (rows[i]->x0 - rows.front()->x0).transpose();
    }
    bin.feature_mean = X.colwise().mean().transpose();
    const Eigen::VectorXd y_off = Y.colwise().mean().transpose();
    bin.intercept = rows.front()->x0 + y_off;
    X.rowwise() -= bin.feature_mean.transpose();
    Y.rowwise() -= y_off.transpose();
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
    if (cod.rank() < 2 * d) well_posed_ = false;
    bin.slope = cod.solve(Y).transpose();
  }
}

Eigen::VectorXd ToyRegressor::predict(const Eigen::VectorXd& x_t, const Eigen::VectorXd& y,
                                      std::size_t t) const {
  if (t >= bins_.size() || t == 0) throw InvalidArgument("regressor step out of range");
  const Bin& bin = bins_[t];
  if (bin.empty) return global_mean_;
  Eigen::VectorXd f(x_t.size() + y.size());
  f << x_t, y;
  return bin.intercept + bin.slope * (f - bin.feature_mean);
}

std::vector<ConsistencyRow> consistency_experiment(const LinearGaussianToy& toy,
                                                   std::span<const std::size_t> n_list,
                                                   std::uint64_t seed, std::size_t eval_draws) {
  toy.validate();
  for (std::size_t i = 1; i < n_list.size(); ++i) {
    if (n_list[i] <= n_list[i - 1]) throw InvalidArgument("n_list must be strictly increasing");
  }
  const Eigen::MatrixXd root = prior_root(toy);
  Rng eval_rng = Rng::derive(seed, 1);
  std::vector<ToyDraw> eval(eval_draws);
  std::vector<Eigen::VectorXd> truth(eval_draws);
  for (std::size_t i = 0; i < eval_draws; ++i) {
    eval[i] = draw_with_root(toy, root, 0, eval_rng);
    truth[i] = analytic_posterior_mean(toy, eval[i].x_t, eval[i].y, eval[i].t);
  }
  const double d = static_cast<double>(toy.dim());
  std::vector<ConsistencyRow> rows;
  for (std::size_t k = 0; k < n_list.size(); ++k) {
    Rng train_rng = Rng::derive(seed, 100 + k);
    std::vector<ToyDraw> train(n_list[k]);
    for (auto& s : train) s = draw_with_root(toy, root, 0, train_rng);
    ToyRegressor reg;
    reg.fit(train, toy.schedule.steps());
    ConsistencyRow row{n_list[k], seed, 0.0, 0.0, reg.well_posed()};
    for (std::size_t i = 0; i < eval_draws; ++i) {
      const Eigen::VectorXd p = reg.predict(eval[i].x_t, eval[i].y, eval[i].t);
      row.mse_to_analytic += (p - truth[i]).squaredNorm();
      row.heldout_loss += (p - eval[i].x0).squaredNorm();
    }
    row.mse_to_analytic /= static_cast<double>(eval_draws) * d;
    row.heldout_loss /= static_cast<double>(eval_draws) * d;
    rows.push_back(row);
  }
  return rows;
}

Tensor AnalyticDenoiser::predict_x0(const Tensor& x_t, const Tensor& cond, std::size_t t) const {
  require_same_shape(x_t, cond, "AnalyticDenoiser");
  const std::size_t d = toy_.dim();
  if (x_t.numel() % d != 0) throw ShapeError("AnalyticDenoiser: size is not a multiple of the toy dimension");
  const auto di = static_cast<Eigen::Index>(d);
  const Observation o = observation_model(toy_, t);
  const Eigen::MatrixXd K = kalman_gain(toy_, o);
  const Eigen::VectorXd base = toy_.prior_mean - K * (o.H * toy_.prior_mean);
  Tensor out(x_t.shape());
  Eigen::VectorXd obs(2 * di);
  for (std::size_t off = 0; off < x_t.numel(); off += d) {
    obs << Eigen::Map<const Eigen::VectorXd>(x_t.data().data() + off, di),
        Eigen::Map<const Eigen::VectorXd>(cond.data().data() + off, di);
    Eigen::Map<Eigen::VectorXd>(out.data().data() + off, di) = base + K * obs;
  }
  return out;
}

Tensor vanilla_ddpm_reference_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t,
                                   std::span<const double> betas, Rng* rng) {
  require_same_shape(x_t, eps_hat, "vanilla_ddpm_reference_step");
  if (t < 1 || t > betas.size()) throw InvalidArgument("reference step out of range");
  double abar = 1.0, abar_prev = 1.0;
  for (std::size_t i = 0; i < t; ++i) {
    abar_prev = abar;
    abar *= 1.0 - betas[i];
  }
  const double beta = betas[t - 1];
  const double alpha = 1.0 - beta;
  const double k = beta / std::sqrt(1.0 - abar);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - k * eps_hat[i]) / std::sqrt(alpha);
  if (rng != nullptr && t > 1) {
    const double sigma = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
    for (auto& v : out.data()) v += sigma * rng->normal();
  }
  return out;
}

Tensor vanilla_ddpm_forward(const Tensor& x0, const Tensor& eps, std::size_t t,
                            std::span<const double> betas) {
  require_same_shape(x0, eps, "vanilla_ddpm_forward");
  if (t < 1 || t > betas.size()) throw InvalidArgument("reference step out of range");
  double abar = 1.0;
  for (std::size_t i = 0; i < t; ++i) abar *= 1.0 - betas[i];
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = std::sqrt(abar) * x0[i] + std::sqrt(1.0 - abar) * eps[i];
  }
  return out;
}

}  // namespace semdiff
