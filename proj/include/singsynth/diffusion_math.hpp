#pragma once

// Closed-form quantities of the mean-reverting diffusion
//   dX = 1/2 (mu - X) beta_t dt + sqrt(beta_t) dW,   t in [0, 1], Sigma = I,
// with a linear noise schedule, plus the two reverse-time samplers.

#include "singsynth/common.hpp"
#include "singsynth/nn.hpp"

#include <functional>

namespace singsynth::diffusion {

struct NoiseSchedule {
    double beta0 = 0.05;
    double beta1 = 20.0;
    double t_min = 1e-5;  // lower clamp for training-time t

    double beta(double t) const { return beta0 + (beta1 - beta0) * t; }
};

void validate(const NoiseSchedule& schedule);

// Integral of beta_u over [s, t].
double integrate_beta(double s, double t, const NoiseSchedule& schedule);

// exp(-1/2 * integral of beta over [s, t]).
double gamma(double s, double t, const NoiseSchedule& schedule);

// Variance of X_t given X_0: 1 - gamma(0, t)^2.
double marginal_variance(double t, const NoiseSchedule& schedule);

struct SolverCoefficients {
    double gamma_s_t = 0;
    double gamma_0_s = 0;
    double gamma_0_t = 0;
    double phi_s_t = 0;
    double nu_s_t = 0;
    double sigma2_s_t = 0;
    double kappa_t_h = 0;
    double omega_t_h = 0;
    double sigma_t_h = 0;
};

// Coefficients of the fixed-step maximum-likelihood reverse solver for a step
// from t down to s = t - h.
SolverCoefficients solver_coefficients(double t, double h, const NoiseSchedule& schedule);

// x_t = gamma x0 + (1 - gamma) mu + sqrt(1 - gamma^2) noise.
Matrix forward_marginal(const Matrix& x0, const Matrix& mu, double t, const Matrix& noise,
                        const NoiseSchedule& schedule);

// Score of the Gaussian perturbation kernel p_t(x_t | x0).
Matrix true_score(const Matrix& x_t, const Matrix& x0, const Matrix& mu, double t, const NoiseSchedule& schedule);

// lambda_t * mean((score + noise / sqrt(lambda_t))^2), lambda_t = 1 - gamma(0,t)^2.
double diffusion_loss(const Matrix& score_pred, const Matrix& noise, double t, const NoiseSchedule& schedule);

// One backward Euler step of the probability-flow ODE
//   dX = 1/2 (mu - X - score) beta_t dt.
Matrix euler_ode_step(const Matrix& x_t, const Matrix& mu, const Matrix& score, double t, double h,
                      const NoiseSchedule& schedule);

// One step of the maximum-likelihood reverse SDE solver.
Matrix fast_ml_step(const Matrix& x_t, const Matrix& mu, const Matrix& score, double t, double h,
                    const NoiseSchedule& schedule, const Matrix& xi);

enum class SolverMode { kEulerOde, kFastMl };

SolverMode solver_mode_from_string(const std::string& name);
std::string to_string(SolverMode mode);

using ScoreFn = std::function<Matrix(const Matrix& x_t, const Matrix& mu, double t)>;

// x_1 = mu + temperature * xi, then n_steps steps of the chosen rule on the
// uniform grid t = 1, 1 - h, ..., h.
Matrix sample(const ScoreFn& score_fn, const Matrix& mu, int n_steps, SolverMode mode, double temperature,
              const NoiseSchedule& schedule, nn::Rng& rng);

}  // namespace singsynth::diffusion
