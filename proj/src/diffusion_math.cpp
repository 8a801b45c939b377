#include "singsynth/diffusion_math.hpp"

#include <cmath>
#include <sstream>

namespace singsynth::diffusion {

namespace {

void check_times(double s, double t) {
    if (!(s >= 0.0 && t <= 1.0 && s <= t)) {
        std::ostringstream os;
        os << "times must satisfy 0 <= s <= t <= 1 (got s=" << s << ", t=" << t << ")";
        throw InvalidInput(os.str());
    }
}

void check_step(double t, double h) {
    if (!(h > 0.0 && h <= t && t <= 1.0)) {
        std::ostringstream os;
        os << "step must satisfy 0 < h <= t <= 1 (got t=" << t << ", h=" << h << ")";
        throw InvalidInput(os.str());
    }
}

void check_shapes(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidInput(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

void validate(const NoiseSchedule& s) {
    require(s.beta0 > 0.0 && s.beta1 > s.beta0, "schedule: need 0 < beta0 < beta1");
    require(s.t_min > 0.0 && s.t_min < 1.0, "schedule: t_min must be in (0, 1)");
}

double integrate_beta(double s, double t, const NoiseSchedule& schedule) {
    check_times(s, t);
    return (t - s) * (schedule.beta0 + (schedule.beta1 - schedule.beta0) * (t + s) / 2.0);
}

double gamma(double s, double t, const NoiseSchedule& schedule) {
    return std::exp(-0.5 * integrate_beta(s, t, schedule));
}

double marginal_variance(double t, const NoiseSchedule& schedule) {
    const double g = gamma(0.0, t, schedule);
    return 1.0 - g * g;
}

SolverCoefficients solver_coefficients(double t, double h, const NoiseSchedule& schedule) {
    check_step(t, h);
    // A full jump must land exactly on s = 0.
    const double s = (h == t) ? 0.0 : t - h;
    SolverCoefficients c;
    c.gamma_s_t = gamma(s, t, schedule);
    c.gamma_0_s = gamma(0.0, s, schedule);
    c.gamma_0_t = gamma(0.0, t, schedule);
    const double var_t = 1.0 - c.gamma_0_t * c.gamma_0_t;
    const double var_s = 1.0 - c.gamma_0_s * c.gamma_0_s;
    const double var_st = 1.0 - c.gamma_s_t * c.gamma_s_t;
    const double beta_h = schedule.beta(t) * h;

    c.phi_s_t = c.gamma_s_t * var_s / var_t;
    c.nu_s_t = c.gamma_0_s * var_st / var_t;
    c.sigma2_s_t = var_s * var_st / var_t;
    c.kappa_t_h = c.nu_s_t * var_t / (c.gamma_0_t * beta_h) - 1.0;
    c.omega_t_h = (c.phi_s_t - 1.0) / beta_h + (1.0 + c.kappa_t_h) / var_t - 0.5;
    c.sigma_t_h = std::sqrt(std::max(0.0, c.sigma2_s_t));
    return c;
}

Matrix forward_marginal(const Matrix& x0, const Matrix& mu, double t, const Matrix& noise,
                        const NoiseSchedule& schedule) {
    check_shapes(x0, mu, "forward_marginal");
    check_shapes(x0, noise, "forward_marginal");
    check_times(0.0, t);
    const double g = gamma(0.0, t, schedule);
    const double sd = std::sqrt(1.0 - g * g);
    return static_cast<Scalar>(g) * x0 + static_cast<Scalar>(1.0 - g) * mu + static_cast<Scalar>(sd) * noise;
}

Matrix true_score(const Matrix& x_t, const Matrix& x0, const Matrix& mu, double t, const NoiseSchedule& schedule) {
    check_shapes(x_t, x0, "true_score");
    check_shapes(x_t, mu, "true_score");
    require(t > 0.0 && t <= 1.0, "true_score: t must be in (0, 1]; the kernel is degenerate at t = 0");
    const double g = gamma(0.0, t, schedule);
    const double var = 1.0 - g * g;
    const Matrix mean = static_cast<Scalar>(g) * x0 + static_cast<Scalar>(1.0 - g) * mu;
    return -(x_t - mean) / static_cast<Scalar>(var);
}

double diffusion_loss(const Matrix& score_pred, const Matrix& noise, double t, const NoiseSchedule& schedule) {
    check_shapes(score_pred, noise, "diffusion_loss");
    if (t < schedule.t_min || t > 1.0) {
        std::ostringstream os;
        os << "diffusion_loss: t=" << t << " outside [t_min=" << schedule.t_min << ", 1]";
        throw InvalidInput(os.str());
    }
    require(score_pred.size() > 0, "diffusion_loss: empty input");
    const double lambda = marginal_variance(t, schedule);
    const double inv_sqrt = 1.0 / std::sqrt(lambda);
    const auto residual = score_pred.cast<double>().array() + noise.cast<double>().array() * inv_sqrt;
    return lambda * residual.square().mean();
}

Matrix euler_ode_step(const Matrix& x_t, const Matrix& mu, const Matrix& score, double t, double h,
                      const NoiseSchedule& schedule) {
    check_step(t, h);
    check_shapes(x_t, mu, "euler_ode_step");
    check_shapes(x_t, score, "euler_ode_step");
    const double coef = 0.5 * schedule.beta(t) * h;
    return x_t - static_cast<Scalar>(coef) * (mu - x_t - score);
}

Matrix fast_ml_step(const Matrix& x_t, const Matrix& mu, const Matrix& score, double t, double h,
                    const NoiseSchedule& schedule, const Matrix& xi) {
    check_step(t, h);
    check_shapes(x_t, mu, "fast_ml_step");
    check_shapes(x_t, score, "fast_ml_step");
    check_shapes(x_t, xi, "fast_ml_step");
    const SolverCoefficients c = solver_coefficients(t, h, schedule);
    const double beta_h = schedule.beta(t) * h;
    Matrix out = x_t + static_cast<Scalar>(beta_h * (0.5 + c.omega_t_h)) * (x_t - mu) +
                 static_cast<Scalar>(beta_h * (1.0 + c.kappa_t_h)) * score;
    if (c.sigma_t_h > 0.0) {
        out += static_cast<Scalar>(c.sigma_t_h) * xi;
    }
    return out;
}

SolverMode solver_mode_from_string(const std::string& name) {
    if (name == "fast_ml") {
        return SolverMode::kFastMl;
    }
    if (name == "euler_ode") {
        return SolverMode::kEulerOde;
    }
    throw InvalidInput("unknown solver mode '" + name + "' (expected fast_ml or euler_ode)");
}

std::string to_string(SolverMode mode) { return mode == SolverMode::kFastMl ? "fast_ml" : "euler_ode"; }

Matrix sample(const ScoreFn& score_fn, const Matrix& mu, int n_steps, SolverMode mode, double temperature,
              const NoiseSchedule& schedule, nn::Rng& rng) {
    require(n_steps >= 1, "sample: n_steps must be >= 1");
    require(temperature >= 0.0, "sample: temperature must be non-negative");
    const double h = 1.0 / n_steps;
    Matrix x = mu;
    if (temperature > 0.0) {
        x += static_cast<Scalar>(temperature) * rng.normal_matrix(mu.rows(), mu.cols());
    }
    for (int i = 0; i < n_steps; ++i) {
        // The last step is a jump of exactly t = h down to 0.
        const double t = static_cast<double>(n_steps - i) / n_steps;
        const double step = (i == n_steps - 1) ? t : h;
        const Matrix score = score_fn(x, mu, t);
        if (mode == SolverMode::kEulerOde) {
            x = euler_ode_step(x, mu, score, t, step, schedule);
        } else {
            const Matrix xi = rng.normal_matrix(mu.rows(), mu.cols());
            x = fast_ml_step(x, mu, score, t, step, schedule, xi);
        }
    }
    return x;
}

}  // namespace singsynth::diffusion
