#include "singsynth/nn.hpp"

#include <cmath>
#include <sstream>

namespace singsynth::nn {

double Rng::uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(engine_);
}

int Rng::uniform_int(int lo, int hi) {
    std::uniform_int_distribution<int> dist(lo, hi);
    return dist(engine_);
}

double Rng::normal() {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(engine_);
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = static_cast<Scalar>(dist(engine_));
        }
    }
    return m;
}

std::string Rng::save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::load_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) {
        throw InvalidInput("Rng::load_state: malformed engine state");
    }
}

ag::Var ParameterStore::add(const std::string& name, Matrix init) {
    for (const auto& p : params_) {
        require(p.name != name, "duplicate parameter name: " + name);
    }
    params_.push_back({name, ag::Var::leaf(std::move(init))});
    return params_.back().var;
}

ag::Var ParameterStore::add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                    Eigen::Index fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
        }
    }
    return add(name, std::move(m));
}

ag::Var ParameterStore::add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev,
                                   Rng& rng) {
    return add(name, rng.normal_matrix(rows, cols) * static_cast<Scalar>(stddev));
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) {
        p.var.zero_grad();
    }
}

const ag::Var& ParameterStore::get(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) {
            return p.var;
        }
    }
    throw InvalidInput("unknown parameter: " + name);
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += static_cast<std::size_t>(p.var.value().size());
    }
    return n;
}

Linear::Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
    : weight_(store.add_uniform(name + ".weight", in, out, in, rng)),
      bias_(store.add_uniform(name + ".bias", 1, out, in, rng)) {}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::add_row(ag::matmul(x, weight_), bias_); }

Conv1d::Conv1d(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
               ag::ConvSpec spec, Rng& rng)
    : weight_(store.add_uniform(name + ".weight", spec.kernel * in, out, spec.kernel * in, rng)),
      bias_(store.add_uniform(name + ".bias", 1, out, spec.kernel * in, rng)),
      spec_(spec) {}

ag::Var Conv1d::operator()(const ag::Var& x) const { return ag::conv1d(x, weight_, bias_, spec_); }

Adam::Adam(std::vector<ag::Var> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.push_back(Matrix::Zero(p.rows(), p.cols()));
        v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
}

void Adam::step() {
    ++t_;
    double scale = 1.0;
    if (config_.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& p : params_) {
            if (p.node()->has_grad()) {
                sq += static_cast<double>(p.grad().squaredNorm());
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > config_.grad_clip) {
            scale = config_.grad_clip / norm;
        }
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const double step_size = config_.lr / bc1;
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.node()->has_grad()) {
            continue;
        }
        const Matrix g = p.grad() * static_cast<Scalar>(scale);
        m_[i] = static_cast<Scalar>(config_.beta1) * m_[i] + static_cast<Scalar>(1.0 - config_.beta1) * g;
        v_[i] = static_cast<Scalar>(config_.beta2) * v_[i] +
                static_cast<Scalar>(1.0 - config_.beta2) * g.cwiseProduct(g);
        const auto denom = (v_[i].array() / static_cast<Scalar>(bc2)).sqrt() + static_cast<Scalar>(config_.eps);
        p.mutable_value().array() -= static_cast<Scalar>(step_size) * m_[i].array() / denom;
    }
    zero_grad();
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

std::vector<Matrix*> Adam::state_tensors() {
    std::vector<Matrix*> out;
    for (size_t i = 0; i < params_.size(); ++i) {
        out.push_back(&m_[i]);
        out.push_back(&v_[i]);
    }
    return out;
}

}  // namespace singsynth::nn
