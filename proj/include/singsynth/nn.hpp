#pragma once

#include "singsynth/autograd.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace singsynth::nn {

// Engine-only random state. Distributions are created per call so the
// engine is the whole state and can be checkpointed as text.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform(double lo, double hi);
    int uniform_int(int lo, int hi);  // inclusive bounds
    double normal();
    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

    std::string save_state() const;
    void load_state(const std::string& state);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

struct NamedParameter {
    std::string name;
    ag::Var var;
};

// Owns a flat, ordered list of named leaf tensors.
class ParameterStore {
public:
    ag::Var add(const std::string& name, Matrix init);
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for dense and conv layers.
    ag::Var add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);
    ag::Var add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

    void zero_grad();
    std::vector<NamedParameter>& parameters() { return params_; }
    const std::vector<NamedParameter>& parameters() const { return params_; }
    const ag::Var& get(const std::string& name) const;
    std::size_t scalar_count() const;

private:
    std::vector<NamedParameter> params_;
};

class Linear {
public:
    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);
    ag::Var operator()(const ag::Var& x) const;
    Eigen::Index out_features() const { return weight_.cols(); }

private:
    ag::Var weight_;
    ag::Var bias_;
};

class Conv1d {
public:
    Conv1d() = default;
    Conv1d(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, ag::ConvSpec spec,
           Rng& rng);
    ag::Var operator()(const ag::Var& x) const;

private:
    ag::Var weight_;
    ag::Var bias_;
    ag::ConvSpec spec_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
};

// Adam over a fixed set of parameters. Moments are kept in parameter order.
class Adam {
public:
    Adam(std::vector<ag::Var> params, AdamConfig config);

    // Applies one update from the accumulated gradients, then clears them.
    void step();
    void zero_grad();

    std::int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return config_; }

    // Flat moment tensors for checkpointing: m0, v0, m1, v1, ...
    std::vector<Matrix*> state_tensors();
    void set_step_count(std::int64_t t) { t_ = t; }

private:
    std::vector<ag::Var> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    AdamConfig config_;
    std::int64_t t_ = 0;
};

}  // namespace singsynth::nn
