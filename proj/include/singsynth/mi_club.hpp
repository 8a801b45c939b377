#pragma once

// Sample-based contrastive upper bound on I(spk; sty) with a diagonal
// Gaussian variational network q(sty | spk).

#include "singsynth/autograd.hpp"
#include "singsynth/nn.hpp"

#include <cstdint>

namespace singsynth::mi {

inline constexpr Scalar kLogvarMin = -10;
inline constexpr Scalar kLogvarMax = 10;

class VariationalApprox {
public:
    VariationalApprox(int embed_dim, std::uint64_t seed);

    int embed_dim() const { return embed_dim_; }
    nn::ParameterStore& parameters() { return params_; }
    const nn::ParameterStore& parameters() const { return params_; }

    // Diagonal Gaussian parameters for each row of spk. With frozen = true the
    // q weights are treated as constants, so gradients reach only spk.
    ag::Var mean(const ag::Var& spk, bool frozen = false) const;
    ag::Var logvar(const ag::Var& spk, bool frozen = false) const;

private:
    int embed_dim_;
    nn::ParameterStore params_;
    ag::Var mean_w_, mean_b_, logvar_w_, logvar_b_;
};

// (1/N) sum_i log q(sty_i | spk_i).
ag::Var q_loglik(const VariationalApprox& q, const ag::Var& spk, const ag::Var& sty);

// (1/N^2) sum_i sum_j [log q(sty_i | spk_i) - log q(sty_j | spk_i)].
// q is held fixed; gradients flow to spk and sty only.
ag::Var vclub_estimate(const VariationalApprox& q, const ag::Var& spk, const ag::Var& sty);

// One Adam ascent step on q_loglik using detached copies of the batches.
// Returns q_loglik evaluated before the step.
double update_q(VariationalApprox& q, const Matrix& spk, const Matrix& sty, nn::Adam& optimizer);

// Adam over the parameters of q.
nn::Adam make_q_optimizer(VariationalApprox& q, double lr);

}  // namespace singsynth::mi
