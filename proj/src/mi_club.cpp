#include "singsynth/mi_club.hpp"

#include <cmath>
#include <numbers>

namespace singsynth::mi {

namespace {

void check_batches(const ag::Var& spk, const ag::Var& sty, int embed_dim) {
    require(spk.rows() >= 1, "MI batch must contain at least one pair (N == 0)");
    require(spk.rows() == sty.rows(), "spk and sty batches differ in size");
    require(spk.cols() == embed_dim && sty.cols() == embed_dim, "MI batches must have embed_dim columns");
}

ag::Var affine(const ag::Var& x, const ag::Var& w, const ag::Var& b, bool frozen) {
    if (frozen) {
        return ag::add_row(ag::matmul(x, ag::detach(w)), ag::detach(b));
    }
    return ag::add_row(ag::matmul(x, w), b);
}

}  // namespace

VariationalApprox::VariationalApprox(int embed_dim, std::uint64_t seed) : embed_dim_(embed_dim) {
    require(embed_dim >= 1, "embed_dim must be positive");
    nn::Rng rng(seed);
    mean_w_ = params_.add_uniform("q.mean.weight", embed_dim, embed_dim, embed_dim, rng);
    mean_b_ = params_.add_uniform("q.mean.bias", 1, embed_dim, embed_dim, rng);
    logvar_w_ = params_.add_uniform("q.logvar.weight", embed_dim, embed_dim, embed_dim, rng);
    logvar_b_ = params_.add_uniform("q.logvar.bias", 1, embed_dim, embed_dim, rng);
}

ag::Var VariationalApprox::mean(const ag::Var& spk, bool frozen) const {
    return affine(spk, mean_w_, mean_b_, frozen);
}

ag::Var VariationalApprox::logvar(const ag::Var& spk, bool frozen) const {
    return ag::clamp(affine(spk, logvar_w_, logvar_b_, frozen), kLogvarMin, kLogvarMax);
}

ag::Var q_loglik(const VariationalApprox& q, const ag::Var& spk, const ag::Var& sty) {
    check_batches(spk, sty, q.embed_dim());
    const ag::Var mu = q.mean(spk);
    const ag::Var lv = q.logvar(spk);
    // -1/2 [log 2pi + logvar + (sty - mu)^2 exp(-logvar)]
    const ag::Var quad = ag::mul(ag::square(sty - mu), ag::exp(lv * Scalar(-1)));
    const ag::Var per_elem = add_scalar(lv + quad, static_cast<Scalar>(std::log(2.0 * std::numbers::pi)));
    return ag::sum(per_elem) * static_cast<Scalar>(-0.5 / static_cast<double>(spk.rows()));
}

ag::Var vclub_estimate(const VariationalApprox& q, const ag::Var& spk, const ag::Var& sty) {
    check_batches(spk, sty, q.embed_dim());
    const ag::Var mu = q.mean(spk, true);
    const ag::Var lv = q.logvar(spk, true);
    const Eigen::Index n = spk.rows();
    const Eigen::Index e = spk.cols();
    const Eigen::MatrixXd m = mu.value().cast<double>();
    const Eigen::MatrixXd inv = (-lv.value().cast<double>()).array().exp().matrix();
    const Eigen::MatrixXd y = sty.value().cast<double>();

    // Explicit pair loop: each (i, j) term is a difference of two squared
    // residuals, so N = 1 and identical sty rows give exactly zero.
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index d = 0; d < e; ++d) {
            const double own = (y(i, d) - m(i, d)) * (y(i, d) - m(i, d));
            double acc = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double other = (y(j, d) - m(i, d)) * (y(j, d) - m(i, d));
                acc += other - own;
            }
            total += 0.5 * inv(i, d) * acc;
        }
    }
    const double nn2 = static_cast<double>(n) * static_cast<double>(n);
    Matrix value(1, 1);
    value(0, 0) = static_cast<Scalar>(total / nn2);

    return ag::make_op(std::move(value), {mu, lv, sty}, [m, inv, y, n, e, nn2](ag::Node& node) {
        const double c = static_cast<double>(node.grad(0, 0)) / nn2;
        Eigen::MatrixXd dm = Eigen::MatrixXd::Zero(n, e);
        Eigen::MatrixXd dlv = Eigen::MatrixXd::Zero(n, e);
        Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(n, e);
        const Eigen::RowVectorXd col_sum = y.colwise().sum();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index d = 0; d < e; ++d) {
                const double ri = y(i, d) - m(i, d);
                double sq_sum = 0.0;
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double rj = y(j, d) - m(i, d);
                    sq_sum += rj * rj - ri * ri;
                    dy(j, d) += c * inv(i, d) * rj;
                }
                dy(i, d) -= c * inv(i, d) * static_cast<double>(n) * ri;
                dm(i, d) = c * inv(i, d) * (-(col_sum(d) - static_cast<double>(n) * m(i, d)) + static_cast<double>(n) * ri);
                dlv(i, d) = -0.5 * c * inv(i, d) * sq_sum;
            }
        }
        auto& parents = node.parents;
        if (parents[0]->requires_grad) parents[0]->accumulate(dm.cast<Scalar>());
        if (parents[1]->requires_grad) parents[1]->accumulate(dlv.cast<Scalar>());
        if (parents[2]->requires_grad) parents[2]->accumulate(dy.cast<Scalar>());
    });
}

double update_q(VariationalApprox& q, const Matrix& spk, const Matrix& sty, nn::Adam& optimizer) {
    optimizer.zero_grad();
    const ag::Var ll = q_loglik(q, ag::Var::constant(spk), ag::Var::constant(sty));
    const double before = ll.item();
    ag::backward(ll * Scalar(-1));
    optimizer.step();
    return before;
}

nn::Adam make_q_optimizer(VariationalApprox& q, double lr) {
    std::vector<ag::Var> params;
    for (const auto& p : q.parameters().parameters()) {
        params.push_back(p.var);
    }
    nn::AdamConfig cfg;
    cfg.lr = lr;
    return nn::Adam(std::move(params), cfg);
}

}  // namespace singsynth::mi
