// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include "singsynth/dataset_io.hpp"
#include "singsynth/diffusion_math.hpp"
#include "singsynth/mi_club.hpp"
#include "singsynth/synthesis.hpp"
#include "singsynth/trainer.hpp"
#include "test_support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

using namespace singsynth;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(const std::string& name, const std::function<void(Outcome&)>& body) {
    Outcome out;
    out.detail << std::setprecision(6);
    try {
        body(out);
    } catch (const std::exception& e) {
        out.pass = false;
        out.detail << " [exception: " << e.what() << "]";
    }
    if (!out.pass) {
        ++failures;
    }
    std::cout << (out.pass ? "PASS " : "FAIL ") << name << ":" << out.detail.str() << std::endl;
}

const diffusion::NoiseSchedule kSchedule{};

void coefficient_algebra(Outcome& out) {
    const auto start = Clock::now();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_mean = 0;
    double worst_var = 0;
    double worst_semigroup = 0;
    for (int i = 0; i < 1000; ++i) {
        double s = u(rng);
        double t = u(rng);
        if (s > t) {
            std::swap(s, t);
        }
        const double g0s = diffusion::gamma(0, s, kSchedule);
        const double g0t = diffusion::gamma(0, t, kSchedule);
        worst_semigroup = std::max(worst_semigroup, std::abs(g0s * diffusion::gamma(s, t, kSchedule) - g0t));
        if (t - s <= 0 || t <= 0) {
            continue;
        }
        const auto c = diffusion::solver_coefficients(t, t - s, kSchedule);
        worst_mean = std::max(worst_mean, std::abs(c.phi_s_t * g0t + c.nu_s_t - g0s));
        worst_var = std::max(worst_var,
                             std::abs(c.sigma2_s_t + c.phi_s_t * c.phi_s_t * (1 - g0t * g0t) - (1 - g0s * g0s)));
    }
    const double secs = seconds_since(start);
    out.detail << " mean identity " << worst_mean << ", variance identity " << worst_var << ", semigroup "
               << worst_semigroup << ", " << secs << " s";
    out.check(worst_mean <= 1e-10 && worst_var <= 1e-10, "identities within 1e-10");
    out.check(worst_semigroup <= 1e-12, "semigroup within 1e-12");
    out.check(secs < 1.0, "runtime < 1 s");
}

void forward_kernel_monte_carlo(Outcome& out) {
    const auto start = Clock::now();
    std::mt19937_64 pick(2);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst_z = 0;
    for (int trial = 0; trial < 5; ++trial) {
        const double x0 = n(pick);
        const double mu = n(pick);
        const double t = u(pick);
        const int draws = 100000;
        nn::Rng rng(10 + trial);
        const Matrix xt = diffusion::forward_marginal(Matrix::Constant(draws, 1, static_cast<Scalar>(x0)),
                                                      Matrix::Constant(draws, 1, static_cast<Scalar>(mu)), t,
                                                      rng.normal_matrix(draws, 1), kSchedule);
        const Eigen::ArrayXd v = xt.col(0).cast<double>().array();
        const double mean = v.mean();
        const double var = (v - mean).square().sum() / (draws - 1);
        const double g = diffusion::gamma(0, t, kSchedule);
        const double want_var = 1 - g * g;
        const double z_mean = std::abs(mean - (g * x0 + (1 - g) * mu)) / std::sqrt(want_var / draws);
        const double z_var = std::abs(var - want_var) / (want_var * std::sqrt(2.0 / (draws - 1)));
        worst_z = std::max({worst_z, z_mean, z_var});
    }
    const double secs = seconds_since(start);
    out.detail << " worst deviation " << worst_z << " standard errors, " << secs << " s";
    out.check(worst_z < 3.0, "within 3 standard errors");
    out.check(secs < 10.0, "runtime < 10 s");
}

void exact_score_sampling(Outcome& out) {
    const auto start = Clock::now();
    const int dim = 32;
    nn::Rng data(0);
    const Matrix x0 = data.normal_matrix(1, dim);
    const Matrix mu = data.normal_matrix(1, dim);
    const diffusion::ScoreFn score = [&](const Matrix& x, const Matrix& m, double t) {
        return diffusion::true_score(x, x0, m, t, kSchedule);
    };
    auto error = [&](int steps, diffusion::SolverMode mode) {
        nn::Rng rng(3);  // same x_1 draw for both solvers
        const Matrix out = diffusion::sample(score, mu, steps, mode, 1.0, kSchedule, rng);
        return static_cast<double>((out - x0).norm());
    };
    const double fast10 = error(10, diffusion::SolverMode::kFastMl);
    const double euler10 = error(10, diffusion::SolverMode::kEulerOde);
    const double euler1000 = error(1000, diffusion::SolverMode::kEulerOde);
    const double secs = seconds_since(start);
    out.detail << " fast_ml(10) " << fast10 << ", euler(10) " << euler10 << ", euler(1000) " << euler1000
               << " (limit " << 0.05 * std::sqrt(dim) << "), " << secs << " s";
    out.check(fast10 <= euler10, "fast_ml(10) <= euler(10)");
    out.check(euler1000 < 0.05 * std::sqrt(dim), "euler(1000) < 0.05 sqrt(D)");
    out.check(secs < 30.0, "runtime < 30 s");
}

void mi_oracle(Outcome& out) {
    const auto start = Clock::now();
    const double rho = 0.8;
    const int dim = 4;
    const double analytic = -dim / 2.0 * std::log(1 - rho * rho);
    const auto q = support::fit_q(dim, rho, 1500, 20);
    const auto pairs = support::gaussian_pairs(512, dim, rho, 21);
    auto estimate = [&](const Matrix& spk, const Matrix& sty) {
        ag::NoGradGuard guard;
        return mi::vclub_estimate(q, ag::Var::constant(spk), ag::Var::constant(sty)).item();
    };
    const double trained = estimate(pairs.spk, pairs.sty);
    const double single = estimate(pairs.spk.topRows(1), pairs.sty.topRows(1));

    std::vector<int> order(512);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 gen(22);
    std::vector<double> shuffled;
    for (int i = 0; i < 100; ++i) {
        std::shuffle(order.begin(), order.end(), gen);
        Matrix sty(512, dim);
        for (int r = 0; r < 512; ++r) {
            sty.row(r) = pairs.sty.row(order[static_cast<size_t>(r)]);
        }
        shuffled.push_back(estimate(pairs.spk, sty));
    }
    const double mean = std::accumulate(shuffled.begin(), shuffled.end(), 0.0) / shuffled.size();
    double var = 0;
    for (double v : shuffled) {
        var += (v - mean) * (v - mean);
    }
    const double se = std::sqrt(var / (shuffled.size() - 1) / shuffled.size());
    const double secs = seconds_since(start);
    out.detail << " trained-q estimate " << trained << " vs analytic " << analytic << " (ratio "
               << trained / analytic << "), N=1 " << single << ", shuffled mean " << mean << " (se " << se << "), "
               << secs << " s";
    out.check(trained >= 0.85 * analytic && trained <= 1.3 * analytic, "estimate within [0.85, 1.3] x analytic MI");
    out.check(single == 0.0, "N=1 estimate exactly 0");
    out.check(std::abs(mean) < 3 * se, "shuffled estimate within 3 standard errors of 0");
    out.check(secs < 120.0, "runtime < 2 min");
}

void module_examples(Outcome& out) {
    int checked = 0;
    auto expect = [&](bool ok, const std::string& what) {
        ++checked;
        out.check(ok, what);
    };
    // length_regulate
    {
        nn::Rng rng(1);
        const Matrix rows = rng.normal_matrix(4, 3);
        expect(model::length_regulate(rows, std::vector<int>{1, 1, 1, 1}) == rows, "length_regulate identity");
        Matrix ab(2, 1);
        ab << 1, 2;
        Matrix want(5, 1);
        want << 1, 1, 2, 2, 2;
        expect(model::length_regulate(ab, std::vector<int>{2, 3}) == want, "length_regulate [a;a;b;b;b]");
        std::mt19937_64 gen(2);
        std::uniform_int_distribution<int> d(1, 8);
        bool sums = true;
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> durs(4);
            for (int& x : durs) {
                x = d(gen);
            }
            sums &= model::length_regulate(rows, durs).rows() == std::accumulate(durs.begin(), durs.end(), 0);
        }
        expect(sums, "length_regulate sum of durations");
        bool threw = false;
        try {
            model::length_regulate(rows, std::vector<int>{1, 0, 1, 1});
        } catch (const InvalidInput&) {
            threw = true;
        }
        expect(threw, "length_regulate rejects zero duration");
    }
    // phone_average
    {
        const Matrix flat = Matrix::Constant(5, 2, 3.0f);
        expect(model::phone_average(flat, std::vector<int>{2, 3}) == flat, "phone_average constant");
        nn::Rng rng(3);
        const Matrix mel = rng.normal_matrix(6, 3);
        const Matrix one = model::phone_average(mel, std::vector<int>{6});
        expect(one.row(3).isApprox(RowVector(mel.colwise().mean()), 1e-6f), "phone_average single phone");
        Matrix m(4, 1);
        m << 0, 2, 4, 10;
        Matrix want(4, 1);
        want << 2, 2, 2, 10;
        expect(model::phone_average(m, std::vector<int>{3, 1}) == want, "phone_average hand example");
        bool threw = false;
        try {
            model::phone_average(m, std::vector<int>{2, 1});
        } catch (const InvalidInput&) {
            threw = true;
        }
        expect(threw, "phone_average rejects frame mismatch");
    }
    // q_loglik
    {
        mi::VariationalApprox q(32, 4);
        ag::Var lw = q.parameters().get("q.logvar.weight");
        ag::Var lb = q.parameters().get("q.logvar.bias");
        lw.mutable_value().setZero();
        lb.mutable_value().setZero();
        nn::Rng rng(5);
        const Matrix spk = rng.normal_matrix(3, 32);
        ag::NoGradGuard guard;
        const Matrix sty = q.mean(ag::Var::constant(spk)).value();
        const double at_mean = mi::q_loglik(q, ag::Var::constant(spk), ag::Var::constant(sty)).item();
        expect(std::abs(at_mean - (-16.0 * std::log(2 * 3.14159265358979323846))) < 1e-4, "q_loglik -29.41");
        const Matrix away = sty + Matrix::Constant(3, 32, 0.5f);
        const Matrix further = sty + Matrix::Constant(3, 32, 1.0f);
        const double a = mi::q_loglik(q, ag::Var::constant(spk), ag::Var::constant(away)).item();
        const double b = mi::q_loglik(q, ag::Var::constant(spk), ag::Var::constant(further)).item();
        expect(b < a && a < at_mean, "q_loglik decreases with distance");
        const double single = mi::q_loglik(q, ag::Var::constant(spk.topRows(1)), ag::Var::constant(sty.topRows(1))).item();
        expect(std::abs(single - at_mean) < 1e-4, "q_loglik batch of one");
    }
    // diffusion_loss
    {
        nn::Rng rng(6);
        const Matrix noise = rng.normal_matrix(4, 3);
        const double t = 0.35;
        const double lambda = diffusion::marginal_variance(t, kSchedule);
        expect(diffusion::diffusion_loss(-noise / static_cast<Scalar>(std::sqrt(lambda)), noise, t, kSchedule) < 1e-10,
               "diffusion_loss zero at target");
        expect(diffusion::diffusion_loss(Matrix::Zero(4, 3), Matrix::Zero(4, 3), t, kSchedule) == 0.0,
               "diffusion_loss zero inputs");
        const double b0 = kSchedule.beta0;
        const double b1 = kSchedule.beta1;
        const double target = -std::log(0.25);  // gamma^2 = 0.25 so lambda = 0.75
        const double t75 = (-b0 + std::sqrt(b0 * b0 + 2 * (b1 - b0) * target)) / (b1 - b0);
        const Matrix zero = Matrix::Zero(1, 1);
        const Matrix one = Matrix::Ones(1, 1);
        expect(std::abs(diffusion::diffusion_loss(zero, one, t75, kSchedule) - 1.0) < 1e-6, "diffusion_loss = 1.0");
    }
    out.detail << " " << checked << " module examples checked";
}

struct TrainedRun {
    fs::path corpus_dir;
    fs::path run_dir;
    train::TrainResult result;
    double train_seconds = 0;
    std::unique_ptr<model::AcousticModel> model;
    corpus::CorpusConfig corpus;
    std::vector<corpus::Utterance> songs;
};

TrainedRun train_toy_model(const KeyValueConfig& kv, const fs::path& work_dir, std::int64_t steps_override) {
    TrainedRun run;
    run.corpus_dir = work_dir / "corpus";
    run.run_dir = work_dir / "run";
    fs::remove_all(run.corpus_dir);
    fs::remove_all(run.run_dir);
    run.corpus = io::corpus_config_from(kv);
    io::write_dataset(run.corpus_dir, corpus::generate_corpus(run.corpus, run.corpus.seed), run.corpus);

    train::TrainConfig config = train::train_config_from(kv);
    config.corpus_dir = run.corpus_dir.string();
    config.run_dir = run.run_dir.string();
    config.checkpoint_every = 0;
    if (steps_override > 0) {
        config.steps = steps_override;
    }
    std::cout << "training " << config.steps << " steps (lr " << config.lr << ", lambda_mi " << config.lambda_mi
              << ", t_min " << config.schedule.t_min << ") into " << run.run_dir.string() << std::endl;
    const auto start = Clock::now();
    run.result = train::train(config);
    run.train_seconds = seconds_since(start);
    run.model = std::move(train::load_model(run.result.checkpoint).model);
    for (auto& u : io::read_split(run.corpus_dir, "test")) {
        if (u.speaker_id == 0 && u.style_id == static_cast<int>(corpus::Style::kSinging)) {
            run.songs.push_back(std::move(u));
        }
    }
    return run;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::string work_dir = "acceptance_work";
    std::string config_path;
    std::int64_t steps = 0;
    app.add_option("--work-dir", work_dir, "Scratch directory for the end-to-end run");
    app.add_option("--config", config_path, "Run config for the end-to-end run")->required();
    app.add_option("--train-steps", steps, "Override the end-to-end training length");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work_dir);

    report("criterion 1 (coefficient algebra)", coefficient_algebra);
    report("criterion 2 (forward-kernel Monte Carlo)", forward_kernel_monte_carlo);
    report("criterion 3 (exact-score sampling)", exact_score_sampling);
    report("criterion 4 (MI oracle)", mi_oracle);

    std::optional<TrainedRun> run;
    std::optional<synth::EvalReport> eval;
    try {
        run = train_toy_model(KeyValueConfig::load(config_path), work_dir, steps);
        synth::EvalOptions options;
        options.target_speaker = 1;
        options.teacher_speaker = 0;
        options.n_steps = 10;
        options.timing_steps = {10, 50};
        options.timing_runs = 5;
        eval = synth::evaluate(*run->model, run->corpus, run->songs, options);
        std::ofstream(fs::path(work_dir) / "eval.json") << synth::report_to_json(*eval) << '\n';
    } catch (const std::exception& e) {
        std::cout << "end-to-end run failed: " << e.what() << std::endl;
    }
    auto need_run = [&](Outcome& out) {
        if (!eval) {
            throw std::runtime_error("no trained model");
        }
        (void)out;
    };

    report("criterion 5 (singing for a speech-only speaker)", [&](Outcome& out) {
        need_run(out);
        const double ratio = eval->vibrato_singing / eval->vibrato_speaking;
        out.detail << " trained in " << run->train_seconds << " s; " << eval->songs << " songs; F0 MAE "
                   << eval->f0_mae << " st; vibrato singing " << eval->vibrato_singing << " vs speaking "
                   << eval->vibrato_speaking << " (ratio " << ratio << "); timbre student1 " << eval->timbre_target
                   << " vs teacher " << eval->timbre_teacher;
        out.check(run->train_seconds <= 1800, "training <= 30 min");
        out.check(eval->f0_mae < 1.0, "F0 MAE < 1.0 st");
        out.check(ratio >= 5.0, "vibrato ratio >= 5");
        out.check(eval->timbre_target > eval->timbre_teacher, "timbre closer to student1");
    });

    report("criterion 6 (prior flatness)", [&](Outcome& out) {
        need_run(out);
        out.detail << " max within-phone pitch s.d. of mu_frame " << eval->prior_max_within_phone_sd
                   << " st; within-phone variance decoded " << eval->decoded_within_phone_variance << " vs prior "
                   << eval->prior_within_phone_variance;
        out.check(eval->prior_max_within_phone_sd < 0.05, "s.d. < 0.05 st");
    });

    report("criterion 7 (relative speed)", [&](Outcome& out) {
        need_run(out);
        const auto& rows = eval->timing;
        const double ratio = rows.at(1).seconds_per_run / rows.at(0).seconds_per_run;
        out.detail << " 10 steps " << rows[0].seconds_per_run << " s, 50 steps " << rows[1].seconds_per_run
                   << " s, ratio " << ratio;
        out.check(ratio >= 3.5 && ratio <= 6.0, "ratio in [3.5, 6.0]");
        const bool quality = eval->f0_mae < 1.0 && eval->vibrato_singing >= 5.0 * eval->vibrato_speaking &&
                             eval->timbre_target > eval->timbre_teacher;
        out.check(quality, "10-step output passes criterion 5");
    });

    report("criterion 8 (module example suites)", module_examples);

    report("training curve (validation prior loss)", [&](Outcome& out) {
        need_run(out);
        double at100 = NAN;
        double at2000 = NAN;
        for (const auto& [step, value] : run->result.validation) {
            if (step == 100) at100 = value;
            if (step == 2000) at2000 = value;
        }
        const double final_loss = run->result.validation.back().second;
        out.detail << " step 100 " << at100 << ", step 2000 " << at2000 << ", final " << final_loss;
        out.check(at2000 <= 0.5 * at100, "step-2000 value at most half the step-100 value");
        out.check(final_loss < 0.05, "held-out prior MSE < 0.05");
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " check(s) failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
