#pragma once

// Joint training of the prior encoder and score network with the MI
// penalty, plus checkpointing and the metrics log.

#include "singsynth/acoustic_model.hpp"
#include "singsynth/key_value_config.hpp"
#include "singsynth/mi_club.hpp"
#include "singsynth/toy_corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace singsynth::train {

struct TrainConfig {
    diffusion::NoiseSchedule schedule;
    double lambda_mi = 0.01;
    double lr = 1e-4;
    double q_lr = 1e-3;
    double grad_clip = 1.0;  // global norm for the main optimizer; 0 disables
    double mu_weight = 1.0;
    double diff_weight = 1.0;
    int batch_size = 8;
    int crop_frames = 384;
    std::int64_t steps = 2000;
    std::uint64_t seed = 1;
    std::int64_t checkpoint_every = 500;  // 0 writes only the final checkpoint
    std::int64_t validate_every = 100;    // 0 disables validation
    std::string corpus_dir = "corpus";
    std::string run_dir = "run";
    std::string resume;  // checkpoint to continue from

    int embed_dim = 32;
    int encoder_hidden = 64;
    int encoder_blocks = 4;
    int decoder_base = 32;
    std::vector<int> mid_dilations{2, 2};
    int position_features = 0;
    double sigma_data = 0.2;
};

void validate(const TrainConfig& config);

const std::set<std::string>& train_config_keys();
TrainConfig train_config_from(const KeyValueConfig& kv);
KeyValueConfig to_key_value(const TrainConfig& config);

// Model hyper-parameters implied by the train config and corpus layout.
model::ModelConfig model_config_for(const TrainConfig& config, const corpus::CorpusConfig& corpus);

struct StepMetrics {
    std::int64_t step = 0;
    double l_mu = 0;
    double l_diff = 0;
    double l_mi = 0;
    double l_total = 0;
    double q_loglik = 0;
};

// Raised when a loss becomes non-finite; the step is not applied.
class NonFiniteLoss : public std::runtime_error {
public:
    explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

// Test hook: replaces the network outputs with given values for one step.
struct OracleOverride {
    bool perfect_mu = false;     // mu_frame := phone_average(mel)
    bool perfect_score = false;  // score := -noise / sqrt(lambda_t)
};

class Trainer {
public:
    Trainer(const TrainConfig& config, const corpus::CorpusConfig& corpus);

    // One q update followed by one main update on the given utterances.
    StepMetrics train_step(const std::vector<const corpus::Utterance*>& batch, const OracleOverride& oracle = {});

    // Draws batch_size training utterances uniformly with replacement.
    std::vector<const corpus::Utterance*> sample_batch(const std::vector<corpus::Utterance>& pool);

    // Mean over utterances of MSE(mu_frame, phone_average(mel)).
    double prior_loss(const std::vector<corpus::Utterance>& utterances) const;

    void save_checkpoint(const std::filesystem::path& path) const;
    void load_checkpoint(const std::filesystem::path& path);

    model::AcousticModel& model() { return *model_; }
    const model::AcousticModel& model() const { return *model_; }
    mi::VariationalApprox& q() { return *q_; }
    const TrainConfig& config() const { return config_; }
    const corpus::CorpusConfig& corpus_config() const { return corpus_; }
    std::int64_t step() const { return step_; }
    nn::Rng& rng() { return rng_; }

private:
    TrainConfig config_;
    corpus::CorpusConfig corpus_;
    std::unique_ptr<model::AcousticModel> model_;
    std::unique_ptr<mi::VariationalApprox> q_;
    std::unique_ptr<nn::Adam> main_opt_;
    std::unique_ptr<nn::Adam> q_opt_;
    nn::Rng rng_;
    std::int64_t step_ = 0;
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;
    std::vector<StepMetrics> history;
    // (step, validation prior loss) pairs.
    std::vector<std::pair<std::int64_t, double>> validation;
};

// Loads the corpus, trains for config.steps (counting resumed steps), and
// writes <run_dir>/metrics.csv, <run_dir>/validation.csv, run.cfg and
// checkpoints.
TrainResult train(const TrainConfig& config);

inline constexpr const char* kMetricsHeader = "step,l_mu,l_diff,l_mi,l_total,q_loglik";

// A trained model with the configs it was built from.
struct LoadedModel {
    TrainConfig train_config;
    corpus::CorpusConfig corpus_config;
    std::unique_ptr<model::AcousticModel> model;
};

LoadedModel load_model(const std::filesystem::path& checkpoint);

}  // namespace singsynth::train
