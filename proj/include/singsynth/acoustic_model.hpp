#pragma once

// Learnable networks: a phone-level prior encoder (phones, pitch, speaker ->
// phone-averaged mel), the length regulator, and a style-conditioned 1-D UNet
// score network. Speaker and style embeddings live in separate tables.

#include "singsynth/autograd.hpp"
#include "singsynth/diffusion_math.hpp"
#include "singsynth/nn.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace singsynth::model {

struct ModelConfig {
    int num_phones = 12;
    int num_speakers = 3;
    int num_styles = 2;
    int mel_dim = 32;
    int embed_dim = 32;
    int encoder_hidden = 64;
    int encoder_blocks = 4;
    int decoder_base = 32;  // channels at full resolution; 2x at the lower two
    int time_embed_dim = 32;
    int cond_dim = 64;
    std::vector<int> mid_dilations{2, 2};  // residual blocks at the lowest resolution
    // Sin/cos pairs of the frame offset since the last change of mu_frame,
    // periods geometric in [4, 256] frames; 0 disables.
    int position_features = 0;
    // Pitch input normalisation: (p - pitch_center) / pitch_scale on voiced phones.
    double pitch_center = 62.0;
    double pitch_scale = 5.0;
    // Typical spread of (x0 - mu); sets the skip/output scaling of the score network.
    double sigma_data = 0.2;
    diffusion::NoiseSchedule schedule;
};

void validate(const ModelConfig& config);

// Frames since the start of the current run of identical rows; 0 on row 0 and
// on every row that differs from its predecessor.
std::vector<int> segment_positions(const Matrix& frames);

// Repeats row i of `phone_rows` durations[i] times.
Matrix length_regulate(const Matrix& phone_rows, std::span<const int> durations);
ag::Var length_regulate(const ag::Var& phone_rows, std::span<const int> durations);

// Replaces every frame by the mean of the frames of its phone.
Matrix phone_average(const Matrix& mel, std::span<const int> durations);
// Per-phone mean rows [num_phones x D].
Matrix phone_means(const Matrix& mel, std::span<const int> durations);

class AcousticModel {
public:
    AcousticModel(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    nn::ParameterStore& parameters() { return params_; }
    const nn::ParameterStore& parameters() const { return params_; }

    // Rows of the embedding tables for the given ids, [n x embed_dim].
    ag::Var speaker_embeddings(const std::vector<int>& speaker_ids) const;
    ag::Var style_embeddings(const std::vector<int>& style_ids) const;

    // Phone-level prior mu [num_phones x mel_dim]. Style is deliberately not an input.
    ag::Var encode(std::span<const int> phones, std::span<const double> phone_pitches, int speaker_id) const;
    Matrix encode_eval(std::span<const int> phones, std::span<const double> phone_pitches, int speaker_id) const;

    // Score estimate s(x_t, mu, style, t), same shape as x_t. The network
    // predicts a scaled residual F; with y = x_t - mu, sigma = sqrt(lambda_t) / gamma_t
    // and D = c_skip y / gamma_t + c_out F the score is -(y - gamma_t D) / lambda_t.
    ag::Var score(const ag::Var& x_t, const ag::Var& mu_frame, int style_id, double t) const;
    Matrix score_eval(const Matrix& x_t, const Matrix& mu_frame, int style_id, double t) const;

private:
    struct ResBlock {
        nn::Conv1d conv1;
        nn::Conv1d conv2;
        nn::Linear cond;  // unused (default) in encoder blocks
    };

    ResBlock make_block(const std::string& name, int channels, int dilation, bool conditioned, nn::Rng& rng);
    ag::Var apply_block(const ResBlock& block, const ag::Var& x, const ag::Var* cond) const;
    ag::Var time_embedding(double t) const;
    ag::Var position_encoding(const Matrix& mu_frame) const;

    ModelConfig config_;
    nn::ParameterStore params_;

    ag::Var speaker_table_;
    ag::Var style_table_;

    // Encoder.
    ag::Var phone_table_;
    nn::Linear pitch_proj_;
    nn::Linear speaker_proj_;
    std::vector<ResBlock> encoder_blocks_;
    nn::Linear encoder_out_;

    // Score network.
    nn::Linear time_fc1_;
    nn::Linear time_fc2_;
    nn::Linear style_proj_;
    nn::Conv1d in_conv_;
    ResBlock res0a_, res1a_, res1b_, res0b_;
    std::vector<ResBlock> mid_blocks_;
    nn::Conv1d down0_, down1_, up1_, up0_;
    nn::Conv1d out_conv_;
};

}  // namespace singsynth::model
