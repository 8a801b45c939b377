#include "singsynth/acoustic_model.hpp"

#include "singsynth/toy_corpus.hpp"

#include <cmath>
#include <numeric>

namespace singsynth::model {

namespace {

std::vector<int> expand_index(std::span<const int> durations) {
    std::vector<int> index;
    for (size_t i = 0; i < durations.size(); ++i) {
        require(durations[i] >= 1, "length_regulate: durations must be positive (phone " + std::to_string(i) +
                                       " has " + std::to_string(durations[i]) + ")");
        index.insert(index.end(), static_cast<size_t>(durations[i]), static_cast<int>(i));
    }
    return index;
}

}  // namespace

void validate(const ModelConfig& c) {
    require(c.num_phones > 0 && c.num_speakers > 0 && c.num_styles > 0, "model: table sizes must be positive");
    require(c.mel_dim > 0 && c.embed_dim > 0 && c.encoder_hidden > 0 && c.decoder_base > 0,
            "model: widths must be positive");
    require(c.time_embed_dim >= 4 && c.time_embed_dim % 2 == 0, "model: time_embed_dim must be even and >= 4");
    require(c.pitch_scale > 0, "model: pitch_scale must be positive");
    require(c.sigma_data > 0, "model: sigma_data must be positive");
    require(c.position_features >= 0, "model: position_features must be non-negative");
    for (int d : c.mid_dilations) {
        require(d >= 1, "model: mid_dilations must be positive");
    }
    diffusion::validate(c.schedule);
}

std::vector<int> segment_positions(const Matrix& frames) {
    std::vector<int> pos(static_cast<size_t>(frames.rows()), 0);
    for (Eigen::Index f = 1; f < frames.rows(); ++f) {
        if (frames.row(f) == frames.row(f - 1)) {
            pos[static_cast<size_t>(f)] = pos[static_cast<size_t>(f - 1)] + 1;
        }
    }
    return pos;
}

Matrix length_regulate(const Matrix& phone_rows, std::span<const int> durations) {
    require(static_cast<Eigen::Index>(durations.size()) == phone_rows.rows(),
            "length_regulate: len(durations) must equal the number of phone rows");
    const auto index = expand_index(durations);
    Matrix out(static_cast<Eigen::Index>(index.size()), phone_rows.cols());
    for (size_t f = 0; f < index.size(); ++f) {
        out.row(static_cast<Eigen::Index>(f)) = phone_rows.row(index[f]);
    }
    return out;
}

ag::Var length_regulate(const ag::Var& phone_rows, std::span<const int> durations) {
    require(static_cast<Eigen::Index>(durations.size()) == phone_rows.rows(),
            "length_regulate: len(durations) must equal the number of phone rows");
    return ag::gather_rows(phone_rows, expand_index(durations));
}

Matrix phone_means(const Matrix& mel, std::span<const int> durations) {
    for (int d : durations) {
        require(d >= 1, "phone_average: durations must be positive");
    }
    const int frames = std::accumulate(durations.begin(), durations.end(), 0);
    require(frames == mel.rows(), "phone_average: sum(durations)=" + std::to_string(frames) +
                                      " does not match mel frames=" + std::to_string(mel.rows()));
    Matrix means(static_cast<Eigen::Index>(durations.size()), mel.cols());
    Eigen::Index start = 0;
    for (size_t i = 0; i < durations.size(); ++i) {
        means.row(static_cast<Eigen::Index>(i)) =
            mel.middleRows(start, durations[i]).colwise().sum() / static_cast<Scalar>(durations[i]);
        start += durations[i];
    }
    return means;
}

Matrix phone_average(const Matrix& mel, std::span<const int> durations) {
    return length_regulate(phone_means(mel, durations), durations);
}

AcousticModel::AcousticModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    validate(config_);
    nn::Rng rng(seed);
    const int e = config_.embed_dim;
    const int h = config_.encoder_hidden;
    const int c0 = config_.decoder_base;
    const int c1 = 2 * c0;
    const int d = config_.mel_dim;

    speaker_table_ = params_.add_normal("speaker_table", config_.num_speakers, e, 1.0, rng);
    style_table_ = params_.add_normal("style_table", config_.num_styles, e, 1.0, rng);

    phone_table_ = params_.add_normal("encoder.phone_table", config_.num_phones, h, 1.0, rng);
    pitch_proj_ = nn::Linear(params_, "encoder.pitch_proj", 2, h, rng);
    speaker_proj_ = nn::Linear(params_, "encoder.speaker_proj", e, h, rng);
    for (int i = 0; i < config_.encoder_blocks; ++i) {
        encoder_blocks_.push_back(make_block("encoder.block" + std::to_string(i), h, 1, false, rng));
    }
    encoder_out_ = nn::Linear(params_, "encoder.out", h, d, rng);

    time_fc1_ = nn::Linear(params_, "decoder.time_fc1", config_.time_embed_dim, config_.cond_dim, rng);
    time_fc2_ = nn::Linear(params_, "decoder.time_fc2", config_.cond_dim, config_.cond_dim, rng);
    style_proj_ = nn::Linear(params_, "decoder.style_proj", e, config_.cond_dim, rng);
    in_conv_ = nn::Conv1d(params_, "decoder.in_conv", 2 * d + 2 * config_.position_features, c0, {3, 1, 1}, rng);
    res0a_ = make_block("decoder.res0a", c0, 1, true, rng);
    down0_ = nn::Conv1d(params_, "decoder.down0", c0, c1, {3, 2, 1}, rng);
    res1a_ = make_block("decoder.res1a", c1, 1, true, rng);
    down1_ = nn::Conv1d(params_, "decoder.down1", c1, c1, {3, 2, 1}, rng);
    for (size_t i = 0; i < config_.mid_dilations.size(); ++i) {
        mid_blocks_.push_back(make_block("decoder.mid" + std::to_string(i), c1, config_.mid_dilations[i], true, rng));
    }
    up1_ = nn::Conv1d(params_, "decoder.up1", 2 * c1, c1, {3, 1, 1}, rng);
    res1b_ = make_block("decoder.res1b", c1, 1, true, rng);
    up0_ = nn::Conv1d(params_, "decoder.up0", c1 + c0, c0, {3, 1, 1}, rng);
    res0b_ = make_block("decoder.res0b", c0, 1, true, rng);
    out_conv_ = nn::Conv1d(params_, "decoder.out_conv", c0, d, {1, 1, 1}, rng);
}

AcousticModel::ResBlock AcousticModel::make_block(const std::string& name, int channels, int dilation,
                                                  bool conditioned, nn::Rng& rng) {
    ResBlock b;
    b.conv1 = nn::Conv1d(params_, name + ".conv1", channels, channels, {3, 1, dilation}, rng);
    b.conv2 = nn::Conv1d(params_, name + ".conv2", channels, channels, {3, 1, dilation}, rng);
    if (conditioned) {
        b.cond = nn::Linear(params_, name + ".cond", config_.cond_dim, channels, rng);
    }
    return b;
}

ag::Var AcousticModel::apply_block(const ResBlock& block, const ag::Var& x, const ag::Var* cond) const {
    ag::Var h = block.conv1(ag::silu(x));
    if (cond != nullptr) {
        h = ag::add_row(h, block.cond(*cond));
    }
    h = block.conv2(ag::silu(h));
    return x + h;
}

ag::Var AcousticModel::speaker_embeddings(const std::vector<int>& speaker_ids) const {
    for (int id : speaker_ids) {
        require(id >= 0 && id < config_.num_speakers, "unknown speaker_id " + std::to_string(id));
    }
    return ag::gather_rows(speaker_table_, speaker_ids);
}

ag::Var AcousticModel::style_embeddings(const std::vector<int>& style_ids) const {
    for (int id : style_ids) {
        require(id >= 0 && id < config_.num_styles, "unknown style_id " + std::to_string(id));
    }
    return ag::gather_rows(style_table_, style_ids);
}

ag::Var AcousticModel::encode(std::span<const int> phones, std::span<const double> phone_pitches,
                              int speaker_id) const {
    require(!phones.empty(), "encode: empty phone sequence");
    require(phones.size() == phone_pitches.size(), "encode: phones and phone_pitches differ in length");
    std::vector<int> ids(phones.begin(), phones.end());
    for (int p : ids) {
        require(p >= 0 && p < config_.num_phones, "encode: unknown phone id " + std::to_string(p));
    }
    const ag::Var spk = speaker_embeddings({speaker_id});

    Matrix features = Matrix::Zero(static_cast<Eigen::Index>(phones.size()), 2);
    for (size_t i = 0; i < phone_pitches.size(); ++i) {
        if (corpus::is_voiced(phone_pitches[i])) {
            const auto r = static_cast<Eigen::Index>(i);
            features(r, 0) = 1;
            features(r, 1) = static_cast<Scalar>((phone_pitches[i] - config_.pitch_center) / config_.pitch_scale);
        }
    }
    ag::Var h = ag::gather_rows(phone_table_, ids) + pitch_proj_(ag::Var::constant(std::move(features)));
    h = ag::add_row(h, speaker_proj_(spk));
    for (const auto& block : encoder_blocks_) {
        h = apply_block(block, h, nullptr);
    }
    return encoder_out_(ag::silu(h));
}

Matrix AcousticModel::encode_eval(std::span<const int> phones, std::span<const double> phone_pitches,
                                  int speaker_id) const {
    ag::NoGradGuard guard;
    return encode(phones, phone_pitches, speaker_id).value();
}

ag::Var AcousticModel::time_embedding(double t) const {
    const int half = config_.time_embed_dim / 2;
    Matrix emb(1, config_.time_embed_dim);
    const double scaled = 1000.0 * t;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / (half - 1));
        emb(0, i) = static_cast<Scalar>(std::sin(scaled * freq));
        emb(0, half + i) = static_cast<Scalar>(std::cos(scaled * freq));
    }
    return ag::Var::constant(std::move(emb));
}

ag::Var AcousticModel::position_encoding(const Matrix& mu_frame) const {
    const int n = config_.position_features;
    const auto pos = segment_positions(mu_frame);
    Matrix enc(mu_frame.rows(), 2 * n);
    for (int i = 0; i < n; ++i) {
        const double period = n == 1 ? 4.0 : 4.0 * std::pow(64.0, static_cast<double>(i) / (n - 1));
        const double w = 2.0 * 3.14159265358979323846 / period;
        for (Eigen::Index f = 0; f < mu_frame.rows(); ++f) {
            const double a = w * pos[static_cast<size_t>(f)];
            enc(f, i) = static_cast<Scalar>(std::sin(a));
            enc(f, n + i) = static_cast<Scalar>(std::cos(a));
        }
    }
    return ag::Var::constant(std::move(enc));
}

ag::Var AcousticModel::score(const ag::Var& x_t, const ag::Var& mu_frame, int style_id, double t) const {
    require(x_t.rows() == mu_frame.rows() && x_t.cols() == mu_frame.cols(), "score: x_t and mu shapes differ");
    require(x_t.cols() == config_.mel_dim, "score: input width must equal mel_dim");
    require(x_t.rows() >= 1, "score: empty input");
    require(t > 0.0 && t <= 1.0, "score: t must be in (0, 1]");

    ag::Var cond = time_fc2_(ag::silu(time_fc1_(time_embedding(t))));
    cond = ag::silu(cond + style_proj_(style_embeddings({style_id})));

    const double g = diffusion::gamma(0.0, t, config_.schedule);
    const double lambda = 1.0 - g * g;
    const double sigma2 = lambda / (g * g);
    const double sd2 = config_.sigma_data * config_.sigma_data;
    const double c_in = 1.0 / std::sqrt(sigma2 + sd2);
    const double c_out = std::sqrt(sigma2) * config_.sigma_data / std::sqrt(sigma2 + sd2);
    const double one_minus_skip = sigma2 / (sigma2 + sd2);

    const ag::Var y = x_t - mu_frame;
    const Eigen::Index len0 = x_t.rows();
    ag::Var input = ag::concat_cols(y * static_cast<Scalar>(c_in / g), mu_frame);
    if (config_.position_features > 0) {
        input = ag::concat_cols(input, position_encoding(mu_frame.value()));
    }
    ag::Var h = in_conv_(input);
    h = apply_block(res0a_, h, &cond);
    const ag::Var skip0 = h;
    h = down0_(h);
    const Eigen::Index len1 = h.rows();
    h = apply_block(res1a_, h, &cond);
    const ag::Var skip1 = h;
    h = down1_(h);
    for (const auto& block : mid_blocks_) {
        h = apply_block(block, h, &cond);
    }
    h = up1_(ag::concat_cols(ag::upsample_rows(h, 2, len1), skip1));
    h = apply_block(res1b_, h, &cond);
    h = up0_(ag::concat_cols(ag::upsample_rows(h, 2, len0), skip0));
    h = apply_block(res0b_, h, &cond);
    const ag::Var f = out_conv_(ag::silu(h));

    return y * static_cast<Scalar>(-one_minus_skip / lambda) + f * static_cast<Scalar>(g * c_out / lambda);
}

Matrix AcousticModel::score_eval(const Matrix& x_t, const Matrix& mu_frame, int style_id, double t) const {
    ag::NoGradGuard guard;
    return score(ag::Var::constant(x_t), ag::Var::constant(mu_frame), style_id, t).value();
}

}  // namespace singsynth::model
