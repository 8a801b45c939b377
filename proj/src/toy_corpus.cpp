#include "singsynth/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace singsynth::corpus {

Style style_from_id(int style_id) {
    if (style_id == 0) {
        return Style::kSpeaking;
    }
    if (style_id == 1) {
        return Style::kSinging;
    }
    throw InvalidInput("unknown style_id " + std::to_string(style_id) + " (expected 0=speaking or 1=singing)");
}

int Utterance::frames() const { return std::accumulate(durations.begin(), durations.end(), 0); }

void validate(const Utterance& utt) {
    require(utt.phones.size() == utt.durations.size() && utt.phones.size() == utt.phone_pitches.size(),
            utt.utt_id + ": phones, durations and phone_pitches must have equal length");
    for (int d : utt.durations) {
        require(d >= 1, utt.utt_id + ": every duration must be >= 1");
    }
    require(utt.mel.rows() == utt.frames(), utt.utt_id + ": sum(durations) must equal the mel frame count");
    style_from_id(utt.style_id);
}

void validate(const CorpusConfig& c) {
    require(c.num_phones > c.num_unvoiced_phones && c.num_unvoiced_phones > 0,
            "corpus: need both unvoiced and voiced phones");
    require(c.timbre_band.begin >= 0 && c.timbre_band.end <= c.pitch_band.begin &&
                c.pitch_band.end <= c.phone_band.begin && c.phone_band.end <= c.mel_dim,
            "corpus: bands must be ordered, disjoint and inside mel_dim");
    require(c.timbre_band.size() > 0 && c.pitch_band.size() > 0 && c.phone_band.size() > 0,
            "corpus: bands must be non-empty");
    require(!c.speakers.empty(), "corpus: no speakers configured");
    require(c.num_speakers() < c.timbre_band.size(), "corpus: more speakers than orthogonal timbre vectors");
    require(c.train_per_speaker >= 0 && c.valid_per_speaker >= 0 && c.test_per_speaker >= 0,
            "corpus: split sizes must be non-negative");
    require(c.utterances_per_speaker() > 0, "corpus: zero utterances requested");
    require(c.min_syllables >= 1 && c.max_syllables >= c.min_syllables, "corpus: bad syllable range");
    require(c.sing_consonant_min >= 1 && c.sing_consonant_max >= c.sing_consonant_min &&
                c.sing_vowel_min >= 1 && c.sing_vowel_max >= c.sing_vowel_min &&
                c.speak_consonant_min >= 1 && c.speak_consonant_max >= c.speak_consonant_min &&
                c.speak_vowel_min >= 1 && c.speak_vowel_max >= c.speak_vowel_min,
            "corpus: bad duration ranges");
    require(c.render_pitch_min < c.render_pitch_max && c.note_min >= c.render_pitch_min &&
                c.note_max <= c.render_pitch_max && c.note_min <= c.note_max,
            "corpus: note range must sit inside the render range");
    require(c.bump_center_lo >= c.pitch_band.begin && c.bump_center_hi <= c.pitch_band.end - 1 &&
                c.bump_center_lo < c.bump_center_hi,
            "corpus: bump centres must lie inside the pitch band");
    require(c.bump_amplitude > 0 && c.bump_width > 0, "corpus: bump amplitude and width must be positive");
    require(c.frame_rate > 0 && c.vibrato_rate_hz >= 0 && c.vibrato_depth >= 0, "corpus: bad vibrato settings");
    require(c.speech_jitter >= 0 && c.observation_noise >= 0, "corpus: noise levels must be non-negative");
}

std::vector<double> render_frame_pitch(std::span<const double> phone_pitches, std::span<const int> durations,
                                       int style_id, const CorpusConfig& config, nn::Rng& rng) {
    const Style style = style_from_id(style_id);
    require(phone_pitches.size() == durations.size(), "render_frame_pitch: pitches and durations differ in length");
    std::vector<double> contour;
    for (size_t i = 0; i < durations.size(); ++i) {
        const int n = durations[i];
        require(n >= 1, "render_frame_pitch: every duration must be >= 1");
        const double p = phone_pitches[i];
        for (int k = 0; k < n; ++k) {
            if (!is_voiced(p)) {
                contour.push_back(kUnvoiced);
            } else if (style == Style::kSinging) {
                const double phase = 2.0 * std::numbers::pi * config.vibrato_rate_hz * k / config.frame_rate +
                                     config.vibrato_phase;
                contour.push_back(p + config.vibrato_depth * std::sin(phase));
            } else {
                const double ramp = n > 1 ? static_cast<double>(k) / (n - 1) : 0.0;
                const double jitter =
                    config.speech_jitter > 0 ? rng.uniform(-config.speech_jitter, config.speech_jitter) : 0.0;
                contour.push_back(p + config.speech_declination * ramp + jitter);
            }
        }
    }
    return contour;
}

double bump_center(double pitch, const CorpusConfig& c) {
    const double slope = (c.bump_center_hi - c.bump_center_lo) / (c.render_pitch_max - c.render_pitch_min);
    return c.bump_center_lo + (pitch - c.render_pitch_min) * slope;
}

double pitch_from_center(double center, const CorpusConfig& c) {
    const double slope = (c.bump_center_hi - c.bump_center_lo) / (c.render_pitch_max - c.render_pitch_min);
    return c.render_pitch_min + (center - c.bump_center_lo) / slope;
}

RowVector timbre_vector(int speaker_id, const CorpusConfig& c) {
    require(speaker_id >= 0 && speaker_id < c.num_speakers(), "unknown speaker_id " + std::to_string(speaker_id));
    // Rows 1.. of a Sylvester-Hadamard matrix: mutually orthogonal, zero mean.
    // Entry (r, k) has sign (-1)^popcount(r & k).
    const int row = speaker_id + 1;
    RowVector v(c.timbre_band.size());
    for (int k = 0; k < c.timbre_band.size(); ++k) {
        const int parity = __builtin_popcount(static_cast<unsigned>(row & k)) & 1;
        v(k) = static_cast<Scalar>(parity ? -c.timbre_scale : c.timbre_scale);
    }
    return v;
}

RowVector phone_shape(int phone, const CorpusConfig& c) {
    require(phone >= 0 && phone < c.num_phones, "unknown phone id " + std::to_string(phone));
    nn::Rng rng(c.phone_shape_seed * 1000003ULL + static_cast<std::uint64_t>(phone));
    RowVector v(c.phone_band.size());
    for (int k = 0; k < c.phone_band.size(); ++k) {
        v(k) = static_cast<Scalar>(c.phone_shape_scale * rng.normal());
    }
    return v;
}

Matrix render_mel(std::span<const double> frame_pitch, std::span<const int> phones, std::span<const int> durations,
                  int speaker_id, const CorpusConfig& c) {
    require(phones.size() == durations.size(), "render_mel: phones and durations differ in length");
    const int frames = std::accumulate(durations.begin(), durations.end(), 0);
    require(static_cast<int>(frame_pitch.size()) == frames, "render_mel: pitch contour length != sum(durations)");

    Matrix mel = Matrix::Zero(frames, c.mel_dim);
    const RowVector timbre = timbre_vector(speaker_id, c);
    int f = 0;
    for (size_t i = 0; i < phones.size(); ++i) {
        const RowVector shape = phone_shape(phones[i], c);
        require(durations[i] >= 1, "render_mel: every duration must be >= 1");
        for (int k = 0; k < durations[i]; ++k, ++f) {
            mel.block(f, c.timbre_band.begin, 1, c.timbre_band.size()) = timbre;
            mel.block(f, c.phone_band.begin, 1, c.phone_band.size()) = shape;
            const double p = frame_pitch[static_cast<size_t>(f)];
            if (!is_voiced(p)) {
                continue;
            }
            if (p < c.render_pitch_min || p > c.render_pitch_max) {
                std::ostringstream os;
                os << "render_mel: pitch " << p << " outside [" << c.render_pitch_min << ", " << c.render_pitch_max
                   << "]";
                throw InvalidInput(os.str());
            }
            const double center = bump_center(p, c);
            for (int b = c.pitch_band.begin; b < c.pitch_band.end; ++b) {
                const double z = (b - center) / c.bump_width;
                mel(f, b) = static_cast<Scalar>(c.bump_amplitude * std::exp(-0.5 * z * z));
            }
        }
    }
    return mel;
}

namespace {

struct Score {
    std::vector<int> phones;
    std::vector<int> durations;
    std::vector<double> pitches;
};

Score draw_score(Style style, const CorpusConfig& c, nn::Rng& rng) {
    Score s;
    const int syllables = rng.uniform_int(c.min_syllables, c.max_syllables);
    const bool singing = style == Style::kSinging;
    // Melodies are integer-note random walks; speech wanders around a base.
    double note = std::round(rng.uniform(c.note_min + 2.0, c.note_max - 2.0));
    const double base = rng.uniform(c.note_min + 1.0, c.note_max - 3.0);
    for (int i = 0; i < syllables; ++i) {
        s.phones.push_back(rng.uniform_int(0, c.num_unvoiced_phones - 1));
        s.pitches.push_back(kUnvoiced);
        s.durations.push_back(singing ? rng.uniform_int(c.sing_consonant_min, c.sing_consonant_max)
                                      : rng.uniform_int(c.speak_consonant_min, c.speak_consonant_max));

        s.phones.push_back(rng.uniform_int(c.num_unvoiced_phones, c.num_phones - 1));
        double pitch = 0.0;
        if (singing) {
            if (i > 0) {
                note = std::clamp(note + rng.uniform_int(-2, 2), c.note_min, c.note_max);
            }
            pitch = note;
        } else {
            pitch = std::clamp(base + rng.uniform(-2.0, 2.0), c.note_min, c.note_max);
        }
        s.pitches.push_back(pitch);
        s.durations.push_back(singing ? rng.uniform_int(c.sing_vowel_min, c.sing_vowel_max)
                                      : rng.uniform_int(c.speak_vowel_min, c.speak_vowel_max));
    }
    return s;
}

std::string score_key(const Score& s) {
    std::ostringstream os;
    os.precision(17);
    for (size_t i = 0; i < s.phones.size(); ++i) {
        os << s.phones[i] << ':' << s.pitches[i] << ';';
    }
    return os.str();
}

}  // namespace

Dataset generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
    validate(config);
    nn::Rng rng(seed);
    Dataset data;
    std::set<std::string> seen;
    for (int spk = 0; spk < config.num_speakers(); ++spk) {
        const Style style = config.speakers[static_cast<size_t>(spk)].style;
        for (int n = 0; n < config.utterances_per_speaker(); ++n) {
            Score score = draw_score(style, config, rng);
            while (!seen.insert(score_key(score)).second) {
                score = draw_score(style, config, rng);
            }
            Utterance utt;
            std::ostringstream id;
            id << config.speakers[static_cast<size_t>(spk)].name << '_' << std::setw(4) << std::setfill('0') << n;
            utt.utt_id = id.str();
            utt.phones = std::move(score.phones);
            utt.durations = std::move(score.durations);
            utt.phone_pitches = std::move(score.pitches);
            utt.speaker_id = spk;
            utt.style_id = static_cast<int>(style);
            const auto contour = render_frame_pitch(utt.phone_pitches, utt.durations, utt.style_id, config, rng);
            utt.mel = render_mel(contour, utt.phones, utt.durations, spk, config);
            if (config.observation_noise > 0) {
                utt.mel += rng.normal_matrix(utt.mel.rows(), utt.mel.cols()) *
                           static_cast<Scalar>(config.observation_noise);
            }
            validate(utt);
            if (n < config.train_per_speaker) {
                data.train.push_back(std::move(utt));
            } else if (n < config.train_per_speaker + config.valid_per_speaker) {
                data.valid.push_back(std::move(utt));
            } else {
                data.test.push_back(std::move(utt));
            }
        }
    }
    return data;
}

}  // namespace singsynth::corpus
