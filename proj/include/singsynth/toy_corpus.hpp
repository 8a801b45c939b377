#pragma once

// Procedural three-speaker corpus: one singing teacher and speaking
// students. Mels are built from disjoint bands (timbre, pitch bump, phone
// shape) so pitch and timbre can be read back exactly.

#include "singsynth/common.hpp"
#include "singsynth/nn.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace singsynth::corpus {

enum class Style : int { kSpeaking = 0, kSinging = 1 };

// Marks unvoiced phones and frames in pitch sequences.
inline constexpr double kUnvoiced = -1.0;

inline bool is_voiced(double pitch) { return pitch >= 0.0; }

Style style_from_id(int style_id);

struct Utterance {
    std::string utt_id;
    std::vector<int> phones;
    std::vector<int> durations;
    std::vector<double> phone_pitches;
    int speaker_id = 0;
    int style_id = 0;
    Matrix mel;  // [frames x mel_dim]

    int frames() const;
};

// Checks the structural invariants shared by every utterance.
void validate(const Utterance& utt);

struct SpeakerSpec {
    std::string name;
    Style style = Style::kSpeaking;
};

struct Band {
    int begin = 0;
    int end = 0;
    int size() const { return end - begin; }
};

struct CorpusConfig {
    int num_phones = 12;
    int num_unvoiced_phones = 4;  // phone ids [0, n) are unvoiced consonants
    int mel_dim = 32;
    Band timbre_band{0, 8};
    Band pitch_band{8, 24};
    Band phone_band{24, 32};

    std::vector<SpeakerSpec> speakers{
        {"teacher", Style::kSinging}, {"student1", Style::kSpeaking}, {"student2", Style::kSpeaking}};
    int train_per_speaker = 90;
    int valid_per_speaker = 5;
    int test_per_speaker = 5;

    // Utterances are consonant-vowel syllable chains.
    int min_syllables = 6;
    int max_syllables = 9;
    int sing_consonant_min = 4, sing_consonant_max = 8;
    int sing_vowel_min = 25, sing_vowel_max = 45;
    int speak_consonant_min = 3, speak_consonant_max = 6;
    int speak_vowel_min = 12, speak_vowel_max = 24;

    // Note range used for scores and speech, and the wider range the pitch
    // band can represent.
    double note_min = 57.0;
    double note_max = 67.0;
    double render_pitch_min = 55.0;
    double render_pitch_max = 69.0;
    double bump_center_lo = 11.5;  // bin position of render_pitch_min
    double bump_center_hi = 20.5;  // bin position of render_pitch_max
    double bump_amplitude = 2.0;
    double bump_width = 1.0;  // Gaussian std in bins

    double frame_rate = 100.0;
    double vibrato_rate_hz = 6.0;
    double vibrato_depth = 0.5;  // semitones
    double vibrato_phase = 0.0;  // radians at each voiced phone onset
    double speech_declination = -0.4;  // semitones across one phone
    double speech_jitter = 0.1;        // half-width of uniform per-frame jitter

    double timbre_scale = 0.8;
    double phone_shape_scale = 0.6;
    std::uint64_t phone_shape_seed = 2022;
    double observation_noise = 0.01;

    std::uint64_t seed = 7;

    int num_speakers() const { return static_cast<int>(speakers.size()); }
    int utterances_per_speaker() const { return train_per_speaker + valid_per_speaker + test_per_speaker; }
    bool phone_is_voiced(int phone) const { return phone >= num_unvoiced_phones; }
};

void validate(const CorpusConfig& config);

// Frame-level pitch in semitones; kUnvoiced on frames of unvoiced phones.
// Singing: p + depth * sin(2 pi rate k / frame_rate + phase), k counted from
// the phone onset. Speaking: p + declination * k / (n - 1) + U(-jitter, jitter).
std::vector<double> render_frame_pitch(std::span<const double> phone_pitches, std::span<const int> durations,
                                       int style_id, const CorpusConfig& config, nn::Rng& rng);

// Affine pitch -> bump-centre map and its inverse (bin units, absolute index).
double bump_center(double pitch, const CorpusConfig& config);
double pitch_from_center(double center, const CorpusConfig& config);

RowVector timbre_vector(int speaker_id, const CorpusConfig& config);  // timbre band only
RowVector phone_shape(int phone, const CorpusConfig& config);         // phone band only

// Noise-free toy mel: timbre + phone shape + pitch bump, rows = frames.
Matrix render_mel(std::span<const double> frame_pitch, std::span<const int> phones, std::span<const int> durations,
                  int speaker_id, const CorpusConfig& config);

struct Dataset {
    std::vector<Utterance> train;
    std::vector<Utterance> valid;
    std::vector<Utterance> test;
};

// Deterministic given (config, seed). Splits are taken per speaker in
// generation order; phone/pitch sequences are unique across the corpus.
Dataset generate_corpus(const CorpusConfig& config, std::uint64_t seed);

}  // namespace singsynth::corpus
