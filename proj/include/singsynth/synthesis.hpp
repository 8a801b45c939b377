#pragma once

// Inference (encoder -> frame prior -> reverse diffusion) and exact
// readouts on toy mels: pitch, vibrato energy, F0 error, timbre similarity,
// and per-frame timing.

#include "singsynth/acoustic_model.hpp"
#include "singsynth/diffusion_math.hpp"
#include "singsynth/toy_corpus.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace singsynth::synth {

struct SynthRequest {
    std::vector<int> phones;
    std::vector<double> phone_pitches;
    std::vector<int> durations;
    int speaker_id = 1;
    int style_id = 1;
    int n_steps = 10;
    diffusion::SolverMode mode = diffusion::SolverMode::kFastMl;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    int frames() const;
};

void validate(const SynthRequest& request, const model::ModelConfig& config);

// Request for an utterance's score and durations with another speaker/style.
SynthRequest request_from_utterance(const corpus::Utterance& utt, int speaker_id, int style_id);

// JSON: {"phones", "phone_pitches", "durations", "speaker", "style", "seed",
// "n_steps", optional "mode", "temperature"}. speaker may be an id or a
// corpus speaker name, style an id or "speaking"/"singing".
SynthRequest request_from_json(const std::string& text, const corpus::CorpusConfig& corpus);
std::string request_to_json(const SynthRequest& request);

// Frame-level prior mu_frame for the request.
Matrix prior_frames(const SynthRequest& request, const model::AcousticModel& model);

// Decoded mel [frames x mel_dim]; deterministic given request.seed.
Matrix synthesize(const SynthRequest& request, const model::AcousticModel& model);

// Frame pitch in semitones (kUnvoiced where the pitch band is silent).
std::vector<double> pitch_readout(const Matrix& mel, const corpus::CorpusConfig& corpus);

// Per-frame score pitch: the phone note on voiced phones, kUnvoiced elsewhere.
std::vector<double> score_contour(std::span<const double> phone_pitches, std::span<const int> durations);

// 4-8 Hz modulation energy per voiced frame (st^2) after linear detrending of
// each voiced segment. A sinusoid of depth a scores about a^2 / 2.
double vibrato_index(std::span<const double> contour, double frame_rate);

inline constexpr int kMinVibratoFrames = 64;

// Mean |pred - ref| over frames voiced in both.
double f0_mae(std::span<const double> pred, std::span<const double> ref);

// Cosine between the time-averaged timbre band of mel and the speaker's timbre vector.
double timbre_match(const Matrix& mel, int speaker_id, const corpus::CorpusConfig& corpus);

// Largest within-phone standard deviation of a contour, over phones with at
// least two voiced frames. Returns 0 when there are none.
double max_within_phone_sd(std::span<const double> contour, std::span<const int> durations);

// Mean within-phone variance over phones whose frames are all voiced and
// that last at least min_frames.
double mean_within_phone_variance(std::span<const double> contour, std::span<const int> durations, int min_frames);

struct TimingRow {
    int n_steps = 0;
    int runs = 0;
    double seconds_per_run = 0;
    double seconds_per_frame = 0;
};

// One warm-up run, then `runs` timed runs per step count.
std::vector<TimingRow> timing_report(const SynthRequest& request, const model::AcousticModel& model,
                                     std::span<const int> step_counts, int runs = 5);

}  // namespace singsynth::synth

namespace singsynth::synth {

struct EvalOptions {
    int target_speaker = 1;
    int teacher_speaker = 0;
    int n_steps = 10;
    diffusion::SolverMode mode = diffusion::SolverMode::kFastMl;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::vector<int> timing_steps{10, 50};
    int timing_runs = 5;
};

// Singing synthesis for a speech-only target speaker on held-out songs.
// Metrics that are undefined for the decoded output (no voiced frames, a
// silent timbre band) are NaN, written as null in JSON.
struct EvalReport {
    int songs = 0;
    int frames = 0;
    double f0_mae = 0;  // vs the score, jointly voiced frames of all songs
    double vibrato_singing = 0;
    double vibrato_speaking = 0;  // same requests with the speaking style
    double timbre_target = 0;
    double timbre_teacher = 0;
    double prior_max_within_phone_sd = 0;  // pitch readout of mu_frame
    double prior_within_phone_variance = 0;
    double decoded_within_phone_variance = 0;
    std::vector<TimingRow> timing;
};

EvalReport evaluate(const model::AcousticModel& model, const corpus::CorpusConfig& corpus,
                    const std::vector<corpus::Utterance>& songs, const EvalOptions& options);

// Stable report schema; top-level keys f0_mae, vibrato_index, timbre_match, timing, prior.
std::string report_to_json(const EvalReport& report);

}  // namespace singsynth::synth
