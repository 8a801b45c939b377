#include "singsynth/synthesis.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace singsynth::synth {

using nlohmann::json;

int SynthRequest::frames() const { return std::accumulate(durations.begin(), durations.end(), 0); }

void validate(const SynthRequest& r, const model::ModelConfig& config) {
    require(!r.phones.empty(), "request: empty phone sequence");
    require(r.phones.size() == r.phone_pitches.size() && r.phones.size() == r.durations.size(),
            "request: phones, phone_pitches and durations must have equal length");
    for (int d : r.durations) {
        require(d >= 1, "request: durations must be positive");
    }
    require(r.n_steps >= 1, "request: n_steps must be >= 1");
    require(r.temperature >= 0.0, "request: temperature must be >= 0");
    require(r.speaker_id >= 0 && r.speaker_id < config.num_speakers,
            "request: unknown speaker_id " + std::to_string(r.speaker_id));
    require(r.style_id >= 0 && r.style_id < config.num_styles, "request: unknown style_id " + std::to_string(r.style_id));
}

SynthRequest request_from_utterance(const corpus::Utterance& utt, int speaker_id, int style_id) {
    SynthRequest r;
    r.phones = utt.phones;
    r.phone_pitches = utt.phone_pitches;
    r.durations = utt.durations;
    r.speaker_id = speaker_id;
    r.style_id = style_id;
    return r;
}

SynthRequest request_from_json(const std::string& text, const corpus::CorpusConfig& corpus) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidInput(std::string("request: invalid JSON: ") + e.what());
    }
    require(j.is_object(), "request: expected a JSON object");
    for (const char* key : {"phones", "phone_pitches", "durations", "speaker", "style"}) {
        require(j.contains(key), std::string("request: missing field '") + key + "'");
    }
    SynthRequest r;
    try {
        r.phones = j.at("phones").get<std::vector<int>>();
        r.phone_pitches = j.at("phone_pitches").get<std::vector<double>>();
        r.durations = j.at("durations").get<std::vector<int>>();
        const json& spk = j.at("speaker");
        if (spk.is_string()) {
            const auto name = spk.get<std::string>();
            r.speaker_id = -1;
            for (int i = 0; i < corpus.num_speakers(); ++i) {
                if (corpus.speakers[static_cast<size_t>(i)].name == name) {
                    r.speaker_id = i;
                }
            }
            require(r.speaker_id >= 0, "request: unknown speaker '" + name + "'");
        } else {
            r.speaker_id = spk.get<int>();
        }
        const json& sty = j.at("style");
        if (sty.is_string()) {
            const auto name = sty.get<std::string>();
            require(name == "singing" || name == "speaking", "request: unknown style '" + name + "'");
            r.style_id = static_cast<int>(name == "singing" ? corpus::Style::kSinging : corpus::Style::kSpeaking);
        } else {
            r.style_id = sty.get<int>();
        }
        r.seed = j.value("seed", std::uint64_t{0});
        r.n_steps = j.value("n_steps", 10);
        r.temperature = j.value("temperature", 1.0);
        if (j.contains("mode")) {
            r.mode = diffusion::solver_mode_from_string(j.at("mode").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("request: ") + e.what());
    }
    return r;
}

std::string request_to_json(const SynthRequest& r) {
    json j;
    j["phones"] = r.phones;
    j["phone_pitches"] = r.phone_pitches;
    j["durations"] = r.durations;
    j["speaker"] = r.speaker_id;
    j["style"] = r.style_id;
    j["seed"] = r.seed;
    j["n_steps"] = r.n_steps;
    j["mode"] = diffusion::to_string(r.mode);
    j["temperature"] = r.temperature;
    return j.dump(2);
}

Matrix prior_frames(const SynthRequest& request, const model::AcousticModel& model) {
    validate(request, model.config());
    return model::length_regulate(model.encode_eval(request.phones, request.phone_pitches, request.speaker_id),
                                  request.durations);
}

Matrix synthesize(const SynthRequest& request, const model::AcousticModel& model) {
    const Matrix mu = prior_frames(request, model);
    nn::Rng rng(request.seed);
    const int style = request.style_id;
    const diffusion::ScoreFn score_fn = [&model, style](const Matrix& x, const Matrix& m, double t) {
        return model.score_eval(x, m, style, t);
    };
    return diffusion::sample(score_fn, mu, request.n_steps, request.mode, request.temperature, model.config().schedule,
                             rng);
}

std::vector<double> pitch_readout(const Matrix& mel, const corpus::CorpusConfig& c) {
    require(mel.cols() == c.mel_dim, "pitch_readout: mel has " + std::to_string(mel.cols()) + " columns, expected " +
                                         std::to_string(c.mel_dim));
    // Energy of a clean bump at the middle of the representable range.
    const double mid = corpus::bump_center(0.5 * (c.render_pitch_min + c.render_pitch_max), c);
    double clean = 0.0;
    for (int b = c.pitch_band.begin; b < c.pitch_band.end; ++b) {
        const double z = (b - mid) / c.bump_width;
        const double v = c.bump_amplitude * std::exp(-0.5 * z * z);
        clean += v * v;
    }
    const double threshold = 0.1 * clean;
    const int half_window = 3;

    std::vector<double> out(static_cast<size_t>(mel.rows()), corpus::kUnvoiced);
    for (Eigen::Index f = 0; f < mel.rows(); ++f) {
        double energy = 0.0;
        int arg = c.pitch_band.begin;
        for (int b = c.pitch_band.begin; b < c.pitch_band.end; ++b) {
            const double v = mel(f, b);
            energy += v * v;
            if (v > mel(f, arg)) {
                arg = b;
            }
        }
        if (energy < threshold) {
            continue;
        }
        double w_sum = 0.0;
        double wb_sum = 0.0;
        for (int b = std::max(c.pitch_band.begin, arg - half_window);
             b <= std::min(c.pitch_band.end - 1, arg + half_window); ++b) {
            const double w = std::max(0.0, static_cast<double>(mel(f, b)));
            w_sum += w;
            wb_sum += w * b;
        }
        if (w_sum <= 0.0) {
            continue;
        }
        out[static_cast<size_t>(f)] = corpus::pitch_from_center(wb_sum / w_sum, c);
    }
    return out;
}

std::vector<double> score_contour(std::span<const double> phone_pitches, std::span<const int> durations) {
    require(phone_pitches.size() == durations.size(), "score_contour: pitches and durations differ in length");
    std::vector<double> out;
    for (size_t i = 0; i < durations.size(); ++i) {
        require(durations[i] >= 1, "score_contour: durations must be positive");
        const double p = corpus::is_voiced(phone_pitches[i]) ? phone_pitches[i] : corpus::kUnvoiced;
        out.insert(out.end(), static_cast<size_t>(durations[i]), p);
    }
    return out;
}

double vibrato_index(std::span<const double> contour, double frame_rate) {
    require(frame_rate > 0.0, "vibrato_index: frame_rate must be positive");
    // Split into runs of voiced frames.
    std::vector<std::vector<double>> segments;
    std::vector<double> current;
    for (double p : contour) {
        if (corpus::is_voiced(p)) {
            current.push_back(p);
        } else if (!current.empty()) {
            segments.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        segments.push_back(std::move(current));
    }
    size_t voiced = 0;
    for (const auto& s : segments) {
        voiced += s.size();
    }
    if (voiced < static_cast<size_t>(kMinVibratoFrames)) {
        throw UndefinedResult("vibrato_index: " + std::to_string(voiced) + " voiced frames, need at least " +
                              std::to_string(kMinVibratoFrames));
    }

    const double lo = 4.0;
    const double hi = 8.0;
    double band_energy = 0.0;
    for (const auto& seg : segments) {
        const auto n = static_cast<Eigen::Index>(seg.size());
        if (n < 3) {
            continue;
        }
        // Least-squares line removal.
        Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(seg.data(), n);
        Eigen::VectorXd k = Eigen::VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1));
        const double k_mean = k.mean();
        const double y_mean = y.mean();
        const double slope = ((k.array() - k_mean) * (y.array() - y_mean)).sum() / (k.array() - k_mean).square().sum();
        const Eigen::VectorXd r = (y.array() - y_mean - slope * (k.array() - k_mean)).matrix();

        // Zero-padded DFT sampled only on the band bins; both signs of frequency.
        Eigen::Index m = 1024;
        while (m < n) {
            m *= 2;
        }
        const double df = frame_rate / static_cast<double>(m);
        const auto k_lo = static_cast<Eigen::Index>(std::ceil(lo / df - 1e-9));
        const auto k_hi = static_cast<Eigen::Index>(std::floor(hi / df + 1e-9));
        for (Eigen::Index bin = k_lo; bin <= k_hi && bin < m / 2; ++bin) {
            const double w = 2.0 * std::numbers::pi * static_cast<double>(bin) / static_cast<double>(m);
            double re = 0.0;
            double im = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                re += r(i) * std::cos(w * static_cast<double>(i));
                im -= r(i) * std::sin(w * static_cast<double>(i));
            }
            band_energy += 2.0 * (re * re + im * im) / static_cast<double>(m);
        }
    }
    return band_energy / static_cast<double>(voiced);
}

double f0_mae(std::span<const double> pred, std::span<const double> ref) {
    require(pred.size() == ref.size(), "f0_mae: contours differ in length (" + std::to_string(pred.size()) + " vs " +
                                           std::to_string(ref.size()) + ")");
    double total = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (corpus::is_voiced(pred[i]) && corpus::is_voiced(ref[i])) {
            total += std::abs(pred[i] - ref[i]);
            ++count;
        }
    }
    if (count == 0) {
        throw UndefinedResult("f0_mae: no frames are voiced in both contours");
    }
    return total / static_cast<double>(count);
}

double timbre_match(const Matrix& mel, int speaker_id, const corpus::CorpusConfig& c) {
    require(mel.cols() == c.mel_dim, "timbre_match: mel has " + std::to_string(mel.cols()) + " columns, expected " +
                                         std::to_string(c.mel_dim));
    require(mel.rows() >= 1, "timbre_match: empty mel");
    const Eigen::RowVectorXd avg =
        mel.middleCols(c.timbre_band.begin, c.timbre_band.size()).cast<double>().colwise().mean();
    const Eigen::RowVectorXd ref = corpus::timbre_vector(speaker_id, c).cast<double>();
    const double na = avg.norm();
    const double nb = ref.norm();
    if (na == 0.0 || nb == 0.0) {
        throw UndefinedResult("timbre_match: zero timbre vector");
    }
    return avg.dot(ref) / (na * nb);
}

namespace {

template <typename Fn>
void for_each_phone(std::span<const double> contour, std::span<const int> durations, Fn&& fn) {
    const int total = std::accumulate(durations.begin(), durations.end(), 0);
    require(static_cast<size_t>(total) == contour.size(), "contour length does not match sum(durations)");
    size_t start = 0;
    for (int d : durations) {
        require(d >= 1, "durations must be positive");
        fn(contour.subspan(start, static_cast<size_t>(d)));
        start += static_cast<size_t>(d);
    }
}

}  // namespace

double max_within_phone_sd(std::span<const double> contour, std::span<const int> durations) {
    double worst = 0.0;
    for_each_phone(contour, durations, [&](std::span<const double> seg) {
        std::vector<double> v;
        for (double p : seg) {
            if (corpus::is_voiced(p)) {
                v.push_back(p);
            }
        }
        if (v.size() < 2) {
            return;
        }
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double p : v) {
            ss += (p - mean) * (p - mean);
        }
        worst = std::max(worst, std::sqrt(ss / static_cast<double>(v.size())));
    });
    return worst;
}

double mean_within_phone_variance(std::span<const double> contour, std::span<const int> durations, int min_frames) {
    double total = 0.0;
    int count = 0;
    for_each_phone(contour, durations, [&](std::span<const double> seg) {
        if (static_cast<int>(seg.size()) < min_frames) {
            return;
        }
        for (double p : seg) {
            if (!corpus::is_voiced(p)) {
                return;
            }
        }
        const double mean = std::accumulate(seg.begin(), seg.end(), 0.0) / static_cast<double>(seg.size());
        double ss = 0.0;
        for (double p : seg) {
            ss += (p - mean) * (p - mean);
        }
        total += ss / static_cast<double>(seg.size());
        ++count;
    });
    if (count == 0) {
        throw UndefinedResult("mean_within_phone_variance: no fully voiced phone is long enough");
    }
    return total / count;
}

std::vector<TimingRow> timing_report(const SynthRequest& request, const model::AcousticModel& model,
                                     std::span<const int> step_counts, int runs) {
    require(runs >= 1, "timing_report: runs must be >= 1");
    using clock = std::chrono::steady_clock;
    std::vector<TimingRow> rows;
    for (int steps : step_counts) {
        SynthRequest r = request;
        r.n_steps = steps;
        synthesize(r, model);
        const auto start = clock::now();
        for (int i = 0; i < runs; ++i) {
            synthesize(r, model);
        }
        const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
        TimingRow row;
        row.n_steps = steps;
        row.runs = runs;
        row.seconds_per_run = elapsed / runs;
        row.seconds_per_frame = row.seconds_per_run / r.frames();
        rows.push_back(row);
    }
    return rows;
}

}  // namespace singsynth::synth

namespace singsynth::synth {

EvalReport evaluate(const model::AcousticModel& model, const corpus::CorpusConfig& corpus,
                    const std::vector<corpus::Utterance>& songs, const EvalOptions& options) {
    require(!songs.empty(), "evaluate: no songs");
    auto or_nan = [](auto metric) {
        try {
            return metric();
        } catch (const UndefinedResult&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    EvalReport report;
    std::vector<double> pred_all;
    std::vector<double> ref_all;
    std::vector<double> speak_all;
    std::vector<double> prior_all;
    std::vector<int> durations_all;
    Matrix timbre_frames(0, corpus.mel_dim);
    double timbre_target = 0.0;
    double timbre_teacher = 0.0;
    for (size_t i = 0; i < songs.size(); ++i) {
        SynthRequest r = request_from_utterance(songs[i], options.target_speaker,
                                                static_cast<int>(corpus::Style::kSinging));
        r.n_steps = options.n_steps;
        r.mode = options.mode;
        r.temperature = options.temperature;
        r.seed = options.seed + i;
        const Matrix sung = synthesize(r, model);
        SynthRequest spoken = r;
        spoken.style_id = static_cast<int>(corpus::Style::kSpeaking);
        const Matrix said = synthesize(spoken, model);
        const Matrix prior = prior_frames(r, model);

        const auto pred = pitch_readout(sung, corpus);
        const auto speak = pitch_readout(said, corpus);
        const auto prior_pitch = pitch_readout(prior, corpus);
        const auto ref = score_contour(r.phone_pitches, r.durations);
        report.prior_max_within_phone_sd =
            std::max(report.prior_max_within_phone_sd, max_within_phone_sd(prior_pitch, r.durations));

        // A sentinel frame keeps voiced runs of consecutive songs apart.
        auto append = [](std::vector<double>& dst, const std::vector<double>& src) {
            if (!dst.empty()) {
                dst.push_back(corpus::kUnvoiced);
            }
            dst.insert(dst.end(), src.begin(), src.end());
        };
        append(pred_all, pred);
        append(ref_all, ref);
        append(speak_all, speak);
        append(prior_all, prior_pitch);
        if (!durations_all.empty()) {
            durations_all.push_back(1);
        }
        durations_all.insert(durations_all.end(), r.durations.begin(), r.durations.end());

        timbre_target += or_nan([&] { return timbre_match(sung, options.target_speaker, corpus); });
        timbre_teacher += or_nan([&] { return timbre_match(sung, options.teacher_speaker, corpus); });
        report.frames += r.frames();
    }
    const auto n = static_cast<double>(songs.size());
    report.songs = static_cast<int>(songs.size());
    report.f0_mae = or_nan([&] { return f0_mae(pred_all, ref_all); });
    report.vibrato_singing = or_nan([&] { return vibrato_index(pred_all, corpus.frame_rate); });
    report.vibrato_speaking = or_nan([&] { return vibrato_index(speak_all, corpus.frame_rate); });
    report.timbre_target = timbre_target / n;
    report.timbre_teacher = timbre_teacher / n;
    const int sustained = corpus.sing_vowel_min;
    report.prior_within_phone_variance = mean_within_phone_variance(prior_all, durations_all, sustained);
    report.decoded_within_phone_variance = mean_within_phone_variance(pred_all, durations_all, sustained);

    if (!options.timing_steps.empty()) {
        SynthRequest r = request_from_utterance(songs.front(), options.target_speaker,
                                                static_cast<int>(corpus::Style::kSinging));
        r.mode = options.mode;
        r.temperature = options.temperature;
        r.seed = options.seed;
        report.timing = timing_report(r, model, options.timing_steps, options.timing_runs);
    }
    return report;
}

std::string report_to_json(const EvalReport& r) {
    json j;
    j["songs"] = r.songs;
    j["frames"] = r.frames;
    j["f0_mae"] = r.f0_mae;
    j["vibrato_index"] = {{"singing", r.vibrato_singing},
                          {"speaking", r.vibrato_speaking},
                          {"ratio", r.vibrato_speaking > 0 ? r.vibrato_singing / r.vibrato_speaking
                                                  : std::numeric_limits<double>::quiet_NaN()}};
    j["timbre_match"] = {{"target", r.timbre_target}, {"teacher", r.timbre_teacher}};
    j["prior"] = {{"max_within_phone_sd", r.prior_max_within_phone_sd},
                  {"within_phone_variance", r.prior_within_phone_variance},
                  {"decoded_within_phone_variance", r.decoded_within_phone_variance}};
    json timing = json::array();
    for (const auto& row : r.timing) {
        timing.push_back({{"n_steps", row.n_steps},
                          {"runs", row.runs},
                          {"seconds_per_run", row.seconds_per_run},
                          {"seconds_per_frame", row.seconds_per_frame}});
    }
    j["timing"] = timing;
    return j.dump(2);
}

}  // namespace singsynth::synth
