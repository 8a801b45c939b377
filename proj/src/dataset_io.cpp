#include "singsynth/dataset_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace singsynth::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "mel files are written in native little-endian order");

void write_mel(const fs::path& path, const Matrix& mel) {
    std::vector<float> buf(static_cast<size_t>(mel.size()));
    size_t i = 0;
    for (Eigen::Index r = 0; r < mel.rows(); ++r) {
        for (Eigen::Index c = 0; c < mel.cols(); ++c) {
            buf[i++] = static_cast<float>(mel(r, c));
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write mel file " + path.string());
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Matrix read_mel(const fs::path& path, int frames, int mel_dim) {
    require(frames >= 0 && mel_dim > 0, "read_mel: bad dimensions");
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw InvalidInput("cannot open mel file " + path.string());
    }
    const auto bytes = static_cast<size_t>(in.tellg());
    const size_t expected = static_cast<size_t>(frames) * static_cast<size_t>(mel_dim) * sizeof(float);
    require(bytes == expected, path.string() + ": size " + std::to_string(bytes) + " bytes, expected " +
                                   std::to_string(expected) + " for " + std::to_string(frames) + "x" +
                                   std::to_string(mel_dim));
    in.seekg(0);
    std::vector<float> buf(static_cast<size_t>(frames) * static_cast<size_t>(mel_dim));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    Matrix mel(frames, mel_dim);
    size_t i = 0;
    for (int r = 0; r < frames; ++r) {
        for (int c = 0; c < mel_dim; ++c) {
            mel(r, c) = static_cast<Scalar>(buf[i++]);
        }
    }
    return mel;
}

std::string manifest_line(const corpus::Utterance& utt, const std::string& mel_path) {
    json j;
    j["utt_id"] = utt.utt_id;
    j["phones"] = utt.phones;
    j["durations"] = utt.durations;
    j["phone_pitches"] = utt.phone_pitches;
    j["speaker_id"] = utt.speaker_id;
    j["style_id"] = utt.style_id;
    j["mel_path"] = mel_path;
    j["frames"] = utt.frames();
    j["mel_dim"] = utt.mel.cols();
    return j.dump();
}

void write_dataset(const fs::path& dir, const corpus::Dataset& data, const corpus::CorpusConfig& config) {
    fs::create_directories(dir / "mels");
    KeyValueConfig kv;
    store_corpus_config(config, kv);
    kv.save(dir / "corpus.cfg");
    const std::pair<const char*, const std::vector<corpus::Utterance>*> splits[] = {
        {"train", &data.train}, {"valid", &data.valid}, {"test", &data.test}};
    for (const auto& [name, utts] : splits) {
        std::ofstream manifest(dir / (std::string(name) + ".jsonl"));
        if (!manifest) {
            throw std::runtime_error("cannot write manifest in " + dir.string());
        }
        for (const auto& utt : *utts) {
            const std::string rel = "mels/" + utt.utt_id + ".bin";
            write_mel(dir / rel, utt.mel);
            manifest << manifest_line(utt, rel) << '\n';
        }
    }
}

std::vector<corpus::Utterance> read_split(const fs::path& dir, const std::string& split) {
    const fs::path path = dir / (split + ".jsonl");
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("missing manifest " + path.string());
    }
    std::vector<corpus::Utterance> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        corpus::Utterance utt;
        utt.utt_id = j.at("utt_id").get<std::string>();
        utt.phones = j.at("phones").get<std::vector<int>>();
        utt.durations = j.at("durations").get<std::vector<int>>();
        utt.phone_pitches = j.at("phone_pitches").get<std::vector<double>>();
        utt.speaker_id = j.at("speaker_id").get<int>();
        utt.style_id = j.at("style_id").get<int>();
        utt.mel = read_mel(dir / j.at("mel_path").get<std::string>(), j.at("frames").get<int>(),
                           j.at("mel_dim").get<int>());
        corpus::validate(utt);
        out.push_back(std::move(utt));
    }
    return out;
}

namespace {

using corpus::CorpusConfig;

struct IntField {
    const char* key;
    int CorpusConfig::*member;
};
struct DoubleField {
    const char* key;
    double CorpusConfig::*member;
};

constexpr IntField kIntFields[] = {
    {"corpus.num_phones", &CorpusConfig::num_phones},
    {"corpus.num_unvoiced_phones", &CorpusConfig::num_unvoiced_phones},
    {"corpus.mel_dim", &CorpusConfig::mel_dim},
    {"corpus.train_per_speaker", &CorpusConfig::train_per_speaker},
    {"corpus.valid_per_speaker", &CorpusConfig::valid_per_speaker},
    {"corpus.test_per_speaker", &CorpusConfig::test_per_speaker},
    {"corpus.min_syllables", &CorpusConfig::min_syllables},
    {"corpus.max_syllables", &CorpusConfig::max_syllables},
    {"corpus.sing_consonant_min", &CorpusConfig::sing_consonant_min},
    {"corpus.sing_consonant_max", &CorpusConfig::sing_consonant_max},
    {"corpus.sing_vowel_min", &CorpusConfig::sing_vowel_min},
    {"corpus.sing_vowel_max", &CorpusConfig::sing_vowel_max},
    {"corpus.speak_consonant_min", &CorpusConfig::speak_consonant_min},
    {"corpus.speak_consonant_max", &CorpusConfig::speak_consonant_max},
    {"corpus.speak_vowel_min", &CorpusConfig::speak_vowel_min},
    {"corpus.speak_vowel_max", &CorpusConfig::speak_vowel_max},
};

constexpr DoubleField kDoubleFields[] = {
    {"corpus.note_min", &CorpusConfig::note_min},
    {"corpus.note_max", &CorpusConfig::note_max},
    {"corpus.render_pitch_min", &CorpusConfig::render_pitch_min},
    {"corpus.render_pitch_max", &CorpusConfig::render_pitch_max},
    {"corpus.bump_center_lo", &CorpusConfig::bump_center_lo},
    {"corpus.bump_center_hi", &CorpusConfig::bump_center_hi},
    {"corpus.bump_amplitude", &CorpusConfig::bump_amplitude},
    {"corpus.bump_width", &CorpusConfig::bump_width},
    {"corpus.frame_rate", &CorpusConfig::frame_rate},
    {"corpus.vibrato_rate_hz", &CorpusConfig::vibrato_rate_hz},
    {"corpus.vibrato_depth", &CorpusConfig::vibrato_depth},
    {"corpus.vibrato_phase", &CorpusConfig::vibrato_phase},
    {"corpus.speech_declination", &CorpusConfig::speech_declination},
    {"corpus.speech_jitter", &CorpusConfig::speech_jitter},
    {"corpus.timbre_scale", &CorpusConfig::timbre_scale},
    {"corpus.phone_shape_scale", &CorpusConfig::phone_shape_scale},
    {"corpus.observation_noise", &CorpusConfig::observation_noise},
};

std::string band_to_string(const corpus::Band& b) { return std::to_string(b.begin) + ":" + std::to_string(b.end); }

corpus::Band band_from_string(const std::string& key, const std::string& text) {
    corpus::Band b;
    char colon = 0;
    std::istringstream is(text);
    if (!(is >> b.begin >> colon >> b.end) || colon != ':') {
        throw InvalidInput("config key '" + key + "': expected 'begin:end', got '" + text + "'");
    }
    return b;
}

std::string speakers_to_string(const std::vector<corpus::SpeakerSpec>& speakers) {
    std::string out;
    for (const auto& s : speakers) {
        if (!out.empty()) {
            out += ',';
        }
        out += s.name + ":" + (s.style == corpus::Style::kSinging ? "singing" : "speaking");
    }
    return out;
}

std::vector<corpus::SpeakerSpec> speakers_from_string(const std::string& text) {
    std::vector<corpus::SpeakerSpec> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        const auto colon = item.find(':');
        require(colon != std::string::npos, "corpus.speakers: expected name:style, got '" + item + "'");
        const std::string style = item.substr(colon + 1);
        require(style == "singing" || style == "speaking", "corpus.speakers: unknown style '" + style + "'");
        out.push_back({item.substr(0, colon), style == "singing" ? corpus::Style::kSinging : corpus::Style::kSpeaking});
    }
    return out;
}

}  // namespace

corpus::CorpusConfig corpus_config_from(const KeyValueConfig& kv) {
    CorpusConfig c;
    for (const auto& f : kIntFields) {
        c.*f.member = kv.get_int(f.key, c.*f.member);
    }
    for (const auto& f : kDoubleFields) {
        c.*f.member = kv.get_double(f.key, c.*f.member);
    }
    if (kv.has("corpus.timbre_band")) {
        c.timbre_band = band_from_string("corpus.timbre_band", kv.get_string("corpus.timbre_band", ""));
    }
    if (kv.has("corpus.pitch_band")) {
        c.pitch_band = band_from_string("corpus.pitch_band", kv.get_string("corpus.pitch_band", ""));
    }
    if (kv.has("corpus.phone_band")) {
        c.phone_band = band_from_string("corpus.phone_band", kv.get_string("corpus.phone_band", ""));
    }
    if (kv.has("corpus.speakers")) {
        c.speakers = speakers_from_string(kv.get_string("corpus.speakers", ""));
    }
    c.phone_shape_seed = kv.get_uint64("corpus.phone_shape_seed", c.phone_shape_seed);
    c.seed = kv.get_uint64("corpus.seed", c.seed);
    corpus::validate(c);
    return c;
}

void store_corpus_config(const corpus::CorpusConfig& c, KeyValueConfig& kv) {
    for (const auto& f : kIntFields) {
        kv.set(f.key, c.*f.member);
    }
    for (const auto& f : kDoubleFields) {
        kv.set(f.key, c.*f.member);
    }
    kv.set("corpus.timbre_band", band_to_string(c.timbre_band));
    kv.set("corpus.pitch_band", band_to_string(c.pitch_band));
    kv.set("corpus.phone_band", band_to_string(c.phone_band));
    kv.set("corpus.speakers", speakers_to_string(c.speakers));
    kv.set("corpus.phone_shape_seed", c.phone_shape_seed);
    kv.set("corpus.seed", c.seed);
}

const std::set<std::string>& corpus_config_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k;
        for (const auto& f : kIntFields) {
            k.insert(f.key);
        }
        for (const auto& f : kDoubleFields) {
            k.insert(f.key);
        }
        k.insert({"corpus.timbre_band", "corpus.pitch_band", "corpus.phone_band", "corpus.speakers",
                  "corpus.phone_shape_seed", "corpus.seed"});
        return k;
    }();
    return keys;
}

corpus::CorpusConfig load_corpus_config(const fs::path& dir) {
    const fs::path path = dir / "corpus.cfg";
    if (!fs::exists(path)) {
        throw InvalidInput("missing corpus config " + path.string());
    }
    return corpus_config_from(KeyValueConfig::load(path));
}

}  // namespace singsynth::io
