#include "singsynth/cli.hpp"

#include "singsynth/dataset_io.hpp"
#include "singsynth/plot.hpp"
#include "singsynth/synthesis.hpp"
#include "singsynth/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace singsynth::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string>& extra_keys() {
    static const std::set<std::string> keys{
        "paths.corpus",      "synth.checkpoint", "synth.out",         "eval.checkpoint", "eval.out",
        "eval.speaker",      "eval.teacher",     "eval.n_steps",      "eval.mode",       "eval.temperature",
        "eval.seed",         "eval.timing_steps", "eval.timing_runs", "eval.max_songs",
    };
    return keys;
}

std::set<std::string> all_keys() {
    std::set<std::string> keys = io::corpus_config_keys();
    keys.insert(train::train_config_keys().begin(), train::train_config_keys().end());
    keys.insert(extra_keys().begin(), extra_keys().end());
    return keys;
}

KeyValueConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    KeyValueConfig kv = path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
    for (const auto& o : overrides) {
        kv.apply_override(o);
    }
    kv.check_known(all_keys());
    return kv;
}

std::string run_dir(const KeyValueConfig& kv) { return kv.get_string("paths.run_dir", "run"); }

std::string checkpoint_path(const KeyValueConfig& kv, const std::string& key, const std::string& flag) {
    if (!flag.empty()) {
        return flag;
    }
    return kv.get_string(key, (fs::path(run_dir(kv)) / "checkpoint.bin").string());
}

train::LoadedModel require_checkpoint(const std::string& path) {
    if (!fs::exists(path)) {
        throw std::runtime_error("checkpoint not found: " + path);
    }
    return train::load_model(path);
}

int speaker_index(const corpus::CorpusConfig& c, const std::string& name) {
    for (int i = 0; i < c.num_speakers(); ++i) {
        if (c.speakers[static_cast<size_t>(i)].name == name) {
            return i;
        }
    }
    throw InvalidInput("unknown speaker '" + name + "'");
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(std::stoi(item));
        }
    }
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Matrix read_mel_any(const fs::path& path, int mel_dim) {
    if (!fs::exists(path)) {
        throw InvalidInput("mel file not found: " + path.string());
    }
    const auto bytes = fs::file_size(path);
    const auto row_bytes = static_cast<std::uintmax_t>(mel_dim) * sizeof(float);
    require(bytes % row_bytes == 0, path.string() + ": size is not a whole number of " + std::to_string(mel_dim) +
                                        "-bin frames");
    return io::read_mel(path, static_cast<int>(bytes / row_bytes), mel_dim);
}

int run_gen_corpus(const KeyValueConfig& base, std::optional<std::uint64_t> seed, const std::string& out) {
    KeyValueConfig kv = base;
    if (seed) {
        kv.set("corpus.seed", *seed);
    }
    const corpus::CorpusConfig config = io::corpus_config_from(kv);
    const fs::path dir = out.empty() ? fs::path(kv.get_string("paths.corpus", "corpus")) : fs::path(out);
    const corpus::Dataset data = corpus::generate_corpus(config, config.seed);
    io::write_dataset(dir, data, config);
    std::cout << "wrote " << data.train.size() << "/" << data.valid.size() << "/" << data.test.size()
              << " train/valid/test utterances to " << dir.string() << '\n';
    return kExitOk;
}

int run_train(const KeyValueConfig& base, const std::string& resume) {
    KeyValueConfig kv = base;
    if (!resume.empty()) {
        kv.set("train.resume", resume);
    }
    const train::TrainConfig config = train::train_config_from(kv);
    const auto start = std::chrono::steady_clock::now();
    const train::TrainResult result = train::train(config);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "trained to step " << config.steps << " in " << seconds << " s; checkpoint "
              << result.checkpoint.string() << ", metrics " << result.metrics.string() << '\n';
    return kExitOk;
}

int run_synth(const KeyValueConfig& kv, const std::string& request_path, const std::string& ckpt_flag,
              const std::string& out_flag) {
    const std::string ckpt = checkpoint_path(kv, "synth.checkpoint", ckpt_flag);
    const train::LoadedModel loaded = require_checkpoint(ckpt);
    const synth::SynthRequest request = synth::request_from_json(read_text(request_path), loaded.corpus_config);

    const auto start = std::chrono::steady_clock::now();
    const Matrix mel = synth::synthesize(request, *loaded.model);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path out = out_flag.empty() ? fs::path(kv.get_string("synth.out", (fs::path(run_dir(kv)) / "synth.bin").string()))
                                          : fs::path(out_flag);
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    io::write_mel(out, mel);

    const auto& cc = loaded.corpus_config;
    const auto pitch = synth::pitch_readout(mel, cc);
    const auto ref = synth::score_contour(request.phone_pitches, request.durations);
    json sidecar;
    sidecar["mel_path"] = out.filename().string();
    sidecar["frames"] = mel.rows();
    sidecar["mel_dim"] = mel.cols();
    sidecar["speaker_id"] = request.speaker_id;
    sidecar["style_id"] = request.style_id;
    sidecar["n_steps"] = request.n_steps;
    sidecar["mode"] = diffusion::to_string(request.mode);
    sidecar["seconds"] = seconds;
    sidecar["timbre_match"] = synth::timbre_match(mel, request.speaker_id, cc);
    try {
        sidecar["f0_mae"] = synth::f0_mae(pitch, ref);
    } catch (const UndefinedResult&) {
        sidecar["f0_mae"] = nullptr;
    }
    try {
        sidecar["vibrato_index"] = synth::vibrato_index(pitch, cc.frame_rate);
    } catch (const UndefinedResult&) {
        sidecar["vibrato_index"] = nullptr;
    }
    std::ofstream meta(out.string() + ".json");
    meta << sidecar.dump(2) << '\n';
    std::cout << "wrote " << out.string() << " (" << mel.rows() << " frames)\n";
    return kExitOk;
}

int run_eval(const KeyValueConfig& kv, const std::string& ckpt_flag, const std::string& out_flag) {
    const std::string ckpt = checkpoint_path(kv, "eval.checkpoint", ckpt_flag);
    const train::LoadedModel loaded = require_checkpoint(ckpt);
    const auto& cc = loaded.corpus_config;
    const fs::path corpus_dir(kv.get_string("paths.corpus", loaded.train_config.corpus_dir));

    synth::EvalOptions options;
    options.target_speaker = speaker_index(cc, kv.get_string("eval.speaker", "student1"));
    options.teacher_speaker = speaker_index(cc, kv.get_string("eval.teacher", "teacher"));
    options.n_steps = kv.get_int("eval.n_steps", options.n_steps);
    options.mode = diffusion::solver_mode_from_string(kv.get_string("eval.mode", "fast_ml"));
    options.temperature = kv.get_double("eval.temperature", options.temperature);
    options.seed = kv.get_uint64("eval.seed", options.seed);
    options.timing_steps = parse_int_list(kv.get_string("eval.timing_steps", "10,50"));
    options.timing_runs = kv.get_int("eval.timing_runs", options.timing_runs);

    std::vector<corpus::Utterance> songs;
    for (auto& u : io::read_split(corpus_dir, "test")) {
        if (u.speaker_id == options.teacher_speaker && u.style_id == static_cast<int>(corpus::Style::kSinging)) {
            songs.push_back(std::move(u));
        }
    }
    const int max_songs = kv.get_int("eval.max_songs", 0);
    if (max_songs > 0 && static_cast<int>(songs.size()) > max_songs) {
        songs.resize(static_cast<size_t>(max_songs));
    }
    if (songs.empty()) {
        throw InvalidInput("no held-out songs for the teacher in " + corpus_dir.string());
    }
    const synth::EvalReport report = synth::evaluate(*loaded.model, cc, songs, options);
    const fs::path out = out_flag.empty() ? fs::path(kv.get_string("eval.out", (fs::path(run_dir(kv)) / "eval.json").string()))
                                          : fs::path(out_flag);
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    std::ofstream file(out);
    if (!file) {
        throw std::runtime_error("cannot write report " + out.string());
    }
    const std::string text = synth::report_to_json(report);
    file << text << '\n';
    std::cout << text << '\n';
    return kExitOk;
}

int run_plot(const KeyValueConfig& kv, const std::vector<std::string>& mels, const std::string& prefix) {
    const fs::path corpus_dir(kv.get_string("paths.corpus", "corpus"));
    const corpus::CorpusConfig cc = fs::exists(corpus_dir / "corpus.cfg") ? io::load_corpus_config(corpus_dir)
                                                                          : io::corpus_config_from(kv);
    std::vector<std::vector<double>> contours;
    for (size_t i = 0; i < mels.size(); ++i) {
        const Matrix mel = read_mel_any(mels[i], cc.mel_dim);
        const std::string name = prefix + (mels.size() > 1 ? "." + std::to_string(i) : "") + ".mel.png";
        plot::write_png(name, plot::mel_raster(mel));
        std::cout << "wrote " << name << '\n';
        contours.push_back(synth::pitch_readout(mel, cc));
    }
    const std::string name = prefix + ".pitch.png";
    plot::write_png(name, plot::pitch_plot(contours));
    std::cout << "wrote " << name << '\n';
    return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return cli_main(args);
}

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"Toy singing-voice synthesis from speech-only target speakers", "singsynth"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "Run config file (key = value)");
        sub->add_option("--set", overrides, "Override a config entry, key=value")->take_all();
    };

    std::optional<std::uint64_t> seed;
    std::string out;
    std::string resume;
    std::string request;
    std::string checkpoint;
    std::vector<std::string> mels;

    auto* gen = app.add_subcommand("gen-corpus", "Generate the toy corpus");
    add_common(gen);
    gen->add_option("--seed", seed, "Corpus seed (overrides corpus.seed)");
    gen->add_option("-o,--out", out, "Output directory (overrides paths.corpus)");

    auto* tr = app.add_subcommand("train", "Train the acoustic model");
    add_common(tr);
    tr->add_option("--resume", resume, "Checkpoint to resume from");

    auto* sy = app.add_subcommand("synth", "Synthesize a mel from a request file");
    add_common(sy);
    sy->add_option("-r,--request", request, "Request JSON")->required();
    sy->add_option("--checkpoint", checkpoint, "Checkpoint (overrides synth.checkpoint)");
    sy->add_option("-o,--out", out, "Output mel path");

    auto* ev = app.add_subcommand("eval", "Evaluate singing synthesis on held-out songs");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint (overrides eval.checkpoint)");
    ev->add_option("-o,--out", out, "Report path");

    auto* pl = app.add_subcommand("plot", "Render mel rasters and pitch contours to PNG");
    add_common(pl);
    pl->add_option("--mel", mels, "Mel file(s)")->required();
    pl->add_option("-o,--out", out, "Output path prefix")->required();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kExitUsage;
    }

    try {
        const KeyValueConfig kv = load_config(config_path, overrides);
        if (gen->parsed()) return run_gen_corpus(kv, seed, out);
        if (tr->parsed()) return run_train(kv, resume);
        if (sy->parsed()) return run_synth(kv, request, checkpoint, out);
        if (ev->parsed()) return run_eval(kv, checkpoint, out);
        if (pl->parsed()) return run_plot(kv, mels, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    std::cerr << app.help();
    return kExitUsage;
}

}  // namespace singsynth::cli
