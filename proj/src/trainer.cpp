#include "singsynth/trainer.hpp"

#include "singsynth/dataset_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace singsynth::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
struct Field {
    const char* key;
    T TrainConfig::*member;
};

const Field<double> kDoubleFields[] = {
    {"train.lambda_mi", &TrainConfig::lambda_mi}, {"train.lr", &TrainConfig::lr},
    {"train.q_lr", &TrainConfig::q_lr},           {"train.grad_clip", &TrainConfig::grad_clip},
    {"train.mu_weight", &TrainConfig::mu_weight}, {"train.diff_weight", &TrainConfig::diff_weight},
    {"model.sigma_data", &TrainConfig::sigma_data},
};
const Field<int> kIntFields[] = {
    {"train.batch_size", &TrainConfig::batch_size},   {"train.crop_frames", &TrainConfig::crop_frames},
    {"model.embed_dim", &TrainConfig::embed_dim},     {"model.encoder_hidden", &TrainConfig::encoder_hidden},
    {"model.encoder_blocks", &TrainConfig::encoder_blocks}, {"model.decoder_base", &TrainConfig::decoder_base},
    {"model.position_features", &TrainConfig::position_features},
};
const Field<std::int64_t> kInt64Fields[] = {
    {"train.steps", &TrainConfig::steps},
    {"train.checkpoint_every", &TrainConfig::checkpoint_every},
    {"train.validate_every", &TrainConfig::validate_every},
};
const Field<std::string> kStringFields[] = {
    {"paths.corpus", &TrainConfig::corpus_dir},
    {"paths.run_dir", &TrainConfig::run_dir},
    {"train.resume", &TrainConfig::resume},
};

std::vector<int> parse_dilations(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw InvalidInput("model.mid_dilations: '" + item + "' is not an integer");
        }
    }
    return out;
}

struct CheckpointFile {
    json header;
    std::map<std::string, Matrix> tensors;
};

void append_tensor(json& list, std::string& blob, const std::string& name, const Matrix& m) {
    list.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    blob.append(reinterpret_cast<const char*>(m.data()), static_cast<size_t>(m.size()) * sizeof(Scalar));
}

CheckpointFile read_checkpoint_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InvalidInput("cannot open checkpoint " + path.string());
    }
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw InvalidInput(path.string() + " is not a checkpoint file");
    }
    if (version != kVersion) {
        throw InvalidInput(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    CheckpointFile file;
    file.header = json::parse(text);
    if (file.header.at("scalar_bytes").get<int>() != static_cast<int>(sizeof(Scalar))) {
        throw InvalidInput(path.string() + ": checkpoint scalar width does not match this build");
    }
    for (const auto& t : file.header.at("tensors")) {
        Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
        file.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
    }
    if (!in) {
        throw InvalidInput(path.string() + ": truncated checkpoint");
    }
    return file;
}

KeyValueConfig kv_from_json(const json& j) {
    KeyValueConfig kv;
    for (const auto& [key, value] : j.items()) {
        kv.set(key, value.get<std::string>());
    }
    return kv;
}

json kv_to_json(const KeyValueConfig& kv) {
    json j = json::object();
    for (const auto& [key, value] : kv.entries()) {
        j[key] = value;
    }
    return j;
}

void copy_into(const std::map<std::string, Matrix>& tensors, const std::string& name, Matrix& dst) {
    const auto it = tensors.find(name);
    require(it != tensors.end(), "checkpoint is missing tensor " + name);
    require(it->second.rows() == dst.rows() && it->second.cols() == dst.cols(),
            "checkpoint tensor " + name + " has shape " + std::to_string(it->second.rows()) + "x" +
                std::to_string(it->second.cols()) + ", model expects " + std::to_string(dst.rows()) + "x" +
                std::to_string(dst.cols()));
    dst = it->second;
}

void load_parameters(const std::map<std::string, Matrix>& tensors, const std::string& prefix,
                     nn::ParameterStore& store) {
    for (auto& p : store.parameters()) {
        copy_into(tensors, prefix + p.name, p.var.mutable_value());
    }
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void validate(const TrainConfig& c) {
    diffusion::validate(c.schedule);
    require(c.lambda_mi >= 0.0, "train.lambda_mi must be >= 0");
    require(c.lr >= 0.0 && c.q_lr >= 0.0, "learning rates must be >= 0");
    require(c.grad_clip >= 0.0, "train.grad_clip must be >= 0");
    require(c.mu_weight == 1.0 && c.diff_weight == 1.0, "train.mu_weight and train.diff_weight are fixed at 1.0");
    require(c.batch_size >= 1, "train.batch_size must be >= 1");
    require(c.lambda_mi == 0.0 || c.batch_size >= 2, "train.batch_size must be >= 2 when train.lambda_mi > 0");
    require(c.crop_frames >= 4 && c.crop_frames <= 384, "train.crop_frames must be in [4, 384]");
    require(c.steps >= 0, "train.steps must be >= 0");
    require(c.checkpoint_every >= 0 && c.validate_every >= 0, "cadences must be >= 0");
    require(!c.run_dir.empty(), "paths.run_dir must not be empty");
}

const std::set<std::string>& train_config_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k{"schedule.beta0", "schedule.beta1", "schedule.t_min", "train.seed",
                                "model.mid_dilations"};
        for (const auto& f : kDoubleFields) k.insert(f.key);
        for (const auto& f : kIntFields) k.insert(f.key);
        for (const auto& f : kInt64Fields) k.insert(f.key);
        for (const auto& f : kStringFields) k.insert(f.key);
        return k;
    }();
    return keys;
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
    TrainConfig c;
    c.schedule.beta0 = kv.get_double("schedule.beta0", c.schedule.beta0);
    c.schedule.beta1 = kv.get_double("schedule.beta1", c.schedule.beta1);
    c.schedule.t_min = kv.get_double("schedule.t_min", c.schedule.t_min);
    c.seed = kv.get_uint64("train.seed", c.seed);
    if (kv.has("model.mid_dilations")) {
        c.mid_dilations = parse_dilations(kv.get_string("model.mid_dilations", ""));
    }
    for (const auto& f : kDoubleFields) c.*f.member = kv.get_double(f.key, c.*f.member);
    for (const auto& f : kIntFields) c.*f.member = kv.get_int(f.key, c.*f.member);
    for (const auto& f : kInt64Fields) c.*f.member = kv.get_int64(f.key, c.*f.member);
    for (const auto& f : kStringFields) c.*f.member = kv.get_string(f.key, c.*f.member);
    validate(c);
    return c;
}

KeyValueConfig to_key_value(const TrainConfig& c) {
    KeyValueConfig kv;
    kv.set("schedule.beta0", c.schedule.beta0);
    kv.set("schedule.beta1", c.schedule.beta1);
    kv.set("schedule.t_min", c.schedule.t_min);
    kv.set("train.seed", c.seed);
    std::string dilations;
    for (int d : c.mid_dilations) {
        dilations += (dilations.empty() ? "" : ",") + std::to_string(d);
    }
    kv.set("model.mid_dilations", dilations);
    for (const auto& f : kDoubleFields) kv.set(f.key, c.*f.member);
    for (const auto& f : kIntFields) kv.set(f.key, c.*f.member);
    for (const auto& f : kInt64Fields) kv.set(f.key, c.*f.member);
    for (const auto& f : kStringFields) kv.set(f.key, c.*f.member);
    return kv;
}

model::ModelConfig model_config_for(const TrainConfig& config, const corpus::CorpusConfig& corpus) {
    model::ModelConfig m;
    m.num_phones = corpus.num_phones;
    m.num_speakers = corpus.num_speakers();
    m.num_styles = 2;
    m.mel_dim = corpus.mel_dim;
    m.embed_dim = config.embed_dim;
    m.encoder_hidden = config.encoder_hidden;
    m.encoder_blocks = config.encoder_blocks;
    m.decoder_base = config.decoder_base;
    m.mid_dilations = config.mid_dilations;
    m.position_features = config.position_features;
    m.sigma_data = config.sigma_data;
    m.pitch_center = 0.5 * (corpus.note_min + corpus.note_max);
    m.pitch_scale = std::max(1.0, 0.5 * (corpus.note_max - corpus.note_min));
    m.schedule = config.schedule;
    return m;
}

Trainer::Trainer(const TrainConfig& config, const corpus::CorpusConfig& corpus)
    : config_(config), corpus_(corpus), rng_(config.seed) {
    validate(config_);
    corpus::validate(corpus_);
    model_ = std::make_unique<model::AcousticModel>(model_config_for(config_, corpus_), config_.seed * 2 + 1);
    q_ = std::make_unique<mi::VariationalApprox>(config_.embed_dim, config_.seed * 2 + 2);
    std::vector<ag::Var> params;
    for (const auto& p : model_->parameters().parameters()) {
        params.push_back(p.var);
    }
    nn::AdamConfig main_cfg;
    main_cfg.lr = config_.lr;
    main_cfg.grad_clip = config_.grad_clip;
    main_opt_ = std::make_unique<nn::Adam>(std::move(params), main_cfg);
    q_opt_ = std::make_unique<nn::Adam>(mi::make_q_optimizer(*q_, config_.q_lr));
}

std::vector<const corpus::Utterance*> Trainer::sample_batch(const std::vector<corpus::Utterance>& pool) {
    require(!pool.empty(), "sample_batch: empty training pool");
    std::vector<const corpus::Utterance*> batch;
    for (int i = 0; i < config_.batch_size; ++i) {
        batch.push_back(&pool[static_cast<size_t>(rng_.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
    }
    return batch;
}

StepMetrics Trainer::train_step(const std::vector<const corpus::Utterance*>& batch, const OracleOverride& oracle) {
    require(!batch.empty(), "train_step: empty batch");
    require(config_.lambda_mi == 0.0 || batch.size() >= 2, "train_step: the MI term needs at least two samples");
    const auto& schedule = config_.schedule;
    const double n = static_cast<double>(batch.size());

    std::vector<int> spk_ids;
    std::vector<int> sty_ids;
    for (const auto* u : batch) {
        spk_ids.push_back(u->speaker_id);
        sty_ids.push_back(u->style_id);
    }

    // Phase 1: q ascent on detached embeddings.
    Matrix spk_detached;
    Matrix sty_detached;
    {
        ag::NoGradGuard guard;
        spk_detached = model_->speaker_embeddings(spk_ids).value();
        sty_detached = model_->style_embeddings(sty_ids).value();
    }
    const double q_ll = mi::update_q(*q_, spk_detached, sty_detached, *q_opt_);

    // Phase 2: main objective.
    main_opt_->zero_grad();
    ag::Var l_mu;
    ag::Var l_diff;
    for (const auto* u : batch) {
        const Matrix target = model::phone_average(u->mel, u->durations);
        ag::Var mu_frame = oracle.perfect_mu
                               ? ag::Var::constant(target)
                               : model::length_regulate(model_->encode(u->phones, u->phone_pitches, u->speaker_id),
                                                        u->durations);
        const ag::Var mu_term = ag::mean(ag::square(mu_frame - ag::Var::constant(target)));
        l_mu = l_mu.defined() ? l_mu + mu_term : mu_term;

        const int frames = u->frames();
        const int len = std::min(frames, config_.crop_frames);
        const int start = rng_.uniform_int(0, frames - len);
        const ag::Var mu_crop = ag::slice_rows(mu_frame, start, len);
        const Matrix x0 = u->mel.middleRows(start, len);
        const double t = rng_.uniform(schedule.t_min, 1.0);
        const Matrix noise = rng_.normal_matrix(len, u->mel.cols());
        const double g = diffusion::gamma(0.0, t, schedule);
        const double lambda = 1.0 - g * g;
        const Scalar inv_sd = static_cast<Scalar>(1.0 / std::sqrt(lambda));

        const Matrix fixed_part = static_cast<Scalar>(g) * x0 + static_cast<Scalar>(std::sqrt(lambda)) * noise;
        const ag::Var x_t = ag::Var::constant(fixed_part) + mu_crop * static_cast<Scalar>(1.0 - g);
        const ag::Var score = oracle.perfect_score ? ag::Var::constant(-noise * inv_sd)
                                                   : model_->score(x_t, mu_crop, u->style_id, t);
        const ag::Var diff_term =
            ag::mean(ag::square(score + ag::Var::constant(noise * inv_sd))) * static_cast<Scalar>(lambda);
        l_diff = l_diff.defined() ? l_diff + diff_term : diff_term;
    }
    l_mu = l_mu * static_cast<Scalar>(1.0 / n);
    l_diff = l_diff * static_cast<Scalar>(1.0 / n);
    const ag::Var l_mi = mi::vclub_estimate(*q_, model_->speaker_embeddings(spk_ids),
                                            model_->style_embeddings(sty_ids));

    StepMetrics m;
    m.step = step_ + 1;
    m.l_mu = l_mu.item();
    m.l_diff = l_diff.item();
    m.l_mi = l_mi.item();
    m.l_total = config_.mu_weight * m.l_mu + config_.diff_weight * m.l_diff + config_.lambda_mi * m.l_mi;
    m.q_loglik = q_ll;
    if (!finite(m.l_mu) || !finite(m.l_diff) || !finite(m.l_mi) || !finite(m.q_loglik)) {
        std::ostringstream os;
        os << "non-finite loss at step " << m.step << ": l_mu=" << m.l_mu << " l_diff=" << m.l_diff
           << " l_mi=" << m.l_mi << " q_loglik=" << m.q_loglik << " (batch:";
        for (const auto* u : batch) {
            os << ' ' << u->utt_id;
        }
        os << ")";
        main_opt_->zero_grad();
        throw NonFiniteLoss(os.str());
    }

    ag::Var total = l_mu * static_cast<Scalar>(config_.mu_weight) + l_diff * static_cast<Scalar>(config_.diff_weight);
    if (config_.lambda_mi > 0.0) {
        total = total + l_mi * static_cast<Scalar>(config_.lambda_mi);
    }
    ag::backward(total);
    main_opt_->step();
    ++step_;
    return m;
}

double Trainer::prior_loss(const std::vector<corpus::Utterance>& utterances) const {
    require(!utterances.empty(), "prior_loss: no utterances");
    double total = 0.0;
    for (const auto& u : utterances) {
        const Matrix mu_phone = model_->encode_eval(u.phones, u.phone_pitches, u.speaker_id);
        const Matrix mu_frame = model::length_regulate(mu_phone, u.durations);
        const Matrix target = model::phone_average(u.mel, u.durations);
        total += static_cast<double>((mu_frame - target).squaredNorm()) / static_cast<double>(target.size());
    }
    return total / static_cast<double>(utterances.size());
}

void Trainer::save_checkpoint(const fs::path& path) const {
    json header;
    header["format"] = "singsynth-checkpoint";
    header["scalar_bytes"] = sizeof(Scalar);
    header["step"] = step_;
    header["rng"] = rng_.save_state();
    header["main_opt_steps"] = main_opt_->step_count();
    header["q_opt_steps"] = q_opt_->step_count();
    header["train_config"] = kv_to_json(to_key_value(config_));
    KeyValueConfig corpus_kv;
    io::store_corpus_config(corpus_, corpus_kv);
    header["corpus_config"] = kv_to_json(corpus_kv);

    json list = json::array();
    std::string blob;
    for (const auto& p : model_->parameters().parameters()) {
        append_tensor(list, blob, "model/" + p.name, p.var.value());
    }
    for (const auto& p : q_->parameters().parameters()) {
        append_tensor(list, blob, "q/" + p.name, p.var.value());
    }
    const auto main_state = main_opt_->state_tensors();
    for (size_t i = 0; i < main_state.size(); ++i) {
        append_tensor(list, blob, "opt.main/" + std::to_string(i), *main_state[i]);
    }
    const auto q_state = q_opt_->state_tensors();
    for (size_t i = 0; i < q_state.size(); ++i) {
        append_tensor(list, blob, "opt.q/" + std::to_string(i), *q_state[i]);
    }
    header["tensors"] = list;

    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path.string());
    }
    const std::uint64_t header_len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw std::runtime_error("failed writing checkpoint " + path.string());
    }
}

void Trainer::load_checkpoint(const fs::path& path) {
    const CheckpointFile file = read_checkpoint_file(path);
    load_parameters(file.tensors, "model/", model_->parameters());
    load_parameters(file.tensors, "q/", q_->parameters());
    const auto main_state = main_opt_->state_tensors();
    for (size_t i = 0; i < main_state.size(); ++i) {
        copy_into(file.tensors, "opt.main/" + std::to_string(i), *main_state[i]);
    }
    const auto q_state = q_opt_->state_tensors();
    for (size_t i = 0; i < q_state.size(); ++i) {
        copy_into(file.tensors, "opt.q/" + std::to_string(i), *q_state[i]);
    }
    main_opt_->set_step_count(file.header.at("main_opt_steps").get<std::int64_t>());
    q_opt_->set_step_count(file.header.at("q_opt_steps").get<std::int64_t>());
    rng_.load_state(file.header.at("rng").get<std::string>());
    step_ = file.header.at("step").get<std::int64_t>();
}

LoadedModel load_model(const fs::path& checkpoint) {
    if (!fs::exists(checkpoint)) {
        throw InvalidInput("checkpoint not found: " + checkpoint.string());
    }
    const CheckpointFile file = read_checkpoint_file(checkpoint);
    LoadedModel out;
    out.train_config = train_config_from(kv_from_json(file.header.at("train_config")));
    out.corpus_config = io::corpus_config_from(kv_from_json(file.header.at("corpus_config")));
    out.model = std::make_unique<model::AcousticModel>(model_config_for(out.train_config, out.corpus_config), 0);
    load_parameters(file.tensors, "model/", out.model->parameters());
    return out;
}

TrainResult train(const TrainConfig& config) {
    validate(config);
    const fs::path corpus_dir(config.corpus_dir);
    if (!fs::is_directory(corpus_dir)) {
        throw InvalidInput("corpus directory not found: " + corpus_dir.string());
    }
    const corpus::CorpusConfig corpus = io::load_corpus_config(corpus_dir);
    const auto train_set = io::read_split(corpus_dir, "train");
    const auto valid_set = io::read_split(corpus_dir, "valid");
    require(!train_set.empty(), "training split is empty");

    Trainer trainer(config, corpus);
    if (!config.resume.empty()) {
        trainer.load_checkpoint(config.resume);
    }

    const fs::path run_dir(config.run_dir);
    fs::create_directories(run_dir);
    to_key_value(config).save(run_dir / "run.cfg");

    TrainResult result;
    result.metrics = run_dir / "metrics.csv";
    const fs::path valid_path = run_dir / "validation.csv";

    // On resume keep the rows up to the checkpoint step and continue from there.
    std::vector<std::string> kept_metrics;
    std::vector<std::string> kept_valid;
    if (trainer.step() > 0) {
        auto keep = [&](const fs::path& p, std::vector<std::string>& rows) {
            std::ifstream in(p);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (!line.empty() && std::stoll(line.substr(0, line.find(','))) <= trainer.step()) {
                    rows.push_back(line);
                }
            }
        };
        keep(result.metrics, kept_metrics);
        keep(valid_path, kept_valid);
    }
    std::ofstream metrics(result.metrics);
    std::ofstream valid_log(valid_path);
    if (!metrics || !valid_log) {
        throw std::runtime_error("cannot write logs in " + run_dir.string());
    }
    metrics << kMetricsHeader << '\n';
    valid_log << "step,valid_l_mu\n";
    for (const auto& row : kept_metrics) metrics << row << '\n';
    for (const auto& row : kept_valid) valid_log << row << '\n';
    metrics << std::setprecision(9);
    valid_log << std::setprecision(9);

    while (trainer.step() < config.steps) {
        const auto batch = trainer.sample_batch(train_set);
        const StepMetrics m = trainer.train_step(batch);
        metrics << m.step << ',' << m.l_mu << ',' << m.l_diff << ',' << m.l_mi << ',' << m.l_total << ','
                << m.q_loglik << '\n';
        result.history.push_back(m);
        if (config.validate_every > 0 && m.step % config.validate_every == 0 && !valid_set.empty()) {
            const double v = trainer.prior_loss(valid_set);
            valid_log << m.step << ',' << v << '\n';
            valid_log.flush();
            metrics.flush();
            result.validation.emplace_back(m.step, v);
            std::cerr << "step " << m.step << "  l_mu " << m.l_mu << "  l_diff " << m.l_diff << "  l_mi " << m.l_mi
                      << "  valid_l_mu " << v << '\n';
        }
        if (config.checkpoint_every > 0 && m.step % config.checkpoint_every == 0) {
            trainer.save_checkpoint(run_dir / ("checkpoint_" + std::to_string(m.step) + ".bin"));
        }
    }
    result.checkpoint = run_dir / "checkpoint.bin";
    trainer.save_checkpoint(result.checkpoint);
    return result;
}

}  // namespace singsynth::train
