#pragma once

// On-disk corpus layout:
//   <dir>/corpus.cfg            corpus.* keys used to generate the data
//   <dir>/{train,valid,test}.jsonl
//   <dir>/mels/<utt_id>.bin     little-endian float32, row-major [frames x mel_dim]

#include "singsynth/key_value_config.hpp"
#include "singsynth/toy_corpus.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace singsynth::io {

void write_mel(const std::filesystem::path& path, const Matrix& mel);
Matrix read_mel(const std::filesystem::path& path, int frames, int mel_dim);

// One manifest line (no trailing newline). mel_path is relative to the corpus dir.
std::string manifest_line(const corpus::Utterance& utt, const std::string& mel_path);

void write_dataset(const std::filesystem::path& dir, const corpus::Dataset& data, const corpus::CorpusConfig& config);
std::vector<corpus::Utterance> read_split(const std::filesystem::path& dir, const std::string& split);

corpus::CorpusConfig corpus_config_from(const KeyValueConfig& kv);
void store_corpus_config(const corpus::CorpusConfig& config, KeyValueConfig& kv);
const std::set<std::string>& corpus_config_keys();

// Reads <dir>/corpus.cfg.
corpus::CorpusConfig load_corpus_config(const std::filesystem::path& dir);

}  // namespace singsynth::io
