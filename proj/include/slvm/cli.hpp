#pragma once

#include <string>
#include <vector>

#include "slvm/audio.hpp"

namespace slvm {
namespace cli {

// Corpus directory layout: corpus.meta (key = value), manifest.tsv
// (id<TAB>length<TAB>label_spec) and one 16-bit PCM mono WAV per id.
void write_corpus(const std::string& dir, const std::vector<audio::EncodedSequence>& seqs);
std::vector<audio::EncodedSequence> load_corpus(const std::string& dir);

// exit codes: 0 success, 2 configuration error, 3 numeric fault
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // convenience for tests

}  // namespace cli
}  // namespace slvm
