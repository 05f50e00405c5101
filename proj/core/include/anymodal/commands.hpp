#pragma once

// Pipeline commands behind the command-line tool, callable as plain
// functions. Each command resolves everything it needs from the merged
// config, writes its artifacts under one run root, snapshots the config into
// its run directory and returns that directory. Upstream artifacts are
// looked up by convention (data dir, phase run dirs) and a missing one is
// reported with the path that was expected.

#include <string>

#include "anymodal/config.hpp"
#include "anymodal/model.hpp"

namespace am::cli {

// Model wiring from the model.* keys; the root seed pins every initial
// weight.
model::ModelConfig model_config(const cfg::Config& c);

// World corpora, split pools and manifest into data.dir. Refuses a non-empty
// target unless force is set.
std::string cmd_synth(const cfg::Config& c);

std::string cmd_pretrain_encoders(const cfg::Config& c);
std::string cmd_pretrain_decoders(const cfg::Config& c);

// phase is "1", "2", "3a" or "3b"; the upstream final checkpoint must exist.
std::string cmd_train(const std::string& phase, const cfg::Config& c);

std::string cmd_eval(const cfg::Config& c);
std::string cmd_sweep(const cfg::Config& c);
std::string cmd_generate(const cfg::Config& c);

}  // namespace am::cli
