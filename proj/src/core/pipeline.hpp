#pragma once

#include "core/metrics.hpp"
#include "core/runconfig.hpp"
#include "core/trainer.hpp"

namespace preview::pipeline {

// Subcommand entry points. Each writes its outputs plus a fully-resolved
// config snapshot (with the dataset manifest hash) under cfg.out_dir and
// throws preview::error on failure.
void run_synth_gen(const run_config& cfg);
trainer::train_report run_train(const run_config& cfg);
trainer::probe_report run_probe(const run_config& cfg);
metrics::eval_report run_eval(const run_config& cfg);
void run_analyze(const run_config& cfg);

// Reads PREVIEW_DETERMINISTIC and pins the thread count when deterministic
// mode is active. Returns the possibly-updated config.
run_config apply_environment(run_config cfg);

}  // namespace preview::pipeline
