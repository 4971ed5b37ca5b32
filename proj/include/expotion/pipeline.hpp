#ifndef EXPOTION_PIPELINE_HPP
#define EXPOTION_PIPELINE_HPP

#include <string>

#include "expotion/metrics.hpp"
#include "expotion/params_io.hpp"
#include "expotion/synthdata.hpp"
#include "expotion/training.hpp"

namespace expotion {

// Shared orchestration behind the CLI verbs and the python bindings. Every
// run writes a config echo next to its outputs so results are reproducible
// from the directory alone.

struct synth_result {
    std::string manifest_path;
    int n_clips = 0;
    uint64_t seed = 0;
};

synth_result run_synth(const synth_spec& spec, const std::string& out_dir);

struct pretrain_result {
    std::string checkpoint_dir;
    double final_loss = 0.0;
    uint64_t freeze_hash = 0;
    bool beats_uniform_bound = false;
};

pretrain_result run_pretrain(const std::string& manifest_path, const run_config& cfg,
                             const std::string& out_dir);

struct train_result {
    std::string checkpoint_dir;
    double final_loss = 0.0;
    int steps = 0;
    param_budget_report budget;
};

train_result run_train(const std::string& manifest_path, const std::string& base_dir,
                       const run_config& cfg, const std::string& out_dir);

struct generate_result {
    std::string manifest_path;
    int n_clips = 0;
    uint64_t seed = 0;
};

// Samples one sequence per clip, conditioned on the clip's features when
// adapter_dir is nonempty. Per-clip seeds derive from the run seed.
generate_result run_generate(const std::string& manifest_path, const std::string& base_dir,
                             const std::string& adapter_dir, const run_config& cfg,
                             const std::string& out_dir);

struct evaluate_result {
    std::string report_path;
    eval_report report;
};

evaluate_result run_evaluate(const std::string& gen_manifest_path,
                             const std::string& ref_manifest_path, const run_config& cfg,
                             int jobs, const std::string& out_path);

} // namespace expotion

#endif
