#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "expotion/pipeline.hpp"

using namespace expotion;

namespace {

// Flags override whatever the config file says; only flags the user actually
// passed count. Defaults shown in --help are the run_config defaults.
struct run_config_flags {
    run_config v;
    std::vector<std::pair<CLI::Option*, std::function<void(run_config&, const run_config&)>>>
        setters;

    void attach(CLI::App* cmd) {
        auto opt = [&](const char* name, auto run_config::*field, const char* desc) {
            CLI::Option* o = cmd->add_option(name, v.*field, desc)->capture_default_str();
            setters.emplace_back(o, [field](run_config& dst, const run_config& src) {
                dst.*field = src.*field;
            });
        };
        opt("--d", &run_config::d, "decoder width");
        opt("--n-layers", &run_config::n_layers, "decoder layers");
        opt("--n-adapted-layers", &run_config::n_adapted_layers,
            "layers carrying the condition prefix");
        opt("--heads", &run_config::heads, "attention heads");
        opt("--vocab", &run_config::vocab, "token vocabulary size");
        opt("--d1", &run_config::d1, "face projection width");
        opt("--d2", &run_config::d2, "motion projection width");
        opt("--t-max", &run_config::t_max, "longest supported clip in code frames");
        opt("--prompt-len", &run_config::prompt_len, "prompt vectors per caption");
        opt("--n-captions", &run_config::n_captions, "caption vocabulary");
        opt("--ffn-mult", &run_config::ffn_mult, "feed-forward width multiplier");
        opt("--code-rate-hz", &run_config::code_rate_hz, "token frame rate");
        opt("--face-dim", &run_config::face_dim, "raw face feature width");
        opt("--motion-dim", &run_config::motion_dim, "raw motion feature width");
        opt("--learning-rate", &run_config::learning_rate, "adapter learning rate");
        opt("--batch-size", &run_config::batch_size, "clips per optimizer step");
        opt("--epochs", &run_config::epochs, "adapter training epochs");
        opt("--grad-clip", &run_config::grad_clip, "global grad norm cap, 0 disables");
        opt("--seed", &run_config::seed, "run seed");
        opt("--pretrain-steps", &run_config::pretrain_steps, "base pretraining steps");
        opt("--pretrain-lr", &run_config::pretrain_lr, "base pretraining learning rate");
        opt("--temperature", &run_config::temperature, "sampling temperature, 0 is argmax");
    }

    run_config resolve(const std::string& config_path) const {
        run_config cfg = config_path.empty() ? run_config{} : load_run_config(config_path);
        for (const auto& [o, set] : setters)
            if (o->count() > 0) set(cfg, v);
        cfg.validate();
        return cfg;
    }
};

struct synth_spec_flags {
    synth_spec v;
    std::vector<std::pair<CLI::Option*, std::function<void(synth_spec&, const synth_spec&)>>>
        setters;

    void attach(CLI::App* cmd) {
        auto opt = [&](const char* name, auto synth_spec::*field, const char* desc) {
            CLI::Option* o = cmd->add_option(name, v.*field, desc)->capture_default_str();
            setters.emplace_back(o, [field](synth_spec& dst, const synth_spec& src) {
                dst.*field = src.*field;
            });
        };
        opt("--n-clips", &synth_spec::n_clips, "clips to generate");
        opt("--duration-s", &synth_spec::duration_s, "clip duration");
        opt("--feature-rate-hz", &synth_spec::feature_rate_hz, "visual feature rate");
        opt("--code-rate-hz", &synth_spec::code_rate_hz, "token frame rate");
        opt("--bpm-lo", &synth_spec::bpm_lo, "tempo range lower bound");
        opt("--bpm-hi", &synth_spec::bpm_hi, "tempo range upper bound");
        opt("--n-captions", &synth_spec::n_captions, "caption vocabulary");
        opt("--seed", &synth_spec::seed, "dataset seed");
        opt("--face-dim", &synth_spec::face_dim, "face feature width");
        opt("--motion-dim", &synth_spec::motion_dim, "motion feature width");
    }

    synth_spec resolve(const std::string& spec_path) const {
        synth_spec spec = spec_path.empty() ? synth_spec{} : load_synth_spec(spec_path);
        for (const auto& [o, set] : setters)
            if (o->count() > 0) set(spec, v);
        spec.validate();
        return spec;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"expotion: visual-feature conditioned music token pipeline"};
    app.require_subcommand(1);

    auto* c_synth = app.add_subcommand("synth-data", "generate a synthetic paired dataset");
    std::string synth_spec_path, synth_out;
    c_synth->add_option("--spec", synth_spec_path, "synth spec json");
    c_synth->add_option("--out", synth_out, "output directory")->required();
    auto synth_flags = std::make_shared<synth_spec_flags>();
    synth_flags->attach(c_synth);
    c_synth->callback([&, synth_flags] {
        synth_result r = run_synth(synth_flags->resolve(synth_spec_path), synth_out);
        std::printf("wrote %d clips (seed %llu); same seed regenerates identical bytes\n",
                    r.n_clips, static_cast<unsigned long long>(r.seed));
        std::printf("manifest: %s\n", r.manifest_path.c_str());
        std::printf("config echo: %s/config_echo.json\n", synth_out.c_str());
    });

    auto* c_pre = app.add_subcommand("pretrain", "pretrain and freeze the base decoder");
    std::string pre_manifest, pre_config, pre_out;
    c_pre->add_option("--manifest", pre_manifest, "training manifest")->required();
    c_pre->add_option("--config", pre_config, "run config json");
    c_pre->add_option("--out", pre_out, "checkpoint directory")->required();
    auto pre_flags = std::make_shared<run_config_flags>();
    pre_flags->attach(c_pre);
    c_pre->callback([&, pre_flags] {
        run_config cfg = pre_flags->resolve(pre_config);
        pretrain_result r = run_pretrain(pre_manifest, cfg, pre_out);
        std::printf("final loss %.4f (uniform bound %.4f, below bound: %s)\n", r.final_loss,
                    std::log(double(cfg.vocab)), r.beats_uniform_bound ? "yes" : "no");
        std::printf("freeze hash %llu (seed %llu)\n",
                    static_cast<unsigned long long>(r.freeze_hash),
                    static_cast<unsigned long long>(cfg.seed));
        std::printf("checkpoint: %s\n", r.checkpoint_dir.c_str());
    });

    auto* c_train = app.add_subcommand("train", "train the condition adapter on a frozen base");
    std::string tr_manifest, tr_base, tr_config, tr_out;
    c_train->add_option("--manifest", tr_manifest, "training manifest")->required();
    c_train->add_option("--base", tr_base, "pretrained base checkpoint")->required();
    c_train->add_option("--config", tr_config, "run config json");
    c_train->add_option("--out", tr_out, "adapter checkpoint directory")->required();
    auto tr_flags = std::make_shared<run_config_flags>();
    tr_flags->attach(c_train);
    c_train->callback([&, tr_flags] {
        run_config cfg = tr_flags->resolve(tr_config);
        train_result r = run_train(tr_manifest, tr_base, cfg, tr_out);
        std::printf("trainable fraction %.3f (%zu of %zu parameters)\n", r.budget.fraction,
                    r.budget.trainable_count,
                    r.budget.trainable_count + r.budget.frozen_count);
        std::printf("final loss %.4f after %d steps (seed %llu)\n", r.final_loss, r.steps,
                    static_cast<unsigned long long>(cfg.seed));
        std::printf("checkpoint: %s\n", r.checkpoint_dir.c_str());
    });

    auto* c_gen = app.add_subcommand("generate", "sample token sequences for manifest clips");
    std::string g_manifest, g_base, g_adapter, g_config, g_out;
    c_gen->add_option("--manifest", g_manifest, "clip manifest to condition on")->required();
    c_gen->add_option("--base", g_base, "pretrained base checkpoint")->required();
    c_gen->add_option("--adapter", g_adapter, "adapter checkpoint (omit for base-only)");
    c_gen->add_option("--config", g_config, "run config json");
    c_gen->add_option("--out", g_out, "output directory")->required();
    auto g_flags = std::make_shared<run_config_flags>();
    g_flags->attach(c_gen);
    c_gen->callback([&, g_flags] {
        run_config cfg = g_flags->resolve(g_config);
        generate_result r = run_generate(g_manifest, g_base, g_adapter, cfg, g_out);
        std::printf("wrote %d sequences (seed %llu, temperature %.2f, %s)\n", r.n_clips,
                    static_cast<unsigned long long>(r.seed), cfg.temperature,
                    g_adapter.empty() ? "base only" : "adapted");
        std::printf("manifest: %s\n", r.manifest_path.c_str());
    });

    auto* c_eval = app.add_subcommand("evaluate", "score generated clips against references");
    std::string e_gen, e_ref, e_config, e_out = "report.json";
    int e_jobs = 1;
    c_eval->add_option("--generated", e_gen, "generated manifest")->required();
    c_eval->add_option("--reference", e_ref, "reference manifest")->required();
    c_eval->add_option("--config", e_config, "run config json");
    c_eval->add_option("--out", e_out, "report path")->capture_default_str();
    c_eval->add_option("--jobs", e_jobs, "worker threads (result independent of count)")
        ->capture_default_str();
    auto e_flags = std::make_shared<run_config_flags>();
    e_flags->attach(c_eval);
    c_eval->callback([&, e_flags] {
        run_config cfg = e_flags->resolve(e_config);
        evaluate_result r = run_evaluate(e_gen, e_ref, cfg, e_jobs, e_out);
        std::fputs(render_report(r.report).c_str(), stdout);
        std::printf("report: %s\n", r.report_path.c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const training_error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const freeze_violation_error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const expotion::error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
    return 0;
}
