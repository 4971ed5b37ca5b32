#include "expotion/pipeline.hpp"

#include <cmath>
#include <filesystem>

#include "expotion/rng.hpp"

namespace expotion {

namespace fs = std::filesystem;

namespace {

decoder_config decoder_config_from(const run_config& cfg) {
    decoder_config d;
    d.n_layers = cfg.n_layers;
    d.d = cfg.d;
    d.heads = cfg.heads;
    d.vocab = cfg.vocab;
    d.prompt_len = cfg.prompt_len;
    d.n_captions = cfg.n_captions;
    d.ffn_mult = cfg.ffn_mult;
    d.t_max = cfg.t_max;
    d.code_rate_hz = cfg.code_rate_hz;
    return d;
}

void make_out_dir(const std::string& dir, const std::string& what) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error(what + ": cannot create " + dir + ": " + ec.message());
}

std::string relative_to(const std::string& target, const std::string& base_dir) {
    std::error_code ec;
    fs::path rel = fs::relative(fs::absolute(target), fs::absolute(base_dir), ec);
    if (ec || rel.empty()) return fs::absolute(target).string();
    return rel.string();
}

} // namespace

synth_result run_synth(const synth_spec& spec, const std::string& out_dir) {
    spec.validate();
    clip_manifest man = generate_dataset(spec, out_dir);
    save_synth_spec(out_dir + "/config_echo.json", spec);
    return {out_dir + "/manifest.json", int(man.entries.size()), spec.seed};
}

pretrain_result run_pretrain(const std::string& manifest_path, const run_config& cfg,
                             const std::string& out_dir) {
    cfg.validate();
    clip_manifest man = load_manifest(manifest_path);
    auto clips = prepare_clips<float>(man, cfg.code_rate_hz, cfg.vocab);
    base_decoder_params<float> base =
        init_base_decoder<float>(decoder_config_from(cfg), mix_seed(cfg.seed, 100));
    pretrain_result_info info =
        pretrain_base(base, clips, cfg.pretrain_steps, cfg.pretrain_lr, cfg.seed);
    make_out_dir(out_dir, "run_pretrain");
    try {
        save_base_checkpoint(out_dir, base, info.freeze_hash);
        save_run_config(out_dir + "/config_echo.json", cfg);
    } catch (...) {
        mark_checkpoint_failed(out_dir, "pretrain checkpoint write did not complete");
        throw;
    }
    return {out_dir, info.final_loss, info.freeze_hash, info.beats_uniform_bound};
}

train_result run_train(const std::string& manifest_path, const std::string& base_dir,
                       const run_config& cfg, const std::string& out_dir) {
    cfg.validate();
    base_decoder_params<float> base = load_base_checkpoint(base_dir);
    clip_manifest man = load_manifest(manifest_path);
    auto clips = prepare_clips<float>(man, cfg.code_rate_hz, base.cfg.vocab);
    train_state<float> st = train_adapter_on_clips(clips, base, cfg);
    make_out_dir(out_dir, "run_train");
    adapter_shape_info info{cfg.n_adapted_layers, cfg.face_dim, cfg.motion_dim, cfg.d1, cfg.d2};
    try {
        save_adapter_checkpoint(out_dir, st.adapter, base.cfg, info);
        save_run_config(out_dir + "/config_echo.json", cfg);
    } catch (...) {
        mark_checkpoint_failed(out_dir, "adapter checkpoint write did not complete");
        throw;
    }
    return {out_dir, st.loss_history.empty() ? 0.0 : st.loss_history.back(), st.step,
            st.budget};
}

generate_result run_generate(const std::string& manifest_path, const std::string& base_dir,
                             const std::string& adapter_dir, const run_config& cfg,
                             const std::string& out_dir) {
    cfg.validate();
    base_decoder_params<float> base = load_base_checkpoint(base_dir);
    clip_manifest man = load_manifest(manifest_path);

    bool conditioned = !adapter_dir.empty();
    adapter_params<float> adapter;
    if (conditioned) adapter = load_adapter_checkpoint(adapter_dir, nullptr, nullptr);

    make_out_dir(out_dir, "run_generate");
    std::vector<clip_manifest_entry> out_entries;
    for (size_t i = 0; i < man.entries.size(); ++i) {
        const clip_manifest_entry& e = man.entries[i];
        const int length = int(std::lround(e.duration_s * cfg.code_rate_hz));
        const uint64_t clip_seed = mix_seed(cfg.seed, uint64_t(i));

        token_sequence toks;
        if (conditioned) {
            Mat<float> face = read_matrix(man.resolve(e.face_path));
            Mat<float> motion = read_matrix(man.resolve(e.motion_path));
            feature_sequence<float> fseq{std::move(face), 0.0, source_tag::face};
            fseq.rate_hz = fseq.frames.rows / e.duration_s;
            feature_sequence<float> mseq{std::move(motion), 0.0, source_tag::motion_ctx};
            mseq.rate_hz = mseq.frames.rows / e.duration_s;
            joint_embedding<float> z = encode_clip(fseq, mseq, modality_mode::face_and_motion,
                                                   adapter.enc, cfg.code_rate_hz);
            adapter_view<float> v = adapter.view(z.z);
            toks = sample(base, e.caption_id, length, cfg.temperature, clip_seed, &v);
        } else {
            toks = sample<float>(base, e.caption_id, length, cfg.temperature, clip_seed,
                                 nullptr);
        }
        toks.rate_hz = cfg.code_rate_hz;

        clip_manifest_entry ge = e;
        ge.token_path = e.clip_id + ".tokens.tf";
        ge.face_path = relative_to(man.resolve(e.face_path), out_dir);
        ge.motion_path = relative_to(man.resolve(e.motion_path), out_dir);
        write_tokens(out_dir + "/" + ge.token_path, toks);
        out_entries.push_back(std::move(ge));
    }
    const std::string man_path = out_dir + "/manifest.json";
    save_manifest(man_path, out_entries);
    load_manifest(man_path);
    save_run_config(out_dir + "/config_echo.json", cfg);
    return {man_path, int(out_entries.size()), cfg.seed};
}

evaluate_result run_evaluate(const std::string& gen_manifest_path,
                             const std::string& ref_manifest_path, const run_config& cfg,
                             int jobs, const std::string& out_path) {
    cfg.validate();
    if (jobs < 1) throw validation_error("run_evaluate: jobs must be >= 1");
    clip_manifest gen = load_manifest(gen_manifest_path);
    clip_manifest ref = load_manifest(ref_manifest_path);

    std::vector<token_sequence> ref_tokens;
    std::vector<int> ref_captions;
    for (const auto& e : ref.entries) {
        token_sequence t = read_tokens(ref.resolve(e.token_path), cfg.code_rate_hz);
        ref_tokens.push_back(std::move(t));
        ref_captions.push_back(e.caption_id);
    }
    clip_embedder embedder = make_bigram_embedder(16, cfg.vocab, 17);
    clip_classifier classifier =
        make_caption_classifier(ref_tokens, ref_captions, cfg.n_captions, cfg.vocab);

    eval_options opts;
    opts.jobs = jobs;
    eval_report report = evaluate_run(gen, ref, embedder, classifier, opts);

    const fs::path out(out_path);
    if (out.has_parent_path()) make_out_dir(out.parent_path().string(), "run_evaluate");
    write_text_file(out_path, report_to_json(report));
    const fs::path echo = out.has_parent_path()
                              ? out.parent_path() / "config_echo.json"
                              : fs::path("config_echo.json");
    save_run_config(echo.string(), cfg);
    return {out_path, std::move(report)};
}

} // namespace expotion
