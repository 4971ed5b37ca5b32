#include "expotion/training.hpp"

#include <algorithm>
#include <cmath>

#include "expotion/rng.hpp"

namespace expotion {

template <typename S>
S cross_entropy(const Mat<S>& logits, const std::vector<int>& targets) {
    if (logits.rows != int(targets.size()))
        throw training_error("cross_entropy: " + std::to_string(logits.rows) + " logit rows vs " +
                             std::to_string(targets.size()) + " targets");
    double total = 0.0;
    for (int i = 0; i < logits.rows; ++i) {
        const S* r = logits.row(i);
        int tgt = targets[size_t(i)];
        if (tgt < 0 || tgt >= logits.cols) throw training_error("cross_entropy: target out of range");
        S mx = r[0];
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) sum += std::exp(double(r[j] - mx));
        total += double(mx) + std::log(sum) - double(r[tgt]);
    }
    return S(total / logits.rows);
}

template <typename S>
S cross_entropy_backward(const Mat<S>& logits, const std::vector<int>& targets, Mat<S>& dlogits) {
    S loss = cross_entropy(logits, targets);
    dlogits = Mat<S>(logits.rows, logits.cols);
    const S invT = S(1) / S(logits.rows);
    for (int i = 0; i < logits.rows; ++i) {
        const S* r = logits.row(i);
        S* o = dlogits.row(i);
        S mx = r[0];
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, r[j]);
        S sum = S(0);
        for (int j = 0; j < logits.cols; ++j) {
            o[j] = std::exp(r[j] - mx);
            sum += o[j];
        }
        const S inv = S(1) / sum;
        for (int j = 0; j < logits.cols; ++j) o[j] *= inv * invT;
        o[targets[size_t(i)]] -= invT;
    }
    return loss;
}

param_budget_report make_budget(size_t trainable, size_t frozen) {
    param_budget_report r;
    r.trainable_count = trainable;
    r.frozen_count = frozen;
    r.fraction = double(trainable) / double(trainable + frozen);
    return r;
}

template <typename S>
void adam_optimizer<S>::step(const std::vector<param_ref<S>>& params,
                             const std::vector<param_ref<S>>& grads) {
    if (params.size() != grads.size())
        throw training_error("adam: registry size mismatch");
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].n, 0.0);
            v_[i].assign(params[i].n, 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].n != grads[i].n)
            throw training_error("adam: tensor size mismatch for " + params[i].name);
        S* p = params[i].data;
        const S* g = grads[i].data;
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (size_t j = 0; j < params[i].n; ++j) {
            const double gj = double(g[j]);
            m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
            v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] = S(double(p[j]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

template <typename S>
double global_grad_norm(const std::vector<param_ref<S>>& grads) {
    double acc = 0.0;
    for (const auto& r : grads)
        for (size_t j = 0; j < r.n; ++j) acc += double(r.data[j]) * double(r.data[j]);
    return std::sqrt(acc);
}

template <typename S>
void clip_grads(const std::vector<param_ref<S>>& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    double norm = global_grad_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    const S scale = S(max_norm / norm);
    for (const auto& r : grads)
        for (size_t j = 0; j < r.n; ++j) r.data[j] *= scale;
}

template <typename S>
std::vector<training_clip<S>> prepare_clips(const clip_manifest& man, double code_rate_hz,
                                            int vocab) {
    std::vector<training_clip<S>> clips;
    for (const auto& e : man.entries) {
        training_clip<S> c;
        c.clip_id = e.clip_id;
        c.caption_id = e.caption_id;
        c.tempo_bpm = e.tempo_bpm;
        c.beat_times_s = e.beat_times_s;
        c.duration_s = e.duration_s;

        Mat<float> face = read_matrix(man.resolve(e.face_path));
        Mat<float> motion = read_matrix(man.resolve(e.motion_path));
        feature_sequence<S> fseq{face.template cast<S>(), face.rows / e.duration_s,
                                 source_tag::face};
        feature_sequence<S> mseq{motion.template cast<S>(), motion.rows / e.duration_s,
                                 source_tag::motion_ctx};
        c.face_s = smooth_interpolate(fseq, code_rate_hz).frames;
        c.motion_s = smooth_interpolate(mseq, code_rate_hz).frames;

        token_sequence toks = read_tokens(man.resolve(e.token_path), code_rate_hz);
        toks.validate(vocab);
        c.codes = std::move(toks.codes);
        if (int(c.codes.size()) != c.face_s.rows)
            throw validation_error("clip " + e.clip_id + ": " + std::to_string(c.codes.size()) +
                                   " tokens vs " + std::to_string(c.face_s.rows) +
                                   " conditioning frames");
        clips.push_back(std::move(c));
    }
    return clips;
}

template <typename S>
double evaluate_ce(const base_decoder_params<S>& base, const adapter_params<S>* adapter,
                   const std::vector<training_clip<S>>& clips, modality_mode mode) {
    if (clips.empty()) throw training_error("evaluate_ce: no clips");
    double total = 0.0;
    for (const auto& c : clips) {
        Mat<S> logits;
        if (adapter) {
            joint_embedding<S> z =
                encode_from_smoothed<S>(c.face_s, c.motion_s, mode, adapter->enc, nullptr);
            adapter_view<S> v = adapter->view(z.z);
            logits = decoder_forward<S>(base, c.codes, c.caption_id, &v, nullptr);
        } else {
            logits = decoder_forward<S>(base, c.codes, c.caption_id, nullptr, nullptr);
        }
        total += double(cross_entropy(logits, c.codes));
    }
    return total / double(clips.size());
}

template <typename S>
train_state<S> train_adapter_on_clips(const std::vector<training_clip<S>>& clips,
                                      base_decoder_params<S>& base, const run_config& config) {
    config.validate();
    if (clips.empty()) throw training_error("train_adapter: empty dataset");
    const uint64_t hash_before = param_hash(collect_params(base));

    train_state<S> st;
    st.seed = config.seed;
    st.freeze_hash = hash_before;
    st.adapter = init_adapter<S>(base.cfg, config.n_adapted_layers, config.face_dim,
                                 config.motion_dim, config.d1, config.d2,
                                 mix_seed(config.seed, 2));
    for (const auto& c : clips) {
        if (c.face_s.cols != config.face_dim)
            throw validation_error("clip " + c.clip_id + ": face dim " +
                                   std::to_string(c.face_s.cols) + " vs configured " +
                                   std::to_string(config.face_dim));
        if (c.motion_s.cols != config.motion_dim)
            throw validation_error("clip " + c.clip_id + ": motion dim " +
                                   std::to_string(c.motion_s.cols) + " vs configured " +
                                   std::to_string(config.motion_dim));
    }

    auto params = collect_params(st.adapter);
    st.budget = make_budget(total_param_count(params),
                            total_param_count(collect_params(base)));

    adapter_grads<S> grads(st.adapter);
    auto grad_refs = grads.collect();
    adam_optimizer<S> opt(config.learning_rate);
    Rng order_rng(mix_seed(config.seed, 3));
    const modality_mode mode = modality_mode::face_and_motion;

    std::vector<int> order(clips.size());
    for (size_t i = 0; i < clips.size(); ++i) order[i] = int(i);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += size_t(config.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(config.batch_size));
            grads.set_zero();
            double batch_loss = 0.0;
            for (size_t i = start; i < end; ++i) {
                const training_clip<S>& c = clips[size_t(order[i])];
                encode_cache<S> ec;
                joint_embedding<S> z =
                    encode_from_smoothed(c.face_s, c.motion_s, mode, st.adapter.enc, &ec);
                adapter_view<S> v = st.adapter.view(z.z);
                fwd_cache<S> fc;
                Mat<S> logits = decoder_forward<S>(base, c.codes, c.caption_id, &v, &fc);
                Mat<S> dlogits;
                S loss = cross_entropy_backward(logits, c.codes, dlogits);
                if (!std::isfinite(double(loss)))
                    throw training_error("train_adapter: non-finite loss at step " +
                                         std::to_string(st.step) + " on clip " + c.clip_id);
                batch_loss += double(loss);
                adapted_backward(c.codes, c.caption_id, base, st.adapter, z, ec, mode, fc,
                                 dlogits, grads);
            }
            const size_t n = end - start;
            grads.scale(S(1.0 / double(n)));
            clip_grads(grad_refs, config.grad_clip);
            opt.step(params, grad_refs);
            st.loss_history.push_back(batch_loss / double(n));
            ++st.step;
        }
        st.epoch = epoch + 1;
    }

    const uint64_t hash_after = param_hash(collect_params(base));
    if (hash_after != hash_before)
        throw freeze_violation_error("base parameters changed during adapter training");
    return st;
}

template <typename S>
train_state<S> train_adapter(const clip_manifest& manifest, base_decoder_params<S>& base,
                             const run_config& config) {
    auto clips = prepare_clips<S>(manifest, config.code_rate_hz, base.cfg.vocab);
    return train_adapter_on_clips(clips, base, config);
}

template <typename S>
pretrain_result_info pretrain_base(base_decoder_params<S>& base,
                                   const std::vector<training_clip<S>>& clips, int steps,
                                   double lr, uint64_t seed) {
    if (clips.empty()) throw training_error("pretrain_base: empty dataset");
    auto params = collect_params(base);
    adam_optimizer<S> opt(lr);
    Rng order_rng(mix_seed(seed, 4));
    std::vector<int> order(clips.size());
    for (size_t i = 0; i < clips.size(); ++i) order[i] = int(i);

    pretrain_result_info info;
    double loss_val = 0.0;
    for (int step = 0; step < steps; ++step) {
        if (step % int(clips.size()) == 0) order_rng.shuffle(order);
        const training_clip<S>& c = clips[size_t(order[size_t(step) % clips.size()])];
        fwd_cache<S> fc;
        Mat<S> logits = decoder_forward<S>(base, c.codes, c.caption_id, nullptr, &fc);
        Mat<S> dlogits;
        S loss = cross_entropy_backward(logits, c.codes, dlogits);
        if (!std::isfinite(double(loss)))
            throw training_error("pretrain_base: non-finite loss at step " +
                                 std::to_string(step));
        base_grads<S> bg(base);
        decoder_backward<S>(base, c.codes, c.caption_id, nullptr, fc, dlogits, &bg, nullptr);
        auto gr = bg.collect();
        clip_grads(gr, 1.0);
        opt.step(params, gr);
        loss_val = double(loss);
    }
    info.final_loss = loss_val;
    info.beats_uniform_bound = steps == 0 ? false : loss_val < std::log(double(base.cfg.vocab));
    info.freeze_hash = param_hash(collect_params(base));
    return info;
}

grad_check_instance<double> make_grad_check_instance(uint64_t seed) {
    Rng rng(seed);
    decoder_config cfg;
    cfg.n_layers = 4;
    cfg.d = 32;
    cfg.heads = 2;
    cfg.vocab = 32;
    cfg.prompt_len = 3;
    cfg.n_captions = 2;
    cfg.ffn_mult = 2;
    cfg.t_max = 16;
    cfg.code_rate_hz = 4.0;

    grad_check_instance<double> inst;
    inst.base = init_base_decoder<double>(cfg, mix_seed(seed, 10));
    inst.adapter = init_adapter<double>(cfg, 2, 16, 12, 4, 4, mix_seed(seed, 11));
    for (auto& g : inst.adapter.gates)
        g = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.3, 1.0);
    for (auto& v : inst.adapter.enc.fusion.z_pos.data) v = rng.normal() * 0.1;

    const int t = 8;
    inst.face_s = Mat<double>(t, 16);
    for (auto& v : inst.face_s.data) v = rng.normal();
    inst.motion_s = Mat<double>(t, 12);
    for (auto& v : inst.motion_s.data) v = rng.normal();
    inst.codes.resize(size_t(t));
    for (auto& c : inst.codes) c = rng.uniform_int(cfg.vocab);
    inst.caption_id = 1;
    return inst;
}

namespace {

double instance_loss(grad_check_instance<double>& inst) {
    joint_embedding<double> z = encode_from_smoothed<double>(inst.face_s, inst.motion_s,
                                                             inst.mode, inst.adapter.enc,
                                                             nullptr);
    adapter_view<double> v = inst.adapter.view(z.z);
    Mat<double> logits = decoder_forward<double>(inst.base, inst.codes, inst.caption_id, &v,
                                                 nullptr);
    return cross_entropy(logits, inst.codes);
}

} // namespace

double grad_check(grad_check_instance<double>& inst, const std::string& param_name,
                  double epsilon) {
    encode_cache<double> ec;
    joint_embedding<double> z = encode_from_smoothed(inst.face_s, inst.motion_s, inst.mode,
                                                     inst.adapter.enc, &ec);
    adapter_view<double> v = inst.adapter.view(z.z);
    fwd_cache<double> fc;
    Mat<double> logits = decoder_forward<double>(inst.base, inst.codes, inst.caption_id, &v, &fc);
    Mat<double> dlogits;
    cross_entropy_backward(logits, inst.codes, dlogits);
    adapter_grads<double> grads(inst.adapter);
    adapted_backward(inst.codes, inst.caption_id, inst.base, inst.adapter, z, ec, inst.mode, fc,
                     dlogits, grads);

    auto params = collect_params(inst.adapter);
    auto grad_refs = grads.collect();
    double* theta = nullptr;
    const double* analytic = nullptr;
    size_t n = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == param_name) {
            theta = params[i].data;
            analytic = grad_refs[i].data;
            n = params[i].n;
        }
    }
    if (!theta) throw training_error("grad_check: unknown parameter " + param_name);

    double max_rel = 0.0;
    for (size_t j = 0; j < n; ++j) {
        const double orig = theta[j];
        theta[j] = orig + epsilon;
        const double lp = instance_loss(inst);
        theta[j] = orig - epsilon;
        const double lm = instance_loss(inst);
        theta[j] = orig;
        const double fd = (lp - lm) / (2.0 * epsilon);
        const double a = analytic[j];
        const double rel = std::abs(a - fd) / std::max(1e-6, std::abs(a) + std::abs(fd));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

template float cross_entropy(const Mat<float>&, const std::vector<int>&);
template double cross_entropy(const Mat<double>&, const std::vector<int>&);
template float cross_entropy_backward(const Mat<float>&, const std::vector<int>&, Mat<float>&);
template double cross_entropy_backward(const Mat<double>&, const std::vector<int>&, Mat<double>&);
template class adam_optimizer<float>;
template class adam_optimizer<double>;
template double global_grad_norm(const std::vector<param_ref<float>>&);
template double global_grad_norm(const std::vector<param_ref<double>>&);
template void clip_grads(const std::vector<param_ref<float>>&, double);
template void clip_grads(const std::vector<param_ref<double>>&, double);
template std::vector<training_clip<float>> prepare_clips(const clip_manifest&, double, int);
template std::vector<training_clip<double>> prepare_clips(const clip_manifest&, double, int);
template double evaluate_ce(const base_decoder_params<float>&, const adapter_params<float>*,
                            const std::vector<training_clip<float>>&, modality_mode);
template double evaluate_ce(const base_decoder_params<double>&, const adapter_params<double>*,
                            const std::vector<training_clip<double>>&, modality_mode);
template train_state<float> train_adapter_on_clips(const std::vector<training_clip<float>>&,
                                                   base_decoder_params<float>&,
                                                   const run_config&);
template train_state<double> train_adapter_on_clips(const std::vector<training_clip<double>>&,
                                                    base_decoder_params<double>&,
                                                    const run_config&);
template train_state<float> train_adapter(const clip_manifest&, base_decoder_params<float>&,
                                          const run_config&);
template train_state<double> train_adapter(const clip_manifest&, base_decoder_params<double>&,
                                           const run_config&);
template pretrain_result_info pretrain_base(base_decoder_params<float>&,
                                            const std::vector<training_clip<float>>&, int,
                                            double, uint64_t);
template pretrain_result_info pretrain_base(base_decoder_params<double>&,
                                            const std::vector<training_clip<double>>&, int,
                                            double, uint64_t);

} // namespace expotion
