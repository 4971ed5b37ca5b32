#include "expotion/decoder.hpp"

#include <cmath>

#include "expotion/rng.hpp"

namespace expotion {

template <typename S>
Mat<S> sinusoidal_pe(int t, int d) {
    Mat<S> pe(t, d);
    for (int i = 0; i < t; ++i) {
        S* r = pe.row(i);
        for (int j = 0; j < d; j += 2) {
            double freq = std::pow(10000.0, -double(j) / double(d));
            r[j] = S(std::sin(i * freq));
            if (j + 1 < d) r[j + 1] = S(std::cos(i * freq));
        }
    }
    return pe;
}

namespace {

template <typename S>
Mat<S> uniform_mat(Rng& rng, int rows, int cols, double bound) {
    Mat<S> m(rows, cols);
    for (auto& v : m.data) v = S(rng.uniform(-bound, bound));
    return m;
}

template <typename S>
attn_weights<S> init_attn(Rng& rng, int d) {
    const double bound = 1.0 / std::sqrt(double(d));
    attn_weights<S> w;
    w.w_q = uniform_mat<S>(rng, d, d, bound);
    w.w_k = uniform_mat<S>(rng, d, d, bound);
    w.w_v = uniform_mat<S>(rng, d, d, bound);
    w.w_o = uniform_mat<S>(rng, d, d, bound);
    w.b_q.assign(size_t(d), S(0));
    w.b_k.assign(size_t(d), S(0));
    w.b_v.assign(size_t(d), S(0));
    w.b_o.assign(size_t(d), S(0));
    return w;
}

} // namespace

template <typename S>
base_decoder_params<S> init_base_decoder(const decoder_config& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    base_decoder_params<S> p;
    p.cfg = cfg;
    p.token_embed = Mat<S>(cfg.vocab, cfg.d);
    for (auto& v : p.token_embed.data) v = S(rng.normal() * 0.02);
    p.bos_embed = Mat<S>(1, cfg.d);
    for (auto& v : p.bos_embed.data) v = S(rng.normal() * 0.02);
    const int dff = cfg.d * cfg.ffn_mult;
    for (int l = 0; l < cfg.n_layers; ++l) {
        layer_params<S> lp;
        lp.ln1 = LayerNormParams<S>(cfg.d);
        lp.ln2 = LayerNormParams<S>(cfg.d);
        lp.ln3 = LayerNormParams<S>(cfg.d);
        lp.self_attn = init_attn<S>(rng, cfg.d);
        lp.cross_attn = init_attn<S>(rng, cfg.d);
        lp.w_ff1 = uniform_mat<S>(rng, cfg.d, dff, 1.0 / std::sqrt(double(cfg.d)));
        lp.w_ff2 = uniform_mat<S>(rng, dff, cfg.d, 1.0 / std::sqrt(double(dff)));
        lp.b_ff1.assign(size_t(dff), S(0));
        lp.b_ff2.assign(size_t(cfg.d), S(0));
        p.layers.push_back(std::move(lp));
    }
    p.ln_f = LayerNormParams<S>(cfg.d);
    p.w_head = uniform_mat<S>(rng, cfg.d, cfg.vocab, 1.0 / std::sqrt(double(cfg.d)));
    p.b_head.assign(size_t(cfg.vocab), S(0));
    p.prompt_table = Tensor3<S>(cfg.n_captions, cfg.prompt_len, cfg.d);
    for (auto& v : p.prompt_table.data) v = S(rng.normal() * 0.02);
    return p;
}

template <typename S>
std::vector<param_ref<S>> collect_params(base_decoder_params<S>& p) {
    std::vector<param_ref<S>> refs;
    auto add_mat = [&](const std::string& name, Mat<S>& m) {
        refs.push_back({name, m.data.data(), m.data.size(), {uint32_t(m.rows), uint32_t(m.cols)}});
    };
    auto add_vec = [&](const std::string& name, std::vector<S>& v) {
        refs.push_back({name, v.data(), v.size(), {uint32_t(v.size())}});
    };
    add_mat("token_embed", p.token_embed);
    add_mat("bos_embed", p.bos_embed);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto& lp = p.layers[l];
        std::string pre = "layers." + std::to_string(l) + ".";
        add_vec(pre + "ln1.gain", lp.ln1.gain);
        add_vec(pre + "ln1.bias", lp.ln1.bias);
        add_mat(pre + "self.w_q", lp.self_attn.w_q);
        add_mat(pre + "self.w_k", lp.self_attn.w_k);
        add_mat(pre + "self.w_v", lp.self_attn.w_v);
        add_mat(pre + "self.w_o", lp.self_attn.w_o);
        add_vec(pre + "self.b_q", lp.self_attn.b_q);
        add_vec(pre + "self.b_k", lp.self_attn.b_k);
        add_vec(pre + "self.b_v", lp.self_attn.b_v);
        add_vec(pre + "self.b_o", lp.self_attn.b_o);
        add_vec(pre + "ln2.gain", lp.ln2.gain);
        add_vec(pre + "ln2.bias", lp.ln2.bias);
        add_mat(pre + "cross.w_q", lp.cross_attn.w_q);
        add_mat(pre + "cross.w_k", lp.cross_attn.w_k);
        add_mat(pre + "cross.w_v", lp.cross_attn.w_v);
        add_mat(pre + "cross.w_o", lp.cross_attn.w_o);
        add_vec(pre + "cross.b_q", lp.cross_attn.b_q);
        add_vec(pre + "cross.b_k", lp.cross_attn.b_k);
        add_vec(pre + "cross.b_v", lp.cross_attn.b_v);
        add_vec(pre + "cross.b_o", lp.cross_attn.b_o);
        add_vec(pre + "ln3.gain", lp.ln3.gain);
        add_vec(pre + "ln3.bias", lp.ln3.bias);
        add_mat(pre + "ffn.w1", lp.w_ff1);
        add_vec(pre + "ffn.b1", lp.b_ff1);
        add_mat(pre + "ffn.w2", lp.w_ff2);
        add_vec(pre + "ffn.b2", lp.b_ff2);
    }
    add_vec("ln_f.gain", p.ln_f.gain);
    add_vec("ln_f.bias", p.ln_f.bias);
    add_mat("head.w", p.w_head);
    add_vec("head.b", p.b_head);
    refs.push_back({"prompt_table", p.prompt_table.data.data(), p.prompt_table.data.size(),
                    {uint32_t(p.prompt_table.d0), uint32_t(p.prompt_table.d1),
                     uint32_t(p.prompt_table.d2)}});
    return refs;
}

namespace {

template <typename S>
Mat<S> prompt_rows(const base_decoder_params<S>& p, int caption_id) {
    if (caption_id < 0 || caption_id >= p.cfg.n_captions)
        throw input_error("unknown caption_id " + std::to_string(caption_id));
    Mat<S> rows(p.cfg.prompt_len, p.cfg.d);
    std::copy(&p.prompt_table.at(caption_id, 0, 0),
              &p.prompt_table.at(caption_id, 0, 0) + size_t(p.cfg.prompt_len) * p.cfg.d,
              rows.data.data());
    return rows;
}

} // namespace

template <typename S>
Mat<S> decoder_forward(const base_decoder_params<S>& base, const std::vector<int>& codes,
                       int caption_id, const adapter_view<S>* adapter, fwd_cache<S>* cache) {
    const decoder_config& cfg = base.cfg;
    const int t = int(codes.size());
    if (t < 1) throw input_error("decoder_forward: empty token sequence");
    for (int c : codes)
        if (c < 0 || c >= cfg.vocab)
            throw input_error("decoder_forward: code " + std::to_string(c) + " out of range");
    const int lo = adapter ? cfg.n_layers - adapter->n_adapted : cfg.n_layers;
    if (adapter) {
        if (adapter->n_adapted < 1 || adapter->n_adapted > cfg.n_layers)
            throw conditioning_error("adapter: bad adapted layer count");
        if (adapter->z->rows != t)
            throw conditioning_error("adapter: conditioning length " +
                                     std::to_string(adapter->z->rows) + " vs " +
                                     std::to_string(t) + " tokens");
        if (adapter->h_p0->rows < t)
            throw conditioning_error("adapter: prefix table shorter than clip");
    }

    Mat<S> pe = sinusoidal_pe<S>(t, cfg.d);
    Mat<S> x(t, cfg.d);
    for (int i = 0; i < t; ++i) {
        const S* e = (i == 0) ? base.bos_embed.row(0) : base.token_embed.row(codes[i - 1]);
        const S* pr = pe.row(i);
        S* o = x.row(i);
        for (int j = 0; j < cfg.d; ++j) o[j] = e[j] + pr[j];
    }

    Mat<S> prompt = prompt_rows(base, caption_id);
    if (cache) {
        cache->x0 = x;
        cache->layers.assign(size_t(cfg.n_layers), layer_fwd_cache<S>());
    }

    Mat<S> hp; // prefix stream, live only across adapted layers
    for (int l = 0; l < cfg.n_layers; ++l) {
        const layer_params<S>& lp = base.layers[l];
        const bool adapted = adapter && l >= lo;
        layer_fwd_cache<S>* lc = cache ? &cache->layers[size_t(l)] : nullptr;
        if (lc) lc->x_in = x;

        // self-attention, token stream
        LnCache<S> ln1c;
        Mat<S> a = layernorm(x, lp.ln1, &ln1c);
        Mat<S> q = linear(a, lp.self_attn.w_q, lp.self_attn.b_q);
        Mat<S> k = linear(a, lp.self_attn.w_k, lp.self_attn.b_k);
        Mat<S> v = linear(a, lp.self_attn.w_v, lp.self_attn.b_v);
        AttnCache<S> self_probs;
        Mat<S> ctx = mha_forward(q, k, v, cfg.heads, true, lc ? &self_probs : nullptr);

        Mat<S> ctx_total;
        if (adapted) {
            const int slot = l - lo;
            if (slot == 0) {
                hp = Mat<S>(t, cfg.d);
                for (int i = 0; i < t; ++i)
                    std::copy(adapter->h_p0->row(i), adapter->h_p0->row(i) + cfg.d, hp.row(i));
            }
            Mat<S> hp_sum = hp;
            add_into(hp_sum, *adapter->z);
            LnCache<S> lnpc;
            Mat<S> u = layernorm(hp_sum, lp.ln1, &lnpc);
            Mat<S> qp = linear(u, lp.self_attn.w_q, lp.self_attn.b_q);
            Mat<S> kp = linear(u, lp.self_attn.w_k, lp.self_attn.b_k);
            Mat<S> vp = linear(u, lp.self_attn.w_v, lp.self_attn.b_v);

            // fused attention: token queries shifted by prefix queries, reading
            // prefix keys/values, unmasked
            Mat<S> qf = q;
            add_into(qf, qp);
            AttnCache<S> fused_probs;
            Mat<S> ctx_f = mha_forward(qf, kp, vp, cfg.heads, false, lc ? &fused_probs : nullptr);

            const S g = adapter->gates[slot];
            if (g == S(0)) {
                ctx_total = ctx;
            } else {
                ctx_total = ctx;
                as_eigen(ctx_total) += g * as_eigen(ctx_f);
            }

            // roll the prefix stream forward for the next adapted layer
            AttnCache<S> prefix_probs;
            Mat<S> ctx_p;
            if (slot + 1 < adapter->n_adapted) {
                ctx_p = mha_forward(qp, kp, vp, cfg.heads, false, lc ? &prefix_probs : nullptr);
                hp = linear(ctx_p, lp.self_attn.w_o, lp.self_attn.b_o);
            }
            if (lc) {
                lc->lnp = std::move(lnpc);
                lc->u = std::move(u);
                lc->qp = std::move(qp);
                lc->kp = std::move(kp);
                lc->vp = std::move(vp);
                lc->prefix_probs = std::move(prefix_probs);
                lc->ctx_p = std::move(ctx_p);
                lc->fused_probs = std::move(fused_probs);
                lc->ctx_f = std::move(ctx_f);
            }
        } else {
            ctx_total = ctx;
        }

        Mat<S> attn_out = linear(ctx_total, lp.self_attn.w_o, lp.self_attn.b_o);
        add_into(x, attn_out);
        if (lc) {
            lc->ln1 = std::move(ln1c);
            lc->a = std::move(a);
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->self_probs = std::move(self_probs);
            lc->ctx = std::move(ctx);
            lc->ctx_total = std::move(ctx_total);
            lc->after_attn = x;
        }

        // cross-attention to the prompt rows
        LnCache<S> ln2c;
        Mat<S> b2 = layernorm(x, lp.ln2, &ln2c);
        Mat<S> qc = linear(b2, lp.cross_attn.w_q, lp.cross_attn.b_q);
        Mat<S> kc = linear(prompt, lp.cross_attn.w_k, lp.cross_attn.b_k);
        Mat<S> vc = linear(prompt, lp.cross_attn.w_v, lp.cross_attn.b_v);
        AttnCache<S> cross_probs;
        Mat<S> ctx_c = mha_forward(qc, kc, vc, cfg.heads, false, lc ? &cross_probs : nullptr);
        Mat<S> cross_out = linear(ctx_c, lp.cross_attn.w_o, lp.cross_attn.b_o);
        add_into(x, cross_out);
        if (lc) {
            lc->ln2 = std::move(ln2c);
            lc->b2 = std::move(b2);
            lc->qc = std::move(qc);
            lc->kc = std::move(kc);
            lc->vc = std::move(vc);
            lc->cross_probs = std::move(cross_probs);
            lc->ctx_c = std::move(ctx_c);
            lc->after_cross = x;
        }

        // feed-forward
        LnCache<S> ln3c;
        Mat<S> c3 = layernorm(x, lp.ln3, &ln3c);
        Mat<S> pre = linear(c3, lp.w_ff1, lp.b_ff1);
        Mat<S> act = silu(pre);
        Mat<S> ffn_out = linear(act, lp.w_ff2, lp.b_ff2);
        add_into(x, ffn_out);
        if (lc) {
            lc->ln3 = std::move(ln3c);
            lc->c3 = std::move(c3);
            lc->ffn_pre = std::move(pre);
            lc->ffn_act = std::move(act);
        }
    }

    LnCache<S> lnfc;
    Mat<S> h = layernorm(x, base.ln_f, &lnfc);
    Mat<S> logits = linear(h, base.w_head, base.b_head);
    if (cache) {
        cache->x_final = std::move(x);
        cache->lnf = std::move(lnfc);
        cache->h = std::move(h);
    }
    return logits;
}

template <typename S>
Mat<S> base_forward(const base_decoder_params<S>& base, const token_sequence& tokens,
                    int caption_id) {
    tokens.validate(base.cfg.vocab);
    return decoder_forward<S>(base, tokens.codes, caption_id, nullptr, nullptr);
}

template <typename S>
base_grads<S>::base_grads(const base_decoder_params<S>& p) {
    const decoder_config& cfg = p.cfg;
    token_embed = Mat<S>(cfg.vocab, cfg.d);
    bos_embed = Mat<S>(1, cfg.d);
    const int dff = cfg.d * cfg.ffn_mult;
    layers.resize(size_t(cfg.n_layers));
    for (auto& lg : layers) {
        lg.ln1_gain.assign(size_t(cfg.d), S(0));
        lg.ln1_bias.assign(size_t(cfg.d), S(0));
        lg.ln2_gain.assign(size_t(cfg.d), S(0));
        lg.ln2_bias.assign(size_t(cfg.d), S(0));
        lg.ln3_gain.assign(size_t(cfg.d), S(0));
        lg.ln3_bias.assign(size_t(cfg.d), S(0));
        for (Mat<S>* m : {&lg.w_q, &lg.w_k, &lg.w_v, &lg.w_o, &lg.cw_q, &lg.cw_k, &lg.cw_v,
                          &lg.cw_o})
            *m = Mat<S>(cfg.d, cfg.d);
        for (std::vector<S>* v :
             {&lg.b_q, &lg.b_k, &lg.b_v, &lg.b_o, &lg.cb_q, &lg.cb_k, &lg.cb_v, &lg.cb_o})
            v->assign(size_t(cfg.d), S(0));
        lg.w_ff1 = Mat<S>(cfg.d, dff);
        lg.w_ff2 = Mat<S>(dff, cfg.d);
        lg.b_ff1.assign(size_t(dff), S(0));
        lg.b_ff2.assign(size_t(cfg.d), S(0));
    }
    lnf_gain.assign(size_t(cfg.d), S(0));
    lnf_bias.assign(size_t(cfg.d), S(0));
    w_head = Mat<S>(cfg.d, cfg.vocab);
    b_head.assign(size_t(cfg.vocab), S(0));
    prompt_table = Tensor3<S>(cfg.n_captions, cfg.prompt_len, cfg.d);
    token_embed.set_zero();
    bos_embed.set_zero();
    for (auto& lg : layers) {
        for (Mat<S>* m : {&lg.w_q, &lg.w_k, &lg.w_v, &lg.w_o, &lg.cw_q, &lg.cw_k, &lg.cw_v,
                          &lg.cw_o, &lg.w_ff1, &lg.w_ff2})
            m->set_zero();
    }
    w_head.set_zero();
    std::fill(prompt_table.data.begin(), prompt_table.data.end(), S(0));
}

template <typename S>
std::vector<param_ref<S>> base_grads<S>::collect() {
    std::vector<param_ref<S>> refs;
    auto add_mat = [&](const std::string& name, Mat<S>& m) {
        refs.push_back({name, m.data.data(), m.data.size(), {uint32_t(m.rows), uint32_t(m.cols)}});
    };
    auto add_vec = [&](const std::string& name, std::vector<S>& v) {
        refs.push_back({name, v.data(), v.size(), {uint32_t(v.size())}});
    };
    add_mat("token_embed", token_embed);
    add_mat("bos_embed", bos_embed);
    for (size_t l = 0; l < layers.size(); ++l) {
        auto& lg = layers[l];
        std::string pre = "layers." + std::to_string(l) + ".";
        add_vec(pre + "ln1.gain", lg.ln1_gain);
        add_vec(pre + "ln1.bias", lg.ln1_bias);
        add_mat(pre + "self.w_q", lg.w_q);
        add_mat(pre + "self.w_k", lg.w_k);
        add_mat(pre + "self.w_v", lg.w_v);
        add_mat(pre + "self.w_o", lg.w_o);
        add_vec(pre + "self.b_q", lg.b_q);
        add_vec(pre + "self.b_k", lg.b_k);
        add_vec(pre + "self.b_v", lg.b_v);
        add_vec(pre + "self.b_o", lg.b_o);
        add_vec(pre + "ln2.gain", lg.ln2_gain);
        add_vec(pre + "ln2.bias", lg.ln2_bias);
        add_mat(pre + "cross.w_q", lg.cw_q);
        add_mat(pre + "cross.w_k", lg.cw_k);
        add_mat(pre + "cross.w_v", lg.cw_v);
        add_mat(pre + "cross.w_o", lg.cw_o);
        add_vec(pre + "cross.b_q", lg.cb_q);
        add_vec(pre + "cross.b_k", lg.cb_k);
        add_vec(pre + "cross.b_v", lg.cb_v);
        add_vec(pre + "cross.b_o", lg.cb_o);
        add_vec(pre + "ln3.gain", lg.ln3_gain);
        add_vec(pre + "ln3.bias", lg.ln3_bias);
        add_mat(pre + "ffn.w1", lg.w_ff1);
        add_vec(pre + "ffn.b1", lg.b_ff1);
        add_mat(pre + "ffn.w2", lg.w_ff2);
        add_vec(pre + "ffn.b2", lg.b_ff2);
    }
    add_vec("ln_f.gain", lnf_gain);
    add_vec("ln_f.bias", lnf_bias);
    add_mat("head.w", w_head);
    add_vec("head.b", b_head);
    refs.push_back({"prompt_table", prompt_table.data.data(), prompt_table.data.size(),
                    {uint32_t(prompt_table.d0), uint32_t(prompt_table.d1),
                     uint32_t(prompt_table.d2)}});
    return refs;
}

template <typename S>
void decoder_backward(const base_decoder_params<S>& base, const std::vector<int>& codes,
                      int caption_id, const adapter_view<S>* adapter, const fwd_cache<S>& cache,
                      const Mat<S>& dlogits, base_grads<S>* bgrads, adapter_back<S>* aback) {
    const decoder_config& cfg = base.cfg;
    const int t = int(codes.size());
    const int lo = adapter ? cfg.n_layers - adapter->n_adapted : cfg.n_layers;
    const int stop = bgrads ? 0 : lo;
    Mat<S> prompt = prompt_rows(base, caption_id);

    // output head and final norm
    Mat<S> dh = linear_backward(cache.h, base.w_head, dlogits, bgrads ? &bgrads->w_head : nullptr,
                                bgrads ? &bgrads->b_head : nullptr);
    Mat<S> dx = layernorm_backward(dh, cache.lnf, base.ln_f,
                                   bgrads ? &bgrads->lnf_gain : nullptr,
                                   bgrads ? &bgrads->lnf_bias : nullptr);

    Mat<S> dhp(t, cfg.d); // gradient on the prefix stream entering from above
    dhp.set_zero();

    for (int l = cfg.n_layers - 1; l >= stop; --l) {
        const layer_params<S>& lp = base.layers[l];
        const layer_fwd_cache<S>& lc = cache.layers[size_t(l)];
        const bool adapted = adapter && l >= lo;
        typename base_grads<S>::layer_g* lg = bgrads ? &bgrads->layers[size_t(l)] : nullptr;

        // feed-forward
        Mat<S> dact = linear_backward(lc.ffn_act, lp.w_ff2, dx, lg ? &lg->w_ff2 : nullptr,
                                      lg ? &lg->b_ff2 : nullptr);
        Mat<S> dpre = silu_backward(lc.ffn_pre, dact);
        Mat<S> dc3 = linear_backward(lc.c3, lp.w_ff1, dpre, lg ? &lg->w_ff1 : nullptr,
                                     lg ? &lg->b_ff1 : nullptr);
        add_into(dx, layernorm_backward(dc3, lc.ln3, lp.ln3, lg ? &lg->ln3_gain : nullptr,
                                        lg ? &lg->ln3_bias : nullptr));

        // cross-attention
        Mat<S> dctx_c = linear_backward(lc.ctx_c, lp.cross_attn.w_o, dx,
                                        lg ? &lg->cw_o : nullptr, lg ? &lg->cb_o : nullptr);
        Mat<S> dqc(t, cfg.d), dkc(cfg.prompt_len, cfg.d), dvc(cfg.prompt_len, cfg.d);
        dqc.set_zero();
        dkc.set_zero();
        dvc.set_zero();
        mha_backward(lc.qc, lc.kc, lc.vc, lc.cross_probs, dctx_c, cfg.heads, dqc, dkc, dvc);
        Mat<S> db2 = linear_backward(lc.b2, lp.cross_attn.w_q, dqc, lg ? &lg->cw_q : nullptr,
                                     lg ? &lg->cb_q : nullptr);
        if (lg) {
            Mat<S> dprompt = linear_backward(prompt, lp.cross_attn.w_k, dkc, &lg->cw_k, &lg->cb_k);
            add_into(dprompt, linear_backward(prompt, lp.cross_attn.w_v, dvc, &lg->cw_v, &lg->cb_v));
            S* dst = &bgrads->prompt_table.at(caption_id, 0, 0);
            for (size_t i = 0; i < dprompt.data.size(); ++i) dst[i] += dprompt.data[i];
        }
        add_into(dx, layernorm_backward(db2, lc.ln2, lp.ln2, lg ? &lg->ln2_gain : nullptr,
                                        lg ? &lg->ln2_bias : nullptr));

        // self-attention (+ adapter hooks)
        Mat<S> dctx_total = linear_backward(lc.ctx_total, lp.self_attn.w_o, dx,
                                            lg ? &lg->w_o : nullptr, lg ? &lg->b_o : nullptr);
        Mat<S> dq(t, cfg.d), dk(t, cfg.d), dv(t, cfg.d);
        dq.set_zero();
        dk.set_zero();
        dv.set_zero();
        mha_backward(lc.q, lc.k, lc.v, lc.self_probs, dctx_total, cfg.heads, dq, dk, dv);

        if (adapted) {
            const int slot = l - lo;
            const S g = adapter->gates[slot];
            if (aback) {
                S acc = S(0);
                for (size_t i = 0; i < dctx_total.data.size(); ++i)
                    acc += dctx_total.data[i] * lc.ctx_f.data[i];
                aback->dgates[size_t(slot)] += acc;
            }

            Mat<S> dqp(t, cfg.d), dkp(t, cfg.d), dvp(t, cfg.d);
            dqp.set_zero();
            dkp.set_zero();
            dvp.set_zero();

            // fused attention contribution, scaled by the gate
            if (g != S(0)) {
                Mat<S> dctx_f(t, cfg.d);
                as_eigen(dctx_f) = g * as_eigen(dctx_total);
                Mat<S> qf = lc.q;
                add_into(qf, lc.qp);
                Mat<S> dqf(t, cfg.d);
                dqf.set_zero();
                mha_backward(qf, lc.kp, lc.vp, lc.fused_probs, dctx_f, cfg.heads, dqf, dkp, dvp);
                add_into(dq, dqf);
                add_into(dqp, dqf);
            }

            // prefix stream rolled into the next adapted layer
            if (slot + 1 < adapter->n_adapted) {
                Mat<S> dctx_p = linear_backward(lc.ctx_p, lp.self_attn.w_o, dhp,
                                                lg ? &lg->w_o : nullptr, lg ? &lg->b_o : nullptr);
                mha_backward(lc.qp, lc.kp, lc.vp, lc.prefix_probs, dctx_p, cfg.heads, dqp, dkp,
                             dvp);
            }

            Mat<S> du = linear_backward(lc.u, lp.self_attn.w_q, dqp, lg ? &lg->w_q : nullptr,
                                        lg ? &lg->b_q : nullptr);
            add_into(du, linear_backward(lc.u, lp.self_attn.w_k, dkp, lg ? &lg->w_k : nullptr,
                                         lg ? &lg->b_k : nullptr));
            add_into(du, linear_backward(lc.u, lp.self_attn.w_v, dvp, lg ? &lg->w_v : nullptr,
                                         lg ? &lg->b_v : nullptr));
            Mat<S> dhp_sum = layernorm_backward(du, lc.lnp, lp.ln1,
                                                lg ? &lg->ln1_gain : nullptr,
                                                lg ? &lg->ln1_bias : nullptr);
            if (aback) add_into(aback->dz, dhp_sum);
            dhp = std::move(dhp_sum); // becomes the prefix-input grad for layer l-1
            if (slot == 0 && aback) add_into(aback->dh_p0, dhp);
        }

        Mat<S> da = linear_backward(lc.a, lp.self_attn.w_q, dq, lg ? &lg->w_q : nullptr,
                                    lg ? &lg->b_q : nullptr);
        add_into(da, linear_backward(lc.a, lp.self_attn.w_k, dk, lg ? &lg->w_k : nullptr,
                                     lg ? &lg->b_k : nullptr));
        add_into(da, linear_backward(lc.a, lp.self_attn.w_v, dv, lg ? &lg->w_v : nullptr,
                                     lg ? &lg->b_v : nullptr));
        add_into(dx, layernorm_backward(da, lc.ln1, lp.ln1, lg ? &lg->ln1_gain : nullptr,
                                        lg ? &lg->ln1_bias : nullptr));
    }

    if (bgrads) {
        for (int i = 0; i < t; ++i) {
            const S* g = dx.row(i);
            S* dst = (i == 0) ? bgrads->bos_embed.row(0)
                              : bgrads->token_embed.row(codes[i - 1]);
            for (int j = 0; j < cfg.d; ++j) dst[j] += g[j];
        }
    }
}

template Mat<float> sinusoidal_pe(int, int);
template Mat<double> sinusoidal_pe(int, int);
template base_decoder_params<float> init_base_decoder(const decoder_config&, uint64_t);
template base_decoder_params<double> init_base_decoder(const decoder_config&, uint64_t);
template std::vector<param_ref<float>> collect_params(base_decoder_params<float>&);
template std::vector<param_ref<double>> collect_params(base_decoder_params<double>&);
template Mat<float> decoder_forward(const base_decoder_params<float>&, const std::vector<int>&,
                                    int, const adapter_view<float>*, fwd_cache<float>*);
template Mat<double> decoder_forward(const base_decoder_params<double>&, const std::vector<int>&,
                                     int, const adapter_view<double>*, fwd_cache<double>*);
template Mat<float> base_forward(const base_decoder_params<float>&, const token_sequence&, int);
template Mat<double> base_forward(const base_decoder_params<double>&, const token_sequence&, int);
template struct base_grads<float>;
template struct base_grads<double>;
template void decoder_backward(const base_decoder_params<float>&, const std::vector<int>&, int,
                               const adapter_view<float>*, const fwd_cache<float>&,
                               const Mat<float>&, base_grads<float>*, adapter_back<float>*);
template void decoder_backward(const base_decoder_params<double>&, const std::vector<int>&, int,
                               const adapter_view<double>*, const fwd_cache<double>&,
                               const Mat<double>&, base_grads<double>*, adapter_back<double>*);

} // namespace expotion
