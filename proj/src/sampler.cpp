#include <cmath>

#include "expotion/decoder.hpp"
#include "expotion/rng.hpp"

namespace expotion {

namespace {

// Single-query attention over n cached rows starting at kmat row row0.
template <typename S>
void attend_one(const S* q, const Mat<S>& kmat, const Mat<S>& vmat, int row0, int n, int heads,
                S* out, std::vector<S>& scores) {
    const int d = kmat.cols;
    const int dh = d / heads;
    const S scale = S(1) / std::sqrt(S(dh));
    scores.resize(size_t(n));
    for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        S mx = -std::numeric_limits<S>::infinity();
        for (int j = 0; j < n; ++j) {
            const S* kr = kmat.row(row0 + j) + off;
            S s = S(0);
            for (int c = 0; c < dh; ++c) s += q[off + c] * kr[c];
            s *= scale;
            scores[size_t(j)] = s;
            if (s > mx) mx = s;
        }
        S sum = S(0);
        for (int j = 0; j < n; ++j) {
            S e = std::exp(scores[size_t(j)] - mx);
            scores[size_t(j)] = e;
            sum += e;
        }
        const S inv = S(1) / sum;
        for (int c = 0; c < dh; ++c) out[off + c] = S(0);
        for (int j = 0; j < n; ++j) {
            const S w = scores[size_t(j)] * inv;
            const S* vr = vmat.row(row0 + j) + off;
            for (int c = 0; c < dh; ++c) out[off + c] += w * vr[c];
        }
    }
}

template <typename S>
int sample_row(const S* logits, int vocab, double temperature, Rng& rng) {
    if (temperature == 0.0) {
        int best = 0;
        for (int i = 1; i < vocab; ++i)
            if (logits[i] > logits[best]) best = i;
        return best;
    }
    std::vector<double> p(static_cast<size_t>(vocab));
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < vocab; ++i) {
        p[size_t(i)] = double(logits[i]) / temperature;
        if (p[size_t(i)] > mx) mx = p[size_t(i)];
    }
    double sum = 0.0;
    for (int i = 0; i < vocab; ++i) {
        p[size_t(i)] = std::exp(p[size_t(i)] - mx);
        sum += p[size_t(i)];
    }
    double u = rng.uniform() * sum;
    double acc = 0.0;
    for (int i = 0; i < vocab; ++i) {
        acc += p[size_t(i)];
        if (u < acc) return i;
    }
    return vocab - 1;
}

} // namespace

template <typename S>
std::vector<token_sequence> sample_batch(const base_decoder_params<S>& base, int caption_id,
                                         int length, double temperature,
                                         const std::vector<uint64_t>& seeds,
                                         const adapter_view<S>* adapter) {
    const decoder_config& cfg = base.cfg;
    if (length < 1) throw input_error("sample: length must be >= 1");
    if (temperature < 0.0) throw input_error("sample: temperature must be >= 0");
    if (caption_id < 0 || caption_id >= cfg.n_captions)
        throw input_error("sample: unknown caption_id " + std::to_string(caption_id));
    const int b_n = int(seeds.size());
    if (b_n < 1) throw input_error("sample: no seeds");
    const int n_layers = cfg.n_layers, d = cfg.d;
    const int lo = adapter ? n_layers - adapter->n_adapted : n_layers;
    if (adapter) {
        if (adapter->z->rows != length)
            throw conditioning_error("sample: conditioning length " +
                                     std::to_string(adapter->z->rows) + " vs requested " +
                                     std::to_string(length));
        if (adapter->h_p0->rows < length)
            throw conditioning_error("sample: prefix table shorter than requested length");
    }

    Mat<S> pe = sinusoidal_pe<S>(length, d);

    // prompt keys/values per layer
    Mat<S> prompt(cfg.prompt_len, d);
    std::copy(&base.prompt_table.at(caption_id, 0, 0),
              &base.prompt_table.at(caption_id, 0, 0) + size_t(cfg.prompt_len) * d,
              prompt.data.data());
    std::vector<Mat<S>> kc(static_cast<size_t>(n_layers)), vc(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        kc[size_t(l)] = linear(prompt, base.layers[size_t(l)].cross_attn.w_k,
                               base.layers[size_t(l)].cross_attn.b_k);
        vc[size_t(l)] = linear(prompt, base.layers[size_t(l)].cross_attn.w_v,
                               base.layers[size_t(l)].cross_attn.b_v);
    }

    // prefix queries/keys/values, shared across the batch (conditioning is per clip)
    std::vector<Mat<S>> qp, kp, vp;
    if (adapter) {
        Mat<S> hp(length, d);
        for (int i = 0; i < length; ++i)
            std::copy(adapter->h_p0->row(i), adapter->h_p0->row(i) + d, hp.row(i));
        for (int slot = 0; slot < adapter->n_adapted; ++slot) {
            const layer_params<S>& lp = base.layers[size_t(lo + slot)];
            Mat<S> hp_sum = hp;
            as_eigen(hp_sum) += as_eigen(*adapter->z);
            Mat<S> u = layernorm(hp_sum, lp.ln1, static_cast<LnCache<S>*>(nullptr));
            qp.push_back(linear(u, lp.self_attn.w_q, lp.self_attn.b_q));
            kp.push_back(linear(u, lp.self_attn.w_k, lp.self_attn.b_k));
            vp.push_back(linear(u, lp.self_attn.w_v, lp.self_attn.b_v));
            if (slot + 1 < adapter->n_adapted) {
                Mat<S> ctx_p = mha_forward(qp.back(), kp.back(), vp.back(), cfg.heads, false,
                                           static_cast<AttnCache<S>*>(nullptr));
                hp = linear(ctx_p, lp.self_attn.w_o, lp.self_attn.b_o);
            }
        }
    }

    std::vector<Mat<S>> k_cache(static_cast<size_t>(n_layers)), v_cache(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        k_cache[size_t(l)] = Mat<S>(b_n * length, d);
        v_cache[size_t(l)] = Mat<S>(b_n * length, d);
    }

    std::vector<Rng> rngs;
    for (uint64_t s : seeds) rngs.emplace_back(s);
    std::vector<std::vector<int>> out_codes(static_cast<size_t>(b_n));

    Mat<S> x(b_n, d);
    std::vector<S> scores;
    std::vector<S> ctx_one(static_cast<size_t>(d));
    for (int step = 0; step < length; ++step) {
        for (int b = 0; b < b_n; ++b) {
            const S* e = (step == 0) ? base.bos_embed.row(0)
                                     : base.token_embed.row(out_codes[size_t(b)].back());
            const S* pr = pe.row(step);
            S* o = x.row(b);
            for (int j = 0; j < d; ++j) o[j] = e[j] + pr[j];
        }
        for (int l = 0; l < n_layers; ++l) {
            const layer_params<S>& lp = base.layers[size_t(l)];
            const bool adapted = adapter && l >= lo;
            Mat<S> a = layernorm(x, lp.ln1, static_cast<LnCache<S>*>(nullptr));
            Mat<S> q = linear(a, lp.self_attn.w_q, lp.self_attn.b_q);
            Mat<S> k = linear(a, lp.self_attn.w_k, lp.self_attn.b_k);
            Mat<S> v = linear(a, lp.self_attn.w_v, lp.self_attn.b_v);
            for (int b = 0; b < b_n; ++b) {
                std::copy(k.row(b), k.row(b) + d, k_cache[size_t(l)].row(b * length + step));
                std::copy(v.row(b), v.row(b) + d, v_cache[size_t(l)].row(b * length + step));
            }
            Mat<S> ctx_total(b_n, d);
            for (int b = 0; b < b_n; ++b) {
                attend_one(q.row(b), k_cache[size_t(l)], v_cache[size_t(l)], b * length, step + 1,
                           cfg.heads, ctx_total.row(b), scores);
            }
            if (adapted) {
                const int slot = l - lo;
                const S g = adapter->gates[slot];
                if (g != S(0)) {
                    std::vector<S> qf(static_cast<size_t>(d));
                    for (int b = 0; b < b_n; ++b) {
                        const S* qb = q.row(b);
                        const S* qpr = qp[size_t(slot)].row(step);
                        for (int j = 0; j < d; ++j) qf[size_t(j)] = qb[j] + qpr[j];
                        attend_one(qf.data(), kp[size_t(slot)], vp[size_t(slot)], 0, length,
                                   cfg.heads, ctx_one.data(), scores);
                        S* o = ctx_total.row(b);
                        for (int j = 0; j < d; ++j) o[j] += g * ctx_one[size_t(j)];
                    }
                }
            }
            Mat<S> attn_out = linear(ctx_total, lp.self_attn.w_o, lp.self_attn.b_o);
            add_into(x, attn_out);

            Mat<S> b2 = layernorm(x, lp.ln2, static_cast<LnCache<S>*>(nullptr));
            Mat<S> qc = linear(b2, lp.cross_attn.w_q, lp.cross_attn.b_q);
            Mat<S> ctx_c = mha_forward(qc, kc[size_t(l)], vc[size_t(l)], cfg.heads, false,
                                       static_cast<AttnCache<S>*>(nullptr));
            Mat<S> cross_out = linear(ctx_c, lp.cross_attn.w_o, lp.cross_attn.b_o);
            add_into(x, cross_out);

            Mat<S> c3 = layernorm(x, lp.ln3, static_cast<LnCache<S>*>(nullptr));
            Mat<S> act = silu(linear(c3, lp.w_ff1, lp.b_ff1));
            Mat<S> ffn_out = linear(act, lp.w_ff2, lp.b_ff2);
            add_into(x, ffn_out);
        }
        Mat<S> h = layernorm(x, base.ln_f, static_cast<LnCache<S>*>(nullptr));
        Mat<S> logits = linear(h, base.w_head, base.b_head);
        for (int b = 0; b < b_n; ++b)
            out_codes[size_t(b)].push_back(
                sample_row(logits.row(b), cfg.vocab, temperature, rngs[size_t(b)]));
    }

    std::vector<token_sequence> out(static_cast<size_t>(b_n));
    for (int b = 0; b < b_n; ++b) {
        out[size_t(b)].codes = std::move(out_codes[size_t(b)]);
        out[size_t(b)].rate_hz = cfg.code_rate_hz;
    }
    return out;
}

template <typename S>
token_sequence sample(const base_decoder_params<S>& base, int caption_id, int length,
                      double temperature, uint64_t seed, const adapter_view<S>* adapter) {
    return sample_batch(base, caption_id, length, temperature, std::vector<uint64_t>{seed},
                        adapter)[0];
}

template std::vector<token_sequence> sample_batch(const base_decoder_params<float>&, int, int,
                                                  double, const std::vector<uint64_t>&,
                                                  const adapter_view<float>*);
template std::vector<token_sequence> sample_batch(const base_decoder_params<double>&, int, int,
                                                  double, const std::vector<uint64_t>&,
                                                  const adapter_view<double>*);
template token_sequence sample(const base_decoder_params<float>&, int, int, double, uint64_t,
                               const adapter_view<float>*);
template token_sequence sample(const base_decoder_params<double>&, int, int, double, uint64_t,
                               const adapter_view<double>*);

} // namespace expotion
