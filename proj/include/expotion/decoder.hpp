#ifndef EXPOTION_DECODER_HPP
#define EXPOTION_DECODER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "expotion/linalg.hpp"
#include "expotion/mat.hpp"
#include "expotion/params.hpp"
#include "expotion/tokens.hpp"

namespace expotion {

struct decoder_config {
    int n_layers = 8;
    int d = 256;
    int heads = 4;
    int vocab = 256;
    int prompt_len = 8;
    int n_captions = 4;
    int ffn_mult = 4;
    int t_max = 512;
    double code_rate_hz = 50.0;

    void validate() const {
        if (n_layers < 1 || d < 1 || heads < 1 || vocab < 2 || prompt_len < 1 ||
            n_captions < 1 || ffn_mult < 1 || t_max < 1)
            throw validation_error("decoder_config: bad dimensions");
        if (d % heads != 0) throw validation_error("decoder_config: d not divisible by heads");
    }
};

template <typename S>
struct attn_weights {
    Mat<S> w_q, w_k, w_v, w_o; // each d x d
    std::vector<S> b_q, b_k, b_v, b_o;
};

template <typename S>
struct layer_params {
    LayerNormParams<S> ln1, ln2, ln3;
    attn_weights<S> self_attn;
    attn_weights<S> cross_attn;
    Mat<S> w_ff1, w_ff2;
    std::vector<S> b_ff1, b_ff2;
};

template <typename S>
struct base_decoder_params {
    decoder_config cfg;
    Mat<S> token_embed; // vocab x d
    Mat<S> bos_embed;   // 1 x d
    std::vector<layer_params<S>> layers;
    LayerNormParams<S> ln_f;
    Mat<S> w_head; // d x vocab
    std::vector<S> b_head;
    Tensor3<S> prompt_table; // n_captions x prompt_len x d, the frozen text stand-in
};

template <typename S>
base_decoder_params<S> init_base_decoder(const decoder_config& cfg, uint64_t seed);

template <typename S>
std::vector<param_ref<S>> collect_params(base_decoder_params<S>& p);

// Fixed sinusoidal position table; not a parameter.
template <typename S>
Mat<S> sinusoidal_pe(int t, int d);

// --- Adapter hook -----------------------------------------------------------
//
// The forward engine only needs the prefix inputs, the gates and the joint
// embedding; the owning adapter type lives in adaptor.hpp.
template <typename S>
struct adapter_view {
    const Mat<S>* h_p0 = nullptr; // t_max x d, sliced to the clip length
    const S* gates = nullptr;     // one per adapted layer, shallowest first
    int n_adapted = 0;
    const Mat<S>* z = nullptr;    // T x d joint embedding
};

// --- Forward caches ---------------------------------------------------------

template <typename S>
struct layer_fwd_cache {
    Mat<S> x_in;
    LnCache<S> ln1;
    Mat<S> a; // ln1 output
    Mat<S> q, k, v;
    AttnCache<S> self_probs;
    Mat<S> ctx;
    // prefix stream (adapted layers only)
    LnCache<S> lnp;
    Mat<S> u;
    Mat<S> qp, kp, vp;
    AttnCache<S> prefix_probs;
    Mat<S> ctx_p;
    AttnCache<S> fused_probs;
    Mat<S> ctx_f;
    Mat<S> ctx_total;
    // cross attention + ffn
    Mat<S> after_attn;
    LnCache<S> ln2;
    Mat<S> b2, qc, kc, vc;
    AttnCache<S> cross_probs;
    Mat<S> ctx_c;
    Mat<S> after_cross;
    LnCache<S> ln3;
    Mat<S> c3, ffn_pre, ffn_act;
};

template <typename S>
struct fwd_cache {
    Mat<S> x0;
    std::vector<layer_fwd_cache<S>> layers;
    Mat<S> x_final;
    LnCache<S> lnf;
    Mat<S> h;
};

// Teacher-forced forward. Input row 0 is the start embedding, row t is the
// embedding of codes[t-1]; logits[t] scores codes[t]. Passing an adapter view
// runs the condition prefix through the last n_adapted layers.
template <typename S>
Mat<S> decoder_forward(const base_decoder_params<S>& base, const std::vector<int>& codes,
                       int caption_id, const adapter_view<S>* adapter, fwd_cache<S>* cache);

template <typename S>
Mat<S> base_forward(const base_decoder_params<S>& base, const token_sequence& tokens,
                    int caption_id);

// --- Backward ---------------------------------------------------------------

template <typename S>
struct base_grads {
    Mat<S> token_embed, bos_embed;
    struct layer_g {
        std::vector<S> ln1_gain, ln1_bias, ln2_gain, ln2_bias, ln3_gain, ln3_bias;
        Mat<S> w_q, w_k, w_v, w_o, cw_q, cw_k, cw_v, cw_o;
        std::vector<S> b_q, b_k, b_v, b_o, cb_q, cb_k, cb_v, cb_o;
        Mat<S> w_ff1, w_ff2;
        std::vector<S> b_ff1, b_ff2;
    };
    std::vector<layer_g> layers;
    std::vector<S> lnf_gain, lnf_bias;
    Mat<S> w_head;
    std::vector<S> b_head;
    Tensor3<S> prompt_table;

    explicit base_grads(const base_decoder_params<S>& p);
    std::vector<param_ref<S>> collect();
};

// Gradients flowing to the adapter side of the engine.
template <typename S>
struct adapter_back {
    Mat<S> dh_p0;         // T x d (rows of H_p0 used by this clip)
    std::vector<S> dgates;
    Mat<S> dz;            // T x d, to be pushed through the encoder
};

// Backprop from dlogits. With bgrads set, runs full depth and accumulates all
// base parameter gradients (pretraining). With aback set, walks only the
// adapted layers and fills the adapter-side gradients.
template <typename S>
void decoder_backward(const base_decoder_params<S>& base, const std::vector<int>& codes,
                      int caption_id, const adapter_view<S>* adapter, const fwd_cache<S>& cache,
                      const Mat<S>& dlogits, base_grads<S>* bgrads, adapter_back<S>* aback);

// --- Generation -------------------------------------------------------------

// Batched autoregressive sampling with per-layer KV caches. One output per
// seed; temperature 0 is argmax. All sequences share the caption (and the
// adapter conditioning when given).
template <typename S>
std::vector<token_sequence> sample_batch(const base_decoder_params<S>& base, int caption_id,
                                         int length, double temperature,
                                         const std::vector<uint64_t>& seeds,
                                         const adapter_view<S>* adapter);

template <typename S>
token_sequence sample(const base_decoder_params<S>& base, int caption_id, int length,
                      double temperature, uint64_t seed, const adapter_view<S>* adapter = nullptr);

} // namespace expotion

#endif
