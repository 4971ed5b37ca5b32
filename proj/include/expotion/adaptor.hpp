#ifndef EXPOTION_ADAPTOR_HPP
#define EXPOTION_ADAPTOR_HPP

#include "expotion/decoder.hpp"
#include "expotion/encoder.hpp"

namespace expotion {

// Everything that trains: the prefix inputs, the per-layer gates, and the
// encoder projections/fusion they feed. The base decoder stays frozen.
template <typename S>
struct adapter_params {
    Mat<S> h_p0;          // t_max x d
    std::vector<S> gates; // one per adapted layer, zero-initialized
    encoder_params<S> enc;

    adapter_view<S> view(const Mat<S>& z, int t_max_check = 0) const {
        (void)t_max_check;
        adapter_view<S> v;
        v.h_p0 = &h_p0;
        v.gates = gates.data();
        v.n_adapted = int(gates.size());
        v.z = &z;
        return v;
    }
};

template <typename S>
adapter_params<S> init_adapter(const decoder_config& cfg, int n_adapted, int face_dim,
                               int motion_dim, int d1, int d2, uint64_t seed);

template <typename S>
std::vector<param_ref<S>> collect_params(adapter_params<S>& p);

// Gradient buffers matching the adapter registry.
template <typename S>
struct adapter_grads {
    Mat<S> h_p0;
    std::vector<S> gates;
    encoder_grads<S> enc;

    explicit adapter_grads(const adapter_params<S>& p)
        : h_p0(p.h_p0.rows, p.h_p0.cols), gates(p.gates.size(), S(0)), enc(p.enc) {
        h_p0.set_zero();
        enc.w_f.set_zero();
        enc.w_m.set_zero();
        enc.w_e.set_zero();
        enc.z_pos.set_zero();
    }
    void set_zero() {
        h_p0.set_zero();
        std::fill(gates.begin(), gates.end(), S(0));
        enc.w_f.set_zero();
        enc.w_m.set_zero();
        enc.w_e.set_zero();
        enc.z_pos.set_zero();
    }
    std::vector<param_ref<S>> collect();
    void scale(S factor);
};

// --- Standalone pieces of the adapted layer, for direct verification --------

// One prefix-stream update: add the conditioning, run the layer's frozen
// norm + QKV + unmasked self-attention over prefix positions only.
template <typename S>
Mat<S> prefix_step(const Mat<S>& h_p, const Mat<S>& z, const layer_params<S>& layer, int heads);

// Attention of summed token+prefix queries over prefix keys/values, unmasked.
template <typename S>
Mat<S> fused_attention(const Mat<S>& q, const Mat<S>& q_p, const Mat<S>& k_p, const Mat<S>& v_p,
                       int heads);

template <typename S>
Mat<S> gated_combine(const Mat<S>& s, const Mat<S>& s_prime, S gate);

// Full conditioned forward: base layers below, prefix-adapted layers on top.
template <typename S>
Mat<S> adapted_forward(const token_sequence& tokens, int caption_id, const joint_embedding<S>& z,
                       const base_decoder_params<S>& base, const adapter_params<S>& adapter);

// Teacher-forced loss gradient for one clip, pushed through the adapted
// layers and the encoder. Accumulates into grads.
template <typename S>
void adapted_backward(const std::vector<int>& codes, int caption_id,
                      const base_decoder_params<S>& base, const adapter_params<S>& adapter,
                      const joint_embedding<S>& z, const encode_cache<S>& enc_cache,
                      modality_mode mode, const fwd_cache<S>& cache, const Mat<S>& dlogits,
                      adapter_grads<S>& grads);

} // namespace expotion

#endif
