#include "expotion/adaptor.hpp"

namespace expotion {

template <typename S>
adapter_params<S> init_adapter(const decoder_config& cfg, int n_adapted, int face_dim,
                               int motion_dim, int d1, int d2, uint64_t seed) {
    if (n_adapted < 1 || n_adapted > cfg.n_layers)
        throw validation_error("init_adapter: adapted layer count out of range");
    adapter_params<S> p;
    // sinusoidal start keeps prefix keys in the positional subspace the frozen
    // attention was pretrained on
    p.h_p0 = sinusoidal_pe<S>(cfg.t_max, cfg.d);
    p.gates.assign(size_t(n_adapted), S(0));
    p.enc = init_encoder_params<S>(face_dim, motion_dim, d1, d2, cfg.d, cfg.t_max,
                                   mix_seed(seed, 1));
    return p;
}

template <typename S>
std::vector<param_ref<S>> collect_params(adapter_params<S>& p) {
    std::vector<param_ref<S>> refs;
    auto add_mat = [&](const std::string& name, Mat<S>& m) {
        refs.push_back({name, m.data.data(), m.data.size(), {uint32_t(m.rows), uint32_t(m.cols)}});
    };
    add_mat("h_p0", p.h_p0);
    refs.push_back({"gates", p.gates.data(), p.gates.size(), {uint32_t(p.gates.size())}});
    add_mat("w_f", p.enc.w_f.w);
    add_mat("w_m", p.enc.w_m.w);
    add_mat("w_e", p.enc.fusion.w_e);
    add_mat("z_pos", p.enc.fusion.z_pos);
    return refs;
}

template <typename S>
std::vector<param_ref<S>> adapter_grads<S>::collect() {
    std::vector<param_ref<S>> refs;
    auto add_mat = [&](const std::string& name, Mat<S>& m) {
        refs.push_back({name, m.data.data(), m.data.size(), {uint32_t(m.rows), uint32_t(m.cols)}});
    };
    add_mat("h_p0", h_p0);
    refs.push_back({"gates", gates.data(), gates.size(), {uint32_t(gates.size())}});
    add_mat("w_f", enc.w_f);
    add_mat("w_m", enc.w_m);
    add_mat("w_e", enc.w_e);
    add_mat("z_pos", enc.z_pos);
    return refs;
}

template <typename S>
void adapter_grads<S>::scale(S factor) {
    for (auto& r : collect())
        for (size_t i = 0; i < r.n; ++i) r.data[i] *= factor;
}

template <typename S>
Mat<S> prefix_step(const Mat<S>& h_p, const Mat<S>& z, const layer_params<S>& layer, int heads) {
    check_same_shape(h_p, z, "prefix_step");
    Mat<S> sum = h_p;
    add_into(sum, z);
    Mat<S> u = layernorm(sum, layer.ln1, static_cast<LnCache<S>*>(nullptr));
    Mat<S> qp = linear(u, layer.self_attn.w_q, layer.self_attn.b_q);
    Mat<S> kp = linear(u, layer.self_attn.w_k, layer.self_attn.b_k);
    Mat<S> vp = linear(u, layer.self_attn.w_v, layer.self_attn.b_v);
    Mat<S> ctx = mha_forward(qp, kp, vp, heads, false, static_cast<AttnCache<S>*>(nullptr));
    return linear(ctx, layer.self_attn.w_o, layer.self_attn.b_o);
}

template <typename S>
Mat<S> fused_attention(const Mat<S>& q, const Mat<S>& q_p, const Mat<S>& k_p, const Mat<S>& v_p,
                       int heads) {
    check_same_shape(q, q_p, "fused_attention");
    Mat<S> qf = q;
    add_into(qf, q_p);
    return mha_forward(qf, k_p, v_p, heads, false, static_cast<AttnCache<S>*>(nullptr));
}

template <typename S>
Mat<S> gated_combine(const Mat<S>& s, const Mat<S>& s_prime, S gate) {
    check_same_shape(s, s_prime, "gated_combine");
    if (gate == S(0)) return s;
    Mat<S> out = s;
    as_eigen(out) += gate * as_eigen(s_prime);
    return out;
}

template <typename S>
Mat<S> adapted_forward(const token_sequence& tokens, int caption_id, const joint_embedding<S>& z,
                       const base_decoder_params<S>& base, const adapter_params<S>& adapter) {
    tokens.validate(base.cfg.vocab);
    adapter_view<S> v = adapter.view(z.z);
    return decoder_forward<S>(base, tokens.codes, caption_id, &v, nullptr);
}

template <typename S>
void adapted_backward(const std::vector<int>& codes, int caption_id,
                      const base_decoder_params<S>& base, const adapter_params<S>& adapter,
                      const joint_embedding<S>& z, const encode_cache<S>& enc_cache,
                      modality_mode mode, const fwd_cache<S>& cache, const Mat<S>& dlogits,
                      adapter_grads<S>& grads) {
    const int t = int(codes.size());
    adapter_back<S> back;
    back.dh_p0 = Mat<S>(t, base.cfg.d);
    back.dh_p0.set_zero();
    back.dgates.assign(adapter.gates.size(), S(0));
    back.dz = Mat<S>(t, base.cfg.d);
    back.dz.set_zero();

    adapter_view<S> v = adapter.view(z.z);
    decoder_backward<S>(base, codes, caption_id, &v, cache, dlogits, nullptr, &back);

    for (int i = 0; i < t; ++i) {
        const S* src = back.dh_p0.row(i);
        S* dst = grads.h_p0.row(i);
        for (int j = 0; j < base.cfg.d; ++j) dst[j] += src[j];
    }
    for (size_t i = 0; i < back.dgates.size(); ++i) grads.gates[i] += back.dgates[i];
    encode_backward(enc_cache, mode, adapter.enc, back.dz, grads.enc);
}

template adapter_params<float> init_adapter(const decoder_config&, int, int, int, int, int,
                                            uint64_t);
template adapter_params<double> init_adapter(const decoder_config&, int, int, int, int, int,
                                             uint64_t);
template std::vector<param_ref<float>> collect_params(adapter_params<float>&);
template std::vector<param_ref<double>> collect_params(adapter_params<double>&);
template struct adapter_grads<float>;
template struct adapter_grads<double>;
template Mat<float> prefix_step(const Mat<float>&, const Mat<float>&, const layer_params<float>&,
                                int);
template Mat<double> prefix_step(const Mat<double>&, const Mat<double>&,
                                 const layer_params<double>&, int);
template Mat<float> fused_attention(const Mat<float>&, const Mat<float>&, const Mat<float>&,
                                    const Mat<float>&, int);
template Mat<double> fused_attention(const Mat<double>&, const Mat<double>&, const Mat<double>&,
                                     const Mat<double>&, int);
template Mat<float> gated_combine(const Mat<float>&, const Mat<float>&, float);
template Mat<double> gated_combine(const Mat<double>&, const Mat<double>&, double);
template Mat<float> adapted_forward(const token_sequence&, int, const joint_embedding<float>&,
                                    const base_decoder_params<float>&,
                                    const adapter_params<float>&);
template Mat<double> adapted_forward(const token_sequence&, int, const joint_embedding<double>&,
                                     const base_decoder_params<double>&,
                                     const adapter_params<double>&);
template void adapted_backward(const std::vector<int>&, int, const base_decoder_params<float>&,
                               const adapter_params<float>&, const joint_embedding<float>&,
                               const encode_cache<float>&, modality_mode, const fwd_cache<float>&,
                               const Mat<float>&, adapter_grads<float>&);
template void adapted_backward(const std::vector<int>&, int, const base_decoder_params<double>&,
                               const adapter_params<double>&, const joint_embedding<double>&,
                               const encode_cache<double>&, modality_mode,
                               const fwd_cache<double>&, const Mat<double>&,
                               adapter_grads<double>&);

} // namespace expotion
