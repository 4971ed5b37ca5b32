#ifndef EXPOTION_ENCODER_HPP
#define EXPOTION_ENCODER_HPP

#include <vector>

#include "expotion/alignment.hpp"
#include "expotion/mat.hpp"
#include "expotion/rng.hpp"

namespace expotion {

// Trainable D x d' compression of extractor features.
template <typename S>
struct low_rank_projection {
    Mat<S> w;
};

template <typename S>
struct conv_layer {
    int in_ch = 0;
    int out_ch = 0;
    std::vector<S> w; // [out][in][ky][kx], 3x3 kernels
    std::vector<S> b; // [out]
};

template <typename S>
struct flow_embedder {
    std::vector<conv_layer<S>> layers;
    int output_dim = 256;
};

template <typename S>
struct fusion_params {
    Mat<S> w_e;   // (d1+d2) x d
    Mat<S> z_pos; // t_max x (d1+d2), learnable positional table
};

template <typename S>
struct joint_embedding {
    Mat<S> z; // T x d at the code rate
};

template <typename S>
struct encoder_params {
    low_rank_projection<S> w_f; // face_dim x d1
    low_rank_projection<S> w_m; // motion_dim x d2
    fusion_params<S> fusion;
};

enum class modality_mode { face_only, motion_only, face_and_motion };

// Intermediates kept for the training backward pass.
template <typename S>
struct encode_cache {
    Mat<S> face_s;   // smoothed face features, T x face_dim (empty in motion_only)
    Mat<S> motion_s; // smoothed motion features, T x motion_dim (empty in face_only)
    Mat<S> cat_pos;  // [z'_f ; z'_m] + z_pos rows, T x (d1+d2)
};

template <typename S>
Mat<S> project(const feature_sequence<S>& seq, const low_rank_projection<S>& proj);

template <typename S>
std::vector<S> embed_flow(const Tensor3<S>& field, const flow_embedder<S>& fe);

template <typename S>
feature_sequence<S> embed_flow_sequence(const std::vector<Tensor3<S>>& fields,
                                        const flow_embedder<S>& fe, double rate_hz);

template <typename S>
joint_embedding<S> fuse(const Mat<S>& face_proj, const Mat<S>& motion_proj,
                        const fusion_params<S>& params);

// Projection + fusion on features already interpolated to the code rate.
// Missing-modality blocks are zero by convention.
template <typename S>
joint_embedding<S> encode_from_smoothed(const Mat<S>& face_s, const Mat<S>& motion_s,
                                        modality_mode mode, const encoder_params<S>& params,
                                        encode_cache<S>* cache = nullptr);

template <typename S>
joint_embedding<S> encode_clip(const feature_sequence<S>& face_raw,
                               const feature_sequence<S>& motion_raw, modality_mode mode,
                               const encoder_params<S>& params, double code_rate_hz,
                               encode_cache<S>* cache = nullptr);

template <typename S>
struct encoder_grads {
    Mat<S> w_f, w_m, w_e, z_pos;
    explicit encoder_grads(const encoder_params<S>& p)
        : w_f(p.w_f.w.rows, p.w_f.w.cols),
          w_m(p.w_m.w.rows, p.w_m.w.cols),
          w_e(p.fusion.w_e.rows, p.fusion.w_e.cols),
          z_pos(p.fusion.z_pos.rows, p.fusion.z_pos.cols) {}
};

// Accumulates parameter gradients given dL/dZ for one clip.
template <typename S>
void encode_backward(const encode_cache<S>& cache, modality_mode mode,
                     const encoder_params<S>& params, const Mat<S>& dz, encoder_grads<S>& grads);

template <typename S>
flow_embedder<S> make_flow_embedder(uint64_t seed);

template <typename S>
encoder_params<S> init_encoder_params(int face_dim, int motion_dim, int d1, int d2, int d,
                                      int t_max, uint64_t seed);

} // namespace expotion

#endif
