#include "expotion/encoder.hpp"

#include <string>

#include "expotion/linalg.hpp"

namespace expotion {

template <typename S>
Mat<S> project(const feature_sequence<S>& seq, const low_rank_projection<S>& proj) {
    if (seq.dim() != proj.w.rows)
        throw shape_error("project: sequence dim " + std::to_string(seq.dim()) +
                          " vs projection rows " + std::to_string(proj.w.rows));
    return matmul(seq.frames, proj.w);
}

namespace {

template <typename S>
Tensor3<S> conv3x3_relu(const Tensor3<S>& in, const conv_layer<S>& layer) {
    const int h = in.d0, w = in.d1, ic = in.d2, oc = layer.out_ch;
    if (ic != layer.in_ch) throw shape_error("conv3x3: channel mismatch");
    Tensor3<S> out(h, w, oc);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int o = 0; o < oc; ++o) {
                S acc = layer.b[o];
                for (int ky = 0; ky < 3; ++ky) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int sx = x + kx - 1;
                        if (sx < 0 || sx >= w) continue;
                        const S* px = &in.at(sy, sx, 0);
                        const S* kw = &layer.w[size_t(((o * ic) * 3 + ky) * 3 + kx)];
                        for (int c = 0; c < ic; ++c) acc += kw[size_t(c * 9)] * px[c];
                    }
                }
                out.at(y, x, o) = acc > S(0) ? acc : S(0);
            }
        }
    }
    return out;
}

} // namespace

template <typename S>
std::vector<S> embed_flow(const Tensor3<S>& field, const flow_embedder<S>& fe) {
    if (field.d0 < 3 || field.d1 < 3)
        throw shape_error("embed_flow: field must be at least 3x3, got " +
                          std::to_string(field.d0) + "x" + std::to_string(field.d1));
    if (field.d2 != fe.layers.front().in_ch)
        throw shape_error("embed_flow: expected " + std::to_string(fe.layers.front().in_ch) +
                          " channels");
    Tensor3<S> cur = field;
    for (const auto& layer : fe.layers) cur = conv3x3_relu(cur, layer);
    std::vector<S> out(size_t(fe.output_dim), S(0));
    const S inv = S(1) / S(cur.d0 * cur.d1);
    for (int y = 0; y < cur.d0; ++y)
        for (int x = 0; x < cur.d1; ++x)
            for (int c = 0; c < cur.d2; ++c) out[size_t(c)] += cur.at(y, x, c) * inv;
    return out;
}

template <typename S>
feature_sequence<S> embed_flow_sequence(const std::vector<Tensor3<S>>& fields,
                                        const flow_embedder<S>& fe, double rate_hz) {
    if (fields.empty()) throw validation_error("embed_flow_sequence: no fields");
    feature_sequence<S> out;
    out.rate_hz = rate_hz;
    out.tag = source_tag::flow;
    out.frames = Mat<S>(int(fields.size()), fe.output_dim);
    for (size_t i = 0; i < fields.size(); ++i) {
        auto v = embed_flow(fields[i], fe);
        std::copy(v.begin(), v.end(), out.frames.row(int(i)));
    }
    return out;
}

template <typename S>
joint_embedding<S> fuse(const Mat<S>& face_proj, const Mat<S>& motion_proj,
                        const fusion_params<S>& params) {
    if (face_proj.rows != motion_proj.rows)
        throw fusion_error("fuse: face frames " + std::to_string(face_proj.rows) +
                           " vs motion frames " + std::to_string(motion_proj.rows));
    const int t = face_proj.rows;
    const int d1 = face_proj.cols, d2 = motion_proj.cols;
    if (d1 + d2 != params.w_e.rows)
        throw fusion_error("fuse: concat width " + std::to_string(d1 + d2) + " vs w_e rows " +
                           std::to_string(params.w_e.rows));
    if (t > params.z_pos.rows)
        throw fusion_error("fuse: " + std::to_string(t) + " frames exceeds positional table " +
                           std::to_string(params.z_pos.rows));
    Mat<S> cat(t, d1 + d2);
    for (int i = 0; i < t; ++i) {
        S* o = cat.row(i);
        const S* f = face_proj.row(i);
        const S* m = motion_proj.row(i);
        const S* p = params.z_pos.row(i);
        for (int j = 0; j < d1; ++j) o[j] = f[j] + p[j];
        for (int j = 0; j < d2; ++j) o[d1 + j] = m[j] + p[d1 + j];
    }
    joint_embedding<S> out;
    out.z = matmul(cat, params.w_e);
    return out;
}

template <typename S>
joint_embedding<S> encode_from_smoothed(const Mat<S>& face_s, const Mat<S>& motion_s,
                                        modality_mode mode, const encoder_params<S>& params,
                                        encode_cache<S>* cache) {
    const int d1 = params.w_f.w.cols, d2 = params.w_m.w.cols;
    Mat<S> face_proj, motion_proj;
    if (mode != modality_mode::motion_only) {
        if (face_s.cols != params.w_f.w.rows)
            throw shape_error("encode: face dim " + std::to_string(face_s.cols) +
                              " vs projection rows " + std::to_string(params.w_f.w.rows));
        face_proj = matmul(face_s, params.w_f.w);
    }
    if (mode != modality_mode::face_only) {
        if (motion_s.cols != params.w_m.w.rows)
            throw shape_error("encode: motion dim " + std::to_string(motion_s.cols) +
                              " vs projection rows " + std::to_string(params.w_m.w.rows));
        motion_proj = matmul(motion_s, params.w_m.w);
    }
    if (mode == modality_mode::face_only) {
        motion_proj = Mat<S>(face_proj.rows, d2);
        motion_proj.set_zero();
    }
    if (mode == modality_mode::motion_only) {
        face_proj = Mat<S>(motion_proj.rows, d1);
        face_proj.set_zero();
    }
    const int t = face_proj.rows;
    joint_embedding<S> out = fuse(face_proj, motion_proj, params.fusion);
    if (cache) {
        if (mode != modality_mode::motion_only) cache->face_s = face_s;
        if (mode != modality_mode::face_only) cache->motion_s = motion_s;
        Mat<S> cat(t, d1 + d2);
        for (int i = 0; i < t; ++i) {
            S* o = cat.row(i);
            const S* f = face_proj.row(i);
            const S* m = motion_proj.row(i);
            const S* p = params.fusion.z_pos.row(i);
            for (int j = 0; j < d1; ++j) o[j] = f[j] + p[j];
            for (int j = 0; j < d2; ++j) o[d1 + j] = m[j] + p[d1 + j];
        }
        cache->cat_pos = std::move(cat);
    }
    return out;
}

template <typename S>
joint_embedding<S> encode_clip(const feature_sequence<S>& face_raw,
                               const feature_sequence<S>& motion_raw, modality_mode mode,
                               const encoder_params<S>& params, double code_rate_hz,
                               encode_cache<S>* cache) {
    Mat<S> face_s, motion_s;
    if (mode != modality_mode::motion_only)
        face_s = smooth_interpolate(face_raw, code_rate_hz).frames;
    if (mode != modality_mode::face_only)
        motion_s = smooth_interpolate(motion_raw, code_rate_hz).frames;
    return encode_from_smoothed(face_s, motion_s, mode, params, cache);
}

template <typename S>
void encode_backward(const encode_cache<S>& cache, modality_mode mode,
                     const encoder_params<S>& params, const Mat<S>& dz, encoder_grads<S>& grads) {
    const int t = dz.rows;
    const int d1 = params.w_f.w.cols, d2 = params.w_m.w.cols;
    // Z = cat_pos * W_e
    add_matmul_tn(cache.cat_pos, dz, grads.w_e);
    Mat<S> dcat = matmul_nt(dz, params.fusion.w_e); // t x (d1+d2)
    for (int i = 0; i < t; ++i) {
        const S* src = dcat.row(i);
        S* zp = grads.z_pos.row(i);
        for (int j = 0; j < d1 + d2; ++j) zp[j] += src[j];
    }
    if (mode != modality_mode::motion_only) {
        Mat<S> dface(t, d1);
        for (int i = 0; i < t; ++i)
            std::copy(dcat.row(i), dcat.row(i) + d1, dface.row(i));
        add_matmul_tn(cache.face_s, dface, grads.w_f);
    }
    if (mode != modality_mode::face_only) {
        Mat<S> dmotion(t, d2);
        for (int i = 0; i < t; ++i)
            std::copy(dcat.row(i) + d1, dcat.row(i) + d1 + d2, dmotion.row(i));
        add_matmul_tn(cache.motion_s, dmotion, grads.w_m);
    }
}

template <typename S>
flow_embedder<S> make_flow_embedder(uint64_t seed) {
    Rng rng(seed);
    flow_embedder<S> fe;
    fe.output_dim = 256;
    const int channels[4] = {2, 32, 64, 256};
    for (int l = 0; l < 3; ++l) {
        conv_layer<S> layer;
        layer.in_ch = channels[l];
        layer.out_ch = channels[l + 1];
        const double bound = 1.0 / std::sqrt(double(layer.in_ch) * 9.0);
        layer.w.resize(size_t(layer.out_ch) * layer.in_ch * 9);
        for (auto& v : layer.w) v = S(rng.uniform(-bound, bound));
        layer.b.assign(size_t(layer.out_ch), S(0));
        fe.layers.push_back(std::move(layer));
    }
    return fe;
}

template <typename S>
encoder_params<S> init_encoder_params(int face_dim, int motion_dim, int d1, int d2, int d,
                                      int t_max, uint64_t seed) {
    Rng rng(seed);
    auto init_mat = [&](int rows, int cols) {
        Mat<S> m(rows, cols);
        const double bound = 1.0 / std::sqrt(double(rows));
        for (auto& v : m.data) v = S(rng.uniform(-bound, bound));
        return m;
    };
    encoder_params<S> p;
    p.w_f.w = init_mat(face_dim, d1);
    p.w_m.w = init_mat(motion_dim, d2);
    p.fusion.w_e = init_mat(d1 + d2, d);
    p.fusion.z_pos = Mat<S>(t_max, d1 + d2);
    p.fusion.z_pos.set_zero();
    return p;
}

template Mat<float> project(const feature_sequence<float>&, const low_rank_projection<float>&);
template Mat<double> project(const feature_sequence<double>&, const low_rank_projection<double>&);
template std::vector<float> embed_flow(const Tensor3<float>&, const flow_embedder<float>&);
template std::vector<double> embed_flow(const Tensor3<double>&, const flow_embedder<double>&);
template feature_sequence<float> embed_flow_sequence(const std::vector<Tensor3<float>>&,
                                                     const flow_embedder<float>&, double);
template feature_sequence<double> embed_flow_sequence(const std::vector<Tensor3<double>>&,
                                                      const flow_embedder<double>&, double);
template joint_embedding<float> fuse(const Mat<float>&, const Mat<float>&,
                                     const fusion_params<float>&);
template joint_embedding<double> fuse(const Mat<double>&, const Mat<double>&,
                                      const fusion_params<double>&);
template joint_embedding<float> encode_from_smoothed(const Mat<float>&, const Mat<float>&,
                                                     modality_mode, const encoder_params<float>&,
                                                     encode_cache<float>*);
template joint_embedding<double> encode_from_smoothed(const Mat<double>&, const Mat<double>&,
                                                      modality_mode,
                                                      const encoder_params<double>&,
                                                      encode_cache<double>*);
template joint_embedding<float> encode_clip(const feature_sequence<float>&,
                                            const feature_sequence<float>&, modality_mode,
                                            const encoder_params<float>&, double,
                                            encode_cache<float>*);
template joint_embedding<double> encode_clip(const feature_sequence<double>&,
                                             const feature_sequence<double>&, modality_mode,
                                             const encoder_params<double>&, double,
                                             encode_cache<double>*);
template void encode_backward(const encode_cache<float>&, modality_mode,
                              const encoder_params<float>&, const Mat<float>&,
                              encoder_grads<float>&);
template void encode_backward(const encode_cache<double>&, modality_mode,
                              const encoder_params<double>&, const Mat<double>&,
                              encoder_grads<double>&);
template flow_embedder<float> make_flow_embedder(uint64_t);
template flow_embedder<double> make_flow_embedder(uint64_t);
template encoder_params<float> init_encoder_params(int, int, int, int, int, int, uint64_t);
template encoder_params<double> init_encoder_params(int, int, int, int, int, int, uint64_t);

} // namespace expotion
