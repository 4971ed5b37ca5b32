#ifndef EXPOTION_ALIGNMENT_HPP
#define EXPOTION_ALIGNMENT_HPP

#include <cmath>
#include <string>

#include "expotion/errors.hpp"
#include "expotion/mat.hpp"

namespace expotion {

enum class source_tag { face, motion_ctx, flow };

template <typename S>
struct feature_sequence {
    Mat<S> frames; // T x D
    double rate_hz = 1.0;
    source_tag tag = source_tag::face;

    int length() const { return frames.rows; }
    int dim() const { return frames.cols; }
    double duration_s() const { return frames.rows / rate_hz; }

    void validate() const {
        if (frames.rows < 1 || frames.cols < 1)
            throw validation_error("feature_sequence: needs at least one frame and one dim");
        if (rate_hz <= 0.0) throw validation_error("feature_sequence: rate_hz must be > 0");
        if (!frames.all_finite()) throw validation_error("feature_sequence: non-finite value");
    }
};

struct framing_spec {
    int window = 16;
    int stride = 16;
};

// Duplicate/drop frames to hit target_hz; output frame j is input frame
// floor(j * rate / target), clamped.
template <typename S>
feature_sequence<S> resample_nearest(const feature_sequence<S>& seq, double target_hz) {
    seq.validate();
    if (target_hz <= 0.0) throw validation_error("resample_nearest: target_hz must be > 0");
    const int t_in = seq.length();
    const int t_out = std::max(1, int(std::lround(t_in * target_hz / seq.rate_hz)));
    feature_sequence<S> out;
    out.rate_hz = target_hz;
    out.tag = seq.tag;
    out.frames = Mat<S>(t_out, seq.dim());
    for (int j = 0; j < t_out; ++j) {
        int src = int(std::floor(j * seq.rate_hz / target_hz));
        src = std::min(std::max(src, 0), t_in - 1);
        std::copy(seq.frames.row(src), seq.frames.row(src) + seq.dim(), out.frames.row(j));
    }
    return out;
}

// Number of feature frames a windowed extractor emits over t_video frames.
inline int frame_count(int t_video, const framing_spec& spec) {
    if (spec.window < 1 || spec.stride < 1)
        throw validation_error("frame_count: window and stride must be >= 1");
    if (t_video < spec.window)
        throw too_short_error("frame_count: " + std::to_string(t_video) +
                              " frames is shorter than window " + std::to_string(spec.window));
    return (t_video - spec.window) / spec.stride + 1;
}

// T x C x D -> (T*C) x D, row (t*C + c) = input[t][c]; rate scales by C.
template <typename S>
feature_sequence<S> flatten_context(const Tensor3<S>& tensor, double rate_hz, source_tag tag) {
    if (tensor.d0 < 1 || tensor.d1 < 1 || tensor.d2 < 1)
        throw validation_error("flatten_context: empty tensor");
    feature_sequence<S> out;
    out.rate_hz = rate_hz * tensor.d1;
    out.tag = tag;
    out.frames = Mat<S>(tensor.d0 * tensor.d1, tensor.d2);
    std::copy(tensor.data.begin(), tensor.data.end(), out.frames.data.begin());
    return out;
}

// Linear interpolation to target_hz. Output index j maps to source position
// t = j * rate / target; with i = floor(t), a = t - i the value is
// (1-a) z_i + a z_{i+1}, clamped to the last frame past the end. Grid points
// (a == 0) copy the source row exactly.
template <typename S>
feature_sequence<S> smooth_interpolate(const feature_sequence<S>& seq, double target_hz) {
    seq.validate();
    if (target_hz <= 0.0) throw validation_error("smooth_interpolate: target_hz must be > 0");
    const int t_in = seq.length();
    const int d = seq.dim();
    const int t_out = std::max(1, int(std::lround(seq.duration_s() * target_hz)));
    feature_sequence<S> out;
    out.rate_hz = target_hz;
    out.tag = seq.tag;
    out.frames = Mat<S>(t_out, d);
    for (int j = 0; j < t_out; ++j) {
        double t = j * seq.rate_hz / target_hz;
        int i = int(std::floor(t));
        double a = t - i;
        if (i >= t_in - 1) {
            i = t_in - 1;
            a = 0.0;
        }
        const S* z0 = seq.frames.row(i);
        S* o = out.frames.row(j);
        if (a == 0.0) {
            std::copy(z0, z0 + d, o);
        } else {
            const S* z1 = seq.frames.row(i + 1);
            const S w1 = S(a), w0 = S(1) - S(a);
            for (int k = 0; k < d; ++k) o[k] = w0 * z0[k] + w1 * z1[k];
        }
    }
    return out;
}

} // namespace expotion

#endif
