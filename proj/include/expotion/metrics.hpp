#ifndef EXPOTION_METRICS_HPP
#define EXPOTION_METRICS_HPP

#include <functional>
#include <string>
#include <vector>

#include "expotion/dataio.hpp"
#include "expotion/mat.hpp"
#include "expotion/tokens.hpp"

namespace expotion {

struct beat_grid {
    std::vector<double> times_s;
    double duration_s = 0.0;

    void validate() const {
        for (size_t i = 0; i < times_s.size(); ++i) {
            if (times_s[i] < 0.0 || times_s[i] > duration_s)
                throw validation_error("beat_grid: time outside [0, duration]");
            if (i > 0 && times_s[i - 1] >= times_s[i])
                throw validation_error("beat_grid: times must be strictly increasing");
        }
    }
};

beat_grid extract_beats(const token_sequence& tokens);

// Median inter-beat interval, folded into [60, 200) bpm.
double estimate_tempo(const beat_grid& grid);

// |est - ref| after octave-folding est into [ref/sqrt2, ref*sqrt2).
double tempo_error(double est_bpm, double ref_bpm);

// Worst-case folded error, charged when a generation has too few beats to
// estimate a tempo at all.
inline double undefined_tempo_penalty(double ref_bpm) {
    return ref_bpm * 0.41421356237309515;
}

struct beat_match_scores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

constexpr double kBeatToleranceS = 0.07;

beat_match_scores beat_f1(const beat_grid& est, const beat_grid& ref,
                          double tolerance_s = kBeatToleranceS);

// Gaussian-fit distance between two embedding sets (rows are clips). Uses
// unbiased covariance and an eigendecomposition square root with tiny
// negative eigenvalues clamped to zero.
double frechet_distance(const Mat<double>& a, const Mat<double>& b);

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// exp(mean KL(row || column mean)) over an n x C row-stochastic matrix.
double inception_score(const Mat<double>& class_probs);

// --- Corpus evaluation --------------------------------------------------------

using clip_embedder = std::function<std::vector<double>(const token_sequence&)>;
using clip_classifier = std::function<std::vector<double>(const token_sequence&)>;

// Hashed bigram histogram, L1-normalized; pure and deterministic.
clip_embedder make_bigram_embedder(int dim, int vocab, uint64_t seed);

// Per-caption smoothed bigram language models fit on the reference clips;
// classifies by softmax over mean transition log-likelihood.
clip_classifier make_caption_classifier(const std::vector<token_sequence>& refs,
                                        const std::vector<int>& caption_ids, int n_captions,
                                        int vocab);

struct clip_eval {
    std::string clip_id;
    double tempo_error_bpm = 0.0;
    bool tempo_defined = false;
    double beat_precision = 0.0;
    double beat_recall = 0.0;
    double beat_f1 = 0.0;
};

struct eval_report {
    std::vector<clip_eval> clips;
    double beat_tolerance_s = kBeatToleranceS;
    double mean_tempo_error_bpm = 0.0;
    double median_tempo_error_bpm = 0.0;
    double mean_beat_f1 = 0.0;
    double frechet = 0.0;
    double mean_kl = 0.0;
    double inception = 0.0;
    int n_undefined_tempo = 0;
};

struct eval_options {
    double beat_tolerance_s = kBeatToleranceS;
    int jobs = 1;
};

// Pairs generated and reference manifests by position (clip ids must agree),
// scores rhythm per clip against the reference ground truth, and computes the
// corpus statistics from the injected embedder/classifier. Output is
// independent of the job count.
eval_report evaluate_run(const clip_manifest& gen, const clip_manifest& ref,
                         const clip_embedder& embedder, const clip_classifier& classifier,
                         const eval_options& opts = {});

std::string report_to_json(const eval_report& r);
eval_report report_from_json(const std::string& text);
std::string render_report(const eval_report& r);

} // namespace expotion

#endif
