#ifndef EXPOTION_TRAINING_HPP
#define EXPOTION_TRAINING_HPP

#include <string>
#include <vector>

#include "expotion/adaptor.hpp"
#include "expotion/dataio.hpp"
#include "expotion/decoder.hpp"

namespace expotion {

// Mean next-token negative log likelihood; logits[t] scores targets[t].
template <typename S>
S cross_entropy(const Mat<S>& logits, const std::vector<int>& targets);

template <typename S>
S cross_entropy_backward(const Mat<S>& logits, const std::vector<int>& targets, Mat<S>& dlogits);

struct param_budget_report {
    size_t trainable_count = 0;
    size_t frozen_count = 0;
    double fraction = 0.0;
};

param_budget_report make_budget(size_t trainable, size_t frozen);

// Adaptive-moment optimizer over a parameter registry. Moments are kept in
// double so 32-bit training stays well-conditioned.
template <typename S>
class adam_optimizer {
  public:
    explicit adam_optimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                            double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(const std::vector<param_ref<S>>& params, const std::vector<param_ref<S>>& grads);
    void set_lr(double lr) { lr_ = lr; }

  private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

template <typename S>
double global_grad_norm(const std::vector<param_ref<S>>& grads);

template <typename S>
void clip_grads(const std::vector<param_ref<S>>& grads, double max_norm);

// A manifest clip with features pre-interpolated to the code rate.
template <typename S>
struct training_clip {
    std::string clip_id;
    Mat<S> face_s, motion_s;
    std::vector<int> codes;
    int caption_id = 0;
    double tempo_bpm = 0.0;
    std::vector<double> beat_times_s;
    double duration_s = 0.0;
};

template <typename S>
std::vector<training_clip<S>> prepare_clips(const clip_manifest& man, double code_rate_hz,
                                            int vocab);

template <typename S>
struct train_state {
    int step = 0;
    int epoch = 0;
    adapter_params<S> adapter;
    std::vector<double> loss_history; // one mean CE per batch
    uint64_t freeze_hash = 0;
    uint64_t seed = 0;
    param_budget_report budget;
};

// Per-step pipeline: encode -> conditioned forward -> cross entropy ->
// update of adapter parameters only. The base is hashed before and after;
// any drift is fatal.
template <typename S>
train_state<S> train_adapter(const clip_manifest& manifest, base_decoder_params<S>& base,
                             const run_config& config);

template <typename S>
train_state<S> train_adapter_on_clips(const std::vector<training_clip<S>>& clips,
                                      base_decoder_params<S>& base, const run_config& config);

// Mean conditioned (or base, when adapter is null) CE over clips.
template <typename S>
double evaluate_ce(const base_decoder_params<S>& base, const adapter_params<S>* adapter,
                   const std::vector<training_clip<S>>& clips, modality_mode mode);

struct pretrain_result_info {
    uint64_t freeze_hash = 0;
    double final_loss = 0.0;
    bool beats_uniform_bound = false;
};

// Trains the text-conditioned base on caption->token pairs, then freezes it.
template <typename S>
pretrain_result_info pretrain_base(base_decoder_params<S>& base,
                                   const std::vector<training_clip<S>>& clips, int steps,
                                   double lr, uint64_t seed);

// --- Finite-difference verification ------------------------------------------

template <typename S>
struct grad_check_instance {
    base_decoder_params<S> base;
    adapter_params<S> adapter;
    Mat<S> face_s, motion_s;
    std::vector<int> codes;
    int caption_id = 0;
    modality_mode mode = modality_mode::face_and_motion;
};

grad_check_instance<double> make_grad_check_instance(uint64_t seed);

// Central differences vs analytic gradient for one named adapter parameter.
// Returns the max per-coordinate relative error.
double grad_check(grad_check_instance<double>& inst, const std::string& param_name,
                  double epsilon);

} // namespace expotion

#endif
