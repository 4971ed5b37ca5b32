#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "expotion/pipeline.hpp"

namespace py = pybind11;
using namespace expotion;

namespace {

template <typename S>
Mat<S> mat_from_array(const py::array_t<S, py::array::c_style | py::array::forcecast>& a,
                      const char* what) {
    if (a.ndim() != 2) throw shape_error(std::string(what) + ": expected a 2-D array");
    Mat<S> m(int(a.shape(0)), int(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.data());
    return m;
}

template <typename S>
py::array_t<S> array_from_mat(const Mat<S>& m) {
    py::array_t<S> a({size_t(m.rows), size_t(m.cols)});
    std::copy(m.data.begin(), m.data.end(), a.mutable_data());
    return a;
}

beat_grid grid_from(const std::vector<double>& times, double duration_s) {
    beat_grid g{times, duration_s};
    g.validate();
    return g;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "visual-feature conditioned music token pipeline";

    py::class_<synth_spec>(m, "SynthSpec")
        .def(py::init<>())
        .def_readwrite("n_clips", &synth_spec::n_clips)
        .def_readwrite("duration_s", &synth_spec::duration_s)
        .def_readwrite("feature_rate_hz", &synth_spec::feature_rate_hz)
        .def_readwrite("code_rate_hz", &synth_spec::code_rate_hz)
        .def_readwrite("bpm_lo", &synth_spec::bpm_lo)
        .def_readwrite("bpm_hi", &synth_spec::bpm_hi)
        .def_readwrite("n_captions", &synth_spec::n_captions)
        .def_readwrite("seed", &synth_spec::seed)
        .def_readwrite("face_dim", &synth_spec::face_dim)
        .def_readwrite("motion_dim", &synth_spec::motion_dim);

    py::class_<run_config>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("d", &run_config::d)
        .def_readwrite("n_layers", &run_config::n_layers)
        .def_readwrite("n_adapted_layers", &run_config::n_adapted_layers)
        .def_readwrite("heads", &run_config::heads)
        .def_readwrite("vocab", &run_config::vocab)
        .def_readwrite("d1", &run_config::d1)
        .def_readwrite("d2", &run_config::d2)
        .def_readwrite("t_max", &run_config::t_max)
        .def_readwrite("prompt_len", &run_config::prompt_len)
        .def_readwrite("n_captions", &run_config::n_captions)
        .def_readwrite("ffn_mult", &run_config::ffn_mult)
        .def_readwrite("code_rate_hz", &run_config::code_rate_hz)
        .def_readwrite("face_dim", &run_config::face_dim)
        .def_readwrite("motion_dim", &run_config::motion_dim)
        .def_readwrite("learning_rate", &run_config::learning_rate)
        .def_readwrite("batch_size", &run_config::batch_size)
        .def_readwrite("epochs", &run_config::epochs)
        .def_readwrite("grad_clip", &run_config::grad_clip)
        .def_readwrite("seed", &run_config::seed)
        .def_readwrite("pretrain_steps", &run_config::pretrain_steps)
        .def_readwrite("pretrain_lr", &run_config::pretrain_lr)
        .def_readwrite("temperature", &run_config::temperature);

    m.def("synth_dataset",
          [](const synth_spec& spec, const std::string& out_dir) {
              synth_result r = run_synth(spec, out_dir);
              py::dict d;
              d["manifest_path"] = r.manifest_path;
              d["n_clips"] = r.n_clips;
              d["seed"] = r.seed;
              return d;
          },
          py::arg("spec"), py::arg("out_dir"));

    m.def("pretrain",
          [](const std::string& manifest, const run_config& cfg, const std::string& out_dir) {
              pretrain_result r = run_pretrain(manifest, cfg, out_dir);
              py::dict d;
              d["checkpoint_dir"] = r.checkpoint_dir;
              d["final_loss"] = r.final_loss;
              d["freeze_hash"] = r.freeze_hash;
              d["beats_uniform_bound"] = r.beats_uniform_bound;
              return d;
          },
          py::arg("manifest"), py::arg("config"), py::arg("out_dir"));

    m.def("train",
          [](const std::string& manifest, const std::string& base_dir, const run_config& cfg,
             const std::string& out_dir) {
              train_result r = run_train(manifest, base_dir, cfg, out_dir);
              py::dict d;
              d["checkpoint_dir"] = r.checkpoint_dir;
              d["final_loss"] = r.final_loss;
              d["steps"] = r.steps;
              d["trainable_fraction"] = r.budget.fraction;
              d["trainable_count"] = r.budget.trainable_count;
              d["frozen_count"] = r.budget.frozen_count;
              return d;
          },
          py::arg("manifest"), py::arg("base_dir"), py::arg("config"), py::arg("out_dir"));

    m.def("generate",
          [](const std::string& manifest, const std::string& base_dir,
             const std::string& adapter_dir, const run_config& cfg,
             const std::string& out_dir) {
              generate_result r = run_generate(manifest, base_dir, adapter_dir, cfg, out_dir);
              py::dict d;
              d["manifest_path"] = r.manifest_path;
              d["n_clips"] = r.n_clips;
              d["seed"] = r.seed;
              return d;
          },
          py::arg("manifest"), py::arg("base_dir"), py::arg("adapter_dir"), py::arg("config"),
          py::arg("out_dir"));

    m.def("evaluate",
          [](const std::string& gen_manifest, const std::string& ref_manifest,
             const run_config& cfg, int jobs, const std::string& out_path) {
              evaluate_result r = run_evaluate(gen_manifest, ref_manifest, cfg, jobs, out_path);
              py::dict d;
              d["report_path"] = r.report_path;
              d["mean_tempo_error_bpm"] = r.report.mean_tempo_error_bpm;
              d["median_tempo_error_bpm"] = r.report.median_tempo_error_bpm;
              d["mean_beat_f1"] = r.report.mean_beat_f1;
              d["frechet"] = r.report.frechet;
              d["mean_kl"] = r.report.mean_kl;
              d["inception_score"] = r.report.inception;
              d["n_undefined_tempo"] = r.report.n_undefined_tempo;
              return d;
          },
          py::arg("gen_manifest"), py::arg("ref_manifest"), py::arg("config"),
          py::arg("jobs") = 1, py::arg("out_path") = "report.json");

    m.def("smooth_interpolate",
          [](py::array_t<double, py::array::c_style | py::array::forcecast> frames,
             double rate_hz, double target_hz) {
              feature_sequence<double> seq{mat_from_array<double>(frames, "smooth_interpolate"),
                                           rate_hz, source_tag::face};
              return array_from_mat(smooth_interpolate(seq, target_hz).frames);
          },
          py::arg("frames"), py::arg("rate_hz"), py::arg("target_hz"));

    m.def("extract_beat_times",
          [](const std::vector<int>& codes, double rate_hz) {
              token_sequence t;
              t.codes = codes;
              t.rate_hz = rate_hz;
              return extract_beats(t).times_s;
          },
          py::arg("codes"), py::arg("rate_hz"));

    m.def("estimate_tempo",
          [](const std::vector<double>& beat_times, double duration_s) {
              return estimate_tempo(grid_from(beat_times, duration_s));
          },
          py::arg("beat_times"), py::arg("duration_s"));

    m.def("tempo_error", &tempo_error, py::arg("est_bpm"), py::arg("ref_bpm"));

    m.def("beat_f1",
          [](const std::vector<double>& est, const std::vector<double>& ref, double duration_s,
             double tolerance_s) {
              beat_match_scores s =
                  beat_f1(grid_from(est, duration_s), grid_from(ref, duration_s), tolerance_s);
              return py::make_tuple(s.precision, s.recall, s.f1);
          },
          py::arg("est_times"), py::arg("ref_times"), py::arg("duration_s"),
          py::arg("tolerance_s") = kBeatToleranceS);

    m.def("frechet_distance",
          [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
             py::array_t<double, py::array::c_style | py::array::forcecast> b) {
              return frechet_distance(mat_from_array<double>(a, "frechet_distance"),
                                      mat_from_array<double>(b, "frechet_distance"));
          },
          py::arg("a"), py::arg("b"));

    m.def("kl_divergence", &kl_divergence, py::arg("p"), py::arg("q"));

    m.def("inception_score",
          [](py::array_t<double, py::array::c_style | py::array::forcecast> probs) {
              return inception_score(mat_from_array<double>(probs, "inception_score"));
          },
          py::arg("class_probs"));

    m.def("read_matrix",
          [](const std::string& path) { return array_from_mat(read_matrix(path)); },
          py::arg("path"));

    m.def("write_matrix",
          [](const std::string& path,
             py::array_t<float, py::array::c_style | py::array::forcecast> values) {
              write_matrix(path, mat_from_array<float>(values, "write_matrix"));
          },
          py::arg("path"), py::arg("values"));

    m.def("read_token_codes",
          [](const std::string& path) { return read_tokens(path, 50.0).codes; },
          py::arg("path"));
}
