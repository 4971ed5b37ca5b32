"""Smoke tests for the python bindings: numeric helpers against numpy
oracles, tensor file round trips, and one tiny end-to-end run."""

import json
import math

import numpy as np
import pytest

import expotion


def test_interpolation_matches_numpy():
    rng = np.random.default_rng(3)
    frames = rng.normal(size=(9, 4))
    rate, target = 4.0, 10.0
    out = expotion.smooth_interpolate(frames, rate, target)

    t_out = round(frames.shape[0] / rate * target)
    assert out.shape == (t_out, 4)
    pos = np.clip(np.arange(t_out) * rate / target, 0.0, frames.shape[0] - 1)
    for c in range(frames.shape[1]):
        want = np.interp(pos, np.arange(frames.shape[0]), frames[:, c])
        np.testing.assert_allclose(out[:, c], want, rtol=0, atol=1e-12)


def test_interpolation_at_equal_rates_copies_exactly():
    rng = np.random.default_rng(4)
    frames = rng.normal(size=(7, 3))
    out = expotion.smooth_interpolate(frames, 12.5, 12.5)
    assert np.array_equal(out, frames)


def test_frechet_closed_form_and_symmetry():
    a = np.array([[-1.0], [1.0]])
    b = np.array([[2.0], [4.0]])
    assert expotion.frechet_distance(a, b) == pytest.approx(9.0, abs=1e-12)
    assert expotion.frechet_distance(a, a) == pytest.approx(0.0, abs=1e-9)

    rng = np.random.default_rng(5)
    x = rng.normal(size=(20, 3))
    y = rng.normal(size=(24, 3)) + 0.5
    d_xy = expotion.frechet_distance(x, y)
    assert d_xy > 0.0
    assert d_xy == pytest.approx(expotion.frechet_distance(y, x), rel=1e-9)


def test_distribution_scores_match_hand_values():
    one_hot = np.eye(4)
    assert expotion.inception_score(one_hot) == pytest.approx(4.0, abs=1e-9)
    uniform = np.full((4, 4), 0.25)
    assert expotion.inception_score(uniform) == pytest.approx(1.0, abs=1e-9)

    p = [0.5, 0.5]
    q = [0.25, 0.75]
    want = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
    assert expotion.kl_divergence(p, q) == pytest.approx(want, abs=1e-12)
    assert expotion.kl_divergence(p, p) == 0.0


def test_beat_helpers_round_trip():
    codes = [1] * 40
    for i in (0, 10, 20, 30):
        codes[i] = 0
    times = expotion.extract_beat_times(codes, 10.0)
    assert times == [0.0, 1.0, 2.0, 3.0]

    assert expotion.estimate_tempo(times, 4.0) == pytest.approx(60.0)
    assert expotion.tempo_error(120.0, 60.0) == 0.0
    assert expotion.tempo_error(50.0, 60.0) == pytest.approx(10.0)

    precision, recall, f1 = expotion.beat_f1(times, times, 4.0)
    assert (precision, recall, f1) == (1.0, 1.0, 1.0)
    precision, recall, f1 = expotion.beat_f1([0.5], times, 4.0, tolerance_s=0.07)
    assert f1 == 0.0

    with pytest.raises(RuntimeError):
        expotion.estimate_tempo([1.0], 4.0)


def test_matrix_files_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    values = rng.normal(size=(5, 3)).astype(np.float32)
    path = str(tmp_path / "values.tf")
    expotion.write_matrix(path, values)
    back = expotion.read_matrix(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, values)


def _tiny_spec():
    spec = expotion.SynthSpec()
    spec.n_clips = 4
    spec.duration_s = 2.0
    spec.feature_rate_hz = 5.0
    spec.code_rate_hz = 10.0
    spec.n_captions = 2
    spec.face_dim = 6
    spec.motion_dim = 4
    spec.seed = 9
    return spec


def _tiny_config():
    cfg = expotion.RunConfig()
    cfg.d = 32
    cfg.n_layers = 2
    cfg.n_adapted_layers = 1
    cfg.heads = 2
    cfg.vocab = 64
    cfg.d1 = 4
    cfg.d2 = 4
    cfg.t_max = 64
    cfg.prompt_len = 2
    cfg.n_captions = 2
    cfg.ffn_mult = 2
    cfg.code_rate_hz = 10.0
    cfg.face_dim = 6
    cfg.motion_dim = 4
    cfg.batch_size = 4
    cfg.epochs = 2
    cfg.seed = 3
    cfg.pretrain_steps = 40
    cfg.pretrain_lr = 1e-2
    return cfg


def test_synth_dataset_is_deterministic(tmp_path):
    spec = _tiny_spec()
    a = expotion.synth_dataset(spec, str(tmp_path / "a"))
    b = expotion.synth_dataset(spec, str(tmp_path / "b"))
    assert a["n_clips"] == b["n_clips"] == 4

    face_a = expotion.read_matrix(str(tmp_path / "a" / "clip_0000.face.tf"))
    face_b = expotion.read_matrix(str(tmp_path / "b" / "clip_0000.face.tf"))
    assert face_a.shape == (10, 6)
    assert np.array_equal(face_a, face_b)


def test_end_to_end_pipeline(tmp_path):
    spec = _tiny_spec()
    cfg = _tiny_config()
    ds = expotion.synth_dataset(spec, str(tmp_path / "ds"))

    pre = expotion.pretrain(ds["manifest_path"], cfg, str(tmp_path / "ck_base"))
    assert math.isfinite(pre["final_loss"])
    assert pre["freeze_hash"] != 0

    tr = expotion.train(ds["manifest_path"], pre["checkpoint_dir"], cfg,
                        str(tmp_path / "ck_adapter"))
    assert math.isfinite(tr["final_loss"])
    assert 0.0 < tr["trainable_fraction"] < 1.0
    assert tr["steps"] == cfg.epochs  # four clips fit one batch

    gen = expotion.generate(ds["manifest_path"], pre["checkpoint_dir"],
                            tr["checkpoint_dir"], cfg, str(tmp_path / "gen"))
    assert gen["n_clips"] == 4
    codes = expotion.read_token_codes(str(tmp_path / "gen" / "clip_0000.tokens.tf"))
    assert len(codes) == 20
    assert all(0 <= c < cfg.vocab for c in codes)

    ev = expotion.evaluate(gen["manifest_path"], ds["manifest_path"], cfg,
                           jobs=2, out_path=str(tmp_path / "report.json"))
    for key in ("mean_tempo_error_bpm", "median_tempo_error_bpm", "mean_beat_f1",
                "frechet", "mean_kl", "inception_score"):
        assert math.isfinite(ev[key]), key
    assert 0.0 <= ev["mean_beat_f1"] <= 1.0

    report = json.loads((tmp_path / "report.json").read_text())
    assert report["n_clips"] == 4
    assert len(report["clips"]) == 4


def test_bad_config_is_rejected(tmp_path):
    spec = _tiny_spec()
    ds = expotion.synth_dataset(spec, str(tmp_path / "ds"))
    cfg = _tiny_config()
    cfg.d = 0
    with pytest.raises(RuntimeError):
        expotion.pretrain(ds["manifest_path"], cfg, str(tmp_path / "ck"))
