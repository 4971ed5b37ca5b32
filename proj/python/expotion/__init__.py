from ._core import (
    RunConfig,
    SynthSpec,
    beat_f1,
    estimate_tempo,
    evaluate,
    extract_beat_times,
    frechet_distance,
    generate,
    inception_score,
    kl_divergence,
    pretrain,
    read_matrix,
    read_token_codes,
    smooth_interpolate,
    synth_dataset,
    tempo_error,
    train,
    write_matrix,
)

__all__ = [
    "RunConfig",
    "SynthSpec",
    "beat_f1",
    "estimate_tempo",
    "evaluate",
    "extract_beat_times",
    "frechet_distance",
    "generate",
    "inception_score",
    "kl_divergence",
    "pretrain",
    "read_matrix",
    "read_token_codes",
    "smooth_interpolate",
    "synth_dataset",
    "tempo_error",
    "train",
    "write_matrix",
]
