"""Federated LoRA simulator: alternating factor aggregation and
pseudo-inverse-regulated DP noise, with a NumPy-facing core."""

from ._fedlora import (  # noqa: F401
    Rng,
    __version__,
    aggregate,
    aggregation_deviation,
    calibrate_sigma,
    clip_update,
    dirichlet_partition,
    epsilon_of,
    frobenius_norm,
    make_synthetic,
    matmul,
    noise_decomposition,
    pinv,
    regulate_for_a,
    regulate_for_b,
    run_experiment,
    run_single,
    svd,
)

__all__ = [
    "Rng",
    "__version__",
    "aggregate",
    "aggregation_deviation",
    "calibrate_sigma",
    "clip_update",
    "dirichlet_partition",
    "epsilon_of",
    "frobenius_norm",
    "make_synthetic",
    "matmul",
    "noise_decomposition",
    "pinv",
    "regulate_for_a",
    "regulate_for_b",
    "run_experiment",
    "run_single",
    "svd",
]
