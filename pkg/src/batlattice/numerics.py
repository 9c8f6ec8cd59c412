"""Log-space scalar/vector primitives and the deterministic RNG factory."""

import math

import numpy as np

NEG_INF = float("-inf")


def log_sum_exp(a: float, b: float) -> float:
    """log(exp(a) + exp(b)), stable; NEG_INF is the absorbing identity."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def log_softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted log-softmax along ``axis``.

    Raises:
        ValueError: if any input score is NaN.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise ValueError("NaN in log_softmax input")
    m = scores.max(axis=axis, keepdims=True)
    shifted = scores - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator; distinct streams never collide."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))
