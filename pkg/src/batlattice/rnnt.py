"""Full-lattice transducer negative log-likelihood and analytic gradient.

The lattice is a (T, U+1, V+1) tensor of normalized log-probabilities,
symbol 0 being blank. Forward/backward recursions run in f64 log space;
the per-path probability is the product of the visited symbol
probabilities (one blank per frame advance, one label per emission, plus
the terminal blank at (T, U)).
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import BadLabel, DimMismatch, TooLarge
from .numerics import NEG_INF

BLANK = 0


@dataclass
class LossResult:
    """Scalar loss (nats) plus gradient w.r.t. the input log-probabilities."""

    loss: float
    grad: np.ndarray
    infeasible: bool = False


def check_labels(log_probs: np.ndarray, labels) -> np.ndarray:
    """Validate a label sequence against a (T, U+1, V+1) lattice."""
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.ndim != 3:
        raise DimMismatch(f"lattice must be 3-D, got ndim {log_probs.ndim}")
    t_len, u1, v1 = log_probs.shape
    if t_len < 1 or u1 < 1:
        raise DimMismatch("empty lattice")
    if labels.ndim != 1 or len(labels) != u1 - 1:
        raise DimMismatch(
            f"label length {labels.shape} inconsistent with lattice u_len {u1}"
        )
    if len(labels) and (labels.min() < 1 or labels.max() >= v1):
        raise BadLabel("labels must lie in [1, V]")
    return labels


def _lse(a: float, b: float) -> float:
    # local copy of log_sum_exp; this inner loop dominates kernel time
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _label_scores(log_probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(T, U) slice of per-cell label log-probs: out[t, u] = lp[t, u, y[u]]."""
    u = len(labels)
    return np.asarray(log_probs[:, np.arange(u), labels], dtype=np.float64)


def rnnt_forward(log_probs: np.ndarray, labels) -> np.ndarray:
    """Forward variables alpha, shape (T, U+1), log domain."""
    labels = check_labels(log_probs, labels)
    t_len, u1, _ = log_probs.shape
    phi = np.asarray(log_probs[:, :, BLANK], dtype=np.float64).tolist()
    ylp = _label_scores(log_probs, labels).tolist()
    alpha = [[NEG_INF] * u1 for _ in range(t_len)]
    alpha[0][0] = 0.0
    row0 = alpha[0]
    for u in range(1, u1):
        row0[u] = row0[u - 1] + ylp[0][u - 1]
    for t in range(1, t_len):
        prev, cur = alpha[t - 1], alpha[t]
        phi_prev, y_cur = phi[t - 1], ylp[t]
        cur[0] = prev[0] + phi_prev[0]
        for u in range(1, u1):
            cur[u] = _lse(prev[u] + phi_prev[u], cur[u - 1] + y_cur[u - 1])
    return np.array(alpha)


def rnnt_backward(log_probs: np.ndarray, labels) -> np.ndarray:
    """Backward variables beta, shape (T, U+1); beta[T-1, U] = log phi(T, U)."""
    labels = check_labels(log_probs, labels)
    t_len, u1, _ = log_probs.shape
    phi = np.asarray(log_probs[:, :, BLANK], dtype=np.float64).tolist()
    ylp = _label_scores(log_probs, labels).tolist()
    beta = [[NEG_INF] * u1 for _ in range(t_len)]
    last = beta[t_len - 1]
    last[u1 - 1] = phi[t_len - 1][u1 - 1]
    for u in range(u1 - 2, -1, -1):
        last[u] = last[u + 1] + ylp[t_len - 1][u]
    for t in range(t_len - 2, -1, -1):
        nxt, cur = beta[t + 1], beta[t]
        phi_cur, y_cur = phi[t], ylp[t]
        cur[u1 - 1] = nxt[u1 - 1] + phi_cur[u1 - 1]
        for u in range(u1 - 2, -1, -1):
            cur[u] = _lse(nxt[u] + phi_cur[u], cur[u + 1] + y_cur[u])
    return np.array(beta)


def rnnt_loss(log_probs: np.ndarray, labels) -> LossResult:
    """Negative log-likelihood and gradient w.r.t. the log-probabilities.

    Gradient entries are nonzero only at the blank symbol and at the next
    label of each cell; an all-blocked lattice yields +inf loss, zero
    gradient and ``infeasible=True``.
    """
    labels = check_labels(log_probs, labels)
    t_len, u1, _ = log_probs.shape
    u_len = u1 - 1
    alpha = rnnt_forward(log_probs, labels)
    beta = rnnt_backward(log_probs, labels)
    log_z = beta[0, 0]
    if log_z == NEG_INF:
        return LossResult(math.inf, np.zeros_like(log_probs), infeasible=True)
    phi = np.asarray(log_probs[:, :, BLANK], dtype=np.float64)
    grad = np.zeros(log_probs.shape, dtype=np.float64)
    # blank occupancies; beta(T, U) := 0 folds the terminal blank in
    beta_down = np.full((t_len, u1), NEG_INF)
    beta_down[:-1] = beta[1:]
    beta_down[t_len - 1, u_len] = 0.0
    grad[:, :, BLANK] = -np.exp(alpha + beta_down + phi - log_z)
    if u_len:
        ylp = _label_scores(log_probs, labels)
        occ_y = np.exp(alpha[:, :u_len] + beta[:, 1:] + ylp - log_z)
        grad[:, np.arange(u_len), labels] = -occ_y
    return LossResult(float(-log_z), grad.astype(log_probs.dtype))


def rnnt_loss_bruteforce(log_probs: np.ndarray, labels) -> float:
    """Exact path-enumeration oracle; guarded to T + U <= 20."""
    labels = check_labels(log_probs, labels)
    t_len, u1, _ = log_probs.shape
    u_len = u1 - 1
    if t_len + u_len > 20:
        raise TooLarge("brute force limited to T + U <= 20")
    lp = np.asarray(log_probs, dtype=np.float64)
    total = NEG_INF
    n_moves = (t_len - 1) + u_len
    for emit_at in combinations(range(n_moves), u_len):
        emit_set = set(emit_at)
        t = u = 0
        acc = 0.0
        for i in range(n_moves):
            if i in emit_set:
                acc += lp[t, u, labels[u]]
                u += 1
            else:
                acc += lp[t, u, BLANK]
                t += 1
        acc += lp[t_len - 1, u_len, BLANK]
        total = _lse(total, acc)
    return -total
