"""Band-restricted transducer loss.

Only a window of S = r_d + r_u + 2 label rows per frame is stored;
everything outside carries probability zero and is never read, which is
where the memory saving comes from. The label transition out of the top
stored row is masked (the band keeps one extra row for blank only).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadLabel, BandInfeasible, DimMismatch
from .numerics import NEG_INF
from .rnnt import BLANK, LossResult, _lse

# pairwise (t, u) path enumeration guard shared with the full oracle
_BRUTE_LIMIT = 20


@dataclass
class BandWindow:
    """Per-frame first stored label row and the stored width."""

    starts: np.ndarray
    width: int
    r_d: int
    r_u: int


def build_window(boundary, u_len: int, r_d: int, r_u: int) -> BandWindow:
    """Window starts o_t from a CIF alignment C.

    o_t = clamp(C_t - r_d, 0, U+1-S), endpoints forced to 0 and U+1-S,
    then a forward sweep enforcing steps in {0, 1} and a backward sweep
    raising each start to at least its successor minus one. Degenerates to
    the full lattice when S >= U+1.

    Raises:
        BandInfeasible: if U > T + r_d + r_u.
    """
    boundary = np.asarray(boundary, dtype=np.int64)
    if boundary.ndim != 1 or len(boundary) < 1:
        raise DimMismatch("boundary must be a nonempty 1-D sequence")
    if r_d < 0 or r_u < 0:
        raise DimMismatch("band radii must be nonnegative")
    t_len = len(boundary)
    s = r_d + r_u + 2
    if u_len > t_len + r_d + r_u:
        raise BandInfeasible(
            f"U={u_len} exceeds T + r_d + r_u = {t_len + r_d + r_u}"
        )
    if s >= u_len + 1:
        return BandWindow(np.zeros(t_len, dtype=np.int64), u_len + 1, r_d, r_u)
    top = u_len + 1 - s
    o = np.clip(boundary - r_d, 0, top)
    o[0] = 0
    for t in range(1, t_len):
        o[t] = min(max(o[t], o[t - 1]), o[t - 1] + 1)
    o[t_len - 1] = top
    for t in range(t_len - 2, -1, -1):
        o[t] = max(o[t], o[t + 1] - 1)
    return BandWindow(o, s, r_d, r_u)


def check_window(window: BandWindow, u_len: int, t_len: int) -> None:
    """Assert the window invariants used by the banded recursion."""
    o, w = np.asarray(window.starts), window.width
    if len(o) != t_len:
        raise DimMismatch("window starts length differs from T")
    steps = np.diff(o)
    if o[0] != 0 or (steps < 0).any() or (steps > 1).any():
        raise DimMismatch("window starts must begin at 0 with steps in {0, 1}")
    if o[-1] != max(0, u_len + 1 - w):
        raise DimMismatch("window must end at U+1-S")
    if o[-1] + w - 1 > u_len and w <= u_len:
        raise DimMismatch("window exceeds label range")


def _banded_scores(log_probs, starts, labels, width):
    """Blank and label log-prob slices of the banded lattice, with the
    top-row label transition masked."""
    t_len = log_probs.shape[0]
    phi = np.asarray(log_probs[:, :, BLANK], dtype=np.float64)
    ylp = np.full((t_len, width), NEG_INF)
    if width > 1 and len(labels):
        j = np.arange(width - 1)
        u_grid = starts[:, None] + j[None, :]
        lab = labels[np.minimum(u_grid, len(labels) - 1)]
        vals = np.take_along_axis(
            log_probs[:, :-1, :], lab[:, :, None], axis=2
        )[:, :, 0]
        ylp[:, :-1] = np.where(u_grid < len(labels), vals, NEG_INF)
    return phi, ylp


def _banded_alpha(phi, ylp, d_up, t_len, width):
    alpha = [[NEG_INF] * width for _ in range(t_len)]
    alpha[0][0] = 0.0
    row = alpha[0]
    y0 = ylp[0].tolist()
    for j in range(1, width):
        row[j] = row[j - 1] + y0[j - 1]
    phi_l = phi.tolist()
    ylp_l = ylp.tolist()
    for t in range(1, t_len):
        prev, cur = alpha[t - 1], alpha[t]
        phi_prev, y_cur = phi_l[t - 1], ylp_l[t]
        d = d_up[t - 1]  # o_t - o_{t-1}
        for j in range(width):
            jp = j + d
            horiz = prev[jp] + phi_prev[jp] if jp < width else NEG_INF
            vert = cur[j - 1] + y_cur[j - 1] if j >= 1 else NEG_INF
            cur[j] = _lse(horiz, vert)
    return np.array(alpha)


def _banded_beta(phi, ylp, d_up, t_len, width):
    beta = [[NEG_INF] * width for _ in range(t_len)]
    phi_l = phi.tolist()
    ylp_l = ylp.tolist()
    last = beta[t_len - 1]
    last[width - 1] = phi_l[t_len - 1][width - 1]
    for j in range(width - 2, -1, -1):
        last[j] = last[j + 1] + ylp_l[t_len - 1][j]
    for t in range(t_len - 2, -1, -1):
        nxt, cur = beta[t + 1], beta[t]
        phi_cur, y_cur = phi_l[t], ylp_l[t]
        d = d_up[t]  # o_{t+1} - o_t
        for j in range(width - 1, -1, -1):
            jn = j - d
            horiz = nxt[jn] + phi_cur[j] if jn >= 0 else NEG_INF
            vert = cur[j + 1] + y_cur[j] if j + 1 < width else NEG_INF
            cur[j] = _lse(horiz, vert)
    return np.array(beta)


def bat_loss(log_probs: np.ndarray, window: BandWindow, labels) -> LossResult:
    """Banded negative log-likelihood; gradient in the banded layout.

    ``log_probs`` has shape (T, S, V+1), row (t, j) holding the
    distribution at label position u = starts[t] + j.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.ndim != 3:
        raise DimMismatch("banded lattice must be 3-D")
    t_len, width, v1 = log_probs.shape
    if width != window.width:
        raise DimMismatch("lattice width differs from window width")
    u_len = len(labels)
    if len(labels) and (labels.min() < 1 or labels.max() >= v1):
        raise BadLabel("labels must lie in [1, V]")
    check_window(window, u_len, t_len)
    starts = np.asarray(window.starts, dtype=np.int64)
    d_up = np.diff(starts)

    phi, ylp = _banded_scores(log_probs, starts, labels, width)
    alpha = _banded_alpha(phi, ylp, d_up, t_len, width)
    beta = _banded_beta(phi, ylp, d_up, t_len, width)
    log_z = beta[0, 0]
    if log_z == NEG_INF or math.isnan(log_z):
        return LossResult(math.inf, np.zeros_like(log_probs), infeasible=True)

    grad = np.zeros(log_probs.shape, dtype=np.float64)
    # blank: successor is (t+1, same u) = row j - d_up[t]
    beta_next = np.full((t_len, width), NEG_INF)
    for t in range(t_len - 1):
        d = d_up[t]
        if d == 0:
            beta_next[t] = beta[t + 1]
        else:
            beta_next[t, d:] = beta[t + 1, :width - d]
    beta_next[t_len - 1, width - 1] = 0.0  # terminal blank
    grad[:, :, BLANK] = -np.exp(alpha + beta_next + phi - log_z)
    if width > 1 and u_len:
        occ_y = np.exp(alpha[:, :-1] + beta[:, 1:] + ylp[:, :-1] - log_z)
        j = np.arange(width - 1)
        u_grid = starts[:, None] + j[None, :]
        valid = u_grid < u_len
        lab = labels[np.minimum(u_grid, u_len - 1)]
        t_grid = np.broadcast_to(np.arange(t_len)[:, None], u_grid.shape)
        grad[t_grid[valid], j[None, :].repeat(t_len, 0)[valid], lab[valid]] = -occ_y[valid]
    return LossResult(float(-log_z), grad.astype(log_probs.dtype))


def bat_loss_bruteforce(full_log_probs: np.ndarray, window: BandWindow, labels) -> float:
    """Enumerate monotone paths that stay inside the band; oracle only."""
    from itertools import combinations

    labels = np.asarray(labels, dtype=np.int64)
    t_len, u1, _ = full_log_probs.shape
    u_len = u1 - 1
    if t_len + u_len > _BRUTE_LIMIT:
        raise DimMismatch(f"brute force limited to T + U <= {_BRUTE_LIMIT}")
    o = np.asarray(window.starts, dtype=np.int64)
    w = window.width
    lp = np.asarray(full_log_probs, dtype=np.float64)

    def in_band(t, u):
        return o[t] <= u <= o[t] + w - 1

    def can_emit(t, u):
        # label transition needs rows u and u+1 stored at frame t
        return o[t] <= u <= o[t] + w - 2

    total = NEG_INF
    n_moves = (t_len - 1) + u_len
    for emit_at in combinations(range(n_moves), u_len):
        emit_set = set(emit_at)
        t = u = 0
        acc = 0.0
        ok = True
        for i in range(n_moves):
            if i in emit_set:
                if not can_emit(t, u):
                    ok = False
                    break
                acc += lp[t, u, labels[u]]
                u += 1
            else:
                if not in_band(t, u):
                    ok = False
                    break
                acc += lp[t, u, BLANK]
                t += 1
        if ok and in_band(t_len - 1, u_len):
            acc += lp[t_len - 1, u_len, BLANK]
            total = _lse(total, acc)
    return -total


def gather_band(full: np.ndarray, window: BandWindow) -> np.ndarray:
    """Copy the in-band rows of a full (T, U+1, V+1) lattice into the
    banded (T, S, V+1) layout."""
    t_len, u1, _ = full.shape
    o = np.asarray(window.starts, dtype=np.int64)
    if len(o) != t_len:
        raise DimMismatch("window starts length differs from lattice T")
    if (o + window.width - 1 > u1 - 1).any():
        raise DimMismatch("window exceeds lattice label range")
    u_grid = o[:, None] + np.arange(window.width)[None, :]
    return full[np.arange(t_len)[:, None], u_grid]


def scatter_band(banded: np.ndarray, window: BandWindow, u_len: int) -> np.ndarray:
    """Write banded values into a zero full-layout (T, U+1, V+1) tensor."""
    t_len, width, v1 = banded.shape
    if width != window.width:
        raise DimMismatch("banded width differs from window width")
    o = np.asarray(window.starts, dtype=np.int64)
    full = np.zeros((t_len, u_len + 1, v1), dtype=banded.dtype)
    u_grid = o[:, None] + np.arange(width)[None, :]
    full[np.arange(t_len)[:, None], u_grid] = banded
    return full
