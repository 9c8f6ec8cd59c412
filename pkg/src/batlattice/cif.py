"""Continuous integrate-and-fire: weight prediction, scaling, boundary
generation, firing, and the CIF-side losses with analytic gradients.

Weights come from sigmoid(linear(conv(h))) over the encoder output h. At
training time they are scaled so their sum equals the target length U,
the boundary sequence is C = ceil(cumsum(w)), and each unit of
accumulated weight fires one integrated embedding.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeights, DimMismatch, FireCountMismatch
from .numerics import log_softmax

# margin below 1.0 used when redistributing over-unit scaled weights
CLAMP_CAP = 1.0 - 1e-6
# slack subtracted before ceil so sums that are integers up to float noise
# do not spill into the next token
CEIL_EPS = 1e-9


@dataclass
class CifParams:
    """Conv -> linear -> sigmoid weight predictor parameters.

    conv_kernel has shape (width, D_out, D_in) with odd width; the output
    is zero-padded to the input length.
    """

    conv_kernel: np.ndarray
    conv_bias: np.ndarray
    proj_weight: np.ndarray
    proj_bias: float


@dataclass
class CifWeights:
    raw: np.ndarray
    scaled: np.ndarray
    scale_factor: float


@dataclass
class CifAlignment:
    boundary: np.ndarray
    threshold: float = 1.0


@dataclass
class FiredEmbeddings:
    """Integrated embeddings e_u = sum_t portion[u, t] * h_t.

    ``portions`` is the dense (U, T) allocation matrix; ``cum`` the
    cumulative weight grid used to rebuild gradient masks.
    """

    integrated: np.ndarray
    portions: np.ndarray
    cum: np.ndarray
    threshold: float = 1.0
    allocation: list = field(init=False)

    def __post_init__(self):
        us, ts = np.nonzero(self.portions)
        self.allocation = [
            (int(t), int(u), float(self.portions[u, t])) for u, t in zip(us, ts)
        ]


def predict_weights_forward(h: np.ndarray, params: CifParams):
    """Raw weights plus the cache needed for the backward pass."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise DimMismatch("encoder output must be (T, D)")
    width, d_out, d_in = params.conv_kernel.shape
    if width % 2 == 0:
        raise DimMismatch("conv kernel width must be odd")
    if d_in != h.shape[1] or params.conv_bias.shape != (d_out,):
        raise DimMismatch("CIF conv parameter shapes inconsistent with input")
    if params.proj_weight.shape != (d_out,):
        raise DimMismatch("CIF projection shape inconsistent with conv output")
    t_len = h.shape[0]
    pad = width // 2
    hp = np.pad(h, ((pad, pad), (0, 0)))
    conv = np.tile(np.asarray(params.conv_bias, dtype=np.float64), (t_len, 1))
    for k in range(width):
        conv += hp[k:k + t_len] @ params.conv_kernel[k].T
    z = conv @ params.proj_weight + params.proj_bias
    raw = 1.0 / (1.0 + np.exp(-z))
    cache = {"h": h, "hp": hp, "conv": conv, "raw": raw, "pad": pad, "width": width}
    return raw, cache


def cif_predict_weights(h: np.ndarray, params: CifParams) -> np.ndarray:
    """Per-frame weights in (0, 1): sigmoid(linear(conv(h)))."""
    raw, _ = predict_weights_forward(h, params)
    return raw


def predict_weights_backward(grad_raw: np.ndarray, cache, params: CifParams):
    """Backprop through sigmoid/linear/conv; returns (param grads, grad_h)."""
    raw, conv, hp = cache["raw"], cache["conv"], cache["hp"]
    t_len = raw.shape[0]
    width, pad = cache["width"], cache["pad"]
    dz = np.asarray(grad_raw, dtype=np.float64) * raw * (1.0 - raw)
    grads = {
        "proj_weight": conv.T @ dz,
        "proj_bias": float(dz.sum()),
    }
    dconv = np.outer(dz, params.proj_weight)
    grads["conv_bias"] = dconv.sum(axis=0)
    dkernel = np.zeros_like(params.conv_kernel, dtype=np.float64)
    dhp = np.zeros_like(hp)
    for k in range(width):
        dkernel[k] = dconv.T @ hp[k:k + t_len]
        dhp[k:k + t_len] += dconv @ params.conv_kernel[k]
    grads["conv_kernel"] = dkernel
    grad_h = dhp[pad:pad + t_len] if pad else dhp
    return grads, grad_h


def cif_scale(raw: np.ndarray, u_len: int) -> CifWeights:
    """Scale raw weights so they sum to the target length U."""
    raw = np.asarray(raw, dtype=np.float64)
    if u_len < 1:
        raise DimMismatch("target length must be >= 1")
    total = raw.sum()
    if total < 1e-8:
        raise DegenerateWeights(f"weight sum {total} too small to scale")
    factor = u_len / total
    return CifWeights(raw=raw, scaled=raw * factor, scale_factor=float(factor))


def clamp_weights(scaled: np.ndarray, cap: float = CLAMP_CAP) -> np.ndarray:
    """Push per-frame weight above ``cap`` onto neighbors, preserving the sum.

    Keeps ceil(cumsum) steps in {0, 1}. If the sum exceeds cap * T no
    sub-cap redistribution exists (only when U == T); the cap is lifted to
    the uniform value in that case.
    """
    w = np.asarray(scaled, dtype=np.float64).copy()
    t_len = len(w)
    cap = max(cap, w.sum() / t_len)
    for t in range(t_len - 1):  # rightward cascade
        if w[t] > cap:
            w[t + 1] += w[t] - cap
            w[t] = cap
    for t in range(t_len - 1, 0, -1):  # leftward cascade for the tail pile-up
        if w[t] > cap:
            w[t - 1] += w[t] - cap
            w[t] = cap
    return w


def cif_boundary(scaled: np.ndarray, threshold: float = 1.0) -> CifAlignment:
    """Token boundary sequence C = ceil(cumsum(w) / threshold)."""
    scaled = np.asarray(scaled, dtype=np.float64)
    if (scaled < 0).any():
        raise DimMismatch("weights must be nonnegative")
    cum = np.cumsum(scaled) / threshold
    boundary = np.ceil(cum - CEIL_EPS).astype(np.int64)
    return CifAlignment(boundary=np.maximum(boundary, 0), threshold=threshold)


def cif_fire(scaled: np.ndarray, h: np.ndarray, threshold: float = 1.0) -> FiredEmbeddings:
    """Integrate-and-fire aggregation of encoder frames into U embeddings.

    Uses the closed-form interval-overlap formulation of sequential
    accumulation: token u collects the overlap of its weight interval
    [(u-1)*threshold, u*threshold] with each frame's cumulative interval.
    """
    scaled = np.asarray(scaled, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != len(scaled):
        raise DimMismatch("weights and encoder output lengths differ")
    total = scaled.sum()
    u_len = int(round(total / threshold))
    if u_len < 1 or abs(total - u_len * threshold) > 1e-6:
        raise FireCountMismatch(
            f"weight sum {total} is not an integer multiple of threshold {threshold}"
        )
    cum = np.concatenate([[0.0], np.cumsum(scaled)])
    lo = np.arange(u_len) * threshold
    hi = lo + threshold
    hi[-1] = max(cum[-1], hi[-1])  # absorb the numerical tail into the last token
    portions = np.clip(
        np.minimum(cum[1:], hi[:, None]) - np.maximum(cum[:-1], lo[:, None]),
        0.0,
        None,
    )
    return FiredEmbeddings(
        integrated=portions @ h, portions=portions, cum=cum, threshold=threshold
    )


def cif_backward(grad_e: np.ndarray, fired: FiredEmbeddings, h: np.ndarray,
                 weights: CifWeights):
    """Gradients of sum_u <grad_e[u], e_u> w.r.t. raw weights and h.

    The firing pattern (which min/max branch is active per overlap) is
    treated as locally fixed: this is the almost-everywhere gradient of
    the piecewise-linear map. Includes the product-rule term through
    scale_factor = U / sum(raw).
    """
    grad_e = np.asarray(grad_e, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    portions, cum, thr = fired.portions, fired.cum, fired.threshold
    u_len, t_len = portions.shape
    if grad_e.shape != fired.integrated.shape:
        raise DimMismatch("grad_e shape differs from fired embeddings")
    grad_h = portions.T @ grad_e
    if not np.any(grad_e):
        return np.zeros(t_len), grad_h

    lo = np.arange(u_len)[:, None] * thr
    hi = lo + thr
    # the last token's upper edge tracks the sequence end, so its frame-edge
    # derivative is always active
    hi[-1] = np.inf
    active = portions > 0.0
    ge_h = grad_e @ h.T  # (U, T): d<grad_e, e>/d portion[u, t]
    right = active & (cum[None, 1:] < hi)   # min() takes the frame edge c_{t+1}
    left = active & (cum[None, :-1] > lo)   # max() takes the frame edge c_t
    dcum = np.zeros(t_len + 1)
    np.add.at(dcum, np.arange(1, t_len + 1), (right * ge_h).sum(axis=0))
    np.add.at(dcum, np.arange(0, t_len), -(left * ge_h).sum(axis=0))
    # c_j = sum_{s < j} scaled_s  =>  d/d scaled_t = sum_{j > t} dcum[j]
    dscaled = np.cumsum(dcum[1:][::-1])[::-1]

    sf, raw = weights.scale_factor, weights.raw
    u_target = weights.scaled.sum()
    grad_raw = sf * (dscaled - (dscaled * weights.scaled).sum() / u_target)
    if raw.shape != grad_raw.shape:
        raise DimMismatch("raw weight length differs from allocation")
    return grad_raw, grad_h


def cif_ce_loss(e: np.ndarray, labels, clf_weight: np.ndarray, clf_bias: np.ndarray):
    """Mean cross-entropy of a linear classifier over the fired embeddings.

    Returns (loss, grads) with grads for clf_weight, clf_bias and e.
    Labels are 1-based token ids; class u maps to row label-1.
    """
    e = np.asarray(e, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if e.ndim != 2 or len(labels) != e.shape[0]:
        raise DimMismatch("fired embeddings / label count mismatch")
    v, d = clf_weight.shape
    if d != e.shape[1] or clf_bias.shape != (v,):
        raise DimMismatch("classifier shapes inconsistent")
    if (labels < 1).any() or (labels > v).any():
        raise DimMismatch("labels out of classifier range")
    u_len = len(labels)
    logits = e @ clf_weight.T + clf_bias
    lsm = log_softmax(logits)
    loss = float(-lsm[np.arange(u_len), labels - 1].mean())
    dlogits = np.exp(lsm)
    dlogits[np.arange(u_len), labels - 1] -= 1.0
    dlogits /= u_len
    grads = {
        "clf_weight": dlogits.T @ e,
        "clf_bias": dlogits.sum(axis=0),
        "e": dlogits @ clf_weight,
    }
    return loss, grads


def cif_quantity_loss(raw: np.ndarray, u_len: int):
    """|sum(raw) - U| and its subgradient (zero exactly at the tie)."""
    raw = np.asarray(raw, dtype=np.float64)
    diff = raw.sum() - u_len
    grad = np.full(len(raw), float(np.sign(diff)))
    return float(abs(diff)), grad
