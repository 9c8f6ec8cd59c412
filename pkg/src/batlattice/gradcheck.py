"""Central finite-difference checks for every analytic gradient.

Used by the `check-grad` CLI subcommand and the test suite. The
transducer kernels take normalized log-probabilities, so each perturbed
row is renormalized (log_softmax) and the analytic side is projected
through the same renormalization before comparing.
"""

import numpy as np

from . import band, cif, rnnt
from .model import ModelConfig, TrainConfig, backward_total, init_model
from .numerics import log_softmax, make_rng

DEFAULT_STEP = 1e-5


def rel_err(analytic: np.ndarray, fd: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a - f| / (|a| + |f| + floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float((np.abs(a - f) / (np.abs(a) + np.abs(f) + floor)).max())


def project_row_grad(grad: np.ndarray, log_probs: np.ndarray) -> np.ndarray:
    """Chain an unconstrained log-prob gradient through row renormalization."""
    p = np.exp(log_probs)
    return grad - p * grad.sum(axis=-1, keepdims=True)


def random_lattice(rng, t, u1, v1) -> np.ndarray:
    return log_softmax(rng.standard_normal((t, u1, v1)))


def _fd_lattice(loss_fn, log_probs, step):
    fd = np.zeros_like(log_probs)
    flat = log_probs.reshape(-1, log_probs.shape[-1])
    fd_flat = fd.reshape(-1, log_probs.shape[-1])
    for r in range(flat.shape[0]):
        for k in range(flat.shape[1]):
            for sign in (1.0, -1.0):
                row = flat[r].copy()
                row[k] += sign * step
                perturbed = log_probs.copy().reshape(flat.shape)
                perturbed[r] = log_softmax(row)
                val = loss_fn(perturbed.reshape(log_probs.shape))
                fd_flat[r, k] += sign * val
    return fd / (2 * step)


def check_rnnt(seed: int, t: int, u: int, v: int, step: float = DEFAULT_STEP) -> float:
    """Max relative FD error of the full-lattice loss gradient."""
    rng = make_rng(seed, stream=21)
    log_probs = random_lattice(rng, t, u + 1, v + 1)
    labels = rng.integers(1, v + 1, size=u)
    res = rnnt.rnnt_loss(log_probs, labels)
    analytic = project_row_grad(res.grad, log_probs)
    fd = _fd_lattice(lambda lp: rnnt.rnnt_loss(lp, labels).loss, log_probs, step)
    return rel_err(analytic, fd)


def check_bat(seed: int, t: int, u: int, v: int, r_d: int, r_u: int,
              step: float = DEFAULT_STEP) -> float:
    """Max relative FD error of the banded loss gradient (banded layout)."""
    rng = make_rng(seed, stream=22)
    full = random_lattice(rng, t, u + 1, v + 1)
    labels = rng.integers(1, v + 1, size=u)
    boundary = np.ceil(np.arange(1, t + 1) * u / t).astype(np.int64)
    window = band.build_window(boundary, u, r_d, r_u)
    banded = band.gather_band(full, window)
    res = band.bat_loss(banded, window, labels)
    analytic = project_row_grad(res.grad, banded)
    fd = _fd_lattice(lambda lp: band.bat_loss(lp, window, labels).loss,
                     banded, step)
    return rel_err(analytic, fd)


def check_cif_ce(seed: int, u: int = 4, v: int = 5, d: int = 6,
                 step: float = DEFAULT_STEP) -> float:
    """FD check of the CIF cross-entropy gradients (e, weights, bias)."""
    rng = make_rng(seed, stream=23)
    e = rng.standard_normal((u, d))
    labels = rng.integers(1, v + 1, size=u)
    clf_w = rng.standard_normal((v, d))
    clf_b = rng.standard_normal(v)
    _, grads = cif.cif_ce_loss(e, labels, clf_w, clf_b)

    worst = 0.0
    for name, arr in (("e", e), ("clf_weight", clf_w), ("clf_bias", clf_b)):
        fd = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            hi, _ = cif.cif_ce_loss(e, labels, clf_w, clf_b)
            arr[idx] = orig - step
            lo, _ = cif.cif_ce_loss(e, labels, clf_w, clf_b)
            arr[idx] = orig
            fd[idx] = (hi - lo) / (2 * step)
        worst = max(worst, rel_err(grads[name], fd))
    return worst


def _fire_objective(raw, h, u_len, probe):
    weights = cif.cif_scale(raw, u_len)
    fired = cif.cif_fire(weights.scaled, h)
    return float((probe * fired.integrated).sum())


def sample_raw_with_margin(rng, t_len, u_len, margin=1e-3, tries=200):
    """Raw weights whose scaled cumulative sums stay away from integers."""
    for _ in range(tries):
        raw = rng.uniform(0.05, 0.95, size=t_len)
        scaled = raw * u_len / raw.sum()
        cum = np.cumsum(scaled)[:-1]
        if len(cum) == 0 or np.abs(cum - np.round(cum)).min() > margin:
            return raw
    raise RuntimeError("could not sample weights away from cumsum crossings")


def check_cif_fire(seed: int, t: int = 6, u: int = 3, d: int = 4,
                   step: float = DEFAULT_STEP) -> float:
    """FD check of the firing backward pass (raw weights and h), taken at
    points at least 1e-3 away from integer cumsum crossings."""
    rng = make_rng(seed, stream=24)
    raw = sample_raw_with_margin(rng, t, u)
    h = rng.standard_normal((t, d))
    probe = rng.standard_normal((u, d))

    weights = cif.cif_scale(raw, u)
    fired = cif.cif_fire(weights.scaled, h)
    grad_raw, grad_h = cif.cif_backward(probe, fired, h, weights)

    fd_raw = np.zeros_like(raw)
    for i in range(t):
        orig = raw[i]
        raw[i] = orig + step
        hi = _fire_objective(raw, h, u, probe)
        raw[i] = orig - step
        lo = _fire_objective(raw, h, u, probe)
        raw[i] = orig
        fd_raw[i] = (hi - lo) / (2 * step)

    fd_h = np.zeros_like(h)
    it = np.nditer(h, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = h[idx]
        h[idx] = orig + step
        hi = _fire_objective(raw, h, u, probe)
        h[idx] = orig - step
        lo = _fire_objective(raw, h, u, probe)
        h[idx] = orig
        fd_h[idx] = (hi - lo) / (2 * step)

    return max(rel_err(grad_raw, fd_raw, floor=1e-2), rel_err(grad_h, fd_h))


def check_model(seed: int, mode: str = "full", t: int = 5, u: int = 2,
                v: int = 3, d: int = 4, step: float = DEFAULT_STEP) -> float:
    """FD check of every parameter gradient of the total training loss."""
    rng = make_rng(seed, stream=25)
    cfg = ModelConfig(d_in=d, d_enc=d, d_pred=d, d_joint=d, vocab=v,
                      init_scale=0.3)
    tcfg = TrainConfig(mode=mode, r_d=1, r_u=1, seed=seed)
    for _ in range(50):
        model = init_model(cfg, seed=int(rng.integers(0, 2**31)))
        x = rng.standard_normal((t, d))
        labels = rng.integers(1, v + 1, size=u)
        raw = cif.cif_predict_weights(
            np.tanh(x @ model.params["enc_w"].T + model.params["enc_b"]),
            model.cif_params(),
        )
        cum = np.cumsum(raw * u / raw.sum())[:-1]
        if len(cum) == 0 or np.abs(cum - np.round(cum)).min() > 1e-3:
            break
    out = backward_total(model, x, labels, tcfg)

    worst = 0.0
    for name, arr in model.params.items():
        fd = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            hi = backward_total(model, x, labels, tcfg).loss_total
            arr[idx] = orig - step
            lo = backward_total(model, x, labels, tcfg).loss_total
            arr[idx] = orig
            fd[idx] = (hi - lo) / (2 * step)
        worst = max(worst, rel_err(out.grads[name], fd, floor=1e-2))
    return worst
