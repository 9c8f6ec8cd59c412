"""Toy jointly-trained transducer.

Encoder is a single affine+tanh layer, the prediction network an order-1
token embedding (previous token only, blank id 0 at position 0), and the
joint network softmax(W_out tanh(W_enc h_t + W_pred g_u + b)). The CIF
weight predictor and its classifier head share the encoder output. All
gradients are hand-derived; training uses Adam.
"""

import base64
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import band, cif, rnnt
from .errors import DimMismatch
from .numerics import log_softmax, make_rng
from .tensorio import decode_tensor, encode_tensor, read_tensor, write_tensor

MODEL_FORMAT_VERSION = 1


@dataclass
class JointParams:
    w_enc: np.ndarray   # (D_j, D)
    w_pred: np.ndarray  # (D_j, D_p)
    w_out: np.ndarray   # (V+1, D_j)
    bias: np.ndarray    # (D_j,)


@dataclass
class ModelConfig:
    d_in: int
    d_enc: int = 32
    d_pred: int = 16
    d_joint: int = 32
    vocab: int = 20           # non-blank symbols; lattice width is vocab+1
    cif_kernel_width: int = 3
    init_scale: float = 0.1


@dataclass
class ToyModel:
    config: ModelConfig
    params: dict

    def joint_params(self) -> JointParams:
        p = self.params
        return JointParams(p["j_enc"], p["j_pred"], p["j_out"], p["j_bias"])

    def cif_params(self) -> cif.CifParams:
        p = self.params
        return cif.CifParams(
            p["cif_conv_kernel"], p["cif_conv_bias"],
            p["cif_proj_w"], float(p["cif_proj_b"][0]),
        )


@dataclass
class TrainConfig:
    mode: str = "full"        # "full" or "bat"
    r_d: int = 2
    r_u: int = 2
    lambda_bat: float = 1.0
    lambda_ce: float = 1.0
    lambda_qua: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    epochs: int = 10
    batch_size: int = 8
    max_steps: int | None = None
    stop_token_err: float | None = None

    def __post_init__(self):
        if self.mode not in ("full", "bat"):
            raise DimMismatch(f"unknown mode {self.mode!r}")
        if min(self.lambda_bat, self.lambda_ce, self.lambda_qua) < 0:
            raise DimMismatch("loss coefficients must be nonnegative")
        if self.r_d < 0 or self.r_u < 0:
            raise DimMismatch("band radii must be nonnegative")


def init_model(cfg: ModelConfig, seed: int = 0) -> ToyModel:
    rng = make_rng(seed, stream=7)
    s = cfg.init_scale

    def w(*shape):
        return s * rng.standard_normal(shape)

    params = {
        "enc_w": w(cfg.d_enc, cfg.d_in),
        "enc_b": np.zeros(cfg.d_enc),
        "emb": w(cfg.vocab + 1, cfg.d_pred),
        "j_enc": w(cfg.d_joint, cfg.d_enc),
        "j_pred": w(cfg.d_joint, cfg.d_pred),
        "j_bias": np.zeros(cfg.d_joint),
        "j_out": w(cfg.vocab + 1, cfg.d_joint),
        "cif_conv_kernel": w(cfg.cif_kernel_width, cfg.d_enc, cfg.d_enc),
        "cif_conv_bias": np.zeros(cfg.d_enc),
        "cif_proj_w": w(cfg.d_enc),
        "cif_proj_b": np.zeros(1),
        "clf_w": w(cfg.vocab, cfg.d_enc),
        "clf_b": np.zeros(cfg.vocab),
    }
    return ToyModel(config=cfg, params=params)


def joint_logits(h_t: np.ndarray, g_u: np.ndarray, jp: JointParams) -> np.ndarray:
    """Pre-softmax joint scores for one (t, u) cell."""
    if h_t.shape[-1] != jp.w_enc.shape[1] or g_u.shape[-1] != jp.w_pred.shape[1]:
        raise DimMismatch("joint input dims inconsistent with parameters")
    return jp.w_out @ np.tanh(jp.w_enc @ h_t + jp.w_pred @ g_u + jp.bias)


def encode(model: ToyModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.d_in:
        raise DimMismatch("input must be (T, d_in)")
    return np.tanh(x @ model.params["enc_w"].T + model.params["enc_b"])


def prediction_vectors(model: ToyModel, labels) -> np.ndarray:
    """g_0..g_U; g_u is the embedding of the previous token (blank for u=0)."""
    idx = np.concatenate([[rnnt.BLANK], np.asarray(labels, dtype=np.int64)])
    return model.params["emb"][idx], idx


def _joint_grid(model: ToyModel, h, g_rows):
    """tanh activations and normalized log-probs for a grid of (h_t, g) rows."""
    jp = model.joint_params()
    a = h @ jp.w_enc.T
    pre = a[:, None, :] + g_rows @ jp.w_pred.T + jp.bias
    z = np.tanh(pre)
    logits = z @ jp.w_out.T
    return z, log_softmax(logits)


def forward_full(model: ToyModel, x, labels):
    """Full (T, U+1, V+1) lattice of normalized log-probs, plus cache."""
    h = encode(model, x)
    g, g_idx = prediction_vectors(model, labels)
    z, log_probs = _joint_grid(model, h, g[None, :, :])
    cache = {"h": h, "g": g, "g_idx": g_idx, "z": z, "x": np.asarray(x, dtype=np.float64),
             "u_grid": None, "joint_evals": z.shape[0] * z.shape[1]}
    return log_probs, cache


def forward_banded(model: ToyModel, x, labels, window: band.BandWindow):
    """Banded (T, S, V+1) lattice; exactly T * S joint evaluations."""
    h = encode(model, x)
    g, g_idx = prediction_vectors(model, labels)
    o = np.asarray(window.starts, dtype=np.int64)
    u_grid = o[:, None] + np.arange(window.width)[None, :]
    z, log_probs = _joint_grid(model, h, g[u_grid])
    cache = {"h": h, "g": g, "g_idx": g_idx, "z": z, "x": np.asarray(x, dtype=np.float64),
             "u_grid": u_grid, "joint_evals": z.shape[0] * z.shape[1]}
    return log_probs, cache


def _joint_backward(model: ToyModel, dlogits, cache):
    """Backprop a grid of logit gradients to joint/pred/encoder-side grads."""
    jp = model.joint_params()
    z, h, g, g_idx, u_grid = (cache["z"], cache["h"], cache["g"],
                              cache["g_idx"], cache["u_grid"])
    grads = {"j_out": np.tensordot(dlogits, z, axes=([0, 1], [0, 1]))}
    dpre = (dlogits @ jp.w_out) * (1.0 - z * z)
    grads["j_bias"] = dpre.sum(axis=(0, 1))
    da = dpre.sum(axis=1)
    if u_grid is None:
        dg_rows = dpre.sum(axis=0)
    else:
        dg_rows = np.zeros((g.shape[0], dpre.shape[-1]))
        np.add.at(dg_rows, u_grid, dpre)
    grads["j_enc"] = da.T @ h
    grads["j_pred"] = dg_rows.T @ g
    dh = da @ jp.w_enc
    demb = np.zeros_like(model.params["emb"])
    np.add.at(demb, g_idx, dg_rows @ jp.w_pred)
    grads["emb"] = demb
    return grads, dh


def _logprob_to_logit_grad(grad_lp, log_probs):
    # chain through log_softmax: d/dlogit_k = g_k - p_k * sum_j g_j
    p = np.exp(log_probs)
    return grad_lp - p * grad_lp.sum(axis=-1, keepdims=True)


@dataclass
class TotalBackward:
    grads: dict
    loss_total: float
    loss_trans: float
    loss_ce: float
    loss_qua: float
    joint_evals: int
    width: int | None = None
    infeasible: bool = False


def backward_total(model: ToyModel, x, labels, cfg: TrainConfig) -> TotalBackward:
    """Total loss lambda_bat*L_trans + lambda_ce*L_ce + lambda_qua*L_qua and
    its gradient for every parameter.

    The transducer term uses the full lattice in ``full`` mode and the
    CIF-selected band in ``bat`` mode (window rebuilt from the current
    weights every call). No gradient flows through the hard boundary.
    """
    labels = list(np.asarray(labels, dtype=np.int64))
    u_len = len(labels)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}

    # encoder + CIF weights (shared by both loss branches)
    h = encode(model, np.asarray(x, dtype=np.float64))
    raw, cif_cache = cif.predict_weights_forward(h, model.cif_params())
    weights = cif.cif_scale(raw, u_len)
    window = None

    if cfg.mode == "bat":
        clamped = cif.clamp_weights(weights.scaled)
        alignment = cif.cif_boundary(clamped)
        window = band.build_window(alignment.boundary, u_len, cfg.r_d, cfg.r_u)
        log_probs, cache = forward_banded(model, x, labels, window)
        res = band.bat_loss(log_probs, window, labels)
    else:
        log_probs, cache = forward_full(model, x, labels)
        res = rnnt.rnnt_loss(log_probs, labels)

    fired = cif.cif_fire(weights.scaled, h)
    l_ce, ce_grads = cif.cif_ce_loss(
        fired.integrated, labels, model.params["clf_w"], model.params["clf_b"]
    )
    l_qua, qua_grad = cif.cif_quantity_loss(raw, u_len)

    if res.infeasible:
        return TotalBackward(grads, math.inf, math.inf, l_ce, l_qua,
                             cache["joint_evals"],
                             window.width if window else None, infeasible=True)

    dh_total = np.zeros_like(h)
    if cfg.lambda_bat > 0.0:
        dlogits = _logprob_to_logit_grad(
            cfg.lambda_bat * np.asarray(res.grad, dtype=np.float64), log_probs
        )
        joint_grads, dh_joint = _joint_backward(model, dlogits, cache)
        for k, v in joint_grads.items():
            grads[k] += v
        dh_total += dh_joint

    grad_raw = np.zeros_like(raw)
    if cfg.lambda_ce > 0.0:
        grads["clf_w"] += cfg.lambda_ce * ce_grads["clf_weight"]
        grads["clf_b"] += cfg.lambda_ce * ce_grads["clf_bias"]
        g_raw_fire, dh_fire = cif.cif_backward(
            cfg.lambda_ce * ce_grads["e"], fired, h, weights
        )
        grad_raw += g_raw_fire
        dh_total += dh_fire
    if cfg.lambda_qua > 0.0:
        grad_raw += cfg.lambda_qua * qua_grad
    if np.any(grad_raw):
        cif_grads, dh_cif = cif.predict_weights_backward(grad_raw, cif_cache,
                                                         model.cif_params())
        grads["cif_conv_kernel"] += cif_grads["conv_kernel"]
        grads["cif_conv_bias"] += cif_grads["conv_bias"]
        grads["cif_proj_w"] += cif_grads["proj_weight"]
        grads["cif_proj_b"] += np.array([cif_grads["proj_bias"]])
        dh_total += dh_cif

    # encoder backward
    dpre_h = dh_total * (1.0 - h * h)
    grads["enc_w"] += dpre_h.T @ cache["x"]
    grads["enc_b"] += dpre_h.sum(axis=0)

    loss_total = (cfg.lambda_bat * res.loss + cfg.lambda_ce * l_ce
                  + cfg.lambda_qua * l_qua)
    return TotalBackward(grads, loss_total, res.loss, l_ce, l_qua,
                         cache["joint_evals"], window.width if window else None)


class Adam:
    """Standard Adam over the model's parameter dict."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= scale * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


# ---------------------------------------------------------------------------
# synthetic task


@dataclass
class SynthSpec:
    vocab: int = 20
    min_tokens: int = 3
    max_tokens: int = 8
    min_frames: int = 2
    max_frames: int = 5
    noise: float = 0.3
    d_in: int | None = None

    def input_dim(self) -> int:
        return self.d_in if self.d_in is not None else self.vocab


@dataclass
class Utterance:
    frames: np.ndarray       # (T, d_in) f32
    tokens: list
    end_frames: list         # 1-based inclusive end frame per token


def synth_task(seed: int, n_utts: int, spec: SynthSpec) -> list:
    """Noisy one-hot token renderings with recorded token end frames."""
    rng = make_rng(seed, stream=11)
    d_in = spec.input_dim()
    utts = []
    for _ in range(n_utts):
        n_tok = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        tokens = [int(t) for t in rng.integers(1, spec.vocab + 1, size=n_tok)]
        rows, ends = [], []
        t = 0
        for tok in tokens:
            k = int(rng.integers(spec.min_frames, spec.max_frames + 1))
            proto = np.zeros(d_in)
            proto[(tok - 1) % d_in] = 1.0
            for _ in range(k):
                rows.append(proto + spec.noise * rng.standard_normal(d_in))
                t += 1
            ends.append(t)
        utts.append(Utterance(np.asarray(rows, dtype=np.float32), tokens, ends))
    return utts


def save_dataset(utts, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.jsonl", "w") as fh:
        for i, utt in enumerate(utts):
            name = f"utt_{i:05d}.bat1"
            write_tensor(out_dir / name, utt.frames)
            fh.write(json.dumps({
                "id": i, "file": name, "frames": int(utt.frames.shape[0]),
                "tokens": [int(t) for t in utt.tokens],
                "end_frames": [int(t) for t in utt.end_frames],
            }) + "\n")


def load_dataset(path) -> list:
    path = Path(path)
    manifest = path / "manifest.jsonl" if path.is_dir() else path
    base = manifest.parent
    utts = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        frames = read_tensor(base / rec["file"])
        utts.append(Utterance(frames, rec["tokens"], rec["end_frames"]))
    return utts


# ---------------------------------------------------------------------------
# model serialization


def save_model(model: ToyModel, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "params": {
            k: base64.b64encode(encode_tensor(np.asarray(v))).decode("ascii")
            for k, v in model.params.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> ToyModel:
    doc = json.loads(Path(path).read_text())
    cfg = ModelConfig(**doc["config"])
    params = {
        k: decode_tensor(base64.b64decode(v)) for k, v in doc["params"].items()
    }
    return ToyModel(config=cfg, params=params)


# ---------------------------------------------------------------------------
# training


@dataclass
class LogRow:
    step: int
    loss_total: float
    loss_trans: float
    loss_ce: float
    loss_qua: float
    token_err: float


LOG_HEADER = "step,loss_total,loss_trans,loss_ce,loss_qua,token_err"


def write_log(rows, path) -> None:
    lines = [LOG_HEADER]
    for r in rows:
        lines.append(
            f"{r.step},{r.loss_total:.9g},{r.loss_trans:.9g},"
            f"{r.loss_ce:.9g},{r.loss_qua:.9g},{r.token_err:.9g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def train(model: ToyModel, utts, cfg: TrainConfig):
    """Deterministic Adam training loop; returns per-step log rows.

    Token error is measured by greedy decoding the current batch. With
    ``stop_token_err`` set, training stops once the running mean over the
    last 10 steps drops to the target.
    """
    from .decode import greedy_decode, token_error_rate

    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = make_rng(cfg.seed, stream=3)
    rows = []
    recent = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(utts))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [utts[i] for i in order[lo:lo + cfg.batch_size]]
            acc = None
            tot = tr = ce = qua = 0.0
            errs = []
            for utt in batch:
                out = backward_total(model, utt.frames, utt.tokens, cfg)
                if acc is None:
                    acc = out.grads
                else:
                    for k in acc:
                        acc[k] += out.grads[k]
                tot += out.loss_total
                tr += out.loss_trans
                ce += out.loss_ce
                qua += out.loss_qua
                hyp, _ = greedy_decode(model, utt.frames)
                errs.append(token_error_rate(hyp, utt.tokens))
            n = len(batch)
            for k in acc:
                acc[k] /= n
            opt.step(acc)
            step += 1
            err = float(np.mean(errs))
            rows.append(LogRow(step, tot / n, tr / n, ce / n, qua / n, err))
            recent.append(err)
            if len(recent) > 10:
                recent.pop(0)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return rows
            if (cfg.stop_token_err is not None and len(recent) == 10
                    and float(np.mean(recent)) <= cfg.stop_token_err):
                return rows
    return rows
