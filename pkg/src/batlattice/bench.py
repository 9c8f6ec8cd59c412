"""Deterministic time/memory comparison of the full and banded kernels.

Memory is tracked-buffer accounting (the actual nbytes of the lattice,
gradient and alpha/beta recursion buffers), not process RSS, so the
numbers are exact and reproducible.
"""

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .band import BandWindow, bat_loss, build_window, gather_band
from .errors import DimMismatch
from .numerics import log_softmax, make_rng
from .rnnt import rnnt_forward, rnnt_loss

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class BenchConfig:
    t: int
    u: int
    v: int
    r_d: int = 2
    r_u: int = 2
    n: int = 1
    dtype: str = "f32"
    repeats: int = 5
    warmup: int = 1
    seed: int = 0
    threads: int = 1
    timing: bool = True     # False zeroes wall times for reproducible CSVs

    def __post_init__(self):
        if self.repeats < 3:
            raise DimMismatch("repeats must be >= 3")
        if min(self.n, self.t, self.v) < 1 or self.u < 1:
            raise DimMismatch("lattice dims must be >= 1")
        if self.dtype not in _DTYPES:
            raise DimMismatch(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def s(self) -> int:
        return min(self.r_d + self.r_u + 2, self.u + 1)


@dataclass
class KernelStats:
    median_ms: float
    lattice_bytes: int
    peak_tracked_bytes: int


@dataclass
class BenchReport:
    config: BenchConfig
    kernels: dict = field(default_factory=dict)

    @property
    def mem_ratio(self) -> float:
        """Tracked banded bytes over tracked full bytes."""
        return (self.kernels["banded"].peak_tracked_bytes
                / self.kernels["full"].peak_tracked_bytes)

    @property
    def time_ratio(self) -> float:
        """Full wall time over banded wall time (speedup)."""
        banded = self.kernels["banded"].median_ms
        return self.kernels["full"].median_ms / banded if banded else float("nan")


def _make_instances(cfg: BenchConfig):
    rng = make_rng(cfg.seed, stream=5)
    dtype = _DTYPES[cfg.dtype]
    items = []
    for _ in range(cfg.n):
        scores = rng.standard_normal((cfg.t, cfg.u + 1, cfg.v + 1))
        full = log_softmax(scores).astype(dtype)
        labels = rng.integers(1, cfg.v + 1, size=cfg.u)
        boundary = np.ceil(np.arange(1, cfg.t + 1) * cfg.u / cfg.t).astype(np.int64)
        window = build_window(boundary, cfg.u, cfg.r_d, cfg.r_u)
        banded = np.ascontiguousarray(gather_band(full, window))
        items.append((full, banded, window, labels))
    return items


def _time_kernel(fn, items, cfg: BenchConfig) -> float:
    def run_all():
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                list(pool.map(fn, items))
        else:
            for item in items:
                fn(item)

    for _ in range(cfg.warmup):
        run_all()
    times = []
    for _ in range(cfg.repeats):
        start = time.perf_counter()
        run_all()
        times.append((time.perf_counter() - start) * 1000.0)
    return statistics.median(times)


def run_bench(cfg: BenchConfig) -> BenchReport:
    """Run both kernels on identical synthetic data; median wall time over
    ``repeats`` after ``warmup``, exact tracked-buffer byte accounting."""
    items = _make_instances(cfg)
    full0, banded0, window0, labels0 = items[0]

    def run_full(item):
        return rnnt_loss(item[0], item[3])

    def run_banded(item):
        return bat_loss(item[1], item[2], item[3])

    # tracked buffers: lattice + gradient (payload dtype) + alpha + beta (f64)
    res_full = run_full(items[0])
    alpha = rnnt_forward(full0, labels0)
    full_lattice = sum(item[0].nbytes for item in items)
    full_peak = full_lattice + cfg.n * (res_full.grad.nbytes + 2 * alpha.nbytes)
    assert full_lattice == cfg.n * cfg.t * (cfg.u + 1) * (cfg.v + 1) * full0.itemsize

    res_banded = run_banded(items[0])
    banded_lattice = sum(item[1].nbytes for item in items)
    banded_alpha_bytes = cfg.t * cfg.s * 8
    banded_peak = banded_lattice + cfg.n * (res_banded.grad.nbytes
                                            + 2 * banded_alpha_bytes)
    assert banded_lattice == cfg.n * cfg.t * cfg.s * (cfg.v + 1) * banded0.itemsize

    report = BenchReport(config=cfg)
    full_ms = _time_kernel(run_full, items, cfg) if cfg.timing else 0.0
    banded_ms = _time_kernel(run_banded, items, cfg) if cfg.timing else 0.0
    report.kernels["full"] = KernelStats(full_ms, full_lattice, full_peak)
    report.kernels["banded"] = KernelStats(banded_ms, banded_lattice, banded_peak)
    return report


CSV_HEADER = ("kernel,n,t,u,v,s,dtype,repeats,"
              "median_ms,lattice_bytes,peak_tracked_bytes")


def emit_report(report: BenchReport, path, fmt: str = "csv") -> None:
    """Write the report; ``csv`` has a stable column order, ``text`` echoes
    the config and the derived ratios."""
    cfg = report.config
    if fmt == "csv":
        lines = [CSV_HEADER]
        for name in ("full", "banded"):
            k = report.kernels[name]
            lines.append(
                f"{name},{cfg.n},{cfg.t},{cfg.u},{cfg.v},{cfg.s},{cfg.dtype},"
                f"{cfg.repeats},{k.median_ms:.9g},{k.lattice_bytes},"
                f"{k.peak_tracked_bytes}"
            )
        text = "\n".join(lines) + "\n"
    elif fmt == "text":
        lines = [
            f"config: n={cfg.n} t={cfg.t} u={cfg.u} v={cfg.v} s={cfg.s} "
            f"r_d={cfg.r_d} r_u={cfg.r_u} dtype={cfg.dtype} "
            f"repeats={cfg.repeats} warmup={cfg.warmup} seed={cfg.seed}",
        ]
        for name in ("full", "banded"):
            k = report.kernels[name]
            lines.append(
                f"{name}: median {k.median_ms:.9g} ms, lattice "
                f"{k.lattice_bytes} bytes, peak tracked {k.peak_tracked_bytes} bytes"
            )
        lines.append(f"mem ratio (banded/full): {report.mem_ratio:.9g}")
        lines.append(f"time ratio (full/banded): {report.time_ratio:.9g}")
        text = "\n".join(lines) + "\n"
    else:
        raise DimMismatch(f"unknown report format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)
