"""End-to-end acceptance suite.

Each test exercises one numbered criterion and prints a single
``criterion N: PASS/FAIL`` line on the terminal (bypassing capture) so
the verdicts are visible in plain pytest output.
"""

import math
import time

import numpy as np
import pytest

from batlattice import band, cif, decode, model
from batlattice.bench import BenchConfig, emit_report, run_bench
from batlattice.errors import BandInfeasible
from batlattice.gradcheck import (
    check_bat,
    check_cif_ce,
    check_cif_fire,
    check_model,
    check_rnnt,
    random_lattice,
)
from batlattice.numerics import make_rng
from batlattice.rnnt import rnnt_backward, rnnt_forward, rnnt_loss, rnnt_loss_bruteforce


def report(capsys, number, description):
    def decorate(fn):
        def wrapper(*a, **kw):
            try:
                out = fn(*a, **kw)
            except BaseException:
                with capsys.disabled():
                    print(f"criterion {number}: FAIL - {description}")
                raise
            with capsys.disabled():
                print(f"criterion {number}: PASS - {description}")
            return out

        return wrapper

    return decorate


def random_instance(rng, t_max=4, u_max=3, v_max=3):
    t = int(rng.integers(1, t_max + 1))
    u = int(rng.integers(0, u_max + 1))
    v = int(rng.integers(1, v_max + 1))
    lp = random_lattice(rng, t, u + 1, v + 1)
    labels = rng.integers(1, v + 1, size=u)
    return lp, labels


def full_window(t_len, u_len):
    return band.BandWindow(
        starts=np.zeros(t_len, dtype=np.int64),
        width=u_len + 1, r_d=u_len, r_u=u_len,
    )


def random_boundary(rng, t, u):
    c = np.sort(rng.integers(0, u + 1, size=t))
    c[-1] = u
    return c


def test_criterion_1_oracle_equivalence(capsys):
    @report(capsys, 1, "full loss matches brute-force enumeration (200 instances, 1e-9)")
    def run():
        start = time.perf_counter()
        rng = make_rng(101)
        for _ in range(200):
            lp, labels = random_instance(rng)
            assert abs(rnnt_loss(lp, labels).loss
                       - rnnt_loss_bruteforce(lp, labels)) < 1e-9
        assert time.perf_counter() - start < 10.0

    run()


def test_criterion_2_diagonal_identity(capsys):
    @report(capsys, 2, "alpha/beta diagonal identity on every anti-diagonal (100 instances, 1e-9)")
    def run():
        rng = make_rng(102)
        for _ in range(100):
            lp, labels = random_instance(rng)
            alpha = rnnt_forward(lp, labels)
            beta = rnnt_backward(lp, labels)
            t_len, u1 = alpha.shape
            total = beta[0, 0]
            for n in range(1, t_len + u1):
                cells = [alpha[t, u] + beta[t, u]
                         for t in range(t_len) for u in range(u1)
                         if (t + 1) + u == n]
                assert abs(np.logaddexp.reduce(cells) - total) < 1e-9

    run()


def test_criterion_3_gradient_checks(capsys):
    @report(capsys, 3, "five analytic-vs-FD gradient checks below 1e-4")
    def run():
        start = time.perf_counter()
        assert check_rnnt(31, 4, 3, 3) < 1e-4
        assert check_bat(32, 6, 4, 3, 1, 1) < 1e-4
        assert check_cif_ce(33) < 1e-4
        assert check_cif_fire(34) < 1e-4
        assert check_model(35, mode="full") < 1e-4
        assert check_model(36, mode="bat") < 1e-4
        assert time.perf_counter() - start < 60.0

    run()


def test_criterion_4_band_equivalence(capsys):
    @report(capsys, 4, "full-cover band reproduces the full loss and gradient (100 instances, 1e-9)")
    def run():
        rng = make_rng(104)
        for _ in range(100):
            lp, labels = random_instance(rng)
            t, u1, _ = lp.shape
            w = full_window(t, u1 - 1)
            ref = rnnt_loss(lp, labels)
            got = band.bat_loss(band.gather_band(lp, w), w, labels)
            assert abs(got.loss - ref.loss) < 1e-9
            scattered = band.scatter_band(got.grad, w, u1 - 1)
            assert np.abs(scattered - ref.grad).max() < 1e-9

    run()


def test_criterion_5_band_monotonicity(capsys):
    @report(capsys, 5, "widening the band never increases the loss (50 instances, 1e-12)")
    def run():
        rng = make_rng(105)
        checked = 0
        while checked < 50:
            lp, labels = random_instance(rng, t_max=6, u_max=4)
            t, u1, _ = lp.shape
            boundary = random_boundary(rng, t, u1 - 1)
            losses = []
            try:
                for r in range(0, u1):
                    w = band.build_window(boundary, u1 - 1, r, r)
                    losses.append(
                        band.bat_loss(band.gather_band(lp, w), w, labels).loss)
            except BandInfeasible:
                continue
            for a, b in zip(losses, losses[1:]):
                assert b <= a + 1e-12
            checked += 1

    run()


def test_criterion_6_cif_invariants(capsys):
    @report(capsys, 6, "CIF boundary/firing invariants over 500 random weight vectors")
    def run():
        rng = make_rng(106)
        for _ in range(500):
            t = int(rng.integers(2, 30))
            u = int(rng.integers(1, t + 1))
            raw = rng.uniform(0.01, 0.99, size=t)
            clamped = cif.clamp_weights(cif.cif_scale(raw, u).scaled)
            c = cif.cif_boundary(clamped).boundary
            steps = np.diff(c)
            assert c[-1] == u
            assert (steps >= 0).all() and (steps <= 1).all()
            fired = cif.cif_fire(clamped, np.zeros((t, 1)))
            assert fired.portions.shape[0] == u
            assert np.abs(fired.portions.sum(axis=1) - 1.0).max() < 1e-6

    run()


def test_criterion_7_window_construction(capsys):
    @report(capsys, 7, "window anchors, steps, reference example and infeasibility boundary")
    def run():
        c = np.array([1, 1, 1, 2, 2, 3, 3, 4, 4, 4])
        w = band.build_window(c, 4, 1, 1)
        assert list(w.starts) == [0, 0, 0, 1, 1, 1, 1, 1, 1, 1]

        rng = make_rng(107)
        for _ in range(200):
            t = int(rng.integers(1, 12))
            r_d = int(rng.integers(0, 3))
            r_u = int(rng.integers(0, 3))
            u = int(rng.integers(0, t + r_d + r_u + 3))
            boundary = random_boundary(rng, t, u)
            if u > t + r_d + r_u:
                with pytest.raises(BandInfeasible):
                    band.build_window(boundary, u, r_d, r_u)
                continue
            w = band.build_window(boundary, u, r_d, r_u)
            assert w.starts[0] == 0
            assert w.starts[-1] == max(0, u + 1 - w.width)
            steps = np.diff(w.starts)
            assert (steps >= 0).all() and (steps <= 1).all()

    run()


def test_criterion_8_memory_and_time(capsys):
    @report(capsys, 8, "tracked banded/full memory is exactly 6/51 and banded runs at most half the time")
    def run():
        start = time.perf_counter()
        cfg = BenchConfig(t=200, u=50, v=500, r_d=2, r_u=2, dtype="f32",
                          repeats=5, warmup=1, seed=0)
        rep = run_bench(cfg)
        assert rep.mem_ratio == 6 / 51
        assert (rep.kernels["banded"].median_ms
                <= 0.5 * rep.kernels["full"].median_ms)
        assert time.perf_counter() - start < 120.0

    run()


TRAIN_SPEC = model.SynthSpec()  # V=20, 3-8 tokens, 2-5 frames, noise 0.3
TRAIN_MODEL = model.ModelConfig(d_in=TRAIN_SPEC.input_dim(),
                                vocab=TRAIN_SPEC.vocab,
                                d_enc=96, d_pred=48, d_joint=96)
# band training leans harder on the CIF losses so the window tracks the
# alignment; the full lattice needs no such push
TRAIN_LAMBDAS = {"full": 1.0, "bat": 2.0}


def _train_one(utts, mode, seed, max_steps=3000):
    m = model.init_model(TRAIN_MODEL, seed=seed)
    lam = TRAIN_LAMBDAS[mode]
    tcfg = model.TrainConfig(mode=mode, r_d=2, r_u=2, lr=5e-3, seed=seed,
                             epochs=1000, max_steps=max_steps,
                             stop_token_err=0.05,
                             lambda_ce=lam, lambda_qua=lam)
    rows = model.train(m, utts, tcfg)
    return m, rows


def test_criterion_9_end_to_end_training(capsys):
    @report(capsys, 9, "both training modes reach 5% token error within 3000 steps")
    def run():
        utts = model.synth_task(900, 2000, TRAIN_SPEC)
        for mode in ("full", "bat"):
            start = time.perf_counter()
            m, rows = _train_one(utts, mode, seed=0)
            elapsed = time.perf_counter() - start
            assert elapsed < 600.0
            assert len(rows) <= 3000
            tail = [r.token_err for r in rows[-10:]]
            assert float(np.mean(tail)) <= 0.05
            if mode == "bat":
                out = model.backward_total(
                    m, utts[0].frames, utts[0].tokens,
                    model.TrainConfig(mode="bat", r_d=2, r_u=2))
                t = utts[0].frames.shape[0]
                assert out.joint_evals == t * out.width

    run()


def test_criterion_10_latency_direction(capsys):
    @report(capsys, 10, "bat training does not slow emissions (median avg ET over 5 seeds)")
    def run():
        train_utts = model.synth_task(901, 300, TRAIN_SPEC)
        held_out = model.synth_task(902, 150, TRAIN_SPEC)
        refs = [u.end_frames[-1] * 10.0 for u in held_out]
        medians = {}
        for mode in ("full", "bat"):
            avg_ets = []
            for seed in range(5):
                m, _ = _train_one(train_utts, mode, seed=seed, max_steps=1200)
                traces = [decode.greedy_decode(m, u.frames)[1] for u in held_out]
                rep = decode.latency_metrics(traces, refs)
                assert rep.pr50_ms <= rep.pr90_ms
                avg_ets.append(rep.avg_et_ms)
            medians[mode] = float(np.median(avg_ets))
        assert medians["bat"] <= medians["full"]

    run()


def test_criterion_11_determinism(capsys, tmp_path):
    @report(capsys, 11, "training logs and bench CSVs are bit-identical across reruns")
    def run():
        utts = model.synth_task(903, 40, TRAIN_SPEC)
        logs = []
        for i in range(2):
            cfg = model.ModelConfig(d_in=TRAIN_SPEC.input_dim(),
                                    vocab=TRAIN_SPEC.vocab)
            m = model.init_model(cfg, seed=7)
            rows = model.train(m, utts, model.TrainConfig(seed=7, max_steps=20))
            path = tmp_path / f"log{i}.csv"
            model.write_log(rows, path)
            logs.append(path.read_bytes())
        assert logs[0] == logs[1]

        benches = []
        for i in range(2):
            rep = run_bench(BenchConfig(t=40, u=12, v=30, repeats=3, warmup=0,
                                        seed=11, timing=False))
            path = tmp_path / f"bench{i}.csv"
            emit_report(rep, path)
            benches.append(path.read_bytes())
        assert benches[0] == benches[1]

    run()
