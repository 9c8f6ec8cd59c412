import math

import numpy as np
import pytest

from batlattice.band import (
    BandWindow,
    bat_loss,
    bat_loss_bruteforce,
    build_window,
    check_window,
    gather_band,
    scatter_band,
)
from batlattice.errors import BandInfeasible, DimMismatch
from batlattice.gradcheck import check_bat, random_lattice
from batlattice.numerics import make_rng
from batlattice.rnnt import rnnt_loss


def full_window(t_len, u_len):
    return BandWindow(
        starts=np.zeros(t_len, dtype=np.int64),
        width=u_len + 1,
        r_d=u_len,
        r_u=u_len,
    )


def random_case(rng, t_max=6, u_max=4, v_max=3):
    t = int(rng.integers(1, t_max + 1))
    u = int(rng.integers(0, min(u_max, t) + 1))
    v = int(rng.integers(1, v_max + 1))
    lp = random_lattice(rng, t, u + 1, v + 1)
    labels = rng.integers(1, v + 1, size=u)
    boundary = np.sort(rng.integers(0, u + 1, size=t))
    boundary[-1] = u
    return lp, labels, boundary


class TestBuildWindow:
    def test_reference_example(self):
        c = np.array([1, 1, 1, 2, 2, 3, 3, 4, 4, 4])
        w = build_window(c, 4, 1, 1)
        np.testing.assert_array_equal(w.starts, [0, 0, 0, 1, 1, 1, 1, 1, 1, 1])
        assert w.width == 4

    def test_empty_labels_degenerate(self):
        w = build_window(np.zeros(3, dtype=np.int64), 0, 1, 1)
        assert w.width == 1
        np.testing.assert_array_equal(w.starts, [0, 0, 0])

    def test_wide_radii_full_cover(self):
        c = np.array([1, 2, 2])
        w = build_window(c, 2, 5, 5)
        assert w.width == 3
        np.testing.assert_array_equal(w.starts, [0, 0, 0])

    def test_infeasible(self):
        with pytest.raises(BandInfeasible):
            build_window(np.array([3, 5]), 5, 1, 1)

    def test_infeasible_boundary_exact(self):
        # infeasible exactly when u_len > t_len + r_d + r_u
        for t_len in (1, 2, 4):
            for r_d in (0, 1, 2):
                for r_u in (0, 1, 2):
                    u_len = t_len + r_d + r_u
                    c = np.minimum(np.arange(1, t_len + 1), u_len)
                    c[-1] = u_len
                    w = build_window(c, u_len, r_d, r_u)
                    check_window(w, u_len, t_len)
                    with pytest.raises(BandInfeasible):
                        build_window(c, u_len + 1, r_d, r_u)

    def test_random_windows_valid(self):
        rng = make_rng(5)
        for _ in range(300):
            t = int(rng.integers(1, 12))
            u = int(rng.integers(0, t + 3))
            r_d = int(rng.integers(0, 3))
            r_u = int(rng.integers(0, 3))
            if u > t + r_d + r_u:
                continue
            c = np.sort(rng.integers(0, u + 1, size=t))
            c[-1] = u
            w = build_window(c, u, r_d, r_u)
            check_window(w, u, t)
            # first window anchored, last window covers the final label row
            assert w.starts[0] == 0
            assert w.starts[-1] == max(0, u + 1 - w.width)
            assert (np.diff(w.starts) >= 0).all()
            assert (np.diff(w.starts) <= 1).all()

    def test_check_window_rejects_bad_step(self):
        w = BandWindow(starts=np.array([0, 2]), width=2, r_d=0, r_u=0)
        with pytest.raises(DimMismatch):
            check_window(w, 3, 2)


class TestBatLoss:
    def test_uniform_full_band_t2_u1(self):
        lp = np.log(np.full((2, 2, 2), 0.5))
        res = bat_loss(lp, full_window(2, 1), [1])
        assert res.loss == pytest.approx(math.log(4), abs=1e-12)

    def test_full_cover_equals_rnnt(self):
        rng = make_rng(6)
        for _ in range(100):
            lp, labels, _ = random_case(rng)
            t, u1, _ = lp.shape
            ref = rnnt_loss(lp, labels)
            got = bat_loss(lp, full_window(t, u1 - 1), labels)
            assert got.loss == pytest.approx(ref.loss, abs=1e-9)
            np.testing.assert_allclose(got.grad, ref.grad, atol=1e-9)

    def test_matches_masked_bruteforce(self):
        rng = make_rng(7)
        for _ in range(100):
            lp, labels, boundary = random_case(rng)
            t, u1, _ = lp.shape
            r_d = int(rng.integers(0, 3))
            r_u = int(rng.integers(0, 3))
            try:
                w = build_window(boundary, u1 - 1, r_d, r_u)
            except BandInfeasible:
                continue
            got = bat_loss(gather_band(lp, w), w, labels)
            ref = bat_loss_bruteforce(lp, w, labels)
            if math.isinf(ref):
                assert got.infeasible
            else:
                assert got.loss == pytest.approx(ref, abs=1e-9)

    def test_banded_loss_at_least_full(self):
        # restricting paths can only remove probability mass
        rng = make_rng(9)
        for _ in range(100):
            lp, labels, boundary = random_case(rng)
            t, u1, _ = lp.shape
            try:
                w = build_window(boundary, u1 - 1, 0, 0)
            except BandInfeasible:
                continue
            banded = bat_loss(gather_band(lp, w), w, labels).loss
            full = rnnt_loss(lp, labels).loss
            assert banded >= full - 1e-9

    def test_monotone_in_radii(self):
        rng = make_rng(10)
        checked = 0
        while checked < 50:
            lp, labels, boundary = random_case(rng, t_max=6, u_max=4)
            t, u1, _ = lp.shape
            losses = []
            try:
                for r in range(0, u1):
                    w = build_window(boundary, u1 - 1, r, r)
                    losses.append(bat_loss(gather_band(lp, w), w, labels).loss)
            except BandInfeasible:
                continue
            for a, b in zip(losses, losses[1:]):
                assert b <= a + 1e-12
            checked += 1

    def test_grad_confined_to_band(self):
        # scattered back to the full layout, all mass sits inside the band
        # and the top window row carries no label-transition mass
        rng = make_rng(11)
        for _ in range(50):
            lp, labels, boundary = random_case(rng, t_max=7, u_max=5)
            t, u1, _ = lp.shape
            try:
                w = build_window(boundary, u1 - 1, 1, 1)
            except BandInfeasible:
                continue
            res = bat_loss(gather_band(lp, w), w, labels)
            assert not res.grad[:, w.width - 1, 1:].any()
            full = scatter_band(res.grad, w, u1 - 1)
            mask = np.zeros((t, u1), dtype=bool)
            for ti in range(t):
                mask[ti, w.starts[ti]:w.starts[ti] + w.width] = True
            assert not full[~mask].any()

    def test_occupancy_in_band(self):
        rng = make_rng(13)
        for _ in range(30):
            lp, labels, boundary = random_case(rng)
            t, u1, _ = lp.shape
            try:
                w = build_window(boundary, u1 - 1, 1, 1)
            except BandInfeasible:
                continue
            res = bat_loss(gather_band(lp, w), w, labels)
            if res.infeasible:
                continue
            assert -res.grad.sum() == pytest.approx(t + (u1 - 1), abs=1e-6)

    def test_gradient_fd(self):
        assert check_bat(19, 6, 4, 3, 1, 1) < 1e-4

    def test_infeasible_band_path(self):
        # width-1 band cannot emit inside a column, so the diagonal step
        # from (0, 0) to (1, 1) has no in-band predecessor
        lp = np.log(np.full((2, 1, 2), 0.5))
        w = BandWindow(starts=np.array([0, 1]), width=1, r_d=0, r_u=0)
        res = bat_loss(lp, w, [1])
        assert res.infeasible
        assert math.isinf(res.loss)
        assert not res.grad.any()


class TestGatherScatter:
    def test_round_trip_preserves_band(self):
        rng = make_rng(21)
        for _ in range(50):
            lp, labels, boundary = random_case(rng)
            t, u1, v1 = lp.shape
            try:
                w = build_window(boundary, u1 - 1, 1, 1)
            except BandInfeasible:
                continue
            banded = gather_band(lp, w)
            assert banded.shape == (t, min(w.width, u1), v1)
            back = scatter_band(banded, w, u1 - 1)
            for ti in range(t):
                lo = w.starts[ti]
                hi = min(lo + w.width, u1)
                np.testing.assert_array_equal(back[ti, lo:hi], lp[ti, lo:hi])
                assert not back[ti, :lo].any()
                assert not back[ti, hi:].any()

    def test_gather_layout(self):
        lp = np.arange(24, dtype=np.float64).reshape(3, 4, 2)
        w = BandWindow(starts=np.array([0, 1, 2]), width=2, r_d=0, r_u=0)
        banded = gather_band(lp, w)
        np.testing.assert_array_equal(banded[0], lp[0, 0:2])
        np.testing.assert_array_equal(banded[1], lp[1, 1:3])
        np.testing.assert_array_equal(banded[2], lp[2, 2:4])
