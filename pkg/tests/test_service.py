import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from batlattice import __version__
from batlattice.band import build_window, gather_band, bat_loss
from batlattice.gradcheck import random_lattice
from batlattice.numerics import make_rng
from batlattice.rnnt import rnnt_loss
from batlattice.service import create_app
from batlattice.tensorio import decode_tensor, encode_tensor


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


def b64(arr):
    return base64.b64encode(encode_tensor(np.asarray(arr))).decode("ascii")


def unb64(data):
    return decode_tensor(base64.b64decode(data))


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_version(client):
    r = client.get("/v1/version")
    assert r.status_code == 200
    assert r.json() == {"version": __version__}


class TestRnntLoss:
    def test_bit_exact_round_trip(self, client):
        rng = make_rng(1)
        lp = random_lattice(rng, 4, 3, 3)
        labels = [1, 2]
        r = client.post("/v1/rnnt-loss",
                        json={"log_probs": b64(lp), "labels": labels})
        assert r.status_code == 200
        body = r.json()
        ref = rnnt_loss(lp, labels)
        assert unb64(body["loss_tensor"]).tobytes() == np.array(
            [ref.loss]).tobytes()
        assert unb64(body["grad"]).tobytes() == ref.grad.tobytes()
        assert not body["infeasible"]

    def test_bad_label_maps_to_400(self, client):
        lp = np.log(np.full((2, 2, 2), 0.5))
        r = client.post("/v1/rnnt-loss",
                        json={"log_probs": b64(lp), "labels": [0]})
        assert r.status_code == 400
        assert r.json()["code"] == "BadLabel"

    def test_bad_blob_maps_to_400(self, client):
        r = client.post("/v1/rnnt-loss",
                        json={"log_probs": b64(np.zeros((2, 2, 2)))[:-8],
                              "labels": []})
        assert r.status_code == 400
        assert r.json()["code"] in ("BadMagic", "TruncatedPayload", "BadValue")


class TestBatLoss:
    def test_matches_library(self, client):
        rng = make_rng(2)
        lp = random_lattice(rng, 5, 4, 3)
        labels = [1, 2, 1]
        w = build_window(np.array([1, 1, 2, 3, 3]), 3, 1, 1)
        banded = np.ascontiguousarray(gather_band(lp, w))
        r = client.post("/v1/bat-loss", json={
            "log_probs": b64(banded),
            "window_starts": [int(s) for s in w.starts],
            "labels": labels, "r_d": 1, "r_u": 1,
        })
        assert r.status_code == 200
        ref = bat_loss(banded, w, labels)
        assert unb64(r.json()["grad"]).tobytes() == ref.grad.tobytes()
        assert r.json()["loss"] == pytest.approx(ref.loss)

    def test_bad_window_maps_to_400(self, client):
        lp = np.log(np.full((2, 2, 3), 1 / 3))
        r = client.post("/v1/bat-loss", json={
            "log_probs": b64(lp), "window_starts": [0, 5],
            "labels": [1], "r_d": 0, "r_u": 0,
        })
        assert r.status_code == 400
        assert r.json()["code"] == "DimMismatch"


class TestBuildWindow:
    def test_reference_example(self, client):
        r = client.post("/v1/build-window", json={
            "boundary": [1, 1, 1, 2, 2, 3, 3, 4, 4, 4],
            "u": 4, "r_d": 1, "r_u": 1,
        })
        assert r.status_code == 200
        assert r.json() == {"starts": [0, 0, 0, 1, 1, 1, 1, 1, 1, 1],
                            "width": 4}

    def test_infeasible_maps_to_409(self, client):
        r = client.post("/v1/build-window", json={
            "boundary": [3, 5], "u": 5, "r_d": 1, "r_u": 1,
        })
        assert r.status_code == 409
        assert r.json()["code"] == "BandInfeasible"


class TestCifBoundary:
    def test_unit_weights(self, client):
        r = client.post("/v1/cif-boundary",
                        json={"weights": b64(np.ones(3))})
        assert r.status_code == 200
        assert r.json() == {"boundary": [1, 2, 3]}

    def test_threshold(self, client):
        r = client.post("/v1/cif-boundary",
                        json={"weights": b64(np.ones(4)), "threshold": 2.0})
        assert r.status_code == 200
        assert r.json() == {"boundary": [1, 1, 2, 2]}
