"""Generate the shared parity fixtures for the binding tests.

Twenty cases (ten full-lattice, ten banded). Inputs are written as BAT1
tensors; the expected loss and gradient come from running the CLI on
those same files, so the vitest suite can assert bit-identical results.

Run from the frontend directory:  python3 scripts/gen_fixtures.py
"""

import json
import shutil
import subprocess
from pathlib import Path

import numpy as np

from batlattice.band import build_window, gather_band
from batlattice.gradcheck import random_lattice
from batlattice.numerics import make_rng
from batlattice.tensorio import write_tensor

OUT = Path(__file__).resolve().parent.parent / "fixtures"


def cli(*args):
    subprocess.run(["batlattice", *args], check=True, capture_output=True)


def rnnt_case(case_dir, rng):
    t = int(rng.integers(2, 7))
    u = int(rng.integers(0, 5))
    v = int(rng.integers(2, 6))
    lp = random_lattice(rng, t, u + 1, v + 1)
    labels = rng.integers(1, v + 1, size=u).astype(np.int64)
    write_tensor(case_dir / "lattice.bat1", lp)
    write_tensor(case_dir / "labels.bat1", labels)
    cli("loss", "--lattice", str(case_dir / "lattice.bat1"),
        "--labels", str(case_dir / "labels.bat1"),
        "--loss-out", str(case_dir / "expected_loss.bat1"),
        "--grad-out", str(case_dir / "expected_grad.bat1"))
    return {"kind": "rnnt", "labels": [int(x) for x in labels]}


def bat_case(case_dir, rng):
    while True:
        t = int(rng.integers(3, 9))
        u = int(rng.integers(1, 6))
        v = int(rng.integers(2, 6))
        r_d = int(rng.integers(0, 3))
        r_u = int(rng.integers(0, 3))
        if u <= t + r_d + r_u:
            break
    lp = random_lattice(rng, t, u + 1, v + 1)
    labels = rng.integers(1, v + 1, size=u).astype(np.int64)
    boundary = np.sort(rng.integers(0, u + 1, size=t))
    boundary[-1] = u
    window = build_window(boundary, u, r_d, r_u)
    banded = np.ascontiguousarray(gather_band(lp, window))
    write_tensor(case_dir / "banded.bat1", banded)
    write_tensor(case_dir / "labels.bat1", labels)
    write_tensor(case_dir / "starts.bat1", window.starts.astype(np.int64))
    cli("bat-loss", "--lattice", str(case_dir / "banded.bat1"),
        "--labels", str(case_dir / "labels.bat1"),
        "--window", str(case_dir / "starts.bat1"),
        "--rd", str(r_d), "--ru", str(r_u),
        "--loss-out", str(case_dir / "expected_loss.bat1"),
        "--grad-out", str(case_dir / "expected_grad.bat1"))
    return {
        "kind": "bat",
        "labels": [int(x) for x in labels],
        "starts": [int(x) for x in window.starts],
        "r_d": r_d,
        "r_u": r_u,
    }


def main():
    if OUT.exists():
        shutil.rmtree(OUT)
    OUT.mkdir(parents=True)
    rng = make_rng(1201)
    manifest = []
    for i in range(20):
        case_dir = OUT / f"case_{i:02d}"
        case_dir.mkdir()
        meta = rnnt_case(case_dir, rng) if i < 10 else bat_case(case_dir, rng)
        meta["id"] = i
        (case_dir / "meta.json").write_text(json.dumps(meta, indent=1))
        manifest.append(meta)
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"wrote {len(manifest)} cases to {OUT}")


if __name__ == "__main__":
    main()
