"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 infeasible band.
Errors print one structured line ``error: <Code>: <message>`` on stderr.
Numeric outputs use 9 significant digits. Flag precedence is
flags > --config file (key=value lines) > built-in defaults.

The kernel subcommands (``loss``, ``bat-loss``) accept ``--server`` to
run against an HTTP service started with ``serve``; by default they call
the kernels in-process.
"""

import argparse
import base64
import csv
import json
import sys
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from . import __version__, band, bench, cif, decode, gradcheck, model
from .errors import BandInfeasible, BatError, DimMismatch
from .rnnt import rnnt_loss
from .tensorio import decode_tensor, encode_tensor, read_tensor, write_tensor


def fmt(x: float) -> str:
    return f"{x:.9g}"


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: Usage: {message}\n")
        sys.exit(1)


def _post(server: str, route: str, payload: dict) -> dict:
    req = urllib.request.Request(
        server.rstrip("/") + route,
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        body = json.loads(exc.read() or b"{}")
        code = body.get("code", "Error")
        err = BandInfeasible if code == "BandInfeasible" else BatError
        raise err(f"{code}: {body.get('message', '')}") from None


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(encode_tensor(arr)).decode("ascii")


def _emit_loss(res_loss, grad, args) -> None:
    print(fmt(res_loss))
    if args.grad_out:
        write_tensor(args.grad_out, grad)
    if args.loss_out:
        write_tensor(args.loss_out, np.array([res_loss], dtype=np.float64))


def cmd_loss(args) -> int:
    lattice = read_tensor(args.lattice)
    labels = read_tensor(args.labels).astype(np.int64)
    if args.server:
        body = _post(args.server, "/v1/rnnt-loss",
                     {"log_probs": _b64(lattice), "labels": [int(x) for x in labels]})
        loss = decode_tensor(base64.b64decode(body["loss_tensor"]))[0]
        grad = decode_tensor(base64.b64decode(body["grad"]))
    else:
        res = rnnt_loss(lattice, labels)
        loss, grad = res.loss, res.grad
    _emit_loss(loss, grad, args)
    return 0


def _resolve_window(args, u_len: int, t_len: int) -> band.BandWindow:
    if args.window:
        starts = read_tensor(args.window).astype(np.int64)
        return band.BandWindow(starts, min(args.rd + args.ru + 2, u_len + 1),
                               args.rd, args.ru)
    if args.cif_weights:
        weights = read_tensor(args.cif_weights).astype(np.float64)
        scaled = cif.cif_scale(weights, u_len).scaled
        alignment = cif.cif_boundary(cif.clamp_weights(scaled))
        return band.build_window(alignment.boundary, u_len, args.rd, args.ru)
    raise DimMismatch("one of --window or --cif-weights is required")


def cmd_bat_loss(args) -> int:
    lattice = read_tensor(args.lattice)
    labels = read_tensor(args.labels).astype(np.int64)
    window = _resolve_window(args, len(labels), lattice.shape[0])
    if args.server:
        body = _post(args.server, "/v1/bat-loss", {
            "log_probs": _b64(lattice),
            "window_starts": [int(x) for x in window.starts],
            "labels": [int(x) for x in labels],
            "r_d": args.rd, "r_u": args.ru,
        })
        loss = decode_tensor(base64.b64decode(body["loss_tensor"]))[0]
        grad = decode_tensor(base64.b64decode(body["grad"]))
    else:
        res = band.bat_loss(lattice, window, labels)
        loss, grad = res.loss, res.grad
    _emit_loss(loss, grad, args)
    return 0


def cmd_check_grad(args) -> int:
    err = gradcheck.check_rnnt(args.seed, args.t, args.u, args.v)
    print(fmt(err))
    return 0 if err < 1e-4 else 2


def cmd_train(args) -> int:
    utts = model.load_dataset(args.data)
    d_in = utts[0].frames.shape[1]
    vocab = max(max(u.tokens) for u in utts)
    mcfg = model.ModelConfig(d_in=d_in, vocab=vocab)
    tcfg = model.TrainConfig(
        mode=args.mode, r_d=args.rd, r_u=args.ru, lr=args.lr, seed=args.seed,
        epochs=args.epochs, batch_size=args.batch_size,
        max_steps=args.max_steps, stop_token_err=args.stop_token_err,
        lambda_bat=args.lambda_bat, lambda_ce=args.lambda_ce,
        lambda_qua=args.lambda_qua,
    )
    m = model.init_model(mcfg, seed=args.seed)
    rows = model.train(m, utts, tcfg)
    model.write_log(rows, args.log)
    if args.out_model:
        model.save_model(m, args.out_model)
    last = rows[-1]
    print(f"steps {last.step} token_err {fmt(last.token_err)}")
    return 0


def cmd_decode(args) -> int:
    m = model.load_model(args.model)
    utts = model.load_dataset(args.data)
    traces, refs = [], []
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utt", "frame", "token_index", "token_id"])
        for i, utt in enumerate(utts):
            _, trace = decode.greedy_decode(m, utt.frames, frame_ms=args.frame_ms)
            traces.append(trace)
            refs.append(utt.end_frames[-1] * args.frame_ms)
            for idx, (tok, frame, _ms) in enumerate(trace.events, start=1):
                writer.writerow([i, frame, idx, tok])
    report = decode.latency_metrics(traces, refs)
    with open(args.report, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["avg_et_ms", "pr50_ms", "pr90_ms", "n_utts", "n_empty"])
        writer.writerow([fmt(report.avg_et_ms), fmt(report.pr50_ms),
                         fmt(report.pr90_ms), len(report.per_utt), report.n_empty])
    print(f"avg_et_ms {fmt(report.avg_et_ms)} pr50_ms {fmt(report.pr50_ms)} "
          f"pr90_ms {fmt(report.pr90_ms)}")
    return 0


def cmd_latency(args) -> int:
    utts = model.load_dataset(args.data)
    by_utt = {}
    with open(args.traces, newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["utt"])
            frame = int(row["frame"])
            by_utt.setdefault(i, decode.EmissionTrace(frame_ms=args.frame_ms)) \
                .events.append((int(row["token_id"]), frame, frame * args.frame_ms))
    traces = [by_utt.get(i, decode.EmissionTrace(frame_ms=args.frame_ms))
              for i in range(len(utts))]
    refs = [u.end_frames[-1] * args.frame_ms for u in utts]
    report = decode.latency_metrics(traces, refs)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["avg_et_ms", "pr50_ms", "pr90_ms", "n_utts", "n_empty"])
        writer.writerow([fmt(report.avg_et_ms), fmt(report.pr50_ms),
                         fmt(report.pr90_ms), len(report.per_utt), report.n_empty])
    print(f"avg_et_ms {fmt(report.avg_et_ms)} pr50_ms {fmt(report.pr50_ms)} "
          f"pr90_ms {fmt(report.pr90_ms)}")
    return 0


def cmd_bench(args) -> int:
    cfg = bench.BenchConfig(
        t=args.t, u=args.u, v=args.v, r_d=args.rd, r_u=args.ru, n=args.n,
        dtype=args.dtype, repeats=args.repeats, warmup=args.warmup,
        seed=args.seed, threads=args.threads,
        timing=args.time_source == "wall",
    )
    report = bench.run_bench(cfg)
    bench.emit_report(report, args.out, fmt=args.format)
    print(f"mem_ratio {fmt(report.mem_ratio)} time_ratio {fmt(report.time_ratio)}")
    return 0


def cmd_dump_cif(args) -> int:
    raw = read_tensor(args.weights).astype(np.float64)
    scaled = cif.cif_scale(raw, args.u).scaled
    clamped = cif.clamp_weights(scaled)
    alignment = cif.cif_boundary(clamped)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "omega_raw", "omega_scaled", "C_t"])
        for t in range(len(raw)):
            writer.writerow([t + 1, fmt(raw[t]), fmt(clamped[t]),
                             int(alignment.boundary[t])])
    return 0


def cmd_synth(args) -> int:
    spec = model.SynthSpec(
        vocab=args.vocab, min_tokens=args.min_tokens, max_tokens=args.max_tokens,
        min_frames=args.min_frames, max_frames=args.max_frames, noise=args.noise,
    )
    utts = model.synth_task(args.seed, args.n_utts, spec)
    model.save_dataset(utts, args.out)
    print(f"wrote {len(utts)} utterances to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="batlattice", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="key=value file; flags take precedence")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for batch-parallel sections")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("loss", help="full-lattice loss from BAT1 files")
    p.add_argument("--lattice", required=True, help="(T,U+1,V+1) log-prob tensor")
    p.add_argument("--labels", required=True, help="i64 label tensor (U,)")
    p.add_argument("--grad-out", help="write gradient tensor here")
    p.add_argument("--loss-out", help="write 1-element f64 loss tensor here")
    p.add_argument("--server", help="route through a running service URL")
    p.set_defaults(fn=cmd_loss)

    p = sub.add_parser("bat-loss", help="band-restricted loss from BAT1 files")
    p.add_argument("--lattice", required=True, help="(T,S,V+1) banded tensor")
    p.add_argument("--labels", required=True)
    p.add_argument("--window", help="i64 window-starts tensor (T,)")
    p.add_argument("--cif-weights", help="f64 raw CIF weights tensor (T,)")
    p.add_argument("--rd", type=int, required=True)
    p.add_argument("--ru", type=int, required=True)
    p.add_argument("--grad-out")
    p.add_argument("--loss-out")
    p.add_argument("--server")
    p.set_defaults(fn=cmd_bat_loss)

    p = sub.add_parser("check-grad", help="FD check of the full-loss gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--u", type=int, default=3)
    p.add_argument("--v", type=int, default=3)
    p.set_defaults(fn=cmd_check_grad)

    p = sub.add_parser("train", help="train the toy model on a dataset dir")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["full", "bat"], default="full")
    p.add_argument("--rd", type=int, default=2)
    p.add_argument("--ru", type=int, default=2)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--stop-token-err", type=float)
    p.add_argument("--lambda-bat", type=float, default=1.0)
    p.add_argument("--lambda-ce", type=float, default=1.0)
    p.add_argument("--lambda-qua", type=float, default=1.0)
    p.add_argument("--log", required=True, help="CSV training log path")
    p.add_argument("--out-model", help="save the trained model JSON here")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="greedy decode + latency report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--frame-ms", type=float, default=10.0)
    p.add_argument("--out", required=True, help="emission trace CSV")
    p.add_argument("--report", required=True, help="latency report CSV")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("latency", help="latency report from a trace CSV")
    p.add_argument("--traces", required=True)
    p.add_argument("--data", required=True, help="dataset with reference ends")
    p.add_argument("--frame-ms", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_latency)

    p = sub.add_parser("bench", help="full vs banded time/memory comparison")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--u", type=int, required=True)
    p.add_argument("--v", type=int, required=True)
    p.add_argument("--rd", type=int, default=2)
    p.add_argument("--ru", type=int, default=2)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-source", choices=["wall", "none"], default="wall",
                   help="'none' zeroes wall times for reproducible CSVs")
    p.add_argument("--format", choices=["csv", "text"], default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("dump-cif", help="dump weights/boundary CSV")
    p.add_argument("--weights", required=True, help="f64 raw weights tensor")
    p.add_argument("--u", type=int, required=True, help="target token count")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dump_cif)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-utts", type=int, default=200)
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--min-tokens", type=int, default=3)
    p.add_argument("--max-tokens", type=int, default=8)
    p.add_argument("--min-frames", type=int, default=2)
    p.add_argument("--max-frames", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("serve", help="run the HTTP kernel service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def _apply_config(parser: _Parser, argv):
    """Pre-scan for --config and install its key=value pairs as defaults."""
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if not path:
        return
    overrides = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DimMismatch(f"bad config line: {line!r}")
        key, val = line.split("=", 1)
        overrides[key.strip().replace("-", "_")] = val.strip()

    def converted(target, raw_overrides):
        # run each value through the matching option's type callable so
        # config defaults compare equal to flag-parsed values
        out = {}
        for action in target._actions:
            if action.dest in raw_overrides:
                val = raw_overrides[action.dest]
                out[action.dest] = action.type(val) if action.type else val
        return out

    parser.set_defaults(**converted(parser, overrides))
    for sub in parser._subparsers._group_actions[0].choices.values():
        sub.set_defaults(**converted(sub, overrides))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.fn(args)
    except BatError as exc:
        sys.stderr.write(f"error: {exc.code}: {exc}\n")
        return exc.exit_code
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
