"""Command-line front end.

Verbs: ``train``, ``eval``, ``pack``, ``unpack``, ``metrics``, ``bounds``,
``matrix``, ``plot``, ``kernel``. Exit codes: 0 success, 2 configuration
error, 3 data error. The output root for run directories is ``--out``, else
``$NMQUANT_OUT``, else ``./runs``.

``kernel`` serves the toolkit's pointwise operations over a line-delimited
JSON protocol on stdin/stdout for foreign-language callers: each request is
one JSON object ``{"op": ..., ...}``; matrices travel as base64-encoded
binary dumps (the documented "MTRX" format), packed tensors as base64
".sqpk" bytes, so float64 payloads cross the boundary bit-exactly. Replies
are ``{"ok": true, ...}`` or ``{"ok": false, "error": <type>, "message":
<core message>}``.
"""

from __future__ import annotations

import argparse
import base64
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import campaign_csv, bounds_campaign
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .data import DataError
from .harness import load_checkpoint, rerun_from_echo, run_experiment, run_matrix
from .metrics import column_cosines, deviation_report, sqnr_db
from .packing import (
    CorruptStreamError,
    PackedTensor,
    compression_ratio,
    decode,
    encode,
)
from .quantize import MODE_WEIGHT, QuantSpec, init_scale, quantize
from .sparsity import SparsitySpec, sparsify
from .tensor import AXES, AXIS_INPUT, Matrix, Rng, rand_matrix
from .training import build_state, evaluate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _load_matrix(path: str) -> Matrix:
    if path.endswith(".csv"):
        return Matrix.load_csv(path)
    return Matrix.load(path)


def _save_matrix(m: Matrix, path: str) -> None:
    if path.endswith(".csv"):
        m.save_csv(path)
    else:
        m.save(path)


def _out_root(args, cfg: ExperimentConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(cfg.out_root())


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.name:
        cfg.name = args.name
    run_dir = _out_root(args, cfg) / cfg.name
    report = run_experiment(cfg, run_dir=run_dir)
    if report.diverged:
        print(f"{cfg.name}: diverged (see {run_dir})")
    else:
        print(
            f"{cfg.name}: accuracy={report.final_accuracy:.4f} "
            f"savings={report.savings_percent}% ratio={report.ratio}x "
            f"({run_dir})"
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    cfg = parse_config((run_dir / "config.txt").read_text())
    dataset = cfg.make_data()
    state = build_state(cfg.to_train_config(), dataset.dim, dataset.num_classes)
    load_checkpoint(state, run_dir / "checkpoint")
    acc = evaluate(state, dataset.test_x, dataset.test_y)
    print(f"{cfg.name}: accuracy={acc:.4f}")
    return EXIT_OK


def cmd_pack(args) -> int:
    w = _load_matrix(args.input)
    sspec = SparsitySpec.parse(args.sparsity, axis=args.axis)
    qspec = QuantSpec(args.bits, MODE_WEIGHT)
    sp = sparsify(w, sspec)
    scale = (
        init_scale(sp.values, qspec).scale if args.scale == "auto"
        else float(args.scale)
    )
    qspec = qspec.with_scale(scale)
    q = quantize(sp.values, qspec)
    codes = np.where(sp.mask, q.codes, 0)
    packed = encode(codes, sp.mask, sspec, qspec)
    packed.save(args.output)
    info = compression_ratio(sspec.keep, sspec.group, args.bits)
    print(
        f"packed {w.rows}x{w.cols} -> {args.output} "
        f"({info.packed_bits} bits/block, {info.ratio}x, {info.savings_percent}%)"
    )
    return EXIT_OK


def cmd_unpack(args) -> int:
    packed = PackedTensor.load(args.input)
    out = decode(packed)
    _save_matrix(Matrix(out.values), args.output)
    print(
        f"unpacked {args.input} -> {args.output} "
        f"({out.spec.label}, {out.qspec.bits}-bit, scale={out.qspec.scale!r})"
    )
    return EXIT_OK


def cmd_metrics(args) -> int:
    ref = _load_matrix(args.ref)
    cmp_ = _load_matrix(args.compressed)
    rep = deviation_report([(ref, cmp_)], names=[args.name])
    if args.csv:
        Path(args.csv).write_text(rep.to_csv_text())
    if args.json:
        Path(args.json).write_text(rep.to_json() + "\n")
    sq = "inf" if math.isinf(rep.sqnr_db) else f"{rep.sqnr_db:.4f}"
    print(
        f"cosine={rep.cosine_mean:.6f} +/- {rep.cosine_std:.6f} "
        f"sqnr_db={sq} columns={rep.num_columns}"
    )
    return EXIT_OK


def cmd_bounds(args) -> int:
    import dataclasses

    res = bounds_campaign(args.samples, args.dim, args.dist, args.seed,
                          keep_checks=args.keep)
    if args.output:
        # normalize to unit squared norm so the two bound curves are
        # functions of the angle alone (monotone, plottable)
        norm = [
            dataclasses.replace(
                c, norm_sq=1.0, error_sq=c.error_sq / c.norm_sq,
                lower=c.lower / c.norm_sq, upper=c.upper / c.norm_sq,
            )
            for c in res.checks
        ]
        Path(args.output).write_text(campaign_csv(norm))
    print(
        f"samples={args.samples} dist={args.dist} min_cos={res.min_cos:.6f} "
        f"min_energy_ratio={res.min_energy_ratio:.6f} "
        f"max_lower_excess={res.max_lower_excess:.3e} "
        f"max_upper_excess={res.max_upper_excess:.3e}"
    )
    return EXIT_OK


def cmd_matrix(args) -> int:
    cfg = load_config(args.config)
    out_dir = _out_root(args, cfg) / f"{cfg.name}_matrix"
    result = run_matrix(cfg, out_dir=out_dir)
    print(result["matrix_csv"], end="")
    print(f"(written to {out_dir})")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .svgplot import plot_csv

    svg = plot_csv(Path(args.input).read_text(), args.kind)
    Path(args.output).write_text(svg)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_rerun(args) -> int:
    report = rerun_from_echo(Path(args.run))
    sys.stdout.write(report.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# kernel protocol


def _mat_to_b64(m: Matrix) -> str:
    return base64.b64encode(m.to_bytes()).decode("ascii")


def _mat_from_b64(text: str) -> Matrix:
    return Matrix.from_bytes(base64.b64decode(text))


def _arr_to_b64(arr: np.ndarray) -> str:
    return _mat_to_b64(Matrix(np.asarray(arr, dtype=np.float64)))


def _kernel_handle(req: dict) -> dict:
    op = req.get("op")
    if op == "version":
        return {"version": __version__}
    if op == "rand_matrix":
        m = rand_matrix(Rng(int(req["seed"])), int(req["rows"]), int(req["cols"]),
                        req.get("dist", "gaussian"))
        return {"w": _mat_to_b64(m)}
    if op == "quantize":
        spec = QuantSpec(
            int(req["bits"]), req.get("mode", MODE_WEIGHT),
            scale=float(req["scale"]),
            halved_unsigned=bool(req.get("halved_unsigned", False)),
        )
        out = quantize(_mat_from_b64(req["w"]), spec)
        return {
            "values": _mat_to_b64(out.values),
            "codes": _arr_to_b64(out.codes),
            "clamp_mask": _arr_to_b64(out.clamp_mask),
        }
    if op == "sparsify":
        spec = SparsitySpec(
            int(req["keep"]), int(req["group"]),
            axis=req.get("axis", AXIS_INPUT), pad=bool(req.get("pad", False)),
        )
        out = sparsify(_mat_from_b64(req["w"]), spec)
        return {
            "values": _mat_to_b64(out.values),
            "mask": _arr_to_b64(out.mask),
            "thresholds": _arr_to_b64(out.thresholds.reshape(1, -1)),
        }
    if op == "sqnr_db":
        db = sqnr_db(_mat_from_b64(req["w"]), _mat_from_b64(req["what"]))
        return {"db": "inf" if math.isinf(db) else db}
    if op == "column_cosines":
        cos = column_cosines(_mat_from_b64(req["w"]), _mat_from_b64(req["what"]))
        return {"cosines": _arr_to_b64(cos.reshape(1, -1))}
    if op == "encode":
        sspec = SparsitySpec(int(req["keep"]), int(req["group"]),
                             axis=req.get("axis", AXIS_INPUT))
        qspec = QuantSpec(int(req["bits"]), MODE_WEIGHT, scale=float(req["scale"]))
        codes = _mat_from_b64(req["codes"]).data.astype(np.int64)
        mask = _mat_from_b64(req["mask"]).data != 0.0
        packed = encode(codes, mask, sspec, qspec)
        return {"packed": base64.b64encode(packed.to_bytes()).decode("ascii")}
    if op == "decode":
        packed = PackedTensor.from_bytes(base64.b64decode(req["packed"]))
        out = decode(packed)
        return {
            "codes": _arr_to_b64(out.codes),
            "mask": _arr_to_b64(out.mask),
            "keep": out.spec.keep,
            "group": out.spec.group,
            "axis": out.spec.axis,
            "bits": out.qspec.bits,
            "scale": out.qspec.scale,
        }
    if op == "compression_ratio":
        info = compression_ratio(int(req["keep"]), int(req["group"]), int(req["bits"]))
        return {
            "ratio": info.ratio,
            "savings_percent": info.savings_percent,
            "packed_bits": info.packed_bits,
        }
    raise ValueError(f"unknown kernel op {op!r}")


def cmd_kernel(_args) -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            reply = {"ok": True, **_kernel_handle(json.loads(line))}
        except Exception as exc:  # errors cross the wire, never kill the server
            reply = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmquant",
        description="N:M structured sparsity + low-bit quantization toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="run one training experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output root (default $NMQUANT_OUT or ./runs)")
    p.add_argument("--name", help="override the run name")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpointed run")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rerun", help="reproduce a run from its config echo")
    p.add_argument("--run", required=True)
    p.set_defaults(fn=cmd_rerun)

    p = sub.add_parser("pack", help="sparsify+quantize a matrix into .sqpk")
    p.add_argument("--input", required=True, help=".mtrx or .csv matrix")
    p.add_argument("--output", required=True, help=".sqpk path")
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--sparsity", default="2:4")
    p.add_argument("--axis", default=AXIS_INPUT, choices=AXES)
    p.add_argument("--scale", default="auto", help="step size or 'auto'")
    p.set_defaults(fn=cmd_pack)

    p = sub.add_parser("unpack", help="decode .sqpk into a dequantized matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help=".mtrx or .csv path")
    p.set_defaults(fn=cmd_unpack)

    p = sub.add_parser("metrics", help="deviation report between two matrices")
    p.add_argument("--ref", required=True)
    p.add_argument("--compressed", required=True)
    p.add_argument("--name", default="layer0")
    p.add_argument("--csv", help="write the CSV report here")
    p.add_argument("--json", help="write the JSON report here")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("bounds", help="run the error-bound campaign")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--dist", default="gaussian",
                   choices=["gaussian", "uniform", "cauchy"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep", type=int, default=512,
                   help="rows retained for the CSV")
    p.add_argument("--output", help="campaign CSV path")
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("matrix", help="run the sparsity x bits x reg sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_matrix)

    p = sub.add_parser("plot", help="render a CSV into a deterministic SVG")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("kernel", help="JSON-lines compute server (bindings)")
    p.set_defaults(fn=cmd_kernel)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorruptStreamError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
