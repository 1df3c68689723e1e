"""Experiment runner: single runs, the compression matrix, run directories.

A run directory is self-reproducing: it contains the resolved config echo
(``config.txt``), the canonical report (``report.json``), the per-step log
(``steps.csv``), and a checkpoint; re-running from the echo reproduces
``report.json`` byte-for-byte. Wall-clock time is recorded separately in
``timing.txt`` and never enters the canonical report.

The matrix runner sweeps sparsity patterns x weight bit-widths x
regularizers and writes two CSVs: ``matrix.csv`` (wide, one row per N:M,
accuracy per bits/regularizer column, ``-`` marking diverged cells) and
``summary.csv`` (long form, one row per cell with deviation and compression
columns, consumed by the plotter).
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig, echo_config, parse_config
from .metrics import DeviationReport
from .packing import compression_ratio
from .regularize import KIND_COSINE, KIND_L2, KIND_NONE
from .sparsity import SparsitySpec
from .tensor import Matrix
from .training import DivergenceError, EpochStats, TrainState, parse_aw, train

MATRIX_SPARSITIES = ("2:4", "2:8", "2:16")
MATRIX_BITS = ("fp", "8", "4", "2")
MATRIX_REGS = (KIND_NONE, KIND_L2, KIND_COSINE)
DIVERGED = "-"


def compression_summary(aw: str, sparsity: Optional[str]):
    """(savings_percent, ratio) for a compression setting.

    Sparse+quant uses the per-block packed accounting (index bits included);
    quant-only is 1 - bits/32; sparse-only counts surviving values, N/M.
    """
    _, w_bits = parse_aw(aw)
    if sparsity is not None and w_bits is not None:
        spec = SparsitySpec.parse(sparsity)
        info = compression_ratio(spec.keep, spec.group, w_bits)
        return info.savings_percent, info.ratio
    if w_bits is not None:
        savings = 100.0 * (1.0 - w_bits / 32.0)
        return savings, round(32.0 / w_bits, 1)
    if sparsity is not None:
        spec = SparsitySpec.parse(sparsity)
        savings = 100.0 * (1.0 - spec.keep / spec.group)
        return savings, round(spec.group / spec.keep, 1)
    return 0.0, 1.0


@dataclass
class RunReport:
    """Canonical outcome of one experiment.

    ``wall_clock`` is transient bookkeeping; it is excluded from the
    serialized form so reports from identical configs are byte-identical.
    """

    name: str
    config_text: str
    final_accuracy: float
    savings_percent: float
    ratio: float
    deviation: Optional[DeviationReport]
    epochs: list
    diverged: bool = False
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        def num(x: float):
            # strict JSON: non-finite floats (diverged accuracy, the dense
            # run's undefined cosine) serialize as null
            return None if not math.isfinite(x) else x

        epochs = []
        for e in self.epochs:
            d = dataclasses.asdict(e)
            d["cosine_mean"] = num(d["cosine_mean"])
            epochs.append(d)
        return {
            "name": self.name,
            "config": self.config_text,
            "final_accuracy": num(self.final_accuracy),
            "savings_percent": self.savings_percent,
            "ratio": self.ratio,
            "diverged": self.diverged,
            "deviation": self.deviation.to_dict() if self.deviation else None,
            "epochs": epochs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True,
                          allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        def num(x) -> float:
            return float("nan") if x is None else float(x)

        dev = d.get("deviation")
        epochs = [
            EpochStats(**{**e, "cosine_mean": num(e["cosine_mean"])})
            for e in d["epochs"]
        ]
        return cls(
            name=d["name"],
            config_text=d["config"],
            final_accuracy=num(d["final_accuracy"]),
            savings_percent=float(d["savings_percent"]),
            ratio=float(d["ratio"]),
            diverged=bool(d.get("diverged", False)),
            deviation=DeviationReport.from_dict(dev) if dev else None,
            epochs=epochs,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def steps_csv(steps) -> str:
    lines = ["step,task_loss,reg_loss,lambda,accuracy"]
    for step, task, reg, lam, acc in steps:
        lines.append(f"{step},{task!r},{reg!r},{lam!r},{acc!r}")
    return "\n".join(lines) + "\n"


def save_checkpoint(state: TrainState, ckpt_dir: Path) -> None:
    """Persist weights, biases, step sizes, masks, and the loop position.

    Masks go out as packed bitsets (row-major, little-endian bit order);
    epoch/step are kept so a restored state replays the same mask policy
    (a frozen mask must stay frozen after reload).
    """
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(state.layers):
        Matrix(layer.w).save(ckpt_dir / f"layer{i}_w.mtrx")
        Matrix(layer.bias.reshape(1, -1)).save(ckpt_dir / f"layer{i}_bias.mtrx")
        if layer.frozen_mask is not None:
            bits = np.packbits(
                layer.frozen_mask.reshape(-1).astype(np.uint8), bitorder="little"
            )
            (ckpt_dir / f"layer{i}_mask.bits").write_bytes(bits.tobytes())
        layers.append({"s_w": layer.s_w, "s_x": layer.s_x})
    meta = {"layers": layers, "epoch": state.epoch, "step": state.step}
    (ckpt_dir / "scales.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_checkpoint(state: TrainState, ckpt_dir: Path) -> TrainState:
    ckpt_dir = Path(ckpt_dir)
    meta = json.loads((ckpt_dir / "scales.json").read_text())
    state.epoch = int(meta["epoch"])
    state.step = int(meta["step"])
    for i, layer in enumerate(state.layers):
        layer.w = Matrix.load(ckpt_dir / f"layer{i}_w.mtrx").data.copy()
        layer.bias = Matrix.load(ckpt_dir / f"layer{i}_bias.mtrx").data.reshape(-1).copy()
        layer.s_w = meta["layers"][i]["s_w"]
        layer.s_x = meta["layers"][i]["s_x"]
        mask_path = ckpt_dir / f"layer{i}_mask.bits"
        if mask_path.exists():
            bits = np.frombuffer(mask_path.read_bytes(), dtype=np.uint8)
            flat = np.unpackbits(bits, bitorder="little")[: layer.w.size]
            layer.frozen_mask = flat.astype(bool).reshape(layer.w.shape)
    return state


def run_experiment(cfg: ExperimentConfig, run_dir: Optional[Path] = None) -> RunReport:
    """Train one configuration; optionally persist the run directory."""
    echo = echo_config(cfg)
    dataset = cfg.make_data()
    t0 = time.perf_counter()
    diverged = False
    try:
        result = train(cfg.to_train_config(), dataset)
    except DivergenceError:
        diverged = True
        result = None
    wall = time.perf_counter() - t0
    savings, ratio = compression_summary(cfg.aw, None if cfg.sparsity == "none" else cfg.sparsity)
    report = RunReport(
        name=cfg.name,
        config_text=echo,
        final_accuracy=result.final_accuracy if result else float("nan"),
        savings_percent=savings,
        ratio=ratio,
        deviation=result.deviation if result else None,
        epochs=result.epochs if result else [],
        diverged=diverged,
        wall_clock=wall,
    )
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(echo)
        (run_dir / "report.json").write_text(report.to_json())
        (run_dir / "timing.txt").write_text(f"{wall:.3f}\n")
        if result is not None:
            (run_dir / "steps.csv").write_text(steps_csv(result.steps))
            save_checkpoint(result.state, run_dir / "checkpoint")
    return report


def rerun_from_echo(run_dir: Path) -> RunReport:
    """Reproduce a run from its config echo (no directory writes)."""
    cfg = parse_config((Path(run_dir) / "config.txt").read_text())
    return run_experiment(cfg, run_dir=None)


def cell_name(sparsity: str, bits: str, reg: str) -> str:
    nm = sparsity.replace(":", "of")
    return f"n{nm}_w{bits}_{reg}"


def _fmt_acc(report: Optional[RunReport]) -> str:
    if report is None or report.diverged or math.isnan(report.final_accuracy):
        return DIVERGED
    return f"{report.final_accuracy:.4f}"


def run_matrix(base: ExperimentConfig, out_dir: Optional[Path] = None,
               sparsities=MATRIX_SPARSITIES, bits_list=MATRIX_BITS,
               regs=MATRIX_REGS) -> dict:
    """Sweep the compression grid from a base config.

    Every cell overrides ``sparsity``, weight bits (activations stay FP in
    the sweep), and ``reg``; a diverged cell is recorded as ``-`` and the
    sweep continues. Returns ``{"reports": {(nm, bits, reg): RunReport},
    "matrix_csv": str, "summary_csv": str}``.
    """
    reports = {}
    for nm in sparsities:
        for bits in bits_list:
            for reg in regs:
                cfg = dataclasses.replace(
                    base,
                    name=cell_name(nm, bits, reg),
                    sparsity=nm,
                    aw="A32/W32" if bits == "fp" else f"A32/W{bits}",
                    reg=reg,
                )
                cell_dir = Path(out_dir) / cfg.name if out_dir is not None else None
                reports[(nm, bits, reg)] = run_experiment(cfg, run_dir=cell_dir)

    header = ["n_m"]
    for bits in bits_list:
        for reg in regs:
            header.append(f"{'fp' if bits == 'fp' else 'w' + bits}_{reg}")
    lines = [",".join(header)]
    for nm in sparsities:
        row = [nm]
        for bits in bits_list:
            for reg in regs:
                row.append(_fmt_acc(reports[(nm, bits, reg)]))
        lines.append(",".join(row))
    matrix_text = "\n".join(lines) + "\n"

    sum_lines = [
        "n_m,bits,reg,accuracy,cosine_mean,sqnr_db,compression_ratio,savings_percent"
    ]
    for nm in sparsities:
        for bits in bits_list:
            for reg in regs:
                rep = reports[(nm, bits, reg)]
                savings, ratio = compression_summary(
                    "A32/W32" if bits == "fp" else f"A32/W{bits}", nm
                )
                if rep is None or rep.diverged:
                    acc = cosm = sq = DIVERGED
                else:
                    acc = f"{rep.final_accuracy:.4f}"
                    if rep.deviation is not None:
                        cosm = f"{rep.deviation.cosine_mean:.4f}"
                        sq = (
                            "inf" if math.isinf(rep.deviation.sqnr_db)
                            else f"{rep.deviation.sqnr_db:.4f}"
                        )
                    else:
                        cosm = sq = ""
                sum_lines.append(
                    f"{nm},{bits},{reg},{acc},{cosm},{sq},{ratio},{savings}"
                )
    summary_text = "\n".join(sum_lines) + "\n"

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "matrix.csv").write_text(matrix_text)
        (out_dir / "summary.csv").write_text(summary_text)
    return {"reports": reports, "matrix_csv": matrix_text, "summary_csv": summary_text}
