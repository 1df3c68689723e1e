import base64
import json
import subprocess
import sys

import numpy as np

from nmquant.cli import main
from nmquant.packing import PackedTensor, decode
from nmquant.tensor import Matrix, Rng, rand_matrix

TOY_CFG = """
name = cli_toy
epochs = 1
dataset.classes = 3
dataset.per_class = 30
dataset.dim = 16
dataset.noise = 0.8
hidden = 8,8
batch_size = 32
sparsity = 2:4
aw = A32/W4
"""


def run_cli(args):
    return main(list(args))


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("learning_rate = 1\n")
        assert run_cli(["train", "--config", str(bad)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_data_error_is_3(self, tmp_path, capsys):
        assert run_cli(["unpack", "--input", str(tmp_path / "missing.sqpk"),
                        "--output", str(tmp_path / "o.mtrx")]) == 3
        assert "data error" in capsys.readouterr().err

    def test_corrupt_stream_is_3(self, tmp_path, capsys):
        path = tmp_path / "bad.sqpk"
        path.write_bytes(b"XXXX" + bytes(40))
        assert run_cli(["unpack", "--input", str(path),
                        "--output", str(tmp_path / "o.mtrx")]) == 3


class TestPackUnpack:
    def test_round_trip_via_files(self, tmp_path):
        w = rand_matrix(Rng(5), 16, 6, "gaussian")
        src = tmp_path / "w.mtrx"
        w.save(src)
        packed = tmp_path / "w.sqpk"
        out = tmp_path / "what.mtrx"
        assert run_cli(["pack", "--input", str(src), "--output", str(packed),
                        "--bits", "4", "--sparsity", "2:4"]) == 0
        assert run_cli(["unpack", "--input", str(packed), "--output", str(out)]) == 0
        what = Matrix.load(out)
        dec = decode(PackedTensor.load(packed))
        assert np.array_equal(what.data, dec.values)

    def test_csv_matrices_accepted(self, tmp_path):
        w = rand_matrix(Rng(6), 8, 4, "gaussian")
        src = tmp_path / "w.csv"
        w.save_csv(src)
        packed = tmp_path / "w.sqpk"
        assert run_cli(["pack", "--input", str(src), "--output", str(packed),
                        "--bits", "8", "--sparsity", "2:8"]) == 0
        assert PackedTensor.load(packed).bits == 8


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text(TOY_CFG)
        assert run_cli(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "accuracy=" in out
        assert run_cli(["eval", "--run", str(tmp_path / "cli_toy")]) == 0
        assert "accuracy=" in capsys.readouterr().out


class TestMetricsVerb:
    def test_writes_reports(self, tmp_path, capsys):
        rng = Rng(7)
        a = rand_matrix(rng, 8, 4)
        b = rand_matrix(rng, 8, 4)
        pa, pb = tmp_path / "a.mtrx", tmp_path / "b.mtrx"
        a.save(pa)
        b.save(pb)
        csv_out = tmp_path / "dev.csv"
        json_out = tmp_path / "dev.json"
        assert run_cli(["metrics", "--ref", str(pa), "--compressed", str(pb),
                        "--csv", str(csv_out), "--json", str(json_out)]) == 0
        assert csv_out.read_text().startswith("layer,")
        json.loads(json_out.read_text())
        assert "cosine=" in capsys.readouterr().out


class TestBoundsVerb:
    def test_writes_campaign_csv(self, tmp_path, capsys):
        out = tmp_path / "camp.csv"
        assert run_cli(["bounds", "--samples", "2000", "--dim", "16",
                        "--dist", "uniform", "--seed", "3", "--keep", "50",
                        "--output", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "theta,error_sq,lower,upper,gap"
        assert len(lines) == 51
        assert "min_cos=" in capsys.readouterr().out


class TestPlotVerb:
    def test_plot_from_bounds(self, tmp_path):
        camp = tmp_path / "camp.csv"
        run_cli(["bounds", "--samples", "500", "--dim", "16", "--seed", "1",
                 "--keep", "100", "--output", str(camp)])
        svg = tmp_path / "gap.svg"
        assert run_cli(["plot", "--input", str(camp), "--kind", "bound-gap",
                        "--output", str(svg)]) == 0
        assert svg.read_text().startswith("<svg")

    def test_unknown_kind_is_data_error(self, tmp_path):
        camp = tmp_path / "x.csv"
        camp.write_text("a,b\n1,2\n")
        assert run_cli(["plot", "--input", str(camp), "--kind", "pie",
                        "--output", str(tmp_path / "x.svg")]) == 3


class TestMatrixVerb:
    def test_matrix_writes_combined_csv(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setattr(
            "nmquant.harness.MATRIX_SPARSITIES", ("2:4",), raising=True
        )
        monkeypatch.setattr("nmquant.harness.MATRIX_BITS", ("4",), raising=True)
        monkeypatch.setattr("nmquant.harness.MATRIX_REGS", ("none",), raising=True)
        cfg = tmp_path / "toy.cfg"
        cfg.write_text(TOY_CFG)
        assert run_cli(["matrix", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        combined = tmp_path / "cli_toy_matrix" / "matrix.csv"
        assert combined.read_text().startswith("n_m,")


class TestKernel:
    def run_kernel(self, requests):
        proc = subprocess.run(
            [sys.executable, "-m", "nmquant", "kernel"],
            input="\n".join(json.dumps(r) for r in requests) + "\n",
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
        return [json.loads(line) for line in proc.stdout.strip().splitlines()]

    def test_version_and_ratio(self):
        replies = self.run_kernel([
            {"op": "version"},
            {"op": "compression_ratio", "keep": 2, "group": 4, "bits": 4},
        ])
        assert replies[0]["ok"] and "version" in replies[0]
        assert replies[1]["ratio"] == 10.7

    def test_quantize_round_trip_bit_exact(self):
        w = rand_matrix(Rng(11), 4, 4, "gaussian")
        b64 = base64.b64encode(w.to_bytes()).decode()
        replies = self.run_kernel([
            {"op": "quantize", "w": b64, "bits": 4, "scale": 0.25},
        ])
        got = Matrix.from_bytes(base64.b64decode(replies[0]["values"]))
        from nmquant.quantize import QuantSpec, quantize

        ref = quantize(w, QuantSpec(4, scale=0.25))
        assert np.array_equal(got.data, ref.values.data)

    def test_error_reply_carries_core_message(self):
        replies = self.run_kernel([
            {"op": "quantize", "w": "AAAA", "bits": 4, "scale": 1.0},
        ])
        assert replies[0]["ok"] is False
        assert replies[0]["error"]
        assert replies[0]["message"]
