import math

import numpy as np
import pytest

from nmquant.metrics import (
    DeviationReport,
    column_cosines,
    degenerate_columns,
    deviation_report,
    sqnr_db,
)
from nmquant.quantize import QuantSpec, init_scale, quantize
from nmquant.sparsity import SparsitySpec, sparsify
from nmquant.tensor import Matrix, Rng, ShapeError, rand_matrix


def compress(w, bits, sparse):
    if sparse:
        w = sparsify(w, SparsitySpec(2, 4)).values
    spec = QuantSpec(bits, scale=init_scale(w, QuantSpec(bits)).scale)
    return quantize(w, spec).values


class TestColumnCosines:
    def test_identity_gives_ones(self):
        w = rand_matrix(Rng(0), 6, 5)
        assert np.array_equal(column_cosines(w, w), np.ones(5))

    def test_orthogonal_gives_zero(self):
        cos = column_cosines(Matrix([[1.0], [0.0]]), Matrix([[0.0], [1.0]]))
        assert cos.tolist() == [0.0]

    def test_known_value(self):
        cos = column_cosines(Matrix([[1.0], [1.0]]), Matrix([[1.0], [0.0]]))
        assert cos[0] == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-12)

    def test_zero_norm_column_flagged(self):
        w = Matrix([[0.0, 1.0], [0.0, 2.0]])
        what = Matrix([[1.0, 1.0], [1.0, 2.0]])
        assert column_cosines(w, what).tolist()[0] == 0.0
        assert degenerate_columns(w, what).tolist() == [True, False]

    def test_invariant_under_column_rescale(self):
        rng = Rng(1)
        w = rand_matrix(rng, 8, 4)
        what = rand_matrix(rng, 8, 4)
        scales = np.array([0.5, 2.0, 7.0, 0.001])
        again = column_cosines(Matrix(w.data * scales), what)
        np.testing.assert_allclose(again, column_cosines(w, what), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            column_cosines(np.zeros((2, 2)), np.zeros((3, 2)))


class TestSqnr:
    def test_zero_noise_is_infinite(self):
        w = rand_matrix(Rng(2), 4, 4)
        assert math.isinf(sqnr_db(w, w))

    def test_single_column_known_value(self):
        got = sqnr_db(Matrix([[3.0], [4.0]]), Matrix([[3.0], [0.0]]))
        assert got == pytest.approx(10.0 * math.log10(25.0 / 16.0), rel=1e-12)
        assert got == pytest.approx(1.9382, abs=1e-4)

    def test_scale_invariance(self):
        rng = Rng(3)
        w = rand_matrix(rng, 6, 6)
        what = rand_matrix(rng, 6, 6)
        assert sqnr_db(Matrix(5.0 * w.data), Matrix(5.0 * what.data)) == pytest.approx(
            sqnr_db(w, what), rel=1e-12
        )

    def test_strictly_decreases_under_extra_noise(self):
        rng = Rng(4)
        for trial in range(1000):
            w = rand_matrix(Rng(10_000 + trial), 16, 16, "gaussian")
            what = compress(w, 4, sparse=False)
            resid = w.data - what.data
            sigma = float(np.sqrt(np.mean(resid * resid)))
            noise = sigma * Rng(20_000 + trial).gaussian(256).reshape(16, 16)
            assert sqnr_db(w, Matrix(what.data + noise)) < sqnr_db(w, what)


class TestDeviationReport:
    def test_identity_single_layer(self):
        w = rand_matrix(Rng(5), 4, 4)
        rep = deviation_report([(w, w)])
        assert rep.cosine_mean == 1.0
        assert rep.cosine_std == 0.0
        assert math.isinf(rep.sqnr_db)

    def test_identical_layers_zero_std(self):
        w = rand_matrix(Rng(6), 8, 8)
        what = compress(w, 4, sparse=True)
        rep = deviation_report([(w, what), (w, what)])
        assert rep.cosine_std == 0.0
        assert rep.sqnr_std == 0.0
        assert rep.num_columns == 16

    def test_quant_only_beats_sparse_quant(self):
        # directional ordering: less compression -> higher cosine and SQNR
        for seed in range(10):
            w = rand_matrix(Rng(seed), 32, 16, "gaussian")
            q = compress(w, 4, sparse=False)
            sq = compress(w, 4, sparse=True)
            rep_q = deviation_report([(w, q)])
            rep_sq = deviation_report([(w, sq)])
            assert rep_q.cosine_mean > rep_sq.cosine_mean
            assert rep_q.sqnr_db > rep_sq.sqnr_db

    def test_empty_layer_list_rejected(self):
        with pytest.raises(ValueError):
            deviation_report([])

    def test_json_round_trip_with_inf(self):
        w = rand_matrix(Rng(7), 4, 4)
        rep = deviation_report([(w, w), (w, compress(w, 8, sparse=False))])
        text = rep.to_json()
        assert '"inf"' in text  # sentinel serialized as a string
        import json

        again = DeviationReport.from_dict(json.loads(text))
        assert again == rep

    def test_csv_has_layer_rows_and_summary(self):
        w = rand_matrix(Rng(8), 4, 4)
        rep = deviation_report([(w, compress(w, 4, sparse=True))], names=["fc1"])
        lines = rep.to_csv_text().strip().splitlines()
        assert lines[0].startswith("layer,cosine_mean")
        assert lines[1].startswith("fc1,")
        assert lines[-1].startswith("summary,")
