"""model-core: basis recursion, spline/phi evaluation, forward pass, file IO."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lutkan import (
    EdgeFunction,
    InputDomainError,
    InputShapeError,
    KanLayer,
    KnotGrid,
    MalformedModelError,
    ModelSpec,
    UnsupportedVersionError,
    bspline_basis,
    eval_phi,
    eval_spline,
    fit_spline_lsq,
    forward_reference,
    load_model,
    save_model,
    synth_model,
)
from lutkan.model import bspline_basis_batch, model_to_dict, silu

from oracle import naive_forward, naive_spline


def make_grid(lo=-1.0, hi=1.0, g=5, k=3):
    return KnotGrid(domain_min=lo, domain_max=hi, num_intervals=g, degree=k)


class TestKnotGrid:
    def test_shape_and_anchors(self):
        grid = make_grid()
        assert grid.knots.shape == (5 + 2 * 3 + 1,)
        assert grid.knots[3] == -1.0
        assert grid.knots[3 + 5] == 1.0
        assert np.all(np.diff(grid.knots) > 0)

    def test_degree_zero_has_no_extension(self):
        grid = make_grid(0.0, 1.0, g=2, k=0)
        assert grid.knots.tolist() == [0.0, 0.5, 1.0]

    def test_invalid_domains_rejected(self):
        with pytest.raises(MalformedModelError):
            KnotGrid(domain_min=1.0, domain_max=1.0, num_intervals=5, degree=3)
        with pytest.raises(MalformedModelError):
            KnotGrid(domain_min=0.0, domain_max=1.0, num_intervals=0, degree=3)
        with pytest.raises(MalformedModelError):
            KnotGrid(domain_min=0.0, domain_max=1.0, num_intervals=5, degree=-1)


class TestBasis:
    def test_degree0_indicator(self):
        grid = make_grid(0.0, 1.0, g=2, k=0)
        assert bspline_basis(0.25, grid).tolist() == [1.0, 0.0]

    def test_partition_of_unity_inside_domain(self):
        grid = make_grid(-1.0, 1.0, g=5, k=3)
        total = np.sum(bspline_basis(0.3, grid))
        assert abs(total - 1.0) <= 1e-12

    def test_linear_hat_center(self):
        # k=1, G=2 on [0,1]: the middle hat peaks at the interior knot
        grid = make_grid(0.0, 1.0, g=2, k=1)
        basis = bspline_basis(0.5, grid)
        assert basis[1] == 1.0
        assert basis[0] == 0.0 and basis[2] == 0.0

    def test_partition_of_unity_everywhere(self):
        grid = make_grid(-2.0, 3.0, g=7, k=3)
        xs = np.linspace(-2.0, 3.0, 501)  # includes both endpoints
        sums = np.sum(bspline_basis_batch(xs, grid), axis=1)
        assert np.all(np.abs(sums - 1.0) <= 1e-10)

    def test_sum_is_one_at_exact_right_endpoint(self):
        for k in (0, 1, 2, 3):
            grid = make_grid(0.0, 1.0, g=4, k=k)
            assert abs(np.sum(bspline_basis(1.0, grid)) - 1.0) <= 1e-12

    def test_local_support(self):
        grid = make_grid(0.0, 1.0, g=5, k=3)
        x = 0.45  # strictly inside segment 2
        basis = bspline_basis(x, grid)
        nonzero = np.flatnonzero(basis)
        assert nonzero.tolist() == [2, 3, 4, 5]

    def test_outside_domain_is_permitted(self):
        grid = make_grid(-1.0, 1.0)
        far = bspline_basis(10.0, grid)
        assert np.all(far == 0.0)
        near = bspline_basis(1.05, grid)  # inside the extension band
        assert np.all(np.isfinite(near))

    def test_non_finite_x_rejected(self):
        with pytest.raises(InputDomainError):
            bspline_basis(float("nan"), make_grid())

    @given(st.floats(min_value=-1.0, max_value=1.0))
    def test_matches_naive_recursion(self, x):
        grid = make_grid(-1.0, 1.0, g=5, k=3)
        fast = bspline_basis(x, grid)
        slow = np.array([float(np.asarray(
            naive_spline(x, grid, np.eye(grid.num_bases)[m])))
            for m in range(grid.num_bases)])
        assert np.max(np.abs(fast - slow)) <= 1e-12


class TestEvalSpline:
    def test_partition_of_unity_coeffs(self):
        grid = make_grid()
        coeffs = np.ones(grid.num_bases)
        for x in (-1.0, -0.33, 0.0, 0.77, 1.0):
            assert abs(eval_spline(x, grid, coeffs) - 1.0) <= 1e-12

    def test_zero_coeffs(self):
        grid = make_grid()
        assert eval_spline(0.4, grid, np.zeros(grid.num_bases)) == 0.0

    def test_reproduces_identity_after_fit(self):
        grid = make_grid(0.0, 1.0, g=5, k=3)
        xs = np.linspace(0.0, 1.0, 200)
        coeffs = fit_spline_lsq(xs, xs, grid)
        assert abs(eval_spline(0.37, grid, coeffs) - 0.37) <= 1e-6

    def test_coefficient_length_checked(self):
        with pytest.raises(MalformedModelError):
            eval_spline(0.0, make_grid(), np.ones(3))


class TestEvalPhi:
    def test_spline_only(self):
        grid = make_grid()
        coeffs = np.linspace(-1, 1, grid.num_bases)
        edge = EdgeFunction(base_scale=0.0, spline_scale=1.0, coefficients=coeffs)
        assert eval_phi(0.3, edge, grid) == eval_spline(0.3, grid, coeffs)

    def test_base_only_at_zero(self):
        edge = EdgeFunction(1.0, 0.0, np.zeros(8))
        assert eval_phi(0.0, edge, make_grid()) == 0.0

    def test_base_scaling(self):
        edge = EdgeFunction(2.0, 0.0, np.zeros(8))
        grid = make_grid(-20.0, 20.0)
        expected = 2.0 * 10.0 / (1.0 + math.exp(-10.0))
        assert abs(eval_phi(10.0, edge, grid) - 19.999092) <= 1e-4
        assert eval_phi(10.0, edge, grid) == pytest.approx(expected, abs=1e-12)


def all_zero_model(d=3):
    grid = make_grid()
    def zero_layer(n_in, n_out):
        return KanLayer(
            n_in=n_in, n_out=n_out, grid=grid,
            alpha=np.zeros((n_in, n_out)), beta=np.zeros((n_in, n_out)),
            coeffs=np.zeros((n_in, n_out, grid.num_bases)),
        )
    return ModelSpec(layers=(zero_layer(d, 2), zero_layer(2, 1)), feature_count=d)


class TestForwardReference:
    def test_all_zero_model_gives_half(self):
        model = all_zero_model()
        probs = forward_reference(model, np.random.default_rng(0).uniform(-1, 1, (20, 3)))
        assert np.all(probs == 0.5)

    def test_identity_single_edge_at_zero(self):
        grid = make_grid(-1.0, 1.0)
        xs = np.linspace(-1, 1, 200)
        coeffs = fit_spline_lsq(xs, xs, grid)
        layer = KanLayer(1, 1, grid, np.zeros((1, 1)), np.ones((1, 1)),
                         coeffs.reshape(1, 1, -1))
        model = ModelSpec(layers=(layer,), feature_count=1)
        prob = forward_reference(model, [[0.0]])[0]
        assert abs(prob - 0.5) <= 1e-7

    def test_matches_naive_oracle(self):
        model = synth_model([4, 3, 1], seed=42)
        x = np.random.default_rng(1).uniform(-1, 1, (64, 4))
        fast = forward_reference(model, x)
        slow = naive_forward(model, x)
        assert np.max(np.abs(fast - slow)) <= 1e-10

    def test_output_strictly_inside_unit_interval(self, small_model, small_dataset):
        probs = forward_reference(small_model, small_dataset.features)
        assert np.all(probs > 0.0) and np.all(probs < 1.0)

    def test_monotone_in_final_preactivation(self):
        # a 1-feature, 1-layer model with the identity spline: raising x
        # raises the pre-activation, so the probability must rise too
        grid = make_grid(-1.0, 1.0)
        xs = np.linspace(-1, 1, 200)
        coeffs = fit_spline_lsq(xs, xs, grid)
        layer = KanLayer(1, 1, grid, np.zeros((1, 1)), np.ones((1, 1)),
                         coeffs.reshape(1, 1, -1))
        model = ModelSpec(layers=(layer,), feature_count=1)
        probs = forward_reference(model, np.linspace(-1, 1, 50).reshape(-1, 1))
        assert np.all(np.diff(probs) > 0)

    def test_shape_and_domain_errors(self, small_model):
        with pytest.raises(InputShapeError):
            forward_reference(small_model, np.zeros((5, 7)))
        bad = np.zeros((2, 4))
        bad[1, 2] = np.nan
        with pytest.raises(InputDomainError):
            forward_reference(small_model, bad)

    def test_chunking_is_invisible(self, small_model):
        x = np.random.default_rng(3).uniform(-1, 1, (5000, 4))
        whole = forward_reference(small_model, x)
        parts = np.concatenate([
            forward_reference(small_model, x[:1234]),
            forward_reference(small_model, x[1234:]),
        ])
        assert np.array_equal(whole, parts)


class TestModelFile:
    def test_round_trip_bit_exact(self, small_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(small_model, path)
        loaded = load_model(path)
        assert loaded.feature_count == small_model.feature_count
        assert loaded.threshold == small_model.threshold
        for a, b in zip(loaded.layers, small_model.layers):
            assert np.array_equal(a.alpha, b.alpha)
            assert np.array_equal(a.beta, b.beta)
            assert np.array_equal(a.coeffs, b.coeffs)
            assert np.array_equal(a.grid.knots, b.grid.knots)

    def test_missing_layers_key_named(self, small_model, tmp_path):
        doc = model_to_dict(small_model)
        del doc["layers"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(MalformedModelError, match="layers"):
            load_model(path)

    def test_bad_grid_field_path_named(self, small_model, tmp_path):
        doc = model_to_dict(small_model)
        del doc["layers"][0]["grid"]["G"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(MalformedModelError, match=r"layers\[0\]\.grid\.G"):
            load_model(path)

    def test_version_mismatch(self, small_model, tmp_path):
        doc = model_to_dict(small_model)
        doc["format_version"] = 99
        path = tmp_path / "future.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(UnsupportedVersionError):
            load_model(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("not json at all {{{")
        with pytest.raises(MalformedModelError):
            load_model(path)


class TestModelInvariants:
    def test_layer_chain_checked(self):
        grid = make_grid()
        l1 = KanLayer(2, 3, grid, np.zeros((2, 3)), np.zeros((2, 3)),
                      np.zeros((2, 3, grid.num_bases)))
        l2 = KanLayer(4, 1, grid, np.zeros((4, 1)), np.zeros((4, 1)),
                      np.zeros((4, 1, grid.num_bases)))
        with pytest.raises(MalformedModelError):
            ModelSpec(layers=(l1, l2), feature_count=2)

    def test_last_layer_must_be_scalar(self):
        grid = make_grid()
        layer = KanLayer(2, 2, grid, np.zeros((2, 2)), np.zeros((2, 2)),
                         np.zeros((2, 2, grid.num_bases)))
        with pytest.raises(MalformedModelError):
            ModelSpec(layers=(layer,), feature_count=2)

    def test_edge_view_round_trip(self, small_model):
        layer = small_model.layers[0]
        edge = layer.edge(2, 1)
        assert edge.base_scale == layer.alpha[2, 1]
        assert np.array_equal(edge.coefficients, layer.coeffs[2, 1])

    def test_silu_is_overflow_safe(self):
        vals = silu(np.array([-800.0, 0.0, 800.0]))
        assert np.all(np.isfinite(vals))
        assert vals[1] == 0.0


class TestImmutability:
    def test_model_arrays_are_read_only(self, small_model):
        layer = small_model.layers[0]
        with pytest.raises(ValueError):
            layer.alpha[0, 0] = 5.0
        with pytest.raises(ValueError):
            layer.grid.knots[0] = -9.0
