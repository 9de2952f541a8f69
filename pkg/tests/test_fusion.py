import numpy as np
import pytest

from promptsurv import autodiff as ad
from promptsurv.errors import DataValidationError, ShapeError
from promptsurv.fusion import GateParams, gate_fuse, linear, pool_to_regions


def make_gate(d, fill=0.0, gate_bias=0.0):
    def param(shape, value):
        return ad.parameter(np.full(shape, value))

    return GateParams(
        w_gate=param((2 * d, d), fill),
        b_gate=param((1, d), gate_bias),
        w_patch=param((d, d), fill),
        b_patch=param((1, d), fill),
        w_region=param((d, d), fill),
        b_region=param((1, d), fill),
    )


def random_gate(d, rng):
    def param(shape):
        return ad.parameter(rng.normal(scale=0.5, size=shape))

    return GateParams(
        w_gate=param((2 * d, d)), b_gate=param((1, d)),
        w_patch=param((d, d)), b_patch=param((1, d)),
        w_region=param((d, d)), b_region=param((1, d)),
    )


class TestPoolToRegions:
    def test_single_child_sums(self):
        tokens = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        parents = np.array([0, 0, 1])
        selected = np.array([0, 2])
        pooled = pool_to_regions(tokens[selected], selected, parents, 2)
        assert np.array_equal(pooled, [[1.0, 2.0], [5.0, 6.0]])

    def test_region_without_selected_children_is_zero(self):
        tokens = np.array([[1.0, 1.0], [2.0, 2.0]])
        parents = np.array([0, 1])
        pooled = pool_to_regions(tokens[[0]], np.array([0]), parents, 2)
        assert np.array_equal(pooled[1], [0.0, 0.0])

    def test_mass_conservation_oracle(self):
        rng = np.random.default_rng(2)
        tokens = rng.normal(size=(24, 5))
        parents = np.repeat(np.arange(4), 6)
        selected = np.sort(rng.choice(24, size=13, replace=False))
        pooled = pool_to_regions(tokens[selected], selected, parents, 4)
        assert pooled.sum(axis=0) == pytest.approx(tokens[selected].sum(axis=0),
                                                   abs=1e-12)

    def test_linearity_over_disjoint_selections(self):
        rng = np.random.default_rng(3)
        tokens = rng.normal(size=(12, 3))
        parents = np.repeat(np.arange(3), 4)
        sel_a = np.array([0, 4, 8])
        sel_b = np.array([1, 5, 9])
        both = np.sort(np.concatenate([sel_a, sel_b]))
        combined = pool_to_regions(tokens[both], both, parents, 3)
        separate = (pool_to_regions(tokens[sel_a], sel_a, parents, 3)
                    + pool_to_regions(tokens[sel_b], sel_b, parents, 3))
        assert combined == pytest.approx(separate, abs=1e-12)

    def test_parent_index_out_of_range(self):
        with pytest.raises(DataValidationError, match="parent"):
            pool_to_regions(np.ones((1, 2)), np.array([0]), np.array([5]), 2)


class TestGateFuse:
    def test_all_zero_parameters_give_zero_output(self):
        d = 4
        rng = np.random.default_rng(0)
        pooled = ad.constant(rng.normal(size=(3, d)))
        regions = ad.constant(rng.normal(size=(3, d)))
        out = gate_fuse(pooled, regions, make_gate(d))
        # gate = sigmoid(0) = 0.5 everywhere, both tanh streams are zero
        assert np.array_equal(out.value, np.zeros((3, d)))

    def test_saturated_gate_selects_patch_stream(self):
        d = 3
        rng = np.random.default_rng(1)
        pooled_values = rng.normal(size=(2, d))
        pooled = ad.constant(pooled_values)
        regions = ad.constant(rng.normal(size=(2, d)))
        params = random_gate(d, np.random.default_rng(2))
        params.b_gate = ad.parameter(np.full((1, d), 30.0))
        params.w_gate = ad.parameter(np.zeros((2 * d, d)))
        out = gate_fuse(pooled, regions, params)
        expected = linear(ad.constant(pooled_values), params.w_patch, params.b_patch)
        assert out.value == pytest.approx(np.tanh(expected.value), abs=1e-12)

    def test_saturated_negative_gate_selects_region_stream(self):
        d = 3
        rng = np.random.default_rng(4)
        region_values = rng.normal(size=(2, d))
        pooled = ad.constant(rng.normal(size=(2, d)))
        regions = ad.constant(region_values)
        params = random_gate(d, np.random.default_rng(5))
        params.b_gate = ad.parameter(np.full((1, d), -30.0))
        params.w_gate = ad.parameter(np.zeros((2 * d, d)))
        out = gate_fuse(pooled, regions, params)
        expected = linear(ad.constant(region_values), params.w_region, params.b_region)
        assert out.value == pytest.approx(np.tanh(expected.value), abs=1e-12)

    def test_output_strictly_inside_unit_interval(self):
        d = 6
        rng = np.random.default_rng(6)
        out = gate_fuse(ad.constant(rng.normal(size=(5, d)) * 3),
                        ad.constant(rng.normal(size=(5, d)) * 3),
                        random_gate(d, rng))
        assert np.all(out.value > -1.0) and np.all(out.value < 1.0)

    def test_gradients_match_finite_differences(self):
        d = 3
        rng = np.random.default_rng(7)
        pooled = rng.normal(size=(2, d))
        regions = rng.normal(size=(2, d))
        params = random_gate(d, rng)
        names = ["w_gate", "b_gate", "w_patch", "b_patch", "w_region", "b_region"]
        nodes = [getattr(params, n) for n in names]

        def f(nodes_in):
            return ad.sum_all(gate_fuse(ad.constant(pooled), ad.constant(regions),
                                        params))

        err = ad.grad_check(f, nodes, h=1e-5)
        assert err <= 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gate_fuse(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 3))),
                      make_gate(3))
