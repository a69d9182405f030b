"""Introspection: intermediate activation stacks, activation maximization
ascent behavior, and the tiled-grid export."""

import json

import numpy as np
import pytest
from PIL import Image

from anonet import introspect, model
from anonet.filterbank import build_bank


@pytest.fixture(scope="module")
def sexp1():
    m = model.build_anonet("SExp1", build_bank("S", 7), seed=0)
    # seed BN running stats so inference mode works
    rng = np.random.default_rng(0)
    m.forward(rng.random((4, 1, 32, 32)).astype(np.float32))
    return m


class TestIntermediateActivations:
    def test_shapes(self, sexp1):
        img = np.random.default_rng(1).random((24, 24)).astype(np.float32)
        stacks = introspect.intermediate_activations(sexp1, img)
        assert [s.shape for s in stacks] == [
            (13, 24, 24), (32, 24, 24), (32, 24, 24), (1, 24, 24)]

    def test_layer_subset(self, sexp1):
        img = np.zeros((16, 16), dtype=np.float32)
        stacks = introspect.intermediate_activations(sexp1, img, layers=[2])
        assert len(stacks) == 1 and stacks[0].shape == (32, 16, 16)

    def test_bad_layer_index(self, sexp1):
        with pytest.raises(IndexError):
            introspect.intermediate_activations(
                sexp1, np.zeros((8, 8), dtype=np.float32), layers=[7])

    def test_relu_nonnegative(self, sexp1):
        img = np.random.default_rng(2).random((16, 16)).astype(np.float32)
        stacks = introspect.intermediate_activations(sexp1, img)
        for s in stacks[:-1]:
            assert s.min() >= 0.0

    def test_weights_untouched(self, sexp1):
        before = sexp1.conv_params[1].weights.copy()
        introspect.intermediate_activations(
            sexp1, np.random.default_rng(3).random((16, 16)).astype(np.float32))
        np.testing.assert_array_equal(sexp1.conv_params[1].weights, before)


class TestActivationMaximization:
    def test_objective_increases(self, sexp1):
        cfg = introspect.ActMaxConfig(layer=1, filter=3, steps=40,
                                      input_size=(16, 16), seed=0)
        res = introspect.activation_maximization(sexp1, cfg)
        assert res.trace[-1] > res.trace[0]
        assert res.input.shape == (16, 16)

    def test_deterministic(self, sexp1):
        cfg = introspect.ActMaxConfig(layer=0, filter=5, steps=15,
                                      input_size=(16, 16), seed=4)
        a = introspect.activation_maximization(sexp1, cfg)
        b = introspect.activation_maximization(sexp1, cfg)
        np.testing.assert_array_equal(a.input, b.input)
        assert a.trace == b.trace

    def test_trace_matches_objective(self, sexp1):
        cfg = introspect.ActMaxConfig(layer=1, filter=0, steps=5,
                                      input_size=(16, 16), seed=1)
        res = introspect.activation_maximization(sexp1, cfg)
        recomputed = introspect.activation_objective(sexp1, res.input, 1, 0)
        assert recomputed == pytest.approx(res.trace[-1], rel=1e-6)

    def test_bad_indices(self, sexp1):
        with pytest.raises(IndexError):
            introspect.activation_maximization(
                sexp1, introspect.ActMaxConfig(layer=9, filter=0))
        with pytest.raises(IndexError):
            introspect.activation_maximization(
                sexp1, introspect.ActMaxConfig(layer=0, filter=99))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            introspect.ActMaxConfig(layer=0, filter=0, steps=0)
        with pytest.raises(ValueError):
            introspect.ActMaxConfig(layer=0, filter=0, alpha=-1.0)

    def test_renormalize_keeps_unit_std(self, sexp1):
        cfg = introspect.ActMaxConfig(layer=1, filter=2, steps=10,
                                      input_size=(16, 16), renormalize=True)
        res = introspect.activation_maximization(sexp1, cfg)
        assert res.input.std() == pytest.approx(1.0, abs=1e-3)


class TestGridExport:
    def test_grid_and_sidecar(self, tmp_path):
        stack = np.random.default_rng(0).random((5, 8, 8))
        path = tmp_path / "grid.png"
        introspect.save_grid(stack, path)
        img = np.asarray(Image.open(path))
        # 5 tiles -> 3x2 grid with 1px padding
        assert img.shape == (2 * 9 + 1, 3 * 9 + 1)
        sidecar = json.loads((tmp_path / "grid.png.json").read_text())
        assert len(sidecar["tiles"]) == 5
        assert sidecar["tiles"][0]["min"] <= sidecar["tiles"][0]["max"]

    def test_constant_tile_handled(self, tmp_path):
        stack = np.ones((1, 4, 4))
        introspect.save_grid(stack, tmp_path / "g.png")  # must not divide by zero

    def test_trace_csv(self, tmp_path):
        path = tmp_path / "trace.csv"
        introspect.write_trace_csv([0.1, 0.2, 0.30000000000000004], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,objective"
        assert lines[3] == "2,0.30000000000000004"
