import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fairfed.errors import ConfigError, DomainError
from fairfed.objective import (LOSS_FLOOR, ClientCoefficients, FairnessPreset, PresetKind,
                               desert_betas, objective_value, resolve_preset)

upsilon_lists = st.lists(st.floats(1e-3, 5.0), min_size=1, max_size=8)


class TestPresetParsing:
    @pytest.mark.parametrize("text,kind,beta", [
        ("egalitarian", PresetKind.EGALITARIAN, None),
        ("Utilitarian", PresetKind.UTILITARIAN, None),
        ("rawls", PresetKind.RAWLS, 5.0),
        ("rawls:2.5", PresetKind.RAWLS, 2.5),
        ("desert", PresetKind.DESERT, None),
        ("qfed", PresetKind.QFED, 0.0),
        ("qfed:1", PresetKind.QFED, 1.0),
        ("fedavg", PresetKind.FEDAVG, None),
        ("rawlsdp:3", PresetKind.RAWLS, 3.0),
    ])
    def test_parse(self, text, kind, beta):
        p = FairnessPreset.parse(text)
        assert p.kind is kind and p.beta == beta

    def test_custom(self):
        p = FairnessPreset.parse("custom:1.5:2:-1")
        assert (p.r, p.beta, p.gamma) == (1.5, 2.0, -1)
        assert p.label == "custom:1.5:2:-1"

    @pytest.mark.parametrize("text", [
        "nope", "rawls:0", "rawls:-1", "qfed:-0.5", "rawls:1:2", "custom:1:2", "custom:1:2:3",
        "egalitarian:1", "rawls:abc",
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            FairnessPreset.parse(text)

    def test_labels_roundtrip(self):
        for text in ("rawls:5", "qfed:0.1", "desert", "custom:2:0.5:0"):
            p = FairnessPreset.parse(text)
            assert FairnessPreset.parse(p.label) == p

    def test_needs_uncertainty(self):
        assert FairnessPreset.parse("rawls").needs_uncertainty
        assert not FairnessPreset.parse("qfed:2").needs_uncertainty
        assert not FairnessPreset.parse("fedavg").needs_uncertainty
        assert not FairnessPreset.parse("custom:1:1:0").needs_uncertainty


class TestResolve:
    def test_utilitarian_example(self):
        c = resolve_preset(FairnessPreset.parse("utilitarian"), [0.2, 0.8])
        np.testing.assert_allclose(c.weights, [5.0, 1.25], rtol=1e-15)
        np.testing.assert_array_equal(c.exponents, [1.0, 1.0])

    def test_desert_symmetric(self):
        c = resolve_preset(FairnessPreset.parse("desert"), [0.5, 0.5])
        np.testing.assert_allclose(c.exponents, [-0.5, -0.5], rtol=1e-15)
        np.testing.assert_array_equal(c.weights, [1.0, 1.0])

    def test_rawls_exponents(self):
        u = [0.03, 0.06, 0.12, 0.19, 0.23]
        c = resolve_preset(FairnessPreset.parse("rawls:5"), u)
        np.testing.assert_array_equal(c.exponents, 6.0)
        np.testing.assert_allclose(c.weights, np.array(u) / sum(u), rtol=1e-15)

    def test_egalitarian(self):
        c = resolve_preset(FairnessPreset.parse("egalitarian"), [1.0, 3.0])
        np.testing.assert_allclose(c.weights, [0.25, 0.75])
        np.testing.assert_array_equal(c.exponents, 1.0)

    def test_qfed(self):
        c = resolve_preset(FairnessPreset.parse("qfed:2"), [0.1, 0.9, 0.4])
        np.testing.assert_array_equal(c.weights, 1.0)
        np.testing.assert_array_equal(c.exponents, 3.0)

    def test_custom_gamma(self):
        u = np.array([0.2, 0.3, 0.5])
        c = resolve_preset(FairnessPreset.parse("custom:2:0.5:-1"), u)
        np.testing.assert_allclose(c.weights, 1.0 / u)
        np.testing.assert_array_equal(c.exponents, 1.0)
        c0 = resolve_preset(FairnessPreset.parse("custom:2:0.5:0"), u)
        np.testing.assert_array_equal(c0.weights, 1.0)

    def test_fedavg_unit(self):
        c = resolve_preset(FairnessPreset.parse("fedavg"), [0.3, 0.7])
        np.testing.assert_array_equal(c.weights, 1.0)
        np.testing.assert_array_equal(c.exponents, 1.0)

    @pytest.mark.parametrize("u", [[0.0, 1.0], [-0.1, 1.0], [np.nan, 1.0], []])
    def test_bad_upsilon(self, u):
        with pytest.raises(DomainError):
            resolve_preset(FairnessPreset.parse("egalitarian"), u)

    def test_qfed_tolerates_zero_upsilon(self):
        resolve_preset(FairnessPreset.parse("qfed"), [0.0, 0.0])


class TestObjectiveValue:
    def test_plain_sum(self):
        c = ClientCoefficients(np.ones(3), np.ones(3))
        assert objective_value([0.1, 0.2, 0.3], c) == pytest.approx(0.6, abs=1e-15)

    def test_worked_example(self):
        c = ClientCoefficients(np.ones(2), np.full(2, 2.0))
        assert objective_value([0.5, 2.0], c) == pytest.approx(4.25, abs=1e-15)

    def test_egalitarian_equal_upsilon_is_mean(self):
        c = resolve_preset(FairnessPreset.parse("egalitarian"), [1.0, 1.0])
        assert objective_value([0.4, 1.0], c) == pytest.approx(0.7, abs=1e-15)

    def test_zero_loss_negative_exponent_clamped(self):
        c = ClientCoefficients(np.ones(2), np.array([-0.5, 0.5]))
        v = objective_value([0.0, 0.0], c)
        assert math.isfinite(v)
        assert v == pytest.approx(LOSS_FLOOR ** -0.5 + LOSS_FLOOR ** 0.5)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            objective_value([1.0], ClientCoefficients(np.ones(2), np.ones(2)))


class TestProperties:
    @settings(max_examples=100)
    @given(upsilon_lists, st.floats(1e-3, 1e3),
           st.sampled_from(["egalitarian", "utilitarian", "rawls:2", "desert", "custom:1:3:1"]))
    def test_scale_invariance(self, u, k, name):
        p = FairnessPreset.parse(name)
        a = resolve_preset(p, u)
        b = resolve_preset(p, np.array(u) * k)
        np.testing.assert_allclose(a.weights, b.weights, rtol=1e-9)
        np.testing.assert_allclose(a.exponents, b.exponents, rtol=1e-9)

    @settings(max_examples=100)
    @given(st.lists(st.floats(1e-3, 5.0), min_size=2, max_size=8, unique=True))
    def test_desert_simplex_and_order(self, u):
        beta = desert_betas(u)
        assert abs(beta.sum() - 1.0) <= 1e-12
        order = np.argsort(u)
        assume(np.all(np.diff(np.sort(u)) > 1e-9))
        assert np.all(np.diff(beta[order]) < 0)
        assert np.all(beta > 0)

    @settings(max_examples=100)
    @given(st.lists(st.floats(1e-6, 10.0), min_size=1, max_size=8), st.data())
    def test_monotone_in_each_loss(self, losses, data):
        n = len(losses)
        c = ClientCoefficients(np.full(n, 1.0 / n), np.ones(n))
        i = data.draw(st.integers(0, n - 1))
        bump = data.draw(st.floats(1e-3, 10.0))
        higher = list(losses)
        higher[i] += bump
        assert objective_value(higher, c) > objective_value(losses, c)
