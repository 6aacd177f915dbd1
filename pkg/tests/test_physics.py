import logging

import numpy as np
import pytest

import vertexflow as vf
from vertexflow.errors import ConfigError


def test_effective_saturation_endpoints(bc_model):
    assert bc_model.effective_saturation(0.15) == pytest.approx(0.0)
    assert bc_model.effective_saturation(0.85) == pytest.approx(1.0)
    assert bc_model.effective_saturation(0.5) == pytest.approx((0.5 - 0.15) / 0.7)


def test_effective_saturation_clamps_and_logs(bc_model, caplog):
    with caplog.at_level(logging.WARNING, logger="vertexflow.physics"):
        assert bc_model.effective_saturation(0.95) == pytest.approx(1.0)
        assert bc_model.effective_saturation(-0.2) == pytest.approx(0.0)
    assert any("clamped" in r.message for r in caplog.records)


def test_rel_perm_endpoints(bc_model):
    assert bc_model.rel_perm_w(0.15) == 0.0
    assert bc_model.rel_perm_o(0.15) == pytest.approx(1.0)
    assert bc_model.rel_perm_w(0.85) == pytest.approx(1.0)
    assert bc_model.rel_perm_o(0.85) == 0.0


def test_rel_perm_midpoint_values(bc_model):
    # theta = 3: exponent (2 + 3*theta)/theta = 11/3, sbar(0.5) = 0.5
    krw = bc_model.rel_perm_w(0.5)
    kro = bc_model.rel_perm_o(0.5)
    assert krw == pytest.approx(0.5 ** (11.0 / 3.0), rel=1e-12)
    assert kro == pytest.approx(0.25 * (1.0 - 0.5 ** (11.0 / 3.0)), rel=1e-12)


def test_rel_perm_monotone(bc_model):
    s = np.linspace(0.15, 0.85, 1000)
    krw = bc_model.rel_perm_w(s)
    kro = bc_model.rel_perm_o(s)
    assert np.all(np.diff(krw) >= 0)
    assert np.all(np.diff(kro) <= 0)
    assert np.all((krw >= 0) & (krw <= 1))
    assert np.all((kro >= 0) & (kro <= 1))


def test_capillary_branches_agree_at_threshold(bc_model):
    # both branches at sbar = R must coincide: p_d * R^(-1/theta)
    s_at_R = 0.15 + bc_model.R * 0.7
    expected = 5e3 * 20.0 ** (1.0 / 3.0)
    assert bc_model.capillary_pressure(s_at_R) == pytest.approx(expected, rel=1e-10)
    eps = 1e-12
    below = bc_model.capillary_pressure(s_at_R - eps)
    above = bc_model.capillary_pressure(s_at_R + eps)
    assert below == pytest.approx(above, rel=1e-10)


def test_capillary_at_full_saturation(bc_model):
    assert bc_model.capillary_pressure(0.85) == pytest.approx(bc_model.p_d)


def test_capillary_quadratic_model_value(mms_model):
    # theta = 2, p_d = 50: p_c(0.5) = 50 / sqrt(0.5)
    assert mms_model.capillary_pressure(0.5) == pytest.approx(50.0 * 0.5 ** -0.5, rel=1e-12)


@pytest.mark.parametrize("model_name", ["bc", "mms"])
def test_capillary_derivative_matches_finite_differences(model_name, bc_model, mms_model):
    model = bc_model if model_name == "bc" else mms_model
    lo = model.s_rw
    hi = 1.0 - model.s_ro
    span = hi - lo
    s_joint = lo + model.R * span
    rng = np.random.default_rng(11)
    samples = lo + span * rng.uniform(0.02, 0.98, 200)
    h = 1e-7 * span
    for s in samples:
        if abs(s - s_joint) < 10 * h:
            continue
        fd = (model.capillary_pressure(s + h) - model.capillary_pressure(s - h)) / (2 * h)
        assert model.capillary_pressure_derivative(s) == pytest.approx(fd, rel=1e-6)


def test_capillary_derivative_one_sided_across_joint(bc_model):
    span = 0.7
    s_joint = 0.15 + bc_model.R * span
    h = 1e-8
    left = (bc_model.capillary_pressure(s_joint) - bc_model.capillary_pressure(s_joint - h)) / h
    right = (bc_model.capillary_pressure(s_joint + h) - bc_model.capillary_pressure(s_joint)) / h
    assert bc_model.capillary_pressure_derivative(s_joint - h) == pytest.approx(left, rel=1e-5)
    assert bc_model.capillary_pressure_derivative(s_joint + h) == pytest.approx(right, rel=1e-5)
    # C1 joint: the two one-sided slopes agree to first order
    assert left == pytest.approx(right, rel=1e-5)


def test_fractional_flow_endpoints(bc_model, reservoir_fluids):
    assert vf.fractional_flow(bc_model, reservoir_fluids, "w", 0.85) == pytest.approx(1.0)
    assert vf.fractional_flow(bc_model, reservoir_fluids, "o", 0.85) == pytest.approx(0.0)
    assert vf.fractional_flow(bc_model, reservoir_fluids, "w", 0.15) == pytest.approx(0.0)
    assert vf.fractional_flow(bc_model, reservoir_fluids, "o", 0.15) == pytest.approx(1.0)


def test_fractional_flow_midpoint(bc_model, reservoir_fluids):
    eta_w = 0.5 ** (11.0 / 3.0) / 5e-4
    eta_o = 0.25 * (1.0 - 0.5 ** (11.0 / 3.0)) / 2e-3
    assert vf.mobility(bc_model, reservoir_fluids, "w", 0.5) == pytest.approx(eta_w, rel=1e-12)
    assert vf.mobility(bc_model, reservoir_fluids, "o", 0.5) == pytest.approx(eta_o, rel=1e-12)
    assert vf.fractional_flow(bc_model, reservoir_fluids, "w", 0.5) == pytest.approx(
        eta_w / (eta_w + eta_o), rel=1e-12)


def test_fractional_flows_sum_to_one(bc_model, reservoir_fluids):
    rng = np.random.default_rng(5)
    s = 0.15 + 0.7 * rng.random(1000)
    total = (np.asarray(vf.fractional_flow(bc_model, reservoir_fluids, "w", s))
             + np.asarray(vf.fractional_flow(bc_model, reservoir_fluids, "o", s)))
    assert np.abs(total - 1.0).max() < 1e-14


def test_invalid_parameters_rejected():
    with pytest.raises(ConfigError):
        vf.BrooksCoreyModel(theta=5.0)
    with pytest.raises(ConfigError):
        vf.BrooksCoreyModel(p_d=-1.0)
    with pytest.raises(ConfigError):
        vf.BrooksCoreyModel(R=1.5)
    with pytest.raises(ConfigError):
        vf.BrooksCoreyModel(s_rw=0.6, s_ro=0.5)
    with pytest.raises(ConfigError):
        vf.FluidPair(mu_w=0.0, mu_o=1.0)
