import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microlaser.params import (MicrolaserParams, VelocityDistribution,
                               baseline_params)


def test_dimensionless_constructor_is_exact():
    p = MicrolaserParams.for_dimensionless(12.0, 3.0, 0.05)
    assert p.n_ex == pytest.approx(12.0, rel=1e-12)
    assert p.theta == pytest.approx(3.0, rel=1e-12)
    assert p.gamma_c * p.t_int() == pytest.approx(0.05, rel=1e-12)


def test_transit_time_scales_inversely_with_speed():
    p = baseline_params()
    assert p.t_int(2 * p.v0) == pytest.approx(0.5 * p.t_int(), rel=1e-12)
    # vectorized call agrees with scalar calls
    v = np.array([300.0, 780.0, 1500.0])
    np.testing.assert_allclose(p.t_int(v), [p.t_int(x) for x in v],
                               rtol=1e-12)


def test_baseline_rates():
    p = baseline_params()
    assert p.g == pytest.approx(2 * math.pi * 190e3)
    assert p.gamma_c == pytest.approx(2 * math.pi * 170e3)
    assert p.mean_atom_number == pytest.approx(100.0, rel=1e-12)


def test_with_atom_number_round_trip():
    p = baseline_params().with_atom_number(37.5)
    assert p.mean_atom_number == pytest.approx(37.5, rel=1e-12)


def test_replace_keeps_other_fields():
    p = baseline_params()
    q = p.replace(v0=900.0)
    assert q.v0 == 900.0
    assert q.g == p.g and q.gamma_c == p.gamma_c


def test_json_round_trip(tmp_path):
    p = MicrolaserParams.for_dimensionless(8.0, 2.5, 0.02, dv_over_v0=0.3)
    path = tmp_path / "params.json"
    p.to_json(path)
    assert MicrolaserParams.from_json(path) == p


@pytest.mark.parametrize("kw", [
    {"g": -1.0, "gamma_c": 1.0},
    {"g": 1.0, "gamma_c": 0.0},
    {"g": 1.0, "gamma_c": 1.0, "w0": -1e-6},
    {"g": 1.0, "gamma_c": 1.0, "r": -5.0},
])
def test_invalid_params_raise(kw):
    with pytest.raises(ValueError):
        MicrolaserParams(**kw)


def test_delta_distribution_single_node():
    d = VelocityDistribution(800.0, 0.0, shape="delta")
    v, w = d.nodes()
    assert v.tolist() == [800.0]
    assert w.tolist() == [1.0]


def test_gaussian_nodes_normalized_and_centered():
    d = VelocityDistribution(800.0, 0.3)
    v, w = d.nodes()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(v > 0)
    # symmetric weighting around v0
    assert float(w @ v) == pytest.approx(800.0, rel=1e-6)


def test_gaussian_moments_match_quadrature():
    d = VelocityDistribution(780.0, 0.2)
    v, w = d.nodes()
    sigma = d.fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    var = float(w @ (v - w @ v) ** 2)
    # truncation at 3 FWHM barely clips a Gaussian
    assert var == pytest.approx(sigma ** 2, rel=1e-3)


def test_samples_respect_truncation(rng):
    d = VelocityDistribution(780.0, 0.3)
    draws = d.sample(rng, size=5000)
    lo = 780.0 - d.truncation_fwhm * d.fwhm
    hi = 780.0 + d.truncation_fwhm * d.fwhm
    assert draws.min() >= lo and draws.max() <= hi
    assert np.mean(draws) == pytest.approx(780.0, rel=0.01)


def test_sample_scalar_and_delta(rng):
    d = VelocityDistribution(650.0, 0.0)
    assert d.sample(rng) == 650.0
    assert np.all(d.sample(rng, size=4) == 650.0)


@pytest.mark.parametrize("kw", [
    {"v0": -1.0},
    {"v0": 100.0, "dv_over_v0": -0.1},
    {"v0": 100.0, "shape": "lorentzian"},
    {"v0": 100.0, "n_nodes": 0},
])
def test_invalid_distribution_raises(kw):
    with pytest.raises(ValueError):
        VelocityDistribution(**kw)


@settings(max_examples=25, deadline=None)
@given(n_ex=st.floats(0.5, 50.0), theta=st.floats(0.3, 6.0),
       gct=st.floats(1e-3, 0.2))
def test_dimensionless_round_trip_property(n_ex, theta, gct):
    p = MicrolaserParams.for_dimensionless(n_ex, theta, gct)
    assert p.n_ex == pytest.approx(n_ex, rel=1e-9)
    assert p.theta == pytest.approx(theta, rel=1e-9)
    assert p.gamma_c * p.t_int() == pytest.approx(gct, rel=1e-9)
