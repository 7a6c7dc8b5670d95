import dataclasses
import math

import numpy as np
import pytest

from fxtiss.analysis import (
    SweepReport,
    implication_sampler,
    iss_residual_sweep,
    max_lyapunov_trace,
    settling_uniformity_sweep,
)
from fxtiss.certificate import SubsystemData, assemble_certificate
from fxtiss.comparison import GainFunction, KFxRate
from fxtiss.sim import IntegratorOptions, SystemDef, integrate
from fxtiss.systems import HOMOG_IC, PowerInterconnection, make_exponential_control, make_homogeneous_example, \
    quadratic_subsystems, sg

SQRT_QUAD = SystemDef(1, lambda t, x: -sg(x, 0.5) - sg(x, 2.0), np.zeros(1))
DECADES = [10.0 ** k for k in range(7)]


@pytest.fixture(scope="module")
def homog():
    ex = make_homogeneous_example()
    cert = assemble_certificate(ex.sub1, ex.sub2)
    tr = integrate(ex.system, HOMOG_IC, IntegratorOptions(horizon=10))
    return ex, cert, tr


# --- settling sweep ---

def test_sweep_fixed_time_scalar():
    rep = settling_uniformity_sweep(SQRT_QUAD, DECADES, [1.0])
    assert rep.verdict
    assert max(rep.values) <= 3.0
    assert rep.summary["saturation_ratio"] < 1.01


def test_sweep_exponential_fails():
    rep = settling_uniformity_sweep(make_exponential_control(1), DECADES, [1.0])
    assert not rep.verdict
    assert rep.summary["saturation_ratio"] > 1.25
    # settle times grow like log(m)
    v = np.array(rep.values)
    np.testing.assert_allclose(np.diff(v), math.log(10), rtol=1e-3)


def test_sweep_reports_non_settling_magnitude():
    opts = IntegratorOptions(horizon=20)
    rep = settling_uniformity_sweep(make_exponential_control(1), [1e2, 1e4, 1e8], [1.0], opts)
    assert not rep.verdict
    assert any("1e+08" in f for f in rep.failures)
    assert math.isnan(rep.values[-1])


def test_sweep_needs_two_large_magnitudes():
    rep = settling_uniformity_sweep(SQRT_QUAD, [1, 10, 100], [1.0])
    assert not rep.verdict


@pytest.mark.parametrize("mags", [[], [1, 1], [10, 1], [-1, 1]])
def test_sweep_magnitude_validation(mags):
    with pytest.raises(ValueError):
        settling_uniformity_sweep(SQRT_QUAD, mags, [1.0])


def test_sweep_parallel_matches_serial():
    a = settling_uniformity_sweep(SQRT_QUAD, DECADES[:4], [1.0])
    b = settling_uniformity_sweep(SQRT_QUAD, DECADES[:4], [1.0], n_jobs=2)
    assert a.entries == b.entries


def test_report_outputs(tmp_path):
    rep = settling_uniformity_sweep(SQRT_QUAD, [1e2, 1e3], [1.0])
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "magnitude,settle_time"
    assert float(lines[1].split(",")[1]) == rep.values[0]
    d = rep.to_dict()
    assert d["verdict"] in ("pass", "fail") and d["summary"]["max"] == max(rep.values)
    assert "saturation_ratio" in rep.to_text()


def test_report_needs_entries():
    with pytest.raises(ValueError):
        SweepReport("settling", (), {}, True, 1.25)


# --- ISS residual sweep ---

def test_iss_zero_rate_residual():
    rep = iss_residual_sweep([0.0])
    assert rep.values[0] < 1e-8


def test_iss_ordering():
    rep = iss_residual_sweep([0, 0.3, 2])
    r = rep.values
    assert rep.verdict
    assert r[0] < 1e-4 < r[1] < r[2]


def test_iss_larger_amplitude_not_smaller():
    a = iss_residual_sweep([0.3]).values[0]
    b = iss_residual_sweep([0.3], amplitude_scale=2.0).values[0]
    assert b >= a


def test_iss_validation():
    with pytest.raises(ValueError):
        iss_residual_sweep([-1.0])


# --- max-form Lyapunov decrease ---

def test_trace_at_target_is_vacuous(homog):
    ex, cert, _ = homog
    tr = integrate(ex.system, [0.0, 0.0])
    rep = max_lyapunov_trace(tr, cert, ex.sub1, ex.sub2)
    assert rep.checked == 0 and rep.violations == 0


def test_trace_certified_run(homog):
    ex, cert, tr = homog
    rep = max_lyapunov_trace(tr, cert, ex.sub1, ex.sub2)
    assert rep.checked > 100
    assert rep.violations == 0


def test_trace_detects_corrupted_rate(homog):
    ex, cert, tr = homog
    # the certified rate is conservative by a wide factor along this run,
    # so the corruption has to exceed that factor to be visible
    margin = max_lyapunov_trace(tr, cert, ex.sub1, ex.sub2).worst_margin
    factor = 100.0
    assert factor > margin + 1
    bad = dataclasses.replace(cert, composed_rate=cert.composed_rate.scaled(factor))
    assert max_lyapunov_trace(tr, bad, ex.sub1, ex.sub2).violations > 0


def test_trace_rejects_invalid_certificate(homog):
    ex, cert, tr = homog
    with pytest.raises(ValueError):
        max_lyapunov_trace(tr, dataclasses.replace(cert, valid=False), ex.sub1, ex.sub2)


# --- implication sampler ---

def test_implication_decoupled():
    model = PowerInterconnection(((1, 0.5), (1, 2)), ((1e-12, 1.0),), ((1, 0.5), (1, 2)), ((1e-12, 1.0),))
    s1, s2 = quadratic_subsystems(model)
    rep = implication_sampler(s1, s2, model.field_with_input, samples=20_000)
    assert sum(rep.violations) == 0


def test_implication_homog_nominal():
    ex = make_homogeneous_example()
    rep = implication_sampler(ex.sub1, ex.sub2, ex.model.field_with_input, samples=100_000)
    assert min(rep.antecedent) > 0
    assert rep.violations == (0, 0)
    assert rep.seed is not None


def test_implication_inflated_cross_gain():
    ex = make_homogeneous_example()
    inflated = ex.model.scaled_cross(100.0)
    rep = implication_sampler(ex.sub1, ex.sub2, inflated.field_with_input, samples=100_000)
    assert sum(rep.violations) > 0
    assert rep.violation_fraction > 0


def test_implication_seeded():
    ex = make_homogeneous_example()
    a = implication_sampler(ex.sub1, ex.sub2, ex.model.field_with_input, samples=5000, seed=7)
    b = implication_sampler(ex.sub1, ex.sub2, ex.model.field_with_input, samples=5000, seed=7)
    assert a == b


def test_implication_rate_only_subsystems():
    # linear gains and a plain rate: the sampler needs quadratic Lyapunov data
    sub = SubsystemData(GainFunction.linear(0.5), KFxRate(1, 0.5, 1, 2))
    with pytest.raises(ValueError):
        implication_sampler(sub, sub, lambda X, U: -X, samples=10)
