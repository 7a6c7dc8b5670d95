"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
also collected into ``RESULTS`` and repeated in the pytest terminal summary.
Run ``python tests/test_acceptance.py`` for the lines alone.
"""
import json
import time

import numpy as np
import pytest

import property_checks
from fxtiss.analysis import gradient_consistency_check
from fxtiss.certificate import assemble_certificate, curvature_condition
from fxtiss.cli import NEGATIVE, OK, build_setup, main
from fxtiss.sim import IntegratorOptions, integrate
from fxtiss.systems import make_feedback_opt_loop, make_nes_loop

RESULTS = {}

# potential-game matrix h^2 Q + P and offset h c + d, written out by hand (h = 1/2)
GAME_MATRIX = np.array([[4.25, 1.125], [1.125, 3.375]])
GAME_OFFSET = np.array([1.0, 1.3])

NES_MAGS = [1.0, 10.0, 100.0, 1000.0, 10000.0]
AGREEMENT = 1.25


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def homog_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("homog")
    t0 = time.perf_counter()
    code = main(["sweep", "settling", "--preset", "homog-ex", "--mags", "1e0..1e6", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    return code, json.loads((out / "sweep_settling.json").read_text()), elapsed


@pytest.fixture(scope="module")
def nes_runs():
    setup = build_setup("nes2p", {})
    loop = setup.loop
    opts = IntegratorOptions(horizon=setup.sweep_horizon)
    direction = np.asarray(setup.direction, dtype=float)
    direction /= np.linalg.norm(direction)
    runs = []
    for m in NES_MAGS:
        tr = integrate(loop.system, loop.target + m * direction, opts)
        runs.append((m, tr.settle_time, float(np.linalg.norm(tr.final[loop.n:] - U_STAR))))
    return setup, opts, runs


U_STAR = np.linalg.solve(GAME_MATRIX, -GAME_OFFSET)


def test_criterion_1_feedback_curvature():
    c = curvature_condition(3.37, 1.339, 1.1, 1.4, 1)
    ok = c.satisfied and abs(c.margin - 0.0225) <= 1e-6
    assert record(1, ok, f"margin={c.margin:.9f} (want 0.0225 +- 1e-6)")


def test_criterion_2_nash_curvature():
    c = curvature_condition(2.605, 1.257, 0.5, 0.51, 2)
    want = 2.605 - 2 * 1.257 * 1.01
    ok = c.satisfied and abs(c.margin - want) <= 1e-6
    assert record(2, ok, f"margin={c.margin:.9f} (want {want:.9f} +- 1e-6)")


def test_criterion_3_fixed_time_signature(homog_sweep, tmp_path):
    code, doc, elapsed = homog_sweep
    ratio = doc["summary"]["saturation_ratio"]
    t0 = time.perf_counter()
    exp_code = main(["sweep", "settling", "--preset", "exp-control", "--mags", "1e0..1e6", "--out", str(tmp_path)])
    elapsed += time.perf_counter() - t0
    exp_ratio = json.loads((tmp_path / "sweep_settling.json").read_text())["summary"]["saturation_ratio"]
    ok = code == OK and ratio < 1.25 and exp_code == NEGATIVE and elapsed < 30
    assert record(3, ok, f"homog-ex ratio={ratio:.4f} exit={code}; exp-control ratio={exp_ratio:.4f} "
                         f"exit={exp_code}; {elapsed:.1f}s (limit 30s)")


def test_criterion_4_iss_ordering(tmp_path):
    t0 = time.perf_counter()
    code = main(["sweep", "iss", "--preset", "fbkopt", "--eps0", "0,0.3,2", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    r = [v for _, v in json.loads((tmp_path / "sweep_iss.json").read_text())["entries"]]
    ok = code == OK and r[0] < 1e-4 < r[1] < r[2] and elapsed < 60
    assert record(4, ok, f"residuals={[float(f'{v:.4g}') for v in r]} exit={code}; {elapsed:.1f}s (limit 60s)")


def test_criterion_5_nash_equilibrium(nes_runs):
    _, _, runs = nes_runs
    reached = all(t is not None and du < 1e-6 for _, t, du in runs)
    mid = [t for m, t, _ in runs if 1e2 <= m <= 1e4]
    spread = max(mid) / min(mid) if all(t is not None for t in mid) else float("inf")
    ok = reached and spread < AGREEMENT
    worst = max(du for *_, du in runs)
    times = ", ".join(f"{m:g}:{t:.4f}" for m, t, _ in runs)
    assert record(5, ok, f"max |u-u*|={worst:.2e} (want < 1e-6); settle times {{{times}}}; "
                         f"max/min over 1e2..1e4 = {spread:.4f} (want < {AGREEMENT})")


def test_criterion_6_comparison_properties():
    t0 = time.perf_counter()
    counts = {name: fn() for name, fn in property_checks.ALL.items()}
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, (_, v) in counts.items() if v}
    ok = not bad and elapsed < 120
    total = sum(c for c, _ in counts.values())
    assert record(6, ok, f"{len(counts)} properties, {total} checks, violations={bad or 0}; "
                         f"{elapsed:.1f}s (limit 120s)")


def test_criterion_7_settling_bound(homog_sweep, nes_runs):
    _, doc, _ = homog_sweep
    homog = build_setup("homog-ex", {})
    b_h = assemble_certificate(*homog.subsystems).settling_bound
    nes_setup, opts, runs = nes_runs
    b_n = assemble_certificate(*nes_setup.subsystems).settling_bound
    slack = 3 * opts.dwell
    t_h = [v for _, v in doc["entries"]]
    t_n = [t for _, t, _ in runs]
    ok = all(t is not None for t in t_n) and max(t_h) <= b_h + slack and max(t_n) <= b_n + slack
    assert record(7, ok, f"homog-ex max {max(t_h):.4f} <= {b_h:.2f}+{slack:g}; "
                         f"nes2p max {max(t_n):.4f} <= {b_n:.2f}+{slack:g}")


def test_criterion_8_gradient_consistency():
    e_f = gradient_consistency_check(make_feedback_opt_loop())
    e_n = gradient_consistency_check(make_nes_loop())
    ok = e_f < 1e-6 and e_n < 1e-6
    assert record(8, ok, f"fbkopt max rel err={e_f:.2e}, nes2p max rel err={e_n:.2e} (want < 1e-6)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
