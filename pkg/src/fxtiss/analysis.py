"""Empirical checks behind the certificates: settling saturation, ISS
residual ordering, decrease of the max-form Lyapunov function along
trajectories, Monte-Carlo sampling of the ISS implication, and
pseudo-gradient consistency.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .certificate import SmallGainCertificate, SubsystemData
from .sim import IntegratorOptions, SystemDef, Trajectory, integrate
from .systems import FeedbackOptLoop, NesLoop, make_feedback_opt_loop

SATURATION_THRESHOLD = 1.25
LARGE_MAGNITUDE = 1e2
TAIL_FRACTION = 0.25
DEFAULT_SEED = 20240601


@dataclass(frozen=True)
class SweepReport:
    """Outcome of a parameter sweep.

    ``entries`` are ``(parameter, value)`` pairs: initial magnitude and settle
    time for settling sweeps, ``eps0`` and tail residual for ISS sweeps. A
    missing value (run never settled) is stored as ``nan``.
    """

    kind: str
    entries: tuple
    summary: dict
    verdict: bool
    threshold: float
    failures: tuple = ()
    seed: Optional[int] = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a sweep report needs at least one entry")

    def __bool__(self):
        return self.verdict

    @property
    def parameters(self):
        return [p for p, _ in self.entries]

    @property
    def values(self):
        return [v for _, v in self.entries]

    def to_dict(self):
        return {"kind": self.kind, "entries": [list(e) for e in self.entries], "summary": dict(self.summary),
                "verdict": "pass" if self.verdict else "fail", "threshold": self.threshold,
                "failures": list(self.failures), "seed": self.seed, "details": dict(self.details)}

    def to_csv(self, path):
        head = ("magnitude", "settle_time") if self.kind == "settling" else ("eps0", "residual")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for p, v in self.entries:
                w.writerow([format(float(p), ".17g"), format(float(v), ".17g")])
        return path

    def to_text(self):
        lines = [f"{self.kind} sweep", "-" * (len(self.kind) + 6)]
        head = ("magnitude", "settle time") if self.kind == "settling" else ("eps0", "tail residual")
        lines.append(f"{head[0]:>14}  {head[1]}")
        for p, v in self.entries:
            lines.append(f"{p:>14.6g}  {v!r}")
        for k, v in self.summary.items():
            lines.append(f"{k}: {v!r}")
        lines.append(f"threshold: {self.threshold!r}")
        for f in self.failures:
            lines.append(f"failure: {f}")
        if self.seed is not None:
            lines.append(f"seed: {self.seed}")
        lines.append(f"verdict: {'PASS' if self.verdict else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _run_many(jobs, n_jobs):
    if n_jobs == 1 or len(jobs) < 2:
        return [fn(*args) for fn, args in jobs]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(*args) for fn, args in jobs)


def _settle_one(sys, x0, opts):
    tr = integrate(sys, x0, opts)
    return tr.settle_time, tr.terminated


def settling_uniformity_sweep(sys: SystemDef, magnitudes: Sequence[float], direction=None,
                              opts: IntegratorOptions = IntegratorOptions(horizon=60.0),
                              threshold=SATURATION_THRESHOLD, large_from=LARGE_MAGNITUDE,
                              n_jobs=1) -> SweepReport:
    """Settle times from ``target + m * direction`` for each magnitude ``m``.

    The saturation ratio compares the largest settle time over magnitudes
    ``>= large_from`` with the settle time at the smallest such magnitude.
    """
    mags = [float(m) for m in magnitudes]
    if not mags or min(mags) <= 0 or any(b <= a for a, b in zip(mags, mags[1:])):
        raise ValueError("magnitudes must be positive and strictly increasing")
    if direction is None:
        direction = np.ones(sys.dimension)
    direction = np.asarray(direction, dtype=float).reshape(-1)
    if direction.size != sys.dimension:
        raise ValueError("direction has the wrong dimension")
    direction = direction / np.linalg.norm(direction)
    base = sys.target_at(0.0, np.zeros(sys.dimension))
    out = _run_many([(_settle_one, (sys, base + m * direction, opts)) for m in mags], n_jobs)
    entries = []
    failures = []
    for m, (st, term) in zip(mags, out):
        entries.append((m, float("nan") if st is None else float(st)))
        if st is None:
            failures.append(f"magnitude {m:g} did not settle ({term})")
    large = [v for m, v in entries if m >= large_from]
    ratio = float("nan")
    if large and all(math.isfinite(v) for v in large) and large[0] > 0:
        ratio = max(large) / large[0]
    finite = [v for _, v in entries if math.isfinite(v)]
    summary = {"max": max(finite) if finite else float("nan"), "min": min(finite) if finite else float("nan"),
               "saturation_ratio": ratio}
    if len(large) < 2:
        failures.append(f"need at least two magnitudes at or above {large_from:g} to judge saturation")
    verdict = not failures and ratio < threshold
    return SweepReport("settling", tuple(entries), summary, bool(verdict), threshold, tuple(failures),
                       details={"direction": direction.tolist(), "large_from": large_from, "system": sys.label})


def tail_residual(loop: FeedbackOptLoop, traj: Trajectory, horizon, tail_fraction=TAIL_FRACTION):
    """Sup of the tracking error over the last ``tail_fraction`` of the horizon.

    A run that settled (and stopped) before the window is summarized by its
    final tracking error; after settling on a fixed target it stays there.
    """
    if traj.terminated == "settled":
        return loop.tracking_error(traj.times[-1], traj.states[-1])
    start = (1.0 - tail_fraction) * horizon
    idx = np.nonzero(traj.times >= start)[0]
    if idx.size == 0:
        idx = np.array([len(traj.times) - 1])
    return max(loop.tracking_error(traj.times[k], traj.states[k]) for k in idx)


def _residual_one(eps0, ic, opts, amplitude_scale, xi1, xi2, tail_fraction):
    from .systems import FBK_AMPS

    loop = make_feedback_opt_loop(eps0, xi1, xi2, amplitudes=tuple(amplitude_scale * a for a in FBK_AMPS))
    tr = integrate(loop.system, loop.initial_state(ic), opts)
    return tail_residual(loop, tr, opts.horizon, tail_fraction), tr.terminated


FBK_IC = (1.0, 1.0, 1.0, 1.0)


def iss_residual_sweep(eps0_values: Sequence[float], opts: IntegratorOptions = IntegratorOptions(horizon=20.0),
                       ic=FBK_IC, amplitude_scale=1.0, xi1=1 / 3, xi2=-1 / 5,
                       tail_fraction=TAIL_FRACTION, n_jobs=1) -> SweepReport:
    """Tail tracking residual of the feedback-optimization loop for each ``eps0``.

    Passes when the residual is nondecreasing along the listed ``eps0``
    values (taken in increasing order) and the residual at ``eps0 = 0`` is
    below ``settle_tol``.
    """
    vals = [float(e) for e in eps0_values]
    if not vals or min(vals) < 0:
        raise ValueError("eps0 values must be nonnegative")
    order = sorted(vals)
    out = _run_many([(_residual_one, (e, ic, opts, amplitude_scale, xi1, xi2, tail_fraction)) for e in order],
                    n_jobs)
    entries = []
    for e, (res, _) in zip(order, out):
        if not math.isfinite(res):
            raise FloatingPointError(f"non-finite residual at eps0={e}")
        entries.append((e, float(res)))
    failures = []
    for (e0, r0), (e1, r1) in zip(entries, entries[1:]):
        if r1 < r0:
            failures.append(f"residual decreases from eps0={e0:g} ({r0:.3g}) to eps0={e1:g} ({r1:.3g})")
    zero = [r for e, r in entries if e == 0.0]
    if zero and not zero[0] < opts.settle_tol:
        failures.append(f"residual at eps0=0 is {zero[0]:.3g}, not below settle_tol {opts.settle_tol:g}")
    res = [r for _, r in entries]
    summary = {"max": max(res), "min": min(res), "saturation_ratio": float("nan")}
    return SweepReport("iss", tuple(entries), summary, not failures, opts.settle_tol, tuple(failures),
                       details={"ic": list(ic), "amplitude_scale": amplitude_scale, "horizon": opts.horizon,
                                "tail_fraction": tail_fraction})


def _require_lyapunov(*subs):
    for s in subs:
        if s.lyapunov is None or s.lyapunov_grad is None:
            raise ValueError(f"subsystem {s.label or '?'} carries no Lyapunov function and gradient")


@dataclass(frozen=True)
class DecreaseReport:
    checked: int
    violations: int
    worst_margin: float
    floor: float

    @property
    def passed(self):
        return self.violations == 0

    def __bool__(self):
        return self.passed


def max_lyapunov_trace(traj: Trajectory, cert: SmallGainCertificate, sub1: SubsystemData, sub2: SubsystemData,
                       slack=0.05, floor=None, settle_tol=1e-8) -> DecreaseReport:
    """Check ``(V(t+h) - V(t))/h <= -(1-slack) Psi(V(t+h))`` for the max-form ``V``.

    Along a decreasing ``V`` the integral of ``-Psi(V)`` over a step is at
    most ``-h Psi(V(t+h))``, so the test is implied by the Dini bound. Pairs
    whose starting value lies below ``floor`` (default ``10 settle_tol^2``)
    are skipped.
    """
    if not cert.valid:
        raise ValueError("certificate is not valid")
    _require_lyapunov(sub1, sub2)
    floor = 10 * settle_tol ** 2 if floor is None else floor
    v1 = np.array([sub1.lyapunov(s) for s in traj.states], dtype=float)
    v2 = np.array([sub2.lyapunov(s) for s in traj.states], dtype=float)
    V = np.asarray(cert.lyapunov(v1, v2), dtype=float)
    if V.size < 2:
        return DecreaseReport(0, 0, float("inf"), floor)
    dt = np.diff(traj.times)
    rates = np.diff(V) / dt
    bound = -(1.0 - slack) * np.asarray(cert.composed_rate(V[1:]), dtype=float)
    mask = V[:-1] > floor
    if not mask.any():
        return DecreaseReport(0, 0, float("inf"), floor)
    # normalized margin: positive means the decrease requirement holds
    scale = np.maximum(np.abs(bound[mask]), np.finfo(float).tiny)
    margin = (bound[mask] - rates[mask]) / scale
    return DecreaseReport(int(mask.sum()), int((margin < 0).sum()), float(margin.min()), floor)


@dataclass(frozen=True)
class ImplicationReport:
    samples: int
    antecedent: tuple
    violations: tuple
    seed: int
    worst: float

    @property
    def violation_fraction(self):
        n = sum(self.antecedent)
        return sum(self.violations) / n if n else 0.0

    def __bool__(self):
        return sum(self.violations) == 0


def _log_uniform(rng, n, lo, hi):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n)) * rng.choice([-1.0, 1.0], n)


def implication_sampler(sub1: SubsystemData, sub2: SubsystemData, field: Callable, samples=100_000,
                        seed=DEFAULT_SEED, lo=1e-3, hi=1e3, rel_tol=1e-9, n_inputs=2) -> ImplicationReport:
    """Monte-Carlo test of ``V_i >= max(gamma_i(V_j), chi_i(|u_i|))  =>  V_i' <= -Psi_i(V_i)``.

    ``field(states, inputs)`` takes batches laid out as ``(dim, n)``. States
    and inputs are drawn with log-uniform magnitudes on ``[lo, hi]`` and
    random signs; a fifth of the inputs are set to zero.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    _require_lyapunov(sub1, sub2)
    rng = np.random.default_rng(seed)
    X = np.vstack([_log_uniform(rng, samples, lo, hi) for _ in range(2)])
    U = np.vstack([_log_uniform(rng, samples, lo, hi) for _ in range(n_inputs)])
    U[:, rng.uniform(size=samples) < 0.2] = 0.0
    F = np.asarray(field(X, U), dtype=float)
    subs = (sub1, sub2)
    vals = [np.asarray(s.lyapunov(X), dtype=float) for s in subs]
    ante, viol = [], []
    worst = math.inf
    for i, sub in enumerate(subs):
        vi, vj = vals[i], vals[1 - i]
        need = np.asarray(sub.gain(vj), dtype=float)
        if sub.input_gain is not None:
            idx = list(sub.input_index if sub.input_index is not None else range(n_inputs))
            unorm = np.linalg.norm(U[idx], axis=0)
            need = np.maximum(need, np.asarray(sub.input_gain(unorm), dtype=float))
        hold = vi >= need
        grad = np.asarray(sub.lyapunov_grad(X), dtype=float)
        vdot = np.sum(grad * F, axis=0)
        psi = np.asarray(sub.rate(vi), dtype=float)
        slack = -psi - vdot
        bad = hold & (slack < -rel_tol * np.maximum(psi, 1.0))
        ante.append(int(hold.sum()))
        viol.append(int(bad.sum()))
        if hold.any():
            worst = min(worst, float((slack[hold] / np.maximum(psi[hold], 1e-300)).min()))
    return ImplicationReport(samples, tuple(ante), tuple(viol), seed, worst)


def max_gradient_error(gradient: Callable, cost: Callable, points, h=1e-5):
    """Largest relative gap between ``gradient(u)`` and central differences of ``cost``."""
    worst = 0.0
    for u in points:
        u = np.asarray(u, dtype=float)
        g = np.asarray(gradient(u), dtype=float)
        fd = np.empty_like(u)
        for k in range(u.size):
            e = np.zeros_like(u)
            e[k] = h * max(1.0, abs(u[k]))
            fd[k] = (cost(u + e) - cost(u - e)) / (2 * e[k])
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
    return worst


def gradient_consistency_check(loop, n_u=20, n_theta=5, seed=DEFAULT_SEED, scale=3.0, h=1e-5):
    """Compare the loop's pseudo-gradient at ``(h(u), u)`` with finite differences of its reduced cost."""
    rng = np.random.default_rng(seed)
    us = rng.normal(scale=scale, size=(n_u, loop.n))
    if isinstance(loop, FeedbackOptLoop):
        amps = np.asarray(loop.exo.amplitudes)
        worst = 0.0
        for _ in range(n_theta):
            # a point on the exosystem orbit with random phases
            ph = rng.uniform(0, 2 * np.pi, amps.size)
            th = np.empty(2 * amps.size)
            th[0::2] = amps * np.cos(ph)
            th[1::2] = amps * np.sin(ph)
            worst = max(worst, max_gradient_error(
                lambda u: loop.pseudo_gradient(loop.plant.h(u), u, th),
                lambda u: loop.quasi_steady_cost(u, th), us, h))
        return worst
    if isinstance(loop, NesLoop):
        return max_gradient_error(lambda u: loop.pseudo_gradient(loop.plant.h(u), u), loop.potential, us, h)
    raise TypeError("loop must expose a reduced cost (feedback optimization or Nash seeking)")
