"""Integration of nonsmooth fixed-time vector fields.

The integrator is an embedded Dormand-Prince 5(4) pair with two extra step
controls: a cap on the relative state increment per step (superlinear drift
far from the target) and a snap to the target when the step controller
stalls next to a Hoelder-continuous equilibrium.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .comparison import KFxRate

SETTLED = "settled"
HORIZON = "horizon"
STEP_FLOOR = "step_floor"
METHODS = ("auto", "dp45", "bdf")

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class NonFiniteStateError(RuntimeError):
    def __init__(self, t, state):
        super().__init__(f"non-finite state at t={t!r}: {state!r}")
        self.t = t
        self.state = state


@dataclass(frozen=True, eq=False)
class SystemDef:
    """Vector field ``field(t, x)`` with a (possibly moving) target.

    ``target`` is either a constant vector or a callable ``(t, x) -> vector``;
    the callable form lets the target depend on exogenous states carried
    inside ``x``.
    """

    dimension: int
    field: Callable[[float, np.ndarray], np.ndarray]
    target: Union[np.ndarray, Callable, None] = None
    label: str = ""
    params: dict = field(default_factory=dict)

    def target_at(self, t, x):
        if self.target is None:
            return np.zeros(self.dimension)
        if callable(self.target):
            return np.asarray(self.target(t, x), dtype=float)
        return np.asarray(self.target, dtype=float)

    def error(self, t, x):
        return float(np.linalg.norm(np.asarray(x) - self.target_at(t, x)))


@dataclass(frozen=True)
class IntegratorOptions:
    """Step and stopping controls.

    ``min_step`` is the smallest step taken next to the target before the
    state is snapped onto it; away from the target the step may shrink
    further, down to the resolution of ``t``, before ``step_floor`` is
    declared. ``atol`` defaults to ``1e-3 * settle_tol``.

    ``method="auto"`` starts with the explicit pair and hands over to BDF
    when the explicit stepper detects stiffness (typical on slow manifolds
    shaped by Hoelder terms, where one component sits far below the
    tolerance while another is still converging). ``implicit_rtol`` and
    ``implicit_atol`` (default ``0.1 * settle_tol``) apply to that phase.
    """

    horizon: float = 10.0
    rel_step_cap: float = 0.1
    settle_tol: float = 1e-8
    dwell: float = 0.05
    min_step: float = 1e-6
    max_step: float = 0.05
    rtol: float = 1e-8
    atol: Optional[float] = None
    snap_radius: Optional[float] = None
    stop_on_settle: bool = True
    first_step: Optional[float] = None
    max_steps: int = 5_000_000
    method: str = "auto"
    implicit_rtol: float = 1e-6
    implicit_atol: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        for name in ("horizon", "rel_step_cap", "settle_tol", "dwell", "min_step", "max_step", "rtol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.min_step < self.max_step:
            raise ValueError("min_step must be smaller than max_step")

    @property
    def abs_tol(self):
        return self.atol if self.atol is not None else 1e-3 * self.settle_tol

    @property
    def implicit_abs_tol(self):
        return self.implicit_atol if self.implicit_atol is not None else 0.1 * self.settle_tol

    @property
    def snap(self):
        return self.snap_radius if self.snap_radius is not None else self.settle_tol


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    terminated: str
    settle_time: Optional[float] = None
    snaps: tuple = ()
    n_steps: int = 0
    n_rejected: int = 0
    switched_at: Optional[float] = None

    def __post_init__(self):
        if (self.settle_time is not None) != (self.terminated == SETTLED):
            raise ValueError("settle_time is present exactly when the run settled")

    @property
    def final(self):
        return self.states[-1]

    def __len__(self):
        return len(self.times)

    def to_csv(self, path, extra=None, float_format=".17g"):
        """Write ``t, x_1..x_n`` plus any ``extra`` named columns."""
        extra = dict(extra or {})
        n = self.states.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)] + list(extra)
        cols = [np.asarray(v, dtype=float) for v in extra.values()]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.times)):
                row = [self.times[k], *self.states[k], *(c[k] for c in cols)]
                w.writerow([format(float(v), float_format) for v in row])
        return path


def fxt_drive(s, xi1, xi2):
    """``s/|s|**xi1 + s/|s|**xi2`` with the Euclidean norm; zero at s = 0."""
    arr = np.asarray(s, dtype=float)
    if arr.ndim == 0:
        a = float(arr)
        if a == 0.0:
            return 0.0
        m = abs(a)
        return a / m ** xi1 + a / m ** xi2
    m = float(np.linalg.norm(arr))
    if m == 0.0:
        return np.zeros_like(arr)
    return arr * (m ** -xi1 + m ** -xi2)


def settling_bound(rate: KFxRate):
    return rate.settling_bound()


def _err_norm(err, y0, y1, atol, rtol):
    sc = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.max(np.abs(err) / sc))


class _Run:
    """Accepted samples plus the settle bookkeeping shared by both steppers."""

    def __init__(self, sys, opts, t, x):
        self.sys = sys
        self.opts = opts
        self.t = t
        self.x = x
        self.times = [t]
        self.states = [x.copy()]
        self.snaps = []
        self.dist = sys.error(t, x)
        self.entry = 0.0 if self.dist < opts.settle_tol else None
        self.n_steps = 0
        self.n_rej = 0
        self.terminated = None
        self.switched_at = None

    @property
    def budget_left(self):
        return self.n_steps + self.n_rej < self.opts.max_steps

    def accept(self, t_new, x_new):
        """Record a step; returns True once the dwell requirement is met."""
        if not np.all(np.isfinite(x_new)):
            raise NonFiniteStateError(t_new, x_new)
        tol = self.opts.settle_tol
        d_new = self.sys.error(t_new, x_new)
        if d_new < tol:
            if self.entry is None:
                # linear interpolation of the distance for the entry time
                d0 = self.dist
                self.entry = self.t + (t_new - self.t) * (d0 - tol) / (d0 - d_new) if d0 > d_new else t_new
        else:
            self.entry = None
        self.t, self.x, self.dist = t_new, x_new, d_new
        self.times.append(t_new)
        self.states.append(x_new.copy())
        self.n_steps += 1
        if self.entry is not None and t_new - self.entry >= self.opts.dwell and self.opts.stop_on_settle:
            self.terminated = SETTLED
            return True
        return False

    def snap(self):
        """Move onto the target after the step controller stalled next to it."""
        t = self.t
        self.x = self.sys.target_at(t, self.x).copy()
        self.snaps.append((t, self.dist))
        if self.entry is None:
            self.entry = t
        self.dist = 0.0
        self.times[-1] = t
        self.states[-1] = self.x.copy()
        if self.opts.stop_on_settle:
            self.terminated = SETTLED
            return True
        return False

    def result(self):
        if self.terminated is None:
            self.terminated = HORIZON
        settle = self.entry if self.terminated == SETTLED else None
        return Trajectory(np.array(self.times), np.array(self.states), self.terminated, settle,
                          tuple(self.snaps), self.n_steps, self.n_rej, self.switched_at)


def _tiny(t):
    return 16 * np.finfo(float).eps * max(1.0, abs(t))


def _explicit_phase(run: _Run, f, k1, h, allow_switch):
    """Dormand-Prince steps until done or, if allowed, until stiffness is detected.

    Stiffness test: ``h * |k7 - k6| / |y7 - y6|`` estimates ``h`` times the
    local Lipschitz constant along the last stage pair; more than 15 accepted
    steps with a value above 3.25 (the stability boundary of the pair)
    signal a stiff stretch.
    """
    opts = run.opts
    atol, rtol = opts.abs_tol, opts.rtol
    stiff_hits = 0
    while run.t < opts.horizon and run.budget_left:
        t, x = run.t, run.x
        h = min(h, opts.horizon - t, opts.max_step)
        k = [k1]
        xs = []
        for i in range(1, 7):
            xi = x + h * sum(a * kj for a, kj in zip(_A[i], k))
            xs.append(xi)
            k.append(np.asarray(f(t + _C[i] * h, xi), dtype=float))
        x_new = xs[-1]  # stage 7 sits at the 5th-order solution (FSAL)
        err = h * sum(e * kj for e, kj in zip(_E, k))
        # relative accuracy is measured against the distance to the target,
        # otherwise an offset target lets errors of size rtol*|target| through
        ref = run.sys.target_at(t, x)
        en = _err_norm(err, x - ref, x_new - ref, atol, rtol) if np.all(np.isfinite(x_new)) else math.inf
        rel_inc = float(np.linalg.norm(x_new - x)) / max(1.0, float(np.linalg.norm(x)))
        if en <= 1.0 and rel_inc <= opts.rel_step_cap:
            dy = float(np.linalg.norm(x_new - xs[-2]))
            if dy > 0 and h * float(np.linalg.norm(k[6] - k[5])) / dy > 3.25:
                stiff_hits += 1
            else:
                stiff_hits = 0
            k1 = k[6]
            if not np.all(np.isfinite(k1)):
                raise NonFiniteStateError(t + h, x_new)
            if run.accept(t + h, x_new):
                return None
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = h * fac
            if allow_switch and stiff_hits > 15 and run.dist > opts.snap:
                return h
            continue

        run.n_rej += 1
        if rel_inc > opts.rel_step_cap and math.isfinite(rel_inc):
            fac = max(0.1, 0.9 * opts.rel_step_cap / rel_inc)
        elif math.isfinite(en):
            fac = max(0.1, 0.9 * en ** -0.2)
        else:
            fac = 0.1
        h_try = h * min(fac, 0.9)
        if h_try < opts.min_step and not all(np.all(np.isfinite(kj)) for kj in k):
            # the field itself is non-finite just ahead; shrinking further cannot help
            raise NonFiniteStateError(t + h, xs[int(np.argmax([not np.all(np.isfinite(kj)) for kj in k[1:]]))])
        if h_try < opts.min_step and run.dist <= opts.snap:
            if run.snap():
                return None
            k1 = np.asarray(f(run.t, run.x), dtype=float)
            h = opts.min_step * 10
            continue
        if h_try < _tiny(t):
            run.terminated = STEP_FLOOR
            return None
        if allow_switch and h_try < opts.min_step:
            return h_try
        h = h_try
    return None


def _implicit_phase(run: _Run, f, h):
    """Variable-order BDF steps (scipy) with the same settle and snap rules."""
    from scipy.integrate import BDF

    opts = run.opts
    # with a fixed target, integrate the offset from it so the relative
    # tolerance scales with the distance rather than with the target
    shift = np.zeros(run.sys.dimension) if callable(run.sys.target) else run.sys.target_at(run.t, run.x)

    def g(t, z):
        return f(t, z + shift)

    def start(first):
        return BDF(g, run.t, run.x - shift, opts.horizon, max_step=opts.max_step, rtol=opts.implicit_rtol,
                   atol=opts.implicit_abs_tol, first_step=first)

    def advance():
        try:
            solver.step()
        except ValueError as exc:
            # scipy rejects NaN/inf from the field (e.g. in its Jacobian estimate)
            raise NonFiniteStateError(run.t, run.x) from exc

    try:
        solver = start(min(max(h, 1e3 * _tiny(run.t)), opts.max_step, opts.horizon - run.t))
    except ValueError as exc:
        raise NonFiniteStateError(run.t, run.x) from exc
    while solver.status == "running" and run.budget_left:
        advance()
        if solver.status == "failed":
            if run.dist <= opts.snap:
                if run.snap():
                    return
                solver = start(min(opts.min_step * 10, opts.horizon - run.t))
                continue
            run.terminated = STEP_FLOOR
            return
        if run.accept(float(solver.t), np.array(solver.y, dtype=float) + shift):
            return


def integrate(sys: SystemDef, x0, opts: IntegratorOptions = IntegratorOptions()) -> Trajectory:
    x = np.array(x0, dtype=float).reshape(-1)
    if x.size != sys.dimension:
        raise ValueError(f"initial state has {x.size} entries, system has {sys.dimension}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError(0.0, x)
    f = sys.field
    run = _Run(sys, opts, 0.0, x)
    k1 = np.asarray(f(0.0, x), dtype=float)
    if not np.all(np.isfinite(k1)):
        raise NonFiniteStateError(0.0, x)
    if opts.first_step is not None:
        h = opts.first_step
    else:
        scale = opts.abs_tol + opts.rtol * np.abs(x)
        d0 = np.max(np.abs(x) / scale)
        d1 = np.max(np.abs(k1) / scale)
        h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(max(h, 1e-14), opts.max_step)

    if opts.method == "bdf":
        _implicit_phase(run, f, h)
    else:
        h_next = _explicit_phase(run, f, k1, h, allow_switch=opts.method == "auto")
        if h_next is not None and run.terminated is None:
            run.switched_at = run.t
            _implicit_phase(run, f, h_next)
    return run.result()


@dataclass(frozen=True)
class DiniSeries:
    times: np.ndarray
    values: np.ndarray
    rates: np.ndarray

    def __iter__(self):
        return iter(zip(self.times, self.values, self.rates))

    def __len__(self):
        return len(self.times)


def dini_series(traj: Trajectory, V: Callable) -> DiniSeries:
    """V along the trajectory and forward differences at consecutive samples.

    ``rates[k] = (V[k+1] - V[k]) / (t[k+1] - t[k])`` is attached to ``t[k]``;
    the final sample has no forward neighbour and is dropped.
    """
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    vals = np.array([float(V(x)) for x in traj.states])
    if len(vals) == 1:
        return DiniSeries(traj.times[:0], vals[:0], vals[:0])
    dt = np.diff(traj.times)
    rates = np.diff(vals) / dt
    return DiniSeries(traj.times[:-1], vals[:-1], rates)
