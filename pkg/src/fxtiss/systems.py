"""Concrete closed loops: a scalar two-state power interconnection, a
pre-stabilized plant family, feedback optimization with a rotating
exosystem, and two-player Nash seeking over the same plant family.

Published constants are embedded as module-level defaults; every
constructor accepts overrides.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .certificate import (
    EpsilonBound,
    SmallGainCheck,
    SubsystemData,
    check_small_gain,
    curvature_condition,
    decentralized_flow_constant,
    homogeneous_epsilon_bound,
)
from .comparison import GainFunction, KFxRate, PowerSum, invert_at, log_grid
from .sim import SystemDef, fxt_drive

SIGN_CORRECTED = "sign_corrected"
AS_PRINTED = "as_printed"


def sg(v, a):
    """Signed power ``|v|**a * sign(v)``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.abs(v) ** a


def _matrix(m, name, shape=None):
    arr = np.array(m, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _vector(v, name, n=None):
    arr = np.array(v, dtype=float).reshape(-1)
    if n is not None and arr.size != n:
        raise ValueError(f"{name} has {arr.size} entries, expected {n}")
    return arr


def _sym_eigs(A):
    return np.linalg.eigvalsh(0.5 * (A + A.T))


# ---------------------------------------------------------------------------
# scalar two-state power interconnection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerInterconnection:
    """``x' = -sum k sg(x)^a + sum c sg(y)^e + u1`` and the mirror for ``y``.

    Each list holds ``(coefficient, exponent)`` pairs. Decay terms enter with
    a minus sign, so a negative decay coefficient is a destabilizing term.
    """

    x_decay: tuple
    x_cross: tuple
    y_decay: tuple
    y_cross: tuple

    def __post_init__(self):
        for name in ("x_decay", "x_cross", "y_decay", "y_cross"):
            terms = tuple((float(c), float(e)) for c, e in getattr(self, name))
            if any(e <= 0 for _, e in terms):
                raise ValueError(f"{name}: exponents must be positive")
            object.__setattr__(self, name, terms)

    def field_with_input(self, state, u=(0.0, 0.0)):
        """Works on a single state or on a batch laid out as ``(2, n)``."""
        x, y = np.asarray(state[0], dtype=float), np.asarray(state[1], dtype=float)
        dx = -sum(k * sg(x, a) for k, a in self.x_decay) + sum(c * sg(y, e) for c, e in self.x_cross)
        dy = -sum(k * sg(y, a) for k, a in self.y_decay) + sum(c * sg(x, e) for c, e in self.y_cross)
        return np.array([dx + u[0], dy + u[1]], dtype=float)

    def field(self, t, state):
        return self.field_with_input(state)

    def scaled_cross(self, k):
        return replace(self,
                       x_cross=tuple((k * c, e) for c, e in self.x_cross),
                       y_cross=tuple((k * c, e) for c, e in self.y_cross))

    def to_dict(self):
        return {name: [{"coeff": c, "exponent": e} for c, e in getattr(self, name)]
                for name in ("x_decay", "x_cross", "y_decay", "y_cross")}


def _decay_powers(decay):
    """``rho(r) = sum k r^a`` for a scalar decay list; all k must be positive."""
    if any(k <= 0 for k, _ in decay):
        raise ValueError("decay coefficients must be positive for a quadratic Lyapunov function")
    exps = sorted(a for _, a in decay)
    if not (exps[0] < 1 < exps[-1]):
        raise ValueError("decay needs one exponent below 1 and one above 1")
    return PowerSum(decay)


def _inverse_envelope(gamma_inv, e_lo, e_hi, n_points=8193, lo=1e-12, hi=1e12, shrink=0.99):
    """Largest ``m`` (times ``shrink``) with ``m(v^e_lo + v^e_hi) <= gamma_inv(v)``.

    Uses the grid ratio plus the two limiting ratios, which exist because
    the exponents are the exact leading orders of ``gamma_inv``.
    """
    v = log_grid(n_points, lo, hi)
    ratio = gamma_inv(v) / (v ** e_lo + v ** e_hi)
    return shrink * float(min(ratio.min(), ratio[0], ratio[-1]))


def quadratic_subsystems(model: PowerInterconnection, cross_budget=0.5, input_budget=0.25):
    """Subsystem data for ``V = x^2``, ``W = y^2``.

    With ``rho_V`` the isolated decay of ``x`` and ``sigma_W`` the cross term
    written in ``W``, the implication is: if ``sigma_W(W) <= cross_budget *
    rho_V(V)`` and ``|u| <= input_budget * rho_V(V)`` then
    ``V' <= -2 (1 - cross_budget - input_budget) |x| rho(|x|)``. Solving the
    two premises for ``W`` and ``|u|`` gives the cross and input gains in
    inverse form; the cross gain inverse is then bounded below by a
    two-term power sum so it can be certified.
    """
    if not (cross_budget > 0 and input_budget > 0 and cross_budget + input_budget < 1):
        raise ValueError("budgets must be positive with sum below 1")
    keep = 2.0 * (1.0 - cross_budget - input_budget)
    out = []
    for idx, (decay, cross) in enumerate(((model.x_decay, model.x_cross), (model.y_decay, model.y_cross))):
        rho = _decay_powers(decay)
        # rho and sigma in squared coordinates: |x|^a = V^(a/2)
        rho_v = PowerSum([(k, a / 2) for k, a in rho])
        sigma_w = PowerSum([(abs(c), e / 2) for c, e in cross])
        rate = KFxRate(keep * rho.coeffs[0], (1 + rho.exponents[0]) / 2,
                       keep * rho.coeffs[-1], (1 + rho.exponents[-1]) / 2)
        if len(sigma_w) == 0:
            gain = GainFunction.linear(1e-300)
        else:
            e_lo = rho.exponents[0] / sigma_w.exponents[0] / 2
            e_hi = rho.exponents[-1] / sigma_w.exponents[-1] / 2
            m = _inverse_envelope(lambda v: invert_at(sigma_w, cross_budget * rho_v(v)), e_lo, e_hi)
            gain = GainFunction.from_inverse(PowerSum([(m, e_lo), (m, e_hi)]))
        chi = GainFunction.from_inverse(rho_v.scale(input_budget))

        def V(state, i=idx):
            return np.asarray(state[i], dtype=float) ** 2

        def dV(state, i=idx):
            xi = np.asarray(state[i], dtype=float)
            g = np.zeros((2,) + xi.shape)
            g[i] = 2.0 * xi
            return g

        out.append(SubsystemData(gain, rate, input_gain=chi,
                                 bounds_lo=PowerSum.monomial(1.0, 2.0), bounds_hi=PowerSum.monomial(1.0, 2.0),
                                 lyapunov=V, lyapunov_grad=dV, input_index=(idx,),
                                 label=("x" if idx == 0 else "y") + " subsystem, quadratic"))
    return tuple(out)


@dataclass(frozen=True)
class QuarterDecayRoute:
    """Conservative quarter-decay construction with dissipativity majorants."""

    majorant_1: GainFunction
    majorant_2: GainFunction
    check: SmallGainCheck
    bound: EpsilonBound
    coupling: float
    rates: tuple

    @property
    def coupling_ok(self):
        return self.coupling < self.bound.epsilon

    @property
    def valid(self):
        return self.check.valid and self.coupling_ok and self.bound.hypotheses_ok

    def to_dict(self):
        return {
            "majorant_1": self.majorant_1.to_dict(),
            "majorant_2": self.majorant_2.to_dict(),
            "small_gain_ok": self.check.valid,
            "small_gain_reason": self.check.reason,
            "C": self.bound.C,
            "epsilon": self.bound.epsilon,
            "coupling": self.coupling,
            "coupling_ok": self.coupling_ok,
            "warnings": list(self.bound.warnings),
            "valid": self.valid,
        }


def quarter_decay_route(model: PowerInterconnection) -> QuarterDecayRoute:
    """Majorants for ``V = x^2``, ``W = y^2`` with a common coupling size per equation.

    The isolated decay is ``a_i (V^p + V^q)``; a quarter of it survives the
    Young-inequality split, the cross term becomes
    ``(n_i+1) kappa_i^2 eps_i^2 / a_i * sum W^eta``, and the two gains are
    majorized as ``c1/d1 * sum s^eta1`` (direct) and ``M (s^p + s^q)`` for
    the inverse of the second.
    """
    kappa = 2.0
    data = []
    for decay, cross in ((model.x_decay, model.x_cross), (model.y_decay, model.y_cross)):
        rho = _decay_powers(decay)
        a = 2.0 * min(rho.coeffs)
        p, q = (1 + rho.exponents[0]) / 2, (1 + rho.exponents[-1]) / 2
        eps = max(abs(c) for c, _ in cross)
        eta = [e for _, e in cross]
        data.append((a, p, q, eps, eta))
    (a1, p1, q1, eps1, eta1), (a2, p2, q2, eps2, eta2) = data
    n1, n2 = len(eta1), len(eta2)
    c1 = (n1 + 1) * kappa ** 2 * eps1 ** 2 / a1
    c2 = (n2 + 1) * kappa ** 2 * eps2 ** 2 / a2
    d1, d2 = a1 / 4, a2 / 4
    maj1 = GainFunction.direct(PowerSum([(c1 / d1, e) for e in eta1]))
    M = 0.5 * min((d2 / (n2 * c2 * max(1.0, 2.0 ** (e - 1)))) ** (1 / e) for e in eta2)
    p_hat = max(p2 / e for e in eta2)
    q_hat = min(q2 / e for e in eta2)
    maj2 = GainFunction.from_inverse(PowerSum([(M, p_hat), (M, q_hat)]))
    bound = homogeneous_epsilon_bound(a1, a2, p2, q2, kappa, kappa, n1, n2, eta2, eta1=eta1)
    coupling = abs(eps1) * max(abs(eps2) ** e for e in eta2)
    return QuarterDecayRoute(maj1, maj2, check_small_gain(maj1, maj2), bound, coupling,
                            (KFxRate(d1, p1, d1, q1), KFxRate(d2, p2, d2, q2)))


# the two-state example with mixed cross terms
HOMOG_X_DECAY = ((1.0, 1 / 3), (1.0, 3.0))
HOMOG_X_CROSS = ((0.5, 2.0), (0.5, 2.5))
HOMOG_Y_CROSS = ((-0.3, 4 / 9), (0.2, 5 / 8))
HOMOG_IC = (450.0, 5000.0)


@dataclass(frozen=True, eq=False)
class HomogeneousExample:
    system: SystemDef
    model: PowerInterconnection
    sign_variant: str
    subsystems: Optional[tuple] = None

    @property
    def sub1(self):
        return self.subsystems[0] if self.subsystems else None

    @property
    def sub2(self):
        return self.subsystems[1] if self.subsystems else None

    def parameters(self):
        return {"sign_variant": self.sign_variant, **self.model.to_dict()}


def make_homogeneous_example(sign_variant=SIGN_CORRECTED, cross_scale=1.0,
                             cross_budget=0.5, input_budget=0.25) -> HomogeneousExample:
    """Build the two-state example.

    ``as_printed`` keeps ``+sg(y)^2`` in the ``y`` equation; that isolated
    subsystem is not stable, so no subsystem data is produced for it.
    ``cross_scale`` multiplies every cross coefficient.
    """
    if sign_variant not in (SIGN_CORRECTED, AS_PRINTED):
        raise ValueError(f"unknown sign variant {sign_variant!r}")
    y_sq = 1.0 if sign_variant == SIGN_CORRECTED else -1.0
    model = PowerInterconnection(HOMOG_X_DECAY, HOMOG_X_CROSS, ((1.0, 0.5), (y_sq, 2.0)), HOMOG_Y_CROSS)
    if cross_scale != 1.0:
        model = model.scaled_cross(cross_scale)
    subs = None
    if sign_variant == SIGN_CORRECTED:
        subs = quadratic_subsystems(model, cross_budget, input_budget)
    system = SystemDef(2, model.field, np.zeros(2), label=f"homog-ex ({sign_variant})",
                       params={"sign_variant": sign_variant, "cross_scale": cross_scale})
    return HomogeneousExample(system, model, sign_variant, subs)


# ---------------------------------------------------------------------------
# plant family x' = -A1 e/|e|^p~ - A2 e/|e|^q~, e = x - h(u)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlantConfig:
    A1: np.ndarray
    A2: np.ndarray
    h_slope: float
    p_tilde: float
    q_tilde: float
    gamma: Optional[float] = None

    def __post_init__(self):
        A1 = _matrix(self.A1, "A1")
        A2 = _matrix(self.A2, "A2", A1.shape)
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "A2", A2)
        object.__setattr__(self, "h_slope", float(self.h_slope))
        for name, A in (("A1", A1), ("A2", A2)):
            if _sym_eigs(A).min() <= 0:
                raise ValueError(f"{name} is not positive definite")
        if not 0 < self.p_tilde < 1:
            raise ValueError("p_tilde must lie in (0, 1)")
        if not self.q_tilde < 0:
            raise ValueError("q_tilde must be negative")
        if self.h_slope == 0:
            raise ValueError("h_slope must be nonzero")

    @property
    def n(self):
        return self.A1.shape[0]

    @property
    def ell(self):
        return abs(self.h_slope)

    def to_dict(self):
        return {"A1": self.A1.tolist(), "A2": self.A2.tolist(), "h_slope": self.h_slope,
                "p_tilde": self.p_tilde, "q_tilde": self.q_tilde, "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class Plant:
    cfg: PlantConfig

    @property
    def ell(self):
        return self.cfg.ell

    @property
    def gamma(self):
        return self.cfg.gamma

    def h(self, u):
        return self.cfg.h_slope * np.asarray(u, dtype=float)

    def rhs(self, x, u):
        e = np.asarray(x, dtype=float) - self.h(u)
        r = float(np.linalg.norm(e))
        if r == 0.0:
            return np.zeros_like(e)
        return -(self.cfg.A1 @ e) * r ** -self.cfg.p_tilde - (self.cfg.A2 @ e) * r ** -self.cfg.q_tilde

    def system(self, u_of_t, label="plant"):
        """Plant driven by an open-loop input signal ``u_of_t(t)``; target tracks ``h(u(t))``."""
        return SystemDef(self.cfg.n, lambda t, x: self.rhs(x, u_of_t(t)),
                         lambda t, x: self.h(u_of_t(t)), label=label, params=self.cfg.to_dict())


def make_plant(cfg: PlantConfig) -> Plant:
    return Plant(cfg)


def plant_decay_rate(cfg: PlantConfig, gamma=None) -> KFxRate:
    """Rate ``a (V^p + V^q)`` for ``V = |x - h(u_hat)|^2`` whenever ``|x - h(u_hat)| >= gamma |u - u_hat|``.

    With ``kappa = ell/gamma`` the plant error ``x - h(u)`` differs from
    ``e = x - h(u_hat)`` by at most ``kappa |e|``; each drift term then
    contributes ``2 (lmin - kappa lmax) |e|^2`` over a norm factor between
    ``(1 - kappa)`` and ``(1 + kappa)``. Requires ``kappa < lmin/lmax`` for
    both matrices.
    """
    gamma = cfg.gamma if gamma is None else gamma
    if gamma is None or gamma <= 0:
        raise ValueError("a positive gain gamma is needed")
    kappa = cfg.ell / gamma
    coefs = []
    for A, expo, lower in ((cfg.A1, cfg.p_tilde, True), (cfg.A2, cfg.q_tilde, False)):
        lmin = _sym_eigs(A).min()
        lmax = np.linalg.norm(A, 2)
        lead = lmin - kappa * lmax
        if lead <= 0 or kappa >= 1:
            raise ValueError(f"kappa = {kappa:.4g} too large for this plant (needs < {lmin / lmax:.4g})")
        if lower:
            coefs.append(2 * lead * (1 + kappa) ** -expo)
        else:
            coefs.append(2 * lead * (1 - kappa) ** abs(expo))
    a = float(min(coefs))
    return KFxRate(a, 1 - cfg.p_tilde / 2, a, 1 - cfg.q_tilde / 2)


# ---------------------------------------------------------------------------
# feedback optimization with a rotating exosystem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """``0.5 x'Qx + c'x + 0.5 u'Pu + d'u``."""

    Q: np.ndarray
    P: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        Q = _matrix(self.Q, "Q")
        P = _matrix(self.P, "P")
        for name, M in (("Q", Q), ("P", P)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", _vector(self.c, "c", Q.shape[0]))
        object.__setattr__(self, "d", _vector(self.d, "d", P.shape[0]))

    def value(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x + 0.5 * u @ self.P @ u + self.d @ u)

    def to_dict(self):
        return {"Q": self.Q.tolist(), "P": self.P.tolist(), "c": self.c.tolist(), "d": self.d.tolist()}


@dataclass(frozen=True, eq=False)
class ExoConfig:
    """Planar rotation blocks; block ``i`` starts at ``(amp_i, 0)`` and turns at ``eps0 * freq_i``."""

    amplitudes: tuple
    frequencies: tuple
    epsilon0: float = 0.0

    def __post_init__(self):
        amps = tuple(float(a) for a in self.amplitudes)
        freqs = tuple(float(f) for f in self.frequencies)
        if len(amps) != len(freqs):
            raise ValueError("amplitudes and frequencies must have the same length")
        if any(f <= 0 for f in freqs):
            raise ValueError("frequencies must be positive")
        if self.epsilon0 < 0:
            raise ValueError("epsilon0 must be nonnegative")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "epsilon0", float(self.epsilon0))

    @property
    def dimension(self):
        return 2 * len(self.amplitudes)

    def initial_state(self):
        th = np.zeros(self.dimension)
        th[0::2] = self.amplitudes
        return th

    def field(self, theta):
        w = self.epsilon0 * np.asarray(self.frequencies)
        out = np.empty(self.dimension)
        out[0::2] = -w * theta[1::2]
        out[1::2] = w * theta[0::2]
        return out

    @staticmethod
    def disturbances(theta):
        return np.asarray(theta)[1::2]

    def exact_disturbances(self, t):
        return np.asarray(self.amplitudes) * np.sin(np.asarray(self.frequencies) * self.epsilon0 * t)

    def to_dict(self):
        return {"amplitudes": list(self.amplitudes), "frequencies": list(self.frequencies),
                "epsilon0": self.epsilon0}


FBK_A1 = ((1.5, 0.3), (0.3, 1.8))
FBK_A2 = ((1.4, 0.25), (0.25, 1.6))
FBK_H = 1.1
FBK_P_TILDE, FBK_Q_TILDE = 0.5, -0.5
FBK_GAMMA = 7 / 5
FBK_Q0 = ((1.0, 0.5), (0.5, 1.0))
FBK_P0 = ((3.5, 0.2), (0.2, 3.2))
FBK_C = (2.0, 1.0)
FBK_D = (1.5, 0.5)
FBK_AMPS = (1 / 2, 1 / 3, 1 / 7)
FBK_FREQS = (2.0, 1.5, 4.0)
# curvature constants quoted with the example; not recomputed here
FBK_K, FBK_MU = 1.339, 3.37


@dataclass(frozen=True, eq=False)
class FeedbackOptLoop:
    """State layout ``(x, u, theta)``; the disturbances enter ``Q`` and ``P`` diagonals."""

    system: SystemDef
    plant: Plant
    cost: QuadraticCost
    exo: ExoConfig
    xi1: float
    xi2: float
    K: float = FBK_K
    mu: float = FBK_MU

    @property
    def n(self):
        return self.plant.cfg.n

    def split(self, state):
        n = self.n
        state = np.asarray(state, dtype=float)
        return state[:n], state[n:2 * n], state[2 * n:]

    def matrices(self, theta):
        d1, d2, d3 = self.exo.disturbances(theta)
        Q = self.cost.Q + np.diag([d1, d2])
        P = self.cost.P + np.diag([0.0, d3])
        return Q, P

    def pseudo_gradient(self, x, u, theta):
        Q, P = self.matrices(theta)
        k = self.plant.cfg.h_slope
        return k * Q @ x + P @ u + k * self.cost.c + self.cost.d

    def quasi_steady_cost(self, u, theta):
        Q, P = self.matrices(theta)
        u = np.asarray(u, dtype=float)
        x = self.plant.h(u)
        return float(0.5 * x @ Q @ x + self.cost.c @ x + 0.5 * u @ P @ u + self.cost.d @ u)

    def quasi_steady_optimizer(self, theta):
        Q, P = self.matrices(theta)
        k = self.plant.cfg.h_slope
        H = k * k * Q + P
        if _sym_eigs(H).min() <= 0:
            raise np.linalg.LinAlgError("reduced cost is not strongly convex at this theta")
        return np.linalg.solve(H, -(k * self.cost.c + self.cost.d))

    def target(self, t, state):
        _, _, th = self.split(state)
        us = self.quasi_steady_optimizer(th)
        return np.concatenate([self.plant.h(us), us, th])

    def tracking_error(self, t, state):
        x, u, th = self.split(state)
        us = self.quasi_steady_optimizer(th)
        return float(np.linalg.norm(np.concatenate([x - self.plant.h(us), u - us])))

    def initial_state(self, xu):
        xu = _vector(xu, "initial (x, u)", 2 * self.n)
        return np.concatenate([xu, self.exo.initial_state()])

    def curvature(self):
        return curvature_condition(self.mu, self.K, self.plant.ell, self.plant.gamma, 1)

    def parameters(self):
        return {"plant": self.plant.cfg.to_dict(), "cost": self.cost.to_dict(), "exo": self.exo.to_dict(),
                "xi1": self.xi1, "xi2": self.xi2, "K": self.K, "mu": self.mu}


def _check_xi(xi1, xi2):
    if not 0 < xi1 < 1:
        raise ValueError(f"xi1 must lie in (0, 1), got {xi1}")
    if not xi2 < 0:
        raise ValueError(f"xi2 must be negative, got {xi2}")


def make_feedback_opt_loop(eps0=0.0, xi1=1 / 3, xi2=-1 / 5, amplitudes=FBK_AMPS, frequencies=FBK_FREQS,
                           plant_cfg: Optional[PlantConfig] = None, cost: Optional[QuadraticCost] = None,
                           K=FBK_K, mu=FBK_MU) -> FeedbackOptLoop:
    _check_xi(xi1, xi2)
    if plant_cfg is None:
        plant_cfg = PlantConfig(FBK_A1, FBK_A2, FBK_H, FBK_P_TILDE, FBK_Q_TILDE, gamma=FBK_GAMMA)
    if cost is None:
        cost = QuadraticCost(FBK_Q0, FBK_P0, FBK_C, FBK_D)
    exo = ExoConfig(amplitudes, frequencies, eps0)
    if exo.dimension != 6:
        raise ValueError("the cost perturbation uses exactly three disturbance blocks")
    plant = make_plant(plant_cfg)
    holder = {}

    def f(t, state):
        loop = holder["loop"]
        x, u, th = loop.split(state)
        g = loop.pseudo_gradient(x, u, th)
        return np.concatenate([plant.rhs(x, u), -fxt_drive(g, xi1, xi2), exo.field(th)])

    n = plant_cfg.n
    system = SystemDef(2 * n + exo.dimension, f, lambda t, s: holder["loop"].target(t, s),
                       label=f"fbkopt (eps0={eps0:g})", params={"eps0": eps0, "xi1": xi1, "xi2": xi2})
    loop = FeedbackOptLoop(system, plant, cost, exo, float(xi1), float(xi2), K, mu)
    holder["loop"] = loop
    return loop


def quasi_steady_optimizer(theta_state, loop: Optional[FeedbackOptLoop] = None):
    loop = loop or make_feedback_opt_loop()
    return loop.quasi_steady_optimizer(np.asarray(theta_state, dtype=float))


# ---------------------------------------------------------------------------
# two-player Nash seeking
# ---------------------------------------------------------------------------

NES_Q = ((1.0, 0.5), (1.7, 1.5))
NES_P = ((4.0, 1.0), (0.7, 3.0))
NES_C = (0.6, 1.0)
NES_D = (0.7, 0.8)
NES_H = 0.5
NES_P_TILDE, NES_Q_TILDE = 2 / 5, -2 / 7
NES_GAMMA = 0.51


@dataclass(frozen=True, eq=False)
class NesLoop:
    """State layout ``(x, u)``; each player's action follows the scalar drive of its own partial."""

    system: SystemDef
    plant: Plant
    Q: np.ndarray
    P: np.ndarray
    c: np.ndarray
    d: np.ndarray
    xi1: float
    xi2: float
    u_star: np.ndarray

    @property
    def n(self):
        return self.plant.cfg.n

    @property
    def potential_matrix(self):
        k = self.plant.cfg.h_slope
        return k * k * self.Q + self.P

    @property
    def offset(self):
        return self.plant.cfg.h_slope * self.c + self.d

    @property
    def K(self):
        return float(np.linalg.norm(self.plant.cfg.h_slope * self.Q, 2))

    @property
    def mu(self):
        return float(_sym_eigs(self.potential_matrix).min())

    def pseudo_gradient(self, x, u):
        k = self.plant.cfg.h_slope
        return k * self.Q @ np.asarray(x) + self.P @ np.asarray(u) + self.offset

    def potential(self, u):
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.potential_matrix @ u + self.offset @ u)

    def quasi_steady_cost(self, u, theta=None):
        return self.potential(u)

    @property
    def target(self):
        return np.concatenate([self.plant.h(self.u_star), self.u_star])

    def curvature(self):
        return curvature_condition(self.mu, self.K, self.plant.ell, self.plant.gamma, 2)

    def subsystems(self, eps=None):
        """Plant and player subsystem data for the max-form certificate.

        ``V = |x - h(u*)|^2`` with linear gain ``2 gamma^2/mu``; ``W = P(u) - P(u*)``
        with linear gain ``(mu/2)/(gamma+eps)^2`` and a rate from the
        decentralized-flow constant.
        """
        mu, K, ell, gamma, N = self.mu, self.K, self.plant.ell, self.plant.gamma, 2
        if not curvature_condition(mu, K, ell, gamma, N):
            raise ValueError("curvature condition fails; no certificate")
        if eps is None:
            eps = 0.5 * (mu / (N * K) - ell - gamma)
        M = K * (ell + eps + gamma) / mu
        g1 = 2 * gamma ** 2 / mu
        g2 = (mu / 2) / (gamma + eps) ** 2
        rate1 = plant_decay_rate(self.plant.cfg, gamma)
        c = min(decentralized_flow_constant(N, self.xi1, M), decentralized_flow_constant(N, self.xi2, M))
        rate2 = KFxRate(c * (2 * mu) ** (1 - self.xi1 / 2), 1 - self.xi1 / 2,
                        c * (2 * mu) ** (1 - self.xi2 / 2), 1 - self.xi2 / 2)
        n = self.n
        hs = self.plant.h(self.u_star)
        pstar = self.potential(self.u_star)

        def V(state):
            e = np.asarray(state[:n]) - hs
            return float(e @ e)

        def dV(state):
            g = np.zeros(len(state))
            g[:n] = 2 * (np.asarray(state[:n]) - hs)
            return g

        def W(state):
            return self.potential(state[n:]) - pstar

        def dW(state):
            g = np.zeros(len(state))
            g[n:] = self.potential_matrix @ np.asarray(state[n:]) + self.offset
            return g

        sub1 = SubsystemData(GainFunction.linear(g1), rate1, lyapunov=V, lyapunov_grad=dV, label="plant error")
        sub2 = SubsystemData(GainFunction.linear(g2), rate2, lyapunov=W, lyapunov_grad=dW, label="potential gap")
        return sub1, sub2

    def parameters(self):
        return {"plant": self.plant.cfg.to_dict(), "Q": self.Q.tolist(), "P": self.P.tolist(),
                "c": self.c.tolist(), "d": self.d.tolist(), "xi1": self.xi1, "xi2": self.xi2,
                "u_star": self.u_star.tolist(), "K": self.K, "mu": self.mu}


def nash_equilibrium(Q=NES_Q, P=NES_P, c=NES_C, d=NES_D, h_slope=NES_H):
    """Stationary point of the potential: ``(h^2 Q + P) u = -(h c + d)``."""
    Q = _matrix(Q, "Q")
    P = _matrix(P, "P", Q.shape)
    A = h_slope * h_slope * Q + P
    return np.linalg.solve(A, -(h_slope * _vector(c, "c") + _vector(d, "d")))


def make_nes_loop(xi1=1 / 3, xi2=-1 / 5, plant_cfg: Optional[PlantConfig] = None,
                  Q=NES_Q, P=NES_P, c=NES_C, d=NES_D) -> NesLoop:
    _check_xi(xi1, xi2)
    if plant_cfg is None:
        plant_cfg = PlantConfig(np.eye(2), np.eye(2), NES_H, NES_P_TILDE, NES_Q_TILDE, gamma=NES_GAMMA)
    Q = _matrix(Q, "Q")
    P = _matrix(P, "P", Q.shape)
    c = _vector(c, "c", Q.shape[0])
    d = _vector(d, "d", P.shape[0])
    A = plant_cfg.h_slope ** 2 * Q + P
    if not np.allclose(A, A.T):
        raise ValueError("pseudogradient is not a gradient: h^2 Q + P is not symmetric")
    plant = make_plant(plant_cfg)
    u_star = nash_equilibrium(Q, P, c, d, plant_cfg.h_slope)
    n = plant_cfg.n
    k = plant_cfg.h_slope
    offset = k * c + d

    def f(t, state):
        x, u = state[:n], state[n:]
        g = k * Q @ x + P @ u + offset
        drive = np.array([fxt_drive(float(gi), xi1, xi2) for gi in g])
        return np.concatenate([plant.rhs(x, u), -drive])

    target = np.concatenate([plant.h(u_star), u_star])
    system = SystemDef(2 * n, f, target, label="nes2p", params={"xi1": xi1, "xi2": xi2})
    return NesLoop(system, plant, Q, P, c, d, float(xi1), float(xi2), u_star)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def make_exponential_control(dimension=1):
    """``x' = -x``: asymptotically but not fixed-time stable."""
    return SystemDef(dimension, lambda t, x: -np.asarray(x, dtype=float), np.zeros(dimension),
                     label="exp-control")


PRESETS = ("homog-ex", "fbkopt", "nes2p", "exp-control")
