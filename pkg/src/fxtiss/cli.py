"""Command-line entry point: ``fxtiss certify | simulate | sweep``.

Exit codes: 0 pass or valid, 1 input error, 2 negative result.
Outputs go to ``--out``, else ``$FXTISS_OUTPUT_DIR``, else ``./fxtiss-out``.
A ``manifest.json`` listing parameters and outputs is written on every run.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .analysis import (
    DEFAULT_SEED,
    FBK_IC,
    SATURATION_THRESHOLD,
    iss_residual_sweep,
    settling_uniformity_sweep,
)
from .certificate import (
    SubsystemData,
    assemble_certificate,
    curvature_condition,
    linear_loop_gains,
    check_small_gain,
)
from .comparison import GainFunction, KFxRate, MembershipError, PowerSum
from .sim import IntegratorOptions, NonFiniteStateError, integrate
from .systems import (
    AS_PRINTED,
    HOMOG_IC,
    SIGN_CORRECTED,
    PlantConfig,
    PowerInterconnection,
    QuadraticCost,
    make_exponential_control,
    make_feedback_opt_loop,
    make_homogeneous_example,
    make_nes_loop,
    quarter_decay_route,
    quadratic_subsystems,
)

OK, INPUT_ERROR, NEGATIVE = 0, 1, 2
ENV_OUT = "FXTISS_OUTPUT_DIR"
PRESET_NAMES = ("homog-ex", "fbkopt", "nes2p", "exp-control")
OPTION_KEYS = ("horizon", "rel_step_cap", "settle_tol", "dwell", "min_step", "max_step", "rtol", "atol",
               "snap_radius", "max_steps", "method", "implicit_rtol", "implicit_atol")


class InputError(Exception):
    """Bad flags or configuration; ``line`` points into the config file when known."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        loc = ""
        if source is not None:
            loc = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(loc + message)


# ---------------------------------------------------------------------------
# config loading with line numbers
# ---------------------------------------------------------------------------

@dataclass
class Config:
    data: dict
    lines: dict
    source: Optional[str] = None
    text: str = ""

    def line_of(self, path):
        path = tuple(path)
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get((), None)

    def error(self, message, path=()):
        return InputError(message, self.line_of(path), self.source)

    def get(self, key, default=None):
        return self.data.get(key, default)


def _node_to_python(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k)) if not isinstance(k, yaml.ScalarNode) else k.value
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _node_to_python(v, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_node_to_python(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config: {exc.strerror}", source=str(path))
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise InputError(f"malformed config: {exc.problem}", mark.line + 1 if mark else None, str(path))
    lines = {}
    data = {} if node is None else _node_to_python(node, (), lines)
    if not isinstance(data, dict):
        raise InputError("config must be a mapping at the top level", 1, str(path))
    return Config(data, lines, str(path), text)


def _num(cfg: Config, path, value, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise cfg.error(f"{'.'.join(map(str, path))} must be a number", path)
    if positive and not value > 0:
        raise cfg.error(f"{'.'.join(map(str, path))} must be positive", path)
    return float(value)


def _require(cfg: Config, mapping, key, path):
    if not isinstance(mapping, dict):
        raise cfg.error(f"{'.'.join(map(str, path)) or 'entry'} must be a mapping", path)
    if key not in mapping:
        raise cfg.error(f"missing field '{key}' in {'.'.join(map(str, path)) or 'config'}", path)
    return mapping[key]


def _power_sum(cfg, terms, path):
    if not isinstance(terms, list) or not terms:
        raise cfg.error("terms must be a nonempty list of {coeff, exponent}", path)
    out = []
    for i, t in enumerate(terms):
        c = _num(cfg, path + (i, "coeff"), _require(cfg, t, "coeff", path + (i,)))
        e = _num(cfg, path + (i, "exponent"), _require(cfg, t, "exponent", path + (i,)), positive=True)
        out.append((c, e))
    return PowerSum(out)


def _gain(cfg, d, path):
    kind = _require(cfg, d, "kind", path)
    if kind == "linear":
        return GainFunction.linear(_num(cfg, path + ("slope",), _require(cfg, d, "slope", path), positive=True))
    if kind not in ("direct", "inverse"):
        raise cfg.error(f"gain kind must be direct, inverse or linear, got {kind!r}", path + ("kind",))
    ps = _power_sum(cfg, _require(cfg, d, "terms", path), path + ("terms",))
    try:
        return GainFunction.from_inverse(ps) if kind == "inverse" else GainFunction.direct(ps)
    except MembershipError as exc:
        raise cfg.error(f"gain is not strictly increasing (witness s={exc.witness!r})", path)


def _rate(cfg, d, path):
    vals = {k: _num(cfg, path + (k,), _require(cfg, d, k, path)) for k in ("a", "p", "b", "q")}
    try:
        return KFxRate(**vals)
    except ValueError as exc:
        raise cfg.error(f"invalid rate: {exc}", path)


def _subsystems_from_config(cfg: Config):
    subs = _require(cfg, cfg.data, "subsystems", ())
    if not isinstance(subs, list) or len(subs) != 2:
        raise cfg.error("subsystems must be a list of exactly two entries", ("subsystems",))
    out = []
    for i, s in enumerate(subs):
        p = ("subsystems", i)
        gain = _gain(cfg, _require(cfg, s, "gain", p), p + ("gain",))
        rate = _rate(cfg, _require(cfg, s, "rate", p), p + ("rate",))
        chi = _gain(cfg, s["input_gain"], p + ("input_gain",)) if "input_gain" in s else None
        out.append(SubsystemData(gain, rate, input_gain=chi, label=str(s.get("label", f"subsystem {i + 1}"))))
    return tuple(out)


def _terms(cfg, d, key, path):
    items = _require(cfg, d, key, path)
    if not isinstance(items, list):
        raise cfg.error(f"{key} must be a list", path + (key,))
    out = []
    for i, t in enumerate(items):
        q = path + (key, i)
        out.append((_num(cfg, q + ("coeff",), _require(cfg, t, "coeff", q)),
                    _num(cfg, q + ("exponent",), _require(cfg, t, "exponent", q), positive=True)))
    return tuple(out)


def _power_interconnection(cfg, d, path):
    return PowerInterconnection(*(_terms(cfg, d, k, path) for k in ("x_decay", "x_cross", "y_decay", "y_cross")))


def _matrix_entry(cfg, d, key, path):
    try:
        return np.array(d[key], dtype=float)
    except (TypeError, ValueError):
        raise cfg.error(f"{key} must be a numeric matrix or vector", path + (key,))


def _plant_override(cfg, base: PlantConfig, d, path):
    if d is None:
        return base
    if not isinstance(d, dict):
        raise cfg.error("plant must be a mapping", path)
    kw = base.to_dict()
    for k in kw:
        if k in d:
            kw[k] = _matrix_entry(cfg, d, k, path) if k in ("A1", "A2") else d[k]
    try:
        return PlantConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise cfg.error(f"invalid plant: {exc}", path)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

@dataclass
class Setup:
    name: str
    system: object
    loop: object = None
    subsystems: Optional[tuple] = None
    parameters: dict = field(default_factory=dict)
    default_ic: tuple = ()
    direction: Optional[tuple] = None
    horizon: float = 10.0
    sweep_horizon: float = 60.0


def build_setup(name, overrides: dict, cfg: Optional[Config] = None) -> Setup:
    cfg = cfg or Config({}, {})
    ov = dict(overrides)
    if name == "homog-ex":
        variant = ov.get("sign_variant", SIGN_CORRECTED)
        if variant not in (SIGN_CORRECTED, AS_PRINTED):
            raise cfg.error(f"sign_variant must be {SIGN_CORRECTED} or {AS_PRINTED}", ("sign_variant",))
        scale = float(ov.get("cross_scale", 1.0))
        ex = make_homogeneous_example(variant, scale)
        return Setup(name, ex.system, ex, ex.subsystems, {**ex.parameters(), "cross_scale": scale},
                     HOMOG_IC, HOMOG_IC, 10.0, 60.0)
    if name == "fbkopt":
        eps0 = float(ov.get("eps0", 0.0))
        xi1, xi2 = float(ov.get("xi1", 1 / 3)), float(ov.get("xi2", -1 / 5))
        base = make_feedback_opt_loop(eps0, xi1, xi2)
        plant = _plant_override(cfg, base.plant.cfg, ov.get("plant"), ("plant",))
        cost = base.cost
        if "cost" in ov:
            c = ov["cost"]
            kw = {k: (_matrix_entry(cfg, c, k, ("cost",)) if k in c else getattr(base.cost, k)) for k in "QPcd"}
            try:
                cost = QuadraticCost(**kw)
            except ValueError as exc:
                raise cfg.error(f"invalid cost: {exc}", ("cost",))
        loop = make_feedback_opt_loop(eps0, xi1, xi2, plant_cfg=plant, cost=cost,
                                      K=float(ov.get("K", base.K)), mu=float(ov.get("mu", base.mu)))
        return Setup(name, loop.system, loop, None, loop.parameters(), FBK_IC, FBK_IC + (0.0,) * 6, 20.0, 20.0)
    if name == "nes2p":
        xi1, xi2 = float(ov.get("xi1", 1 / 3)), float(ov.get("xi2", -1 / 5))
        base = make_nes_loop(xi1, xi2)
        plant = _plant_override(cfg, base.plant.cfg, ov.get("plant"), ("plant",))
        kw = {}
        for k in ("Q", "P", "c", "d"):
            if k in ov:
                kw[k] = _matrix_entry(cfg, ov, k, ())
        try:
            loop = make_nes_loop(xi1, xi2, plant_cfg=plant, **kw)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise cfg.error(f"invalid game data: {exc}")
        try:
            subs = loop.subsystems()
        except ValueError:
            subs = None
        ic = tuple(float(v) for v in loop.target + 0.5 * np.ones(4))
        return Setup(name, loop.system, loop, subs, loop.parameters(), ic, (1.0, 1.0, 1.0, 1.0), 20.0, 60.0)
    if name == "exp-control":
        return Setup(name, make_exponential_control(1), None, None, {"field": "x' = -x"}, (1.0,), (1.0,), 10.0, 60.0)
    if name == "power":
        model = _power_interconnection(cfg, ov, ())
        from .sim import SystemDef

        try:
            subs = quadratic_subsystems(model)
        except ValueError:
            subs = None
        system = SystemDef(2, model.field, np.zeros(2), label="power interconnection")
        return Setup(name, system, model, subs, model.to_dict(), (1.0, 1.0), (1.0, 1.0), 10.0, 60.0)
    raise cfg.error(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}", ("preset",))


def setup_from_args(args) -> tuple:
    """Resolve ``--preset`` / ``--config`` into a Setup plus the config (if any)."""
    cfg = None
    ov = {}
    name = getattr(args, "preset", None)
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        ov = {k: v for k, v in cfg.data.items() if k not in ("preset", "system", "integrator", "subsystems")}
        if "system" in cfg.data:
            sysd = cfg.data["system"]
            kind = _require(cfg, sysd, "kind", ("system",))
            if kind != "power_interconnection":
                raise cfg.error(f"unknown system kind {kind!r}", ("system", "kind"))
            name = "power"
            ov = {k: v for k, v in sysd.items() if k != "kind"}
            cfg = Config(sysd, {k[1:]: v for k, v in cfg.lines.items() if k[:1] == ("system",)}, cfg.source)
        elif name is None:
            name = cfg.data.get("preset")
    for flag in ("eps0", "xi1", "xi2", "sign_variant"):
        v = getattr(args, flag, None)
        if v is not None:
            ov[flag] = v
    if name is None:
        raise InputError("give --preset or a config with 'preset', 'system' or 'subsystems'")
    return build_setup(name, ov, cfg), cfg


def integrator_options(cfg: Optional[Config], horizon, settle_tol=None, **extra) -> IntegratorOptions:
    kw = {"horizon": horizon}
    if cfg is not None and "integrator" in cfg.data:
        d = cfg.data["integrator"]
        if not isinstance(d, dict):
            raise cfg.error("integrator must be a mapping", ("integrator",))
        for k, v in d.items():
            if k not in OPTION_KEYS:
                raise cfg.error(f"unknown integrator option {k!r}", ("integrator", k))
            kw[k] = v
    if settle_tol is not None:
        kw["settle_tol"] = settle_tol
    kw.update(extra)
    try:
        return IntegratorOptions(**kw)
    except (ValueError, TypeError) as exc:
        raise InputError(f"invalid integrator options: {exc}")


# ---------------------------------------------------------------------------
# manifest and output helpers
# ---------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


@dataclass
class RunManifest:
    command: str
    preset: Optional[str] = None
    seed: int = DEFAULT_SEED
    parameters: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    config_text: str = ""
    status: str = "error"
    exit_code: int = INPUT_ERROR
    message: str = ""

    @property
    def config_digest(self):
        blob = json.dumps(_jsonable(self.parameters), sort_keys=True) + "\n" + self.config_text
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self):
        return {"command": self.command, "preset": self.preset, "config_digest": self.config_digest,
                "seed": self.seed, "parameters": _jsonable(self.parameters), "outputs": list(self.outputs),
                "status": self.status, "exit_code": self.exit_code, "message": self.message,
                "version": __version__}

    def write(self, out_dir: Path):
        path = out_dir / "manifest.json"
        self.outputs = [p for p in self.outputs if p != str(path)] + [str(path)]
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _out_dir(args):
    d = Path(args.out or os.environ.get(ENV_OUT) or "fxtiss-out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(man: RunManifest, path: Path, text: str):
    path.write_text(text)
    man.outputs.append(str(path))
    return path


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{name} must be a comma-separated list of numbers, got {text!r}")


def parse_magnitudes(text):
    """``1e0..1e6`` (one value per decade) or a comma-separated list."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        try:
            a, b = float(lo), float(hi)
        except ValueError:
            raise InputError(f"bad magnitude range {text!r}")
        if not (0 < a < b):
            raise InputError("magnitude range needs 0 < start < end")
        n = int(round(math.log10(b / a)))
        if not math.isclose(a * 10.0 ** n, b, rel_tol=1e-9):
            raise InputError("range ends must be a whole number of decades apart")
        return [float(f"{a * 10.0 ** k:.12g}") for k in range(n + 1)]
    mags = _floats(text, "--mags")
    if not mags:
        raise InputError("--mags is empty")
    return mags


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _certify_setup(setup: Setup, inflation, out: Path, man: RunManifest):
    lines = []
    doc = {"preset": setup.name}
    code = NEGATIVE
    if setup.name == "fbkopt":
        loop = setup.loop
        cond = curvature_condition(loop.mu, loop.K, loop.plant.ell, loop.plant.gamma, 1)
        lines += ["curvature condition mu > K (ell + gamma)",
                  f"  mu={loop.mu!r} K={loop.K!r} ell={loop.plant.ell!r} gamma={loop.plant.gamma!r}",
                  f"  margin={cond.margin!r} -> {'satisfied' if cond else 'violated'}"]
        doc["curvature"] = {"satisfied": cond.satisfied, "margin": cond.margin}
        if cond:
            g1, g2 = linear_loop_gains(loop.mu, loop.K, loop.plant.ell, loop.plant.gamma, 1)
            chk = check_small_gain(g1, g2)
            lines += ["linear cross gains", f"  gamma_1={g1!r}", f"  gamma_2={g2!r}",
                      f"  small-gain margin={chk.margin!r} -> {'valid' if chk else 'invalid'}"]
            doc["linear_gains"] = {"gamma_1": g1.to_dict(), "gamma_2": g2.to_dict(), "valid": chk.valid,
                                   "margin": chk.margin}
            code = OK if chk else NEGATIVE
        lines.append("no composed settling bound: the plant decay constant cannot be derived for this data")
        return "\n".join(lines) + "\n", doc, code
    if setup.name == "nes2p":
        loop = setup.loop
        cond = curvature_condition(loop.mu, loop.K, loop.plant.ell, loop.plant.gamma, 2)
        lines += ["curvature condition mu > N K (ell + gamma), N = 2",
                  f"  mu={loop.mu!r} K={loop.K!r} ell={loop.plant.ell!r} gamma={loop.plant.gamma!r}",
                  f"  margin={cond.margin!r} -> {'satisfied' if cond else 'violated'}", ""]
        doc["curvature"] = {"satisfied": cond.satisfied, "margin": cond.margin}
    if setup.subsystems is None:
        if setup.name == "exp-control":
            raise InputError("preset exp-control carries no subsystem data to certify")
        lines.append("no subsystem data: an isolated subsystem is not fixed-time stable under "
                     "a quadratic Lyapunov function")
        doc["valid"] = False
        return "\n".join(lines) + "\n", doc, NEGATIVE
    cert = assemble_certificate(*setup.subsystems, inflation=inflation)
    text = "\n".join(lines) + ("\n" if lines else "") + cert.to_text()
    doc["certificate"] = cert.to_dict()
    doc["subsystems"] = [s.to_dict() for s in setup.subsystems]
    if setup.name in ("homog-ex", "power"):
        model = setup.loop.model if setup.name == "homog-ex" else setup.loop
        try:
            route = quarter_decay_route(model)
            doc["quarter_decay_route"] = route.to_dict()
            text += "\nquarter-decay route with dissipativity majorants\n"
            text += f"  small gain: {'ok' if route.check else 'fails'} ({route.check.reason})\n"
            text += f"  coupling {route.coupling!r} vs epsilon {route.bound.epsilon!r} (C={route.bound.C!r})\n"
            for w in route.bound.warnings:
                text += f"  warning: {w}\n"
        except ValueError as exc:
            doc["quarter_decay_route"] = {"error": str(exc)}
    return text, doc, OK if cert.valid else NEGATIVE


def cmd_certify(args, man: RunManifest):
    out = _out_dir(args)
    if args.config and not args.preset:
        cfg = load_config(args.config)
        man.config_text = cfg.text
        if "subsystems" in cfg.data:
            subs = _subsystems_from_config(cfg)
            infl = _num(cfg, ("inflation",), cfg.data.get("inflation", args.inflation), positive=True)
            man.preset = "custom"
            man.parameters = {"subsystems": [s.to_dict() for s in subs], "inflation": infl}
            cert = assemble_certificate(*subs, inflation=infl)
            text, doc, code = cert.to_text(), {"certificate": cert.to_dict()}, OK if cert.valid else NEGATIVE
        else:
            setup, _ = setup_from_args(args)
            man.preset, man.parameters = setup.name, setup.parameters
            text, doc, code = _certify_setup(setup, args.inflation, out, man)
    else:
        setup, cfg = setup_from_args(args)
        man.preset, man.parameters = setup.name, {**setup.parameters, "inflation": args.inflation}
        text, doc, code = _certify_setup(setup, args.inflation, out, man)
    _write(man, out / "certificate.txt", text)
    _write(man, out / "certificate.json", json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return code


def cmd_simulate(args, man: RunManifest):
    setup, cfg = setup_from_args(args)
    if cfg is not None:
        man.config_text = cfg.text
    out = _out_dir(args)
    ic = setup.default_ic
    if cfg is not None and "ic" in cfg.data:
        ic = cfg.data["ic"]
    if args.ic:
        ic = _floats(args.ic, "--ic")
    ic = np.asarray(ic, dtype=float)
    horizon = args.horizon if args.horizon is not None else float(cfg.data.get("horizon", setup.horizon) if cfg
                                                                   else setup.horizon)
    if not horizon > 0:
        raise InputError("--horizon must be positive")
    loop = setup.loop
    stop = not (setup.name == "fbkopt" and loop.exo.epsilon0 > 0)
    opts = integrator_options(cfg, horizon, args.settle_tol, stop_on_settle=stop)
    if setup.name == "fbkopt":
        if ic.size == 2 * loop.n:
            ic = loop.initial_state(ic)
    if ic.size != setup.system.dimension:
        raise InputError(f"--ic has {ic.size} values, the {setup.name} state has {setup.system.dimension}")
    man.preset = setup.name
    man.parameters = {**setup.parameters, "ic": ic.tolist(), "integrator": opts.__dict__}
    try:
        tr = integrate(setup.system, ic, opts)
    except NonFiniteStateError as exc:
        man.message = str(exc)
        sys.stdout.write(f"aborted: {exc}\n")
        return NEGATIVE
    err = [setup.system.error(t, s) for t, s in zip(tr.times, tr.states)]
    path = tr.to_csv(out / "trajectory.csv", extra={"distance": err})
    man.outputs.append(str(path))
    lines = [f"preset: {setup.name}", f"terminated: {tr.terminated}",
             f"settle time: {float(tr.settle_time)!r}" if tr.settle_time is not None else "settle time: none",
             f"final time: {float(tr.times[-1])!r}", f"final distance to target: {float(err[-1])!r}",
             f"steps: {tr.n_steps} accepted, {tr.n_rejected} rejected, {len(tr.snaps)} snaps"]
    if tr.switched_at is not None:
        lines.append(f"switched to implicit steps at t={float(tr.switched_at)!r}")
    if setup.name == "nes2p":
        du = float(np.linalg.norm(tr.final[loop.n:] - loop.u_star))
        lines.append(f"|u - u*| at end: {du!r}")
    text = "\n".join(lines) + "\n"
    _write(man, out / "simulate.txt", text)
    sys.stdout.write(text)
    return OK


def _certified_bound(setup: Setup):
    if setup.subsystems is None:
        return None
    cert = assemble_certificate(*setup.subsystems)
    return cert.settling_bound if cert.valid else None


def cmd_sweep(args, man: RunManifest):
    setup, cfg = setup_from_args(args)
    if cfg is not None:
        man.config_text = cfg.text
    out = _out_dir(args)
    man.preset = setup.name
    if args.kind == "settling":
        mags = parse_magnitudes(args.mags)
        direction = _floats(args.direction, "--direction") if args.direction else setup.direction
        horizon = args.horizon if args.horizon is not None else setup.sweep_horizon
        opts = integrator_options(cfg, horizon, args.settle_tol)
        if len(direction) != setup.system.dimension:
            raise InputError(f"--direction needs {setup.system.dimension} values")
        man.parameters = {**setup.parameters, "magnitudes": mags, "direction": list(direction),
                          "integrator": opts.__dict__, "threshold": args.threshold}
        rep = settling_uniformity_sweep(setup.system, mags, direction, opts, threshold=args.threshold,
                                        n_jobs=args.n_jobs)
        verdict = rep.verdict
        extra = ""
        bound = _certified_bound(setup)
        if bound is not None:
            limit = bound + 3 * opts.dwell
            within = all(v <= limit for v in rep.values if math.isfinite(v))
            rep.details["settling_bound"] = bound
            rep.details["within_bound"] = within
            extra = f"certified settling bound: {bound!r} (+3 dwell = {limit!r}) -> " \
                    f"{'respected' if within else 'EXCEEDED'}\n"
            verdict = verdict and within
    else:
        if setup.name != "fbkopt":
            raise InputError("the iss sweep runs on the fbkopt preset")
        eps = _floats(args.eps0_list, "--eps0")
        horizon = args.horizon if args.horizon is not None else setup.horizon
        opts = integrator_options(cfg, horizon, args.settle_tol)
        man.parameters = {**setup.parameters, "eps0_values": eps, "integrator": opts.__dict__,
                          "amplitude_scale": args.amplitude_scale}
        rep = iss_residual_sweep(eps, opts, amplitude_scale=args.amplitude_scale, n_jobs=args.n_jobs)
        verdict, extra = rep.verdict, ""
    stem = f"sweep_{args.kind}"
    rep.to_csv(out / f"{stem}.csv")
    man.outputs.append(str(out / f"{stem}.csv"))
    text = rep.to_text() + extra + (f"overall: {'PASS' if verdict else 'FAIL'}\n")
    _write(man, out / f"{stem}.txt", text)
    _write(man, out / f"{stem}.json", json.dumps(_jsonable(rep.to_dict()), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return OK if verdict else NEGATIVE


def build_parser():
    p = argparse.ArgumentParser(prog="fxtiss", description="Fixed-time ISS small-gain certification and simulation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--preset", choices=PRESET_NAMES)
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./fxtiss-out)")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--sign-variant", dest="sign_variant", choices=(SIGN_CORRECTED, AS_PRINTED))

    c = sub.add_parser("certify", help="build a small-gain certificate")
    common(c)
    c.add_argument("config_path", nargs="?", help="config file (same as --config)")
    c.add_argument("--inflation", type=float, default=0.05)

    s = sub.add_parser("simulate", help="integrate a preset and write the trajectory")
    common(s)
    s.add_argument("--ic", help="initial state, comma separated")
    s.add_argument("--horizon", type=float)
    s.add_argument("--eps0", type=float)
    s.add_argument("--xi1", type=float)
    s.add_argument("--xi2", type=float)
    s.add_argument("--settle-tol", dest="settle_tol", type=float)

    w = sub.add_parser("sweep", help="settling-uniformity or ISS-residual sweep")
    w.add_argument("kind", choices=("settling", "iss"))
    common(w)
    w.add_argument("--mags", default="1e0..1e6", help="magnitudes: 1e0..1e6 or a comma list")
    w.add_argument("--direction", help="initial offset direction, comma separated")
    w.add_argument("--eps0", dest="eps0_list", default="0,0.3,2", help="eps0 values for the iss sweep")
    w.add_argument("--amplitude-scale", dest="amplitude_scale", type=float, default=1.0)
    w.add_argument("--threshold", type=float, default=SATURATION_THRESHOLD)
    w.add_argument("--horizon", type=float)
    w.add_argument("--settle-tol", dest="settle_tol", type=float)
    w.add_argument("--n-jobs", dest="n_jobs", type=int, default=1)
    w.add_argument("--xi1", type=float)
    w.add_argument("--xi2", type=float)
    return p


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return INPUT_ERROR if exc.code else OK
    if args.command == "certify" and getattr(args, "config_path", None) and not args.config:
        args.config = args.config_path
    for flag in ("eps0", "xi1", "xi2"):
        if not hasattr(args, flag):
            setattr(args, flag, None)
    man = RunManifest(args.command, seed=args.seed)
    code = INPUT_ERROR
    out = None
    try:
        if args.preset and args.config:
            raise InputError("give either --preset or --config, not both")
        if not args.preset and not args.config:
            raise InputError("give --preset or --config")
        if args.config:
            try:
                man.config_text = Path(args.config).read_text()
            except OSError:
                pass
        out = _out_dir(args)
        code = COMMANDS[args.command](args, man)
        man.status = {OK: "ok", NEGATIVE: "negative"}.get(code, "error")
    except InputError as exc:
        man.message = str(exc)
        sys.stderr.write(f"error: {exc}\n")
        code = INPUT_ERROR
    except (ValueError, np.linalg.LinAlgError) as exc:
        man.message = str(exc)
        sys.stderr.write(f"error: {exc}\n")
        code = INPUT_ERROR
    finally:
        man.exit_code = code
        try:
            man.write(out if out is not None else _out_dir(args))
        except OSError as exc:
            sys.stderr.write(f"could not write manifest: {exc}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
