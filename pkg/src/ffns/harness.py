"""
Configuration, single runs, parameter sweeps and rate fitting.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import (
    NormSpec,
    conormal_norm,
    energy_terms,
    integrated_residual,
    record,
    write_records_csv,
)
from .errors import (
    CflViolation,
    ConfigError,
    DegenerateData,
    DiffeoViolated,
    FFNSError,
    NotConverged,
)
from .fields import write_snapshot
from .geometry import build_geometry, choose_A
from .inequalities import FieldSampler
from .stepper import SimParams, project_initial_data, step

__all__ = [
    "RunConfig",
    "load_config",
    "parse_config",
    "initial_data",
    "random_initial_data",
    "run",
    "RunResult",
    "SweepPlan",
    "sweep",
    "fit_rate",
    "RateFit",
    "mms_study",
    "thread_cap",
]

log = logging.getLogger(__name__)

HARD_ERRORS = (DiffeoViolated, NotConverged, CflViolation)

INITIAL_KINDS = ("rest", "wave", "random")


# ----------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    params: SimParams
    initial: dict = field(default_factory=lambda: {"kind": "rest"})
    output_every: int = 0
    norms: list = field(default_factory=list)
    source: str | None = None


def _line_of(node) -> int:
    return node.start_mark.line + 1


def parse_config(text: str, path: str = "<string>") -> RunConfig:
    """Parse a YAML run configuration.

    Top-level keys are the :class:`SimParams` fields plus ``initial``
    (mapping with ``kind`` in rest/wave/random, ``amplitude``, ``mode``,
    ``seed``), ``output_every`` (steps between snapshots, 0 for first and
    last only) and ``norms`` (list of NormSpec mappings).

    Raises
    ------
    ConfigError
        With the offending file and line.
    """
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        raise ConfigError(str(exc.problem), path, line) from None
    finally:
        loader.dispose()
    if node is None:
        raise ConfigError("empty configuration", path, 1)
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", path, _line_of(node))
    known = set(SimParams.keys())
    extra = {"initial", "output_every", "norms"}
    values, lines = {}, {}
    builder = yaml.SafeLoader("")
    for knode, vnode in node.value:
        key = knode.value
        line = _line_of(knode)
        if key not in known | extra:
            raise ConfigError(f"unknown key {key!r}", path, line)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", path, line)
        values[key] = builder.construct_object(vnode, deep=True)
        lines[key] = _line_of(vnode)
    builder.dispose()

    def fail(key, msg):
        line = lines.get(key, 1)
        raise ConfigError(f"{key}: {msg}", path, line)

    kw = {}
    defaults = SimParams()
    for key in known & values.keys():
        val = values[key]
        ref = getattr(defaults, key)
        if isinstance(ref, bool) or isinstance(ref, str):
            if not isinstance(val, type(ref)):
                fail(key, f"expected {type(ref).__name__}")
        elif isinstance(ref, int):
            if isinstance(val, bool) or not isinstance(val, int):
                fail(key, "expected an integer")
        elif isinstance(ref, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                fail(key, "expected a number")
            val = float(val)
        kw[key] = val
    try:
        params = SimParams(**kw)
    except ValueError as exc:
        key = next((k for k in kw if k in str(exc)), next(iter(kw), "epsilon"))
        fail(key, str(exc))
    initial = values.get("initial", {"kind": "rest"})
    if not isinstance(initial, dict) or initial.get("kind", "rest") not in INITIAL_KINDS:
        fail("initial", f"expected a mapping with kind in {INITIAL_KINDS}")
    unknown = set(initial) - {"kind", "amplitude", "mode", "seed", "velocity"}
    if unknown:
        fail("initial", f"unknown entries {sorted(unknown)}")
    every = values.get("output_every", 0)
    if isinstance(every, bool) or not isinstance(every, int) or every < 0:
        fail("output_every", "expected a nonnegative integer")
    norms = []
    for item in values.get("norms", []) or []:
        try:
            norms.append(NormSpec(**item))
        except (TypeError, ValueError) as exc:
            fail("norms", str(exc))
    return RunConfig(params=params, initial=dict(initial), output_every=every, norms=norms,
                     source=path)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(exc.strerror, str(path), None) from None
    return parse_config(text, str(path))


# ----------------------------------------------------------------------
# initial data

def random_initial_data(params: SimParams, seed: int = 0, amplitude: float = 0.05,
                        velocity: float | None = None, modes: int = 3):
    """Fixed-seed band-limited ``(v0, h0)``: ``max|h0| = amplitude`` and
    ``max|v0| = velocity`` (default: the same amplitude)."""
    grid = params.grid
    sampler = FieldSampler(seed, modes=modes, degree=6, decay=2.0)
    d = sampler.draw().on(grid)
    h = d["s1"] - d["s1"].mean()
    h = amplitude * h / max(float(np.abs(h).max()), 1e-300)
    v = d["v"]
    vel = amplitude if velocity is None else velocity
    v = vel * v / max(float(np.abs(v).max()), 1e-300)
    return v, h


def initial_data(params: SimParams, spec: dict):
    grid = params.grid
    kind = spec.get("kind", "rest")
    amp = float(spec.get("amplitude", 0.0))
    if kind == "rest":
        return np.zeros((3,) + grid.vshape), np.zeros(grid.sshape)
    if kind == "wave":
        mode = int(spec.get("mode", 1))
        k = 2 * np.pi * mode / grid.L
        return np.zeros((3,) + grid.vshape), amp * np.cos(k * grid.Y[0])
    if kind == "random":
        return random_initial_data(params, int(spec.get("seed", 0)), amp,
                                   spec.get("velocity"))
    raise ValueError(f"unknown initial kind {kind!r}")


# ----------------------------------------------------------------------
# single run

@dataclass
class RunResult:
    status: int
    message: str
    state: object = None
    records: list = field(default_factory=list)
    div_max: float = 0.0
    sup_norm: float = float("nan")


def _energy_norm(state, params):
    G = build_geometry(state.h, None, state.A, params.grid, params.c0, check=False)
    kin, grav, cap = energy_terms(state.v, state.h, G, params.gravity, params.sigma)
    return float(np.sqrt(2.0 * (kin + grav + cap)))


def _comparison(state, params, spec):
    if spec is None or spec == "energy":
        return _energy_norm(state, params)
    return conormal_norm(state.history, spec, params.grid)


def run(cfg: RunConfig, out: str | os.PathLike | None = None, v0=None, h0=None,
        forcing=None, compare=None, keep_records: bool = True) -> RunResult:
    """Integrate to ``t_end`` writing snapshots and a diagnostics CSV to
    ``out`` (when given).  Hard solver errors end the run with status 2."""
    p = cfg.params
    outdir = Path(out) if out is not None else None
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
    if v0 is None or h0 is None:
        v0, h0 = initial_data(p, cfg.initial)
    records, sup = [], 0.0
    div_max = 0.0
    state = None
    try:
        state = project_initial_data(v0, h0, p, forcing)
        nsteps = int(np.ceil(p.t_end / p.dt - 1e-9))

        def emit(i, st):
            nonlocal sup
            sup = max(sup, _comparison(st, p, compare))
            if keep_records:
                records.append(record(st, p, cfg.norms))
            if outdir is not None and (i == 0 or i == nsteps or
                                       (cfg.output_every and i % cfg.output_every == 0)):
                write_snapshot(outdir / f"snap_{i:06d}.ffns", p.grid, st.t,
                               {"v1": st.v[0], "v2": st.v[1], "v3": st.v[2], "h": st.h, "q": st.q})

        emit(0, state)
        for i in range(1, nsteps + 1):
            dt = min(p.dt, p.t_end - state.t)
            if dt <= 1e-14:
                break
            state = step(state, p, forcing, dt=dt)
            div_max = max(div_max, state.info["div_max"])
            emit(i, state)
    except HARD_ERRORS as exc:
        log.error("run stopped: %s", exc)
        return RunResult(2, f"{type(exc).__name__}: {exc}", state, records, div_max, sup)
    except FFNSError as exc:
        return RunResult(1, f"{type(exc).__name__}: {exc}", state, records, div_max, sup)
    if outdir is not None and records:
        write_records_csv(outdir / "diagnostics.csv", records)
        summary = {"t_end": state.t, "div_max": div_max, "sup_norm": sup,
                   "v_max": float(np.abs(state.v).max()), "h_max": float(np.abs(state.h).max())}
        if len(records) >= 3:
            try:
                summary["energy_residual"] = integrated_residual(records)
            except ValueError:
                pass
        (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
    return RunResult(0, "ok", state, records, div_max, sup)


# ----------------------------------------------------------------------
# sweeps

def thread_cap() -> int:
    """Worker count: ``FFNS_THREADS`` if set, else the CPU count."""
    env = os.environ.get("FFNS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FFNS_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass
class SweepPlan:
    base: RunConfig
    eps: list
    sigma: list
    seed: int = 0
    amplitude: float = 0.05
    out: str | None = None
    compare: object = "energy"

    def __post_init__(self):
        self.eps = sorted((float(e) for e in self.eps), reverse=True)
        self.sigma = sorted((float(s) for s in self.sigma), reverse=True)
        if not self.eps or not self.sigma:
            raise ValueError("a sweep needs at least one epsilon and one sigma")

    def members(self):
        return [(e, s) for e in self.eps for s in self.sigma]

    def as_dict(self) -> dict:
        base = asdict(self.base.params)
        return {"base": base, "eps": self.eps, "sigma": self.sigma, "seed": self.seed,
                "amplitude": self.amplitude, "out": self.out,
                "compare": self.compare if isinstance(self.compare, str) else asdict(self.compare)}


def _sweep_member(args):
    plan, eps, sigma, v0, h0 = args
    p = plan.base.params.with_(epsilon=eps, sigma=sigma)
    cfg = RunConfig(params=p, initial=plan.base.initial, output_every=plan.base.output_every,
                    norms=plan.base.norms)
    out = None if plan.out is None else Path(plan.out) / f"eps{eps:g}_sigma{sigma:g}"
    try:
        res = run(cfg, out, v0=v0, h0=h0, compare=plan.compare, keep_records=out is not None)
    except Exception as exc:  # a failed member must not abort its siblings
        return {"eps": eps, "sigma": sigma, "sup_norm": None, "status": f"error: {exc}"}, None
    status = "ok" if res.status == 0 else res.message
    v = None if res.state is None or res.status != 0 else res.state.v
    return {"eps": eps, "sigma": sigma, "sup_norm": res.sup_norm, "status": status}, v


def sweep(plan: SweepPlan, workers: int | None = None) -> dict:
    """Run every (epsilon, sigma) pair and build the sweep report."""
    members = plan.members()
    workers = thread_cap() if workers is None else workers
    # every member starts from the same compatible state; the stress
    # conditions do not involve epsilon, so any viscous member can build it
    ref = plan.base.params.with_(epsilon=plan.eps[0], sigma=plan.sigma[0])
    v0, h0 = random_initial_data(ref, plan.seed, plan.amplitude)
    start = project_initial_data(v0, h0, ref)
    jobs = [(plan, e, s, start.v, start.h) for e, s in members]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(j) for j in jobs]
    runs = [r for r, _ in results]
    finals = [v for _, v in results]
    grid = plan.base.params.grid
    diffs = []
    for a, b in zip(finals[:-1], finals[1:]):
        diffs.append(None if a is None or b is None else grid.l2(a - b))
    sups = [r["sup_norm"] for r in runs if r["status"] == "ok"]
    ratio = float(max(sups) / min(sups)) if sups and min(sups) > 0 else None
    report = {"plan": plan.as_dict(), "runs": runs, "diffs": diffs, "boundedness_ratio": ratio}
    if plan.out is not None:
        Path(plan.out).mkdir(parents=True, exist_ok=True)
        (Path(plan.out) / "sweep.json").write_text(json.dumps(report, indent=2))
    return report


# ----------------------------------------------------------------------
# rates

@dataclass(frozen=True)
class RateFit:
    slope: float
    stderr: float
    intercept: float
    residual: float


def fit_rate(x, y) -> RateFit:
    """Least-squares slope of ``log y`` against ``log x``.

    Raises
    ------
    DegenerateData
        For fewer than three points or any nonpositive value.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise DegenerateData("need at least three (x, y) pairs")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise DegenerateData("rates need positive finite data")
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    dof = max(x.size - 2, 1)
    s2 = float(res @ res) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return RateFit(slope=float(coef[0]), stderr=float(np.sqrt(cov[0, 0])),
                   intercept=float(coef[1]), residual=float(np.sqrt(res @ res)))


def mms_study(params: SimParams, dts, t_end: float, **kw) -> tuple[list, RateFit]:
    """Run the manufactured solution at each ``dt`` and fit the error slope."""
    from .mms import ManufacturedSolution

    errors = []
    for dt in dts:
        p = params.with_(dt=float(dt))
        m = ManufacturedSolution(p, **kw)
        h0, _ = m.height(0.0)
        A, _ = choose_A(h0, p.grid, p.ext_rate_max)
        m.bind(A)
        ex = m.exact(0.0)
        state = project_initial_data(ex.v, ex.h, p, forcing=m)
        n = int(round(t_end / dt))
        for _ in range(n):
            state = step(state, p, forcing=m)
        errors.append(m.error(state))
    return errors, fit_rate(dts, errors)
