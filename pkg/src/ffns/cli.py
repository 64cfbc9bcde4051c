"""Command line entry points."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, FFNSError


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


def _load(path):
    from .harness import load_config

    try:
        return load_config(path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log solver progress to stderr.")
def main(verbose):
    """Free-surface Navier-Stokes solver in flattened coordinates."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("run")
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out", required=True, type=click.Path(file_okay=False))
def run_cmd(config, out):
    """Integrate one configuration to t_end."""
    from .harness import run

    cfg = _load(config)
    res = run(cfg, out)
    if res.status != 0:
        click.echo(f"error: {res.message}", err=True)
        sys.exit(res.status)
    st = res.state
    click.echo(json.dumps({"t": st.t, "v_max": float(np.abs(st.v).max()),
                           "h_max": float(np.abs(st.h).max()), "div_max": res.div_max}))


@main.command()
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False))
@click.option("--eps", "eps", required=True, help="Comma-separated viscosities.")
@click.option("--sigma", "sigma", required=True, help="Comma-separated surface tensions.")
@click.option("--seed", default=0, show_default=True)
@click.option("--amplitude", default=0.05, show_default=True)
@click.option("--out", "out", type=click.Path(file_okay=False))
@click.option("--workers", type=int, default=None, help="Defaults to FFNS_THREADS or the CPU count.")
def sweep(config, eps, sigma, seed, amplitude, out, workers):
    """Run an epsilon/sigma sweep and print the JSON report."""
    from .harness import SweepPlan, sweep as run_sweep

    cfg = _load(config)
    plan = SweepPlan(cfg, _floats(eps), _floats(sigma), seed=seed, amplitude=amplitude, out=out)
    report = run_sweep(plan, workers)
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.argument("snapshots", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", default="volume-conormal", show_default=True,
              type=click.Choice(["volume-conormal", "volume-sup", "surface", "surface-sup"]))
@click.option("--m", "m", default=0, show_default=True)
@click.option("--k", "k", default=0, show_default=True)
@click.option("--s", "s", default=0.0, show_default=True)
@click.option("--field", "field", default="v", show_default=True,
              type=click.Choice(["v", "h", "q"]))
def norms(snapshots, kind, m, k, s, field):
    """Evaluate a conormal norm on stored snapshots (oldest first)."""
    from .diagnostics import NormSpec, conormal_norm
    from .fields import read_snapshot

    entries, grid, times = [], None, []
    for path in snapshots:
        grid, t, f = read_snapshot(path)
        times.append(t)
        if field == "v":
            entries.append(np.stack([f["v1"], f["v2"], f["v3"]]))
        else:
            entries.append(f[field])
    dt = times[-1] - times[-2] if len(times) > 1 else None
    try:
        val = conormal_norm(entries, NormSpec(kind, m, k, s), grid, dt=dt)
    except (FFNSError, ValueError) as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(json.dumps({"kind": kind, "m": m, "k": k, "s": s, "field": field, "value": val}))


@main.command("check-identities")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False))
def check_identities(run_dir, config):
    """Energy, divergence and boundary residuals from a run directory."""
    from .diagnostics import (boundary_sn_max, dissipation_terms, energy_terms,
                              integrated_residual)
    from .fields import read_snapshot
    from .geometry import build_geometry, choose_A
    from .operators import div_phi

    p = _load(config).params
    paths = sorted(Path(run_dir).glob("snap_*.ffns"))
    if not paths:
        raise click.ClickException(f"{run_dir}: no snapshots")
    rows, A = [], None
    t_s, E_s, D_s = [], [], []
    for path in paths:
        grid, t, f = read_snapshot(path)
        if A is None:
            A, _ = choose_A(f["h"], grid, p.ext_rate_max)
        v = np.stack([f["v1"], f["v2"], f["v3"]])
        G = build_geometry(f["h"], None, A, grid, p.c0, check=False)
        E = sum(energy_terms(v, f["h"], G, p.gravity, p.sigma))
        D = sum(dissipation_terms(v, G, p.epsilon, p.kappa))
        t_s.append(t)
        E_s.append(E)
        D_s.append(D)
        rows.append({"t": t, "energy": E, "div_max": float(np.abs(div_phi(v, G)).max()),
                     "bottom_v3": float(np.abs(v[2, 0]).max()),
                     "sn_max": boundary_sn_max(v, G, p.kappa)})
    out = {"snapshots": rows}
    try:
        out["energy_residual"] = integrated_residual((E_s, D_s), t_s)
    except (FFNSError, ValueError) as exc:
        out["energy_residual"] = None
        out["note"] = str(exc)
    click.echo(json.dumps(out, indent=2))


@main.command("ineq-lab")
@click.option("--samples", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--only", default=None, help="Comma-separated inequality ids.")
@click.option("--out", "out", type=click.Path(dir_okay=False), help="Write the JSON report here.")
def ineq_lab(samples, seed, only, out):
    """Fit inequality constants on two grids and count violations."""
    from .inequalities import run_lab

    keys = None if only is None else [k.strip() for k in only.split(",")]
    try:
        results = run_lab(keys, samples=samples, seed=seed)
    except FFNSError as exc:
        raise click.ClickException(str(exc)) from None
    report = [r.as_dict() for r in results]
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text)
    click.echo(text)
    if not all(r.passed for r in results):
        sys.exit(1)


@main.command()
@click.option("--config", "config", type=click.Path(dir_okay=False),
              help="Base parameters; defaults to epsilon=1e-3, sigma=0.1.")
@click.option("--dts", default="0.01,0.005,0.0025", show_default=True)
@click.option("--t-end", "t_end", default=0.1, show_default=True)
def mms(config, dts, t_end):
    """Manufactured-solution convergence in dt."""
    from .harness import mms_study
    from .stepper import SimParams

    if config:
        p = _load(config).params
    else:
        p = SimParams(epsilon=1e-3, sigma=0.1)
    p = p.with_(taylor="off", cfl=max(p.cfl, 1e3))
    steps = _floats(dts)
    try:
        errors, fit = mms_study(p, steps, t_end)
    except FFNSError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(json.dumps({"dt": steps, "errors": errors, "slope": fit.slope,
                           "stderr": fit.stderr}, indent=2))


if __name__ == "__main__":
    main()
