"""Command-line front end: ``ddft evolve|equilibrium|particles|validate``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .diagnostics import check_envelope, read_field_csv, write_field_csv
from .dynamics import evolve, normalize_initial
from .equilibrium import RateNorms, picard_solve, poincare_constant, rate_estimate, stationary_flux_check
from .errors import ConfigError, MaxIterations, NumericalError
from .grid import integrate
from .kernels import sup_norm
from .operators import assemble_D, eigen_bounds
from .particles import histogram, simulate

log = logging.getLogger("ddft")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=False) + "\n")


def assumption_warnings(cfg, rho0) -> tuple[list, dict]:
    """Gate on the standing assumptions; returns warnings and recorded flags."""
    g = cfg.grid
    s = cfg.specs
    out = []
    z1 = sup_norm(s.Z1, g.L, g.d)
    if z1 * integrate(g, np.abs(rho0)) >= 1:
        out.append("mobility tensor may lose positive definiteness: sup|Z1| * mass >= 1")
    mu_min, mu_max = eigen_bounds(assemble_D(g, s.Z1, rho0))
    z2 = sup_norm(s.Z2, g.L, g.d)
    if mu_max * z2 >= 1:
        out.append(f"contraction condition violated: mu_max * sup|Z2| = {mu_max * z2:.6g} >= 1")
    v2 = sup_norm(s.V2, g.L, g.d)
    small = v2 <= 0.25
    if not small:
        out.append(f"interaction outside the uniqueness regime: sup|V2| = {v2:.6g} > 1/4")
    flags = {
        "sup_Z1": z1,
        "sup_Z2": z2,
        "sup_V2": v2,
        "small_interaction": small,
        "mu_min_initial": mu_min,
        "mu_max_initial": mu_max,
        "contraction_margin_initial": 1 - mu_max * z2,
    }
    return out, flags


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        cfg = cfgmod.with_seed(cfg, args.seed)
    return cfg


def cmd_evolve(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    g = cfg.grid
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            rho0 = normalize_initial(g, cfgmod.initial_density(cfg, Path(args.config).parent))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), "initial") from None
    notes = [str(w.message) for w in caught]
    gate, flags = assumption_warnings(cfg, rho0)
    for w in gate:
        log.warning(w)
    meta = {
        "config": cfgmod.to_sections(cfg),
        "config_hash": cfgmod.config_hash(cfg),
        "seed": cfg.seed,
        "warnings": notes + gate,
        "assumptions": flags,
    }
    st = cfg.stepping
    eq = None
    if cfg.equilibrium.reference:
        res = picard_solve(g, cfg.specs.V1, cfg.specs.V2, damping=cfg.equilibrium.damping, tol=cfg.equilibrium.tol, max_iter=cfg.equilibrium.max_iter)
        eq = res.rho0
        meta["equilibrium"] = {"iterations": res.iterations, "el_residual": res.el_residual}
    norms = RateNorms.from_specs(g, cfg.specs) if st.rate else None
    try:
        traj = evolve(g, rho0, st.control, cfg.specs, st.t_end, st.record_every, eq, norms, st.snapshot_every, st.spectral_every)
    except NumericalError as exc:
        meta["status"] = "failed"
        meta["error"] = f"{type(exc).__name__}: {exc}"
        write_json(out / "run.json", meta)
        raise
    traj.write_csv(out / "diagnostics.csv")
    traj.write_snapshots(out / "snapshots")
    meta["spectral_reports"] = [{"t": t, **rep} for t, rep in traj.spectral]
    if norms is not None and len(traj) >= 2:
        rate = rate_estimate(traj, norms)
        meta["rate_report"] = rate.to_dict()
        if eq is not None:
            env = check_envelope(traj, rate)
            meta["envelope"] = {"ok": env.ok, "violations": env.violations, "notice": env.notice}
    meta["status"] = "ok"
    write_json(out / "run.json", meta)
    print(f"evolve: {len(traj)} rows to t={traj.rows[-1]['t']:.6g}, output in {out}")
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    g = cfg.grid
    e = cfg.equilibrium
    meta = {"config": cfgmod.to_sections(cfg), "config_hash": cfgmod.config_hash(cfg)}
    try:
        res = picard_solve(g, cfg.specs.V1, cfg.specs.V2, damping=e.damping, tol=e.tol, max_iter=e.max_iter)
    except MaxIterations as exc:
        meta.update(status="failed", error=str(exc), residual_history=exc.history)
        write_json(out / "equilibrium.json", meta)
        raise
    nu1, c_pw = poincare_constant(g)
    meta.update(res.to_dict())
    meta.update(
        status="ok",
        flux_sup_norm=stationary_flux_check(g, res.rho0, cfg.specs),
        nu1=nu1,
        c_pw=c_pw,
        payne_weinberger_bound=g.diameter / math.pi,
    )
    write_json(out / "equilibrium.json", meta)
    write_field_csv(out / "rho0.csv", g, res.rho0)
    print(f"equilibrium: {res.iterations} iterations, residual {res.residual_history[-1]:.3e}, output in {out}")
    return EXIT_OK


def cmd_particles(args) -> int:
    cfg = _load(args)
    p = cfg.particles
    compare = args.compare or p.compare
    g = cfg.grid
    ref = None
    if compare is not None:
        if not Path(compare).is_file():
            raise ConfigError(f"reference file {compare!r} not found", "particles.compare")
        try:
            ref = read_field_csv(compare, g)
        except ValueError as exc:
            raise ConfigError(str(exc), "particles.compare") from None
    out = _out_dir(args, cfg)
    if cfg.specs.has_hi:
        log.warning("particle oracle ignores the hydrodynamic tensors")
    try:
        snaps = simulate(
            p.N, p.dt, p.steps, cfg.specs.V1, cfg.specs.V2, cfg.seed, p.thin, g.L, g.d,
            pair_method=p.pair_method, bins=p.bins, burn_in=p.burn_in,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "particles") from None
    hist = histogram(snaps, g)
    write_field_csv(out / "histogram.csv", g, hist)
    meta = {"config": cfgmod.to_sections(cfg), "config_hash": cfgmod.config_hash(cfg), "seed": cfg.seed, "snapshots": len(snaps)}
    res = picard_solve(g, cfg.specs.V1, cfg.specs.V2, tol=cfg.equilibrium.tol, max_iter=cfg.equilibrium.max_iter)
    meta["l1_vs_equilibrium"] = integrate(g, np.abs(hist - res.rho0))
    if ref is not None:
        meta["compare_file"] = str(compare)
        meta["l1_vs_reference"] = integrate(g, np.abs(hist - ref))
    write_json(out / "particles.json", meta)
    print(f"particles: L1 distance to equilibrium {meta['l1_vs_equilibrium']:.4f}, output in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .acceptance import CRITERIA, run_criteria

    if args.list:
        for c in CRITERIA:
            print(f"{c.number:2d}  {c.name}: {c.summary}")
        return EXIT_OK
    only = None
    if args.only:
        only = {int(x) for x in args.only.split(",")}
    results = run_criteria(only=only, inject_failure=args.inject_failure)
    for r in results:
        print(r.line())
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if passed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddft", description="Dynamic density functional theory with hydrodynamic interactions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("evolve", cmd_evolve, "integrate the density/flux system"),
        ("equilibrium", cmd_equilibrium, "solve for the stationary density"),
        ("particles", cmd_particles, "run the Langevin particle oracle"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        if name == "particles":
            p.add_argument("--compare", help="reference density CSV for an L1 comparison")
        p.set_defaults(func=fn)
    p = sub.add_parser("validate", help="run the built-in acceptance suite")
    p.add_argument("--list", action="store_true", help="list criteria without running them")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--inject-failure", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return ap


def _apply_threads():
    n = os.environ.get("DDFT_THREADS", "1")
    try:
        n = max(1, int(n))
    except ValueError:
        n = 1
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    with _apply_threads():
        try:
            return args.func(args)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (NumericalError, NotImplementedError) as exc:
            print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
