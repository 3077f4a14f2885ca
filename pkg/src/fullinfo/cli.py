"""Command line front end: simulate, estimate, loglik, diagnose."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (DataFormatError, read_chain, read_macro, read_micro, sha256_file, write_chain,
                     write_json, write_macro, write_micro, write_rows)
from .expfam import FitError, InfeasibleMomentsError
from .likelihood import full_info_loglik, macro_loglik
from .mcmc import MhSettings, adaptive_rwmh, diagnostics, grid_search_init
from .microdens import IntegrationError
from .models import design_from_config, load_config, provider_from_config, simulate_joint
from .momentbased import moment_loglik, moment_series, vcv_from_series

METHODS = ("full-info", "macro-only", "moments-1", "moments-2", "moments-3")
# numerical failures of the micro density at a proposed theta count as zero likelihood
SOFT_ERRORS = (InfeasibleMomentsError, FitError, IntegrationError, FloatingPointError)


def _resolve_method(method: str, order: int | None) -> str:
    if method == "moments":
        if order not in (1, 2, 3):
            raise SystemExit("--method moments needs --order 1, 2 or 3")
        return f"moments-{order}"
    if method not in METHODS:
        raise SystemExit(f"unknown method {method!r}; choose from {', '.join(METHODS)} or 'moments'")
    return method


def _config_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    from .models import CONFIG_DIR
    if (CONFIG_DIR / p).exists():
        return CONFIG_DIR / p
    raise SystemExit(f"config not found: {path}")


def _load(args):
    cfg_path = _config_path(args.config)
    cfg = load_config(cfg_path)
    return cfg_path, cfg, provider_from_config(cfg)


def _data_paths(args):
    d = Path(args.data) if args.data else None
    macro = Path(args.macro) if args.macro else (d / "macro.csv" if d else None)
    micro = Path(args.micro) if args.micro else (d / "micro.csv" if d else None)
    if macro is None or not macro.exists():
        raise SystemExit(f"macro data not found: {macro}")
    if micro is not None and not micro.exists():
        micro = None
    return macro, micro


def _manifest_base(command, cfg_path, seed, extra=None) -> dict:
    m = {"command": command, "version": __version__, "config": str(cfg_path),
         "config_sha256": sha256_file(cfg_path), "seed": seed}
    m.update(extra or {})
    return m


def make_estimator(method: str, provider, x, micro, J: int, workers: int = 1):
    """Log-likelihood estimator ``f(theta, seed)`` for the chosen method."""
    if method == "macro-only":
        return lambda th, seed: macro_loglik(th, x, provider)
    if method == "full-info":
        def f(th, seed):
            try:
                return full_info_loglik(th, x, micro, provider, J, seed, workers).total
            except SOFT_ERRORS:
                return -np.inf
        return f
    order = int(method.split("-")[1])
    series = moment_series(micro, provider)
    vcv = vcv_from_series(series)

    def g(th, seed):
        try:
            return moment_loglik(th, x, series, vcv, provider, order)
        except SOFT_ERRORS:
            return -np.inf
    return g


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg_path, cfg, provider = _load(args)
    design = design_from_config(cfg)
    seed = design["seed"] if args.seed is None else args.seed
    N = design["N"] if args.cross_section_size is None else args.cross_section_size
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    z, x, micro = simulate_joint(provider, None, design["T"], design["obs_times"], N, seed)
    write_macro(out / "macro.csv", x)
    write_micro(out / "micro.csv", micro, provider.micro_columns)
    write_rows(out / "states.csv", ["t", *[f"z{k + 1}" for k in range(z.shape[1])]],
               ([t + 1, *row] for t, row in enumerate(z)))
    files = {n: sha256_file(out / n) for n in ("macro.csv", "micro.csv", "states.csv")}
    write_json(out / "manifest.json", _manifest_base("simulate", cfg_path, seed, {
        "T": design["T"], "obs_times": design["obs_times"], "N": N, "provider": provider.name,
        "theta": {k: provider.calibration[k] for k in sorted(provider.calibration)}, "outputs": files}))
    print(f"wrote {out / 'macro.csv'} ({design['T']} periods) and {out / 'micro.csv'} "
          f"({len(micro)} cross sections of {N})")
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def cmd_estimate(args) -> int:
    if args.fix_smoother_seed:
        raise SystemExit("--fix-smoother-seed is only allowed with 'loglik': estimation needs fresh "
                         "smoothing draws for every proposal")
    cfg_path, cfg, provider = _load(args)
    method = _resolve_method(args.method, args.order)
    mc = cfg.get("mcmc", {})
    n_draws = args.draws if args.draws is not None else int(mc.get("draws", 10000))
    burn_in = args.burn_in if args.burn_in is not None else int(mc.get("burn_in", 1000))
    J = args.smoothing_draws if args.smoothing_draws is not None else int(mc.get("smoothing_draws", 10))
    seed = args.seed if args.seed is not None else int(cfg.get("design", {}).get("seed", 0)) + 1
    macro_path, micro_path = _data_paths(args)
    x = read_macro(macro_path)
    micro = read_micro(micro_path, provider.micro_columns) if micro_path else None
    if method != "macro-only" and micro is None:
        raise SystemExit(f"method {method} needs micro data")
    est = make_estimator(method, provider, x, micro, J, args.workers)

    bounds = provider.box()
    theta0 = provider.theta0
    init = mc.get("init", "calibration")
    if init == "grid":
        theta0, _ = grid_search_init(est, bounds, int(mc.get("grid_points", 9)), seed=[seed, 7])
    settings = MhSettings(n_draws, burn_in, theta0, bounds,
                          target_accept=float(mc.get("target_accept", 0.234)),
                          mixture_weight=float(mc.get("mixture_weight", 0.95)),
                          diffuse_scale=mc.get("diffuse_scale"),
                          decay=float(mc.get("decay", 0.6)))
    chain = adaptive_rwmh(est, settings, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_chain(out / "chain.csv", chain, provider.free)
    diag = diagnostics(chain) if n_draws - burn_in >= 100 else None
    inputs = {"macro": {"path": str(macro_path), "sha256": sha256_file(macro_path)}}
    if micro_path:
        inputs["micro"] = {"path": str(micro_path), "sha256": sha256_file(micro_path)}
    write_json(out / "manifest.json", _manifest_base("estimate", cfg_path, seed, {
        "method": method, "J": J if method == "full-info" else None, "draws": n_draws, "burn_in": burn_in,
        "free": list(provider.free), "theta0": theta0.tolist(), "init": init, "workers": args.workers,
        "settings": {"target_accept": settings.target_accept, "mixture_weight": settings.mixture_weight,
                     "diffuse_scale": settings.diffuse_scale, "decay": settings.decay,
                     "bounds": bounds.tolist()},
        "inputs": inputs, "outputs": {"chain.csv": sha256_file(out / "chain.csv")},
        "likelihood_evaluations": chain.n_evaluations}))
    kept = chain.kept()
    print(f"{method}: acceptance {chain.acceptance_rate:.3f}, posterior mean "
          + ", ".join(f"{n}={m:.4f}" for n, m in zip(provider.free, kept.mean(axis=0))))
    if diag:
        print("ESS " + ", ".join(f"{e:.0f}" for e in diag["ess"]))
    return 0


# ---------------------------------------------------------------------------
# loglik
# ---------------------------------------------------------------------------

def _parse_grid(spec: list[str] | None, cfg, provider) -> tuple[list[str], np.ndarray]:
    grid = {}
    if spec:
        for item in spec:
            try:
                name, rng = item.split("=")
                lo, hi, n = rng.split(":")
                grid[name] = (float(lo), float(hi), int(n))
            except ValueError:
                raise SystemExit(f"bad --grid entry {item!r}; use name=lo:hi:n") from None
    else:
        grid = {k: tuple(v) for k, v in cfg.get("loglik", {}).get("grid", {}).items()}
    if not grid:
        raise SystemExit("no theta grid given (use --grid name=lo:hi:n or a [loglik] grid in the config)")
    names = list(grid)
    unknown = [n for n in names if n not in provider.calibration]
    if unknown:
        raise SystemExit(f"unknown parameters in grid: {unknown}")
    axes = [np.linspace(lo, hi, int(n)) for lo, hi, n in grid.values()]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(names))
    return names, pts


def cmd_loglik(args) -> int:
    cfg_path, cfg, provider = _load(args)
    names, pts = _parse_grid(args.grid, cfg, provider)
    provider = provider.with_free(names, {n: (-np.inf, np.inf) for n in names})
    methods = [_resolve_method(m, args.order) for m in (args.method or "full-info,macro-only").split(",")]
    J = args.smoothing_draws if args.smoothing_draws is not None else int(cfg.get("mcmc", {}).get("smoothing_draws", 10))
    seed = args.seed if args.seed is not None else 0
    macro_path, micro_path = _data_paths(args)
    x = read_macro(macro_path)
    micro = read_micro(micro_path, provider.micro_columns) if micro_path else None
    if micro is None and any(m != "macro-only" for m in methods):
        raise SystemExit("micro data needed for the requested methods")
    if args.fix_smoother_seed:
        seeds = [seed] * len(pts)
    else:
        seeds = [int(s) >> 1 for s in np.random.SeedSequence(seed).generate_state(len(pts), dtype=np.uint64)]

    rows = []
    for method in methods:
        est = make_estimator(method, provider, x, micro, J) if method.startswith("moments") else None
        vals = []
        for th, sd in zip(pts, seeds):
            macro = macro_loglik(th, x, provider)
            if method == "macro-only":
                micro_ll, jj, ss = 0.0, 0, ""
            elif method == "full-info":
                try:
                    micro_ll = full_info_loglik(th, x, micro, provider, J, sd, args.workers).micro_loglik_estimate
                except SOFT_ERRORS:
                    micro_ll = -np.inf
                jj, ss = J, sd
            else:
                micro_ll, jj, ss = est(th, None) - macro, 0, ""
            vals.append((th, macro, micro_ll, jj, ss))
        total = np.array([v[1] + v[2] for v in vals])
        top = np.max(total[np.isfinite(total)]) if np.any(np.isfinite(total)) else 0.0
        for (th, macro, micro_ll, jj, ss), tot in zip(vals, total):
            rows.append([*th, method, macro, micro_ll, tot, tot - top, jj, str(ss)])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = [*names, "method", "macro_ll", "micro_ll", "loglik", "loglik_normalized", "J", "seed"]
    write_rows(out / "loglik.csv", header, rows)
    inputs = {"macro": {"path": str(macro_path), "sha256": sha256_file(macro_path)}}
    if micro_path:
        inputs["micro"] = {"path": str(micro_path), "sha256": sha256_file(micro_path)}
    write_json(out / "manifest.json", _manifest_base("loglik", cfg_path, seed, {
        "methods": methods, "J": J, "fix_smoother_seed": bool(args.fix_smoother_seed), "grid": names,
        "n_points": int(len(pts)), "inputs": inputs, "outputs": {"loglik.csv": sha256_file(out / "loglik.csv")}}))
    print(f"wrote {out / 'loglik.csv'} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    try:
        ch = read_chain(args.chain)
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    burn = args.burn_in or 0
    draws = ch["draws"][burn:]
    if draws.shape[0] < 100:
        print("error: diagnostics need at least 100 draws after burn-in", file=sys.stderr)
        return 2
    half = draws.shape[0] // 2
    rep = diagnostics(draws)
    rep["acceptance_rate"] = float(np.mean(ch["accepted"][burn:]))
    rep["names"] = ch["names"]
    rep["mean"] = draws.mean(axis=0).tolist()
    rep["sd"] = draws.std(axis=0, ddof=1).tolist()
    rep["burn_in"] = burn
    rep["first_half_mean"] = draws[:half].mean(axis=0).tolist()
    rep["second_half_mean"] = draws[half:].mean(axis=0).tolist()
    out = Path(args.out) if args.out else Path(args.chain).with_name("diagnostics.json")
    write_json(out, rep)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fullinfo", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", required=True, help="provider TOML (path or name of a shipped config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", help="directory holding macro.csv and micro.csv")
            sp.add_argument("--macro", help="macro CSV (overrides --data)")
            sp.add_argument("--micro", help="micro CSV (overrides --data)")
            sp.add_argument("--method", help=f"one of {', '.join(METHODS)}, or 'moments' with --order")
            sp.add_argument("--order", type=int, choices=(1, 2, 3))
            sp.add_argument("--smoothing-draws", type=int, help="J, smoothing draws per likelihood")
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--fix-smoother-seed", action="store_true",
                            help="reuse one smoothing seed across grid points (loglik only)")

    s = sub.add_parser("simulate", help="simulate macro and micro data")
    common(s, data=False)
    s.add_argument("--cross-section-size", type=int, help="override N from the config")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run the pseudo-marginal MCMC")
    common(e)
    e.add_argument("--draws", type=int)
    e.add_argument("--burn-in", type=int)
    e.set_defaults(func=cmd_estimate)

    ll = sub.add_parser("loglik", help="evaluate log-likelihood curves on a theta grid")
    common(ll)
    ll.add_argument("--grid", action="append", help="name=lo:hi:n (repeatable)")
    ll.set_defaults(func=cmd_loglik)

    d = sub.add_parser("diagnose", help="convergence diagnostics for a chain CSV")
    d.add_argument("chain")
    d.add_argument("--burn-in", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "estimate" and args.method is None:
        args.method = "full-info"
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
