"""Command-line entry point ``qp``.

Every subcommand reads a JSON configuration, runs one experiment and writes
CSV/JSON artifacts into the output directory.  Exit codes: 0 when the run
completes and every check passes, 2 when it completes with failed bound
checks, 1 on errors (including invalid configurations).

Example configuration::

    {
      "schema": "qplab.config/1",
      "model": {"d": 1, "eps": 0.001, "omega": "golden", "theta": 0.3, "energy": 0.5},
      "window": {"N": 50},
      "seed": 0
    }
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any

CONFIG_SCHEMA = "qplab.config/1"

log = logging.getLogger("qplab")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


# ---------------------------------------------------------------------------
# configuration helpers
# ---------------------------------------------------------------------------
def _get(cfg: dict, path: str, default: Any = ..., kind=None):
    node: Any = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is ...:
                raise ConfigError(path, "missing required field")
            return default
        node = node[part]
    if kind is not None and node is not None:
        try:
            if kind is int and isinstance(node, float) and not node.is_integer():
                raise ValueError
            node = kind(node)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected {kind.__name__}, got {node!r}") from None
    return node


def _omega(cfg: dict) -> tuple[float, ...]:
    from .diophantine import GOLDEN, SILVER, default_frequency

    d = _get(cfg, "model.d", 1, int)
    raw = _get(cfg, "model.omega", "default")
    named = {"golden": GOLDEN, "silver": SILVER}
    if isinstance(raw, str):
        if raw == "default":
            return default_frequency(d)
        if raw not in named:
            raise ConfigError("model.omega", f"unknown frequency name {raw!r}")
        if d != 1:
            raise ConfigError("model.omega", f"a single named frequency needs d=1, got d={d}")
        return (named[raw],)
    vals = []
    for i, w in enumerate(raw if isinstance(raw, list) else [raw]):
        if isinstance(w, str):
            if w not in named:
                raise ConfigError(f"model.omega[{i}]", f"unknown frequency name {w!r}")
            vals.append(named[w])
        else:
            vals.append(float(w))
    if len(vals) != d:
        raise ConfigError("model.omega", f"{len(vals)} components for d={d}")
    return tuple(vals)


def _model(cfg: dict, energy_required: bool = False):
    from .core import ModelParams

    eps = _get(cfg, "model.eps", kind=float)
    if not eps >= 0:
        raise ConfigError("model.eps", "must be nonnegative")
    theta = _get(cfg, "model.theta", 0.0, float)
    energy = _get(cfg, "model.energy", ... if energy_required else 0.0, float)
    if not -2.0 <= energy <= 2.0:
        raise ConfigError("model.energy", "must lie in [-2, 2]")
    return ModelParams(eps=eps, omega=_omega(cfg), theta=theta, energy=energy)


def _energy_grid(cfg: dict):
    import numpy as np

    raw = _get(cfg, "ids.energy_grid")
    if isinstance(raw, dict):
        num = _get(raw, "num", kind=int)
        if num < 1:
            raise ConfigError("ids.energy_grid", "grid is empty")
        grid = np.linspace(_get(raw, "start", -2.0, float), _get(raw, "stop", 2.0, float), num)
    else:
        grid = np.asarray(raw, dtype=float)
    if grid.size == 0:
        raise ConfigError("ids.energy_grid", "grid is empty")
    return grid


def _etas(cfg: dict):
    raw = _get(cfg, "ids.etas")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("ids.etas", "must be a nonempty list")
    vals = [float(v) for v in raw]
    if any(v <= 0 for v in vals):
        raise ConfigError("ids.etas", "values must be positive")
    norm = sorted(set(vals))
    if norm != vals:
        log.warning("ids.etas normalized to sorted unique values %s", norm)
    return norm


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError("--config", f"cannot read {path}: {err.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("--config", f"invalid JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("--config", "top level must be an object")
    schema = cfg.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError("schema", f"unsupported schema {schema!r}, expected {CONFIG_SCHEMA!r}")
    return cfg


def _scale_params(cfg: dict):
    from .msa import ScaleParams

    sch = cfg.get("schedule", {})
    eps = _get(cfg, "model.eps", kind=float)
    allowed = {"mode", "c", "tau", "gamma", "kappa", "rho", "N1", "tilde_exp", "case_factor"}
    unknown = set(sch) - allowed - {"s_max"}
    if unknown:
        raise ConfigError("schedule", f"unknown keys {sorted(unknown)}")
    kw = {k: v for k, v in sch.items() if k in allowed}
    return ScaleParams(eps=eps, **kw)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_diophantine(cfg: dict, out: Path, seed: int) -> int:
    from .diophantine import verify_frequency, verify_phase_condition
    from .report import ExperimentReport, write_json

    omega = _omega(cfg)
    tau = _get(cfg, "diophantine.tau", 0.5, float)
    gamma = _get(cfg, "diophantine.gamma", 0.1, float)
    R = _get(cfg, "diophantine.R", 100, int)
    freq = verify_frequency(omega, gamma, tau, R)
    rep = ExperimentReport("diophantine", cfg)
    rep.summary["frequency"] = {"passed": freq.passed, "worst_n": list(freq.worst_n), "margin": freq.margin,
                                "radius": freq.radius, "gamma": freq.gamma, "tau": freq.tau}
    ok = freq.passed
    phase_cfg = cfg.get("diophantine", {}).get("phase")
    if phase_cfg is not None:
        theta = _get(cfg, "model.theta", 0.0, float)
        ph = verify_phase_condition(theta, omega, _get(phase_cfg, "tau1", 0.3, float),
                                    _get(phase_cfg, "R_min", 5.0, float), _get(phase_cfg, "R_max", 1000.0, float))
        rep.summary["phase"] = {"passed": ph.passed, "n_violations": len(ph.violations),
                                "violations": [list(v) for v in ph.violations[:100]],
                                "r_min": ph.r_min, "r_max": ph.r_max, "tau1": ph.tau1}
        ok &= ph.passed
    rep.status = "ok" if ok else "bound-failure"
    write_json(out / "diophantine.json", rep.as_dict())
    return 0 if ok else 2


def cmd_green(cfg: dict, out: Path, seed: int) -> int:
    import numpy as np

    from .core import QPError, assemble_T, cube
    from .green import check_zero_good, fit_decay, gamma0, invert, neumann_certificate, pair_distances
    from .report import ExperimentReport, write_csv, write_json

    model = _model(cfg)
    N = _get(cfg, "window.N", kind=int)
    if N < 1:
        raise ConfigError("window.N", "must be at least 1")
    region = cube(N, d=model.d)
    T = assemble_T(region, model)
    G = invert(T, residual_tol=1e-6)
    zg = check_zero_good(region, model)
    rep = ExperimentReport("green", cfg)
    rep.summary.update({"sites": len(region), "norm": G.op_norm, "residual": G.residual,
                        "zero_good": zg.is_good, "n_resonant": len(zg.witnesses)})
    ok = True
    if zg.is_good:
        try:
            cert = neumann_certificate(T, G=G)
            rep.summary["certificate"] = {"norm_bound": cert.norm_bound, "norm_margin": cert.norm_margin,
                                          "decay_margin": cert.decay_margin, "gamma0": cert.gamma0}
        except QPError as err:
            ok = False
            rep.summary["certificate"] = {"error": str(err)}
    else:
        rep.summary["certificate"] = "not-applicable"
    thr = _get(cfg, "green.threshold_radius", 0.0, float)
    try:
        fit = fit_decay(G, thr)
        rep.summary["decay_fit"] = {"rate": fit.rate, "threshold_radius": fit.threshold_radius,
                                    "worst_pair": [list(p) for p in fit.worst_pair], "n_pairs": fit.n_pairs}
    except QPError as err:
        rep.summary["decay_fit"] = {"error": str(err)}
    # decay profile: largest log|G(x, y)| at each l1 distance
    _, l1 = pair_distances(region)
    absG = np.abs(G.entries)
    g0 = gamma0(model.eps) if model.eps > 0 else math.inf
    rows = []
    for dist in np.unique(l1):
        m = float(absG[l1 == dist].max())
        rows.append((float(dist), math.log(m) if m > 0 else -math.inf, -g0 * dist if dist > 0 else 0.0))
    write_csv(out / "green_profile.csv", ["l1_distance", "max_log_abs_G", "log_bound"], rows)
    coords = region.coords
    pair_rows = ((list(coords[i]), list(coords[j]), float(absG[i, j]),
                  math.exp(-g0 * float(l1[i, j])) if math.isfinite(g0) else float(i == j))
                 for i in range(len(region)) for j in range(len(region)))
    write_csv(out / "green.csv", ["x", "y", "abs_G", "bound"], pair_rows)
    rep.status = "ok" if ok else "bound-failure"
    write_json(out / "green.json", rep.as_dict())
    return 0 if ok else 2


def cmd_msa_run(cfg: dict, out: Path, seed: int, stages: int | None, window: int | None) -> int:
    import numpy as np

    from .core import cube
    from .msa import check_bounds, run_msa, run_to_dict, sample_good_regions
    from .report import write_csv, write_json

    model = _model(cfg, energy_required=True)
    params = _scale_params(cfg)
    S = stages if stages is not None else _get(cfg, "msa.stages", _get(cfg, "schedule.s_max", 1, int), int)
    W = window if window is not None else _get(cfg, "msa.window", kind=int)
    if S < 0:
        raise ConfigError("msa.stages", "must be nonnegative")
    run = run_msa(model, params, cube(W, d=model.d), S)
    n_regions = _get(cfg, "msa.bound_regions", 10, int)
    rng = np.random.default_rng(seed)
    bounds = []
    if n_regions and S >= 1:
        rr = tuple(_get(cfg, "msa.region_radius", [3, 8]))
        for reg in sample_good_regions(run.history[:2], n_regions, rng, (int(rr[0]), int(rr[1]))):
            bounds.append(check_bounds(reg, run.history[:2]))
    data = run_to_dict(run, bounds)
    write_json(out / "msa_run.json", data)
    rows = []
    for st in run.history:
        bs = [b for b in bounds if b.stage == st.s]
        fails = [e for e in run.invariants.entries if e["stage"] == st.s and not e["ok"]]
        rows.append((st.s, st.case_history[-1] if st.case_history else "", len(st.P), len(st.Q),
                     complex(st.theta_s).real, complex(st.theta_s).imag, st.level.log_delta, st.level.N,
                     st.level.gamma_rate, min((b.norm_margin for b in bs), default=math.nan),
                     min((b.decay_margin for b in bs), default=math.nan), len(fails)))
    write_csv(out / "msa_margins.csv", ["stage", "case", "P_size", "Q_size", "theta_re", "theta_im", "log_delta",
                                        "N", "gamma", "min_norm_margin", "min_decay_margin",
                                        "invariant_failures"], rows)
    ok = run.invariants.all_ok and all(b.passed for b in bounds) and (run.band is None or run.band.passed)
    return 0 if ok else 2


def cmd_msa_verify(path: Path, out: Path) -> int:
    from .msa import verify_dump
    from .report import write_json

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError("dump", f"cannot read {path}: {err}") from None
    rep = verify_dump(data)
    write_json(out / "msa_verify.json", {"schema": data.get("schema"), "all_ok": rep.all_ok,
                                         "entries": rep.entries})
    return 0 if rep.all_ok else 2


def cmd_ids_scan(cfg: dict, out: Path, seed: int) -> int:
    from .ids import IdsScan, holder_scan, run_scan, stratified_thetas
    from .report import ExperimentReport, write_csv, write_json

    omega = _omega(cfg)
    eps = _get(cfg, "model.eps", kind=float)
    N = _get(cfg, "window.N", kind=int)
    grid = _energy_grid(cfg)
    etas = _etas(cfg)
    n_theta = _get(cfg, "ids.n_theta", 32, int)
    thetas = _get(cfg, "ids.thetas", None)
    thetas = stratified_thetas(n_theta, seed) if thetas is None else thetas
    scan = IdsScan(N=N, omega=omega, eps=eps, thetas=thetas, energy_grid=grid, etas=etas,
                   mu=_get(cfg, "ids.mu", 0.1, float))
    run_scan(scan)
    rep_h = holder_scan(scan)
    rows = []
    for t, th in enumerate(scan.thetas):
        for i, E in enumerate(scan.energy_grid):
            for j, eta in enumerate(scan.etas):
                c = int(scan.counts[t, i, j])
                dens = c / scan.size
                rows.append((float(th), float(E), float(eta), c, dens, float(rep_h.bounds[j]), dens <= rep_h.bounds[j]))
    write_csv(out / "ids_scan.csv", ["theta", "E", "eta", "count", "density", "bound", "pass"], rows)
    rep = ExperimentReport("ids", cfg)
    rep.summary = {"sites": scan.size, "n_theta": len(scan.thetas), "min_exponent": rep_h.min_exponent,
                   "min_exponent_energy": rep_h.worst_exponent_energy, "worst_cell": rep_h.worst_cell,
                   "all_cells_pass": rep_h.all_passed, "jitter_events": scan.jitter_events}
    rep.status = "ok" if rep_h.all_passed else "bound-failure"
    write_json(out / "ids_summary.json", rep.as_dict())
    return 0 if rep_h.all_passed else 2


def cmd_localize(cfg: dict, out: Path, seed: int) -> int:
    import numpy as np

    from .core import assemble_T, cube
    from .localization import eigensolve, localization_report
    from .report import ExperimentReport, write_csv, write_json

    model = _model(cfg)
    N = _get(cfg, "window.N", kind=int)
    tau1 = _get(cfg, "localize.tau1", 0.3, float)
    rep_l = localization_report(model, N, tau1, threshold=_get(cfg, "localize.threshold", None, float),
                                r_min=_get(cfg, "localize.r_min", 5.0, float),
                                R_min=_get(cfg, "localize.R_min", 5.0, float),
                                R_max=_get(cfg, "localize.R_max", None, float))
    rows = []
    for i, (lam, c, r, b) in enumerate(zip(rep_l.eigenvalues, rep_l.centers, rep_l.rates, rep_l.boundary)):
        rows.append((i, float(lam), [float(x) for x in c], float(r), bool(r >= rep_l.threshold), bool(b)))
    write_csv(out / "localize.csv", ["index", "eigenvalue", "center", "rate", "pass", "boundary"], rows)
    min_frac = _get(cfg, "localize.min_pass_fraction", 0.9, float)
    ok = rep_l.phase_condition == "pass" and rep_l.pass_fraction >= min_frac
    rep = ExperimentReport("localize", cfg)
    hist, edges = np.histogram(rep_l.rates, bins=20)
    rep.summary = {"threshold": rep_l.threshold, "pass_fraction": rep_l.pass_fraction,
                   "n_interior": rep_l.n_interior, "phase_condition": rep_l.phase_condition,
                   "phase_violations": [list(v) for v in rep_l.phase_violations],
                   "boundary_low_rate_share": rep_l.boundary_low_rate_share, "quantiles": rep_l.quantiles,
                   "rate_histogram": {"counts": hist.tolist(), "edges": edges.tolist()}}
    rep.status = "ok" if ok else "bound-failure"
    write_json(out / "localize.json", rep.as_dict())
    if _get(cfg, "localize.profiles", False):
        region = cube(N, d=model.d)
        pairs = eigensolve(assemble_T(region, model.replace(energy=0.0)))
        prof_rows = []
        for j in range(len(pairs)):
            v = np.abs(pairs.eigenvectors[:, j])
            ci = int(np.argmax(v))
            dist = np.abs(region.doubled - region.doubled[ci]).max(axis=1) / 2.0
            for dd, a in zip(dist, v):
                prof_rows.append((j, float(dd), math.log(a) if a > 0 else -math.inf))
        write_csv(out / "localize_profiles.csv", ["index", "distance", "log_abs_v"], prof_rows)
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output directory (default: ./qp_out or output.dir)")
    common.add_argument("--threads", type=int, help="BLAS thread count")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")

    p = argparse.ArgumentParser(prog="qp", description="Quasi-periodic operator experiments", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    dio = sub.add_parser("diophantine", parents=[common], help="verify frequency and phase conditions")
    dio.add_argument("--omega", nargs="+", help="frequency components (numbers or golden/silver)")
    dio.add_argument("--tau", type=float)
    dio.add_argument("--gamma", type=float)
    dio.add_argument("--radius", type=int, help="scan radius R")
    sub.add_parser("green", parents=[common], help="Green's function and stage-0 certificate")
    msa = sub.add_parser("msa", help="multi-scale runs")
    msa_sub = msa.add_subparsers(dest="msa_command", required=True)
    run = msa_sub.add_parser("run", parents=[common], help="run the stage induction")
    run.add_argument("--stages", type=int)
    run.add_argument("--window", type=int)
    ver = msa_sub.add_parser("verify", parents=[common], help="re-check a stored run")
    ver.add_argument("dump", nargs="?", help="msa_run.json produced by 'qp msa run'")
    ids = sub.add_parser("ids", help="integrated density of states")
    ids_sub = ids.add_subparsers(dest="ids_command", required=True)
    ids_sub.add_parser("scan", parents=[common], help="window-count scan")
    sub.add_parser("localize", parents=[common], help="eigenvector decay report")
    return p


def _diophantine_overrides(cfg: dict, args) -> None:
    """Fold ``qp diophantine`` flags into the configuration (flags win)."""
    model = cfg.setdefault("model", {})
    section = cfg.setdefault("diophantine", {})
    if args.omega:
        vals = [w if w in ("golden", "silver") else _float_arg("--omega", w) for w in args.omega]
        model["omega"] = vals
        model["d"] = len(vals)
    for flag, key in (("tau", "tau"), ("gamma", "gamma"), ("radius", "R")):
        val = getattr(args, flag)
        if val is not None:
            section[key] = val


def _float_arg(name: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(name, f"not a number: {text!r}") from None


def _set_threads(n: int | None):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("QP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    from .core import QPError

    try:
        if args.command == "msa" and args.msa_command == "verify":
            dump = args.dump or args.config
            if dump is None:
                raise ConfigError("dump", "give the run file as argument or via --config")
            out = Path(args.out or "qp_out")
            out.mkdir(parents=True, exist_ok=True)
            return cmd_msa_verify(Path(dump), out)
        if args.command == "diophantine":
            cfg = load_config(args.config) if args.config else {"schema": CONFIG_SCHEMA}
            _diophantine_overrides(cfg, args)
        elif args.config is None:
            raise ConfigError("--config", "a configuration file is required")
        else:
            cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else _get(cfg, "seed", 0, int)
        out = Path(args.out or _get(cfg, "output.dir", "qp_out"))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "diophantine":
            return cmd_diophantine(cfg, out, seed)
        if args.command == "green":
            return cmd_green(cfg, out, seed)
        if args.command == "msa":
            return cmd_msa_run(cfg, out, seed, args.stages, args.window)
        if args.command == "ids":
            return cmd_ids_scan(cfg, out, seed)
        if args.command == "localize":
            return cmd_localize(cfg, out, seed)
    except ConfigError as err:
        print(f"qp: config error: {err}", file=sys.stderr)
        return 1
    except QPError as err:
        print(f"qp: error: {err}", file=sys.stderr)
        return 1
    parser.error("unknown command")
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
