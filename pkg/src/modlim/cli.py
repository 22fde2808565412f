"""Command-line harness: ``modlim <experiment> --config FILE [--set k=v ...]``.

The orchestrator expands the configuration into sweep points, runs each point
in a worker (processes when more than one worker is available), and hands
all results to a single writer in plan order.  Workers only compute; they
never touch the output directory.  Every file written is listed with its
SHA-256 digest in ``manifest.json``.

Exit codes: 0 all suites pass, 1 a suite failed, 2 configuration error,
3 numerical fault (solver halt, non-contracting iteration, floating-point
error).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import ConfigErrors, EXPERIMENTS, RunConfig, parse_config
from .fields import ConfigurationError, GridSpec, PhysicalParams, VProfile, grad

__all__ = ["main", "run", "run_plan", "format_value", "EXIT_PASS", "EXIT_FAIL",
           "EXIT_CONFIG", "EXIT_FAULT"]

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2, 3


# --- formatting ---------------------------------------------------------------

def format_value(v) -> str:
    """Shortest round-trip text for numbers, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    return obj


def _csv_text(header: List[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def _dat_text(xlabel: str, ylabel: str, xs, ys) -> str:
    lines = [f"# {xlabel} {ylabel}"]
    lines += [f"{format_value(x)} {format_value(y)}" for x, y in zip(xs, ys)]
    return "\n".join(lines) + "\n"


# --- physical setup shared by the experiments ---------------------------------

def _grid(cfg: dict) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(int(g["dim"]), int(g["n"]), float(g["box"]))


def _params(cfg: dict, point: dict, dim: int) -> PhysicalParams:
    values = {k: v[0] for k, v in cfg["params"].items()}
    values.update(point)
    prof = VProfile.normalized(values["b0"], dim, radius=values["profile_radius"])
    return PhysicalParams(int(values["n_particles"]), float(values["hbar"]), float(values["beta"]),
                          kappa=float(values["kappa"]), eta=float(values["eta"]), v_profile=prof,
                          dim=dim, softening=values["softening"])


def _stride(t_end: float, dt: float, samples: int) -> int:
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigurationError("times.t_end must be a multiple of times.dt")
    if steps % samples:
        raise ConfigurationError(f"{steps} steps cannot be split into {samples} samples")
    return steps // samples


# --- experiments --------------------------------------------------------------
# Each returns a dict with keys
#   row     : mapping of scalar metrics for the sweep table
#   series  : {name: (header, rows)} time series written as CSV
#   plots   : {name: (xlabel, ylabel, xs, ys)} gnuplot two-column data
#   report  : JSON-serialisable details
#   passed  : bool, or None when the point was excluded

def _exp_scattering(cfg, point, seed):
    from .scattering import coupling, solve_scattering, solve_scattering_ode, verify_scattering_bounds

    tol = cfg["tolerances"]
    p = _params(cfg, point, 3)
    eps = coupling(p)
    if eps >= tol["regime"]:
        return dict(row=dict(coupling=eps), passed=None,
                    reason=f"coupling {eps:.3g} outside the regime < {tol['regime']:g}")
    sp = solve_scattering(p, tol["solver"])
    so = solve_scattering_ode(p, tol["solver"])
    agreement = float(np.max(np.abs(sp.w_values - so.w(sp.radii))))
    rep = verify_scattering_bounds(sp)
    rows = list(sp.to_rows())
    return dict(
        row=dict(coupling=eps, sup_w=rep.sup_w, sup_dw=rep.sup_dw, agreement=agreement,
                 iterations=sp.iterations, residual=sp.residual),
        series={"profile": (["r", "w", "f", "ratio_w", "ratio_dw"], rows)},
        plots={"w": ("r", "w", [r[0] for r in rows], [r[1] for r in rows])},
        report=dict(bounds=rep.as_dict(), agreement=agreement),
        passed=bool(agreement <= tol["agreement_factor"] * tol["solver"]),
    )


def _exp_euler(cfg, point, seed):
    from .euler import acoustic_frequency, acoustic_state, measure_frequency, solve_euler_poisson

    tol = cfg["tolerances"]
    g = _grid(cfg)
    p = _params(cfg, point, g.dim)
    mode = (1,) + (0,) * (g.dim - 1)
    omega = acoustic_frequency(p, g, mode)
    t_end, dt = cfg["times"]["t_end"], cfg["times"]["dt"]
    tr = solve_euler_poisson(acoustic_state(g, mode, 1e-4), p, t_end, dt, save_every=10 ** 9,
                             probe_mode=mode, blowup_factor=tol["blowup_factor"])
    measured = measure_frequency(tr.times, tr.probe.real)
    rel = abs(measured - omega) / omega
    drift = tr.mass_drift()
    return dict(
        row=dict(omega=omega, measured=measured, rel_error=rel, mass_drift=drift),
        series={"probe": (["t", "probe_re", "mass"], zip(tr.times, tr.probe.real, tr.mass))},
        plots={"probe": ("t", "probe_re", tr.times, tr.probe.real)},
        report=dict(omega=omega, measured=measured, rel_error=rel, mass_drift=drift,
                    coulomb_analogue=tr.coulomb_analogue),
        passed=bool(rel <= tol["frequency"] and drift <= tol["mass"]),
    )


def _exp_nls(cfg, point, seed):
    from .nls import continuity_residual, nls_energy, smooth_datum, solve_nls, wkb_initialize

    tol = cfg["tolerances"]
    g = _grid(cfg)
    p = _params(cfg, point, g.dim)
    t_end, dt = cfg["times"]["t_end"], cfg["times"]["dt"]
    every = _stride(t_end, dt, cfg["samples"])
    rho, s = smooth_datum(g)
    tr = solve_nls(wkb_initialize(rho, s, p.hbar), p, t_end, dt, save_every=every)
    energy = [nls_energy(wf, p) for wf in tr.states]
    drift = float(np.max(np.abs(tr.mass - tr.mass[0])) / tr.mass[0])
    cont = continuity_residual(tr)
    return dict(
        row=dict(mass_drift=drift, energy_drift=float(np.ptp(energy)), continuity=cont),
        series={"observables": (["t", "mass", "energy"], zip(tr.times, tr.mass, energy))},
        plots={"energy": ("t", "energy", tr.times, energy)},
        report=dict(mass_drift=drift, continuity=cont, coulomb_analogue=tr.coulomb_analogue),
        passed=bool(drift <= tol["mass"]),
    )


def _exp_nbody(cfg, point, seed):
    from .nbody import conservation_identities, product_state, propagate

    tol = cfg["tolerances"]
    g = _grid(cfg)
    p = _params(cfg, point, g.dim)
    t_end, dt = cfg["times"]["t_end"], cfg["times"]["dt"]
    n = p.n_particles
    xs = g.coords()
    box = g.box_length
    orbitals = []
    for i in range(n):
        centre = box * (0.5 + (i - 0.5 * (n - 1)) * 0.25 / max(n - 1, 1))
        velocity = 0.8 * (1 - 2 * (i % 2))
        r2 = sum((c - centre) ** 2 for c in xs)
        orbitals.append(np.exp(-r2 / 2 + 1j * velocity * xs[0] / p.hbar))
    wf = product_state(orbitals, p, g)
    tr = propagate(wf, t_end, dt, save_every=_stride(t_end, dt, cfg["samples"]))
    rep = conservation_identities(tr)
    drift = float(np.max(np.abs(tr.mass - tr.mass[0])))
    header = ["t", "mass", "energy"] + [f"momentum_{i}" for i in range(g.dim)]
    rows = [(t, m, e, *pm) for t, m, e, pm in zip(tr.times, tr.mass, tr.energy, tr.total_momentum)]
    return dict(
        row=dict(continuity=rep.continuity, momentum_residual=rep.momentum,
                 momentum_drift=rep.momentum_drift, mass_drift=drift),
        series={"conservation": (header, rows)},
        plots={"energy": ("t", "energy", tr.times, tr.energy)},
        report=dict(continuity=rep.continuity, momentum_residual=rep.momentum,
                    momentum_drift=rep.momentum_drift, mass_drift=drift, analogue=tr.analogue),
        passed=bool(rep.momentum_drift <= tol["momentum"] and drift <= tol["mass"]),
    )


def _exp_modenergy(cfg, point, seed):
    from .euler import FluidState, solve_euler_poisson
    from .modenergy import gronwall_check, modulated_energy_onebody
    from .nls import smooth_datum, solve_nls, wkb_initialize

    tol = cfg["tolerances"]
    g = _grid(cfg)
    p = _params(cfg, point, g.dim)
    t_end, dt = cfg["times"]["t_end"], cfg["times"]["dt"]
    every = _stride(t_end, dt, cfg["samples"])
    rho, s = smooth_datum(g)
    fluid = solve_euler_poisson(FluidState(rho, grad(s)), p, t_end, dt, save_every=every,
                                blowup_factor=tol["blowup_factor"])
    if fluid.halted:
        raise FloatingPointError(f"fluid run stopped early: {fluid.halted}")
    times = np.array([st.time for st in fluid.states])
    tr = solve_nls(wkb_initialize(rho, s, p.hbar), p, t_end, dt, save_times=times[1:])
    reps = [modulated_energy_onebody(wf, fl, p, time=t) for wf, fl, t in zip(tr.states, fluid.states, times)]
    fit = gronwall_check(times, [r.m_plus for r in reps], p.hbar)
    header = ["t", "m_k", "f_delta", "f_c", "m_total", "m_plus"]
    rows = [(r.t, r.m_k, r.f_delta, r.f_c, r.m_total, r.m_plus) for r in reps]
    return dict(
        row=dict(m0=reps[0].m_total, m_end=reps[-1].m_total, gronwall_constant=fit.constant),
        series={"energy": (header, rows)},
        plots={"m_plus": ("t", "m_plus", times, [r.m_plus for r in reps])},
        report=dict(gronwall=fit),
        passed=bool(fit.holds),
    )


def _exp_rate_sweep(cfg, point, seed):
    from .modenergy import ConvergenceRecord, gronwall_uniform, rate_sweep
    from .nls import smooth_datum

    tol = cfg["tolerances"]
    g = _grid(cfg)
    p = _params(cfg, point, g.dim)
    hbars = [float(h) for h in cfg["params"]["hbar"]]
    rho, s = smooth_datum(g)
    res = rate_sweep(rho, s, p, hbars, cfg["times"]["t_end"], cfg["times"]["dt"],
                     samples=cfg["samples"])
    if res.mass_fit is None:
        raise ConfigurationError("fewer than two resolved values of hbar")
    names = list(ConvergenceRecord.__dataclass_fields__)
    uniform = gronwall_uniform(res.gronwall, tol["uniform_factor"])
    passed = (res.mass_fit.slope >= tol["mass_slope"]
              and res.momentum_fit.slope >= tol["momentum_slope"]
              and all(f.holds for f in res.gronwall) and uniform)
    hs = [r.hbar for r in res.records]
    plots = {"mass_error": ("hbar", "err_mass_l2_sq", hs, [r.err_mass_l2_sq for r in res.records]),
             "momentum_error": ("hbar", "err_momentum_l1", hs, [r.err_momentum_l1 for r in res.records])}
    for i, h in enumerate(sorted(res.energies, reverse=True)):
        t, m = res.energies[h]
        plots[f"m_plus_{i}"] = ("t", f"m_plus_hbar={format_value(h)}", t, m)
    return dict(
        row=dict(mass_slope=res.mass_fit.slope, momentum_slope=res.momentum_fit.slope,
                 gronwall_uniform=uniform, excluded=len(res.excluded)),
        series={"records": (names, [[getattr(r, k) for k in names] for r in res.records])},
        plots=plots,
        report=dict(mass_fit=res.mass_fit, momentum_fit=res.momentum_fit, gronwall=res.gronwall,
                    gronwall_uniform=uniform, excluded=res.excluded),
        passed=bool(passed),
    )


def _exp_verify_lemmas(cfg, point, seed):
    from . import lemmas as lm
    from .modenergy import gaussian_machinery

    name = point["lemma"]
    first = {k: v[0] for k, v in cfg["params"].items()}
    prof = VProfile.normalized(first["b0"], 3, radius=first["profile_radius"])
    trials = cfg["trials"]
    eta = float(first["eta"])
    if name == "mollifier":
        reps = [lm.verify_mollifier_rate(prof, s, beta=0.5, trials=trials, seed=seed) for s in (0.5, 1.0)]
    elif name == "operator":
        p = PhysicalParams(64, float(first["hbar"]), 0.5, v_profile=prof)
        reps = [lm.verify_operator_inequalities(prof, p, trials=trials, seed=seed)]
    elif name == "poincare":
        reps = [lm.verify_poincare(lm.GaussianProfile(), th, trials=trials, seed=seed) for th in (0.2, 0.4)]
    elif name == "cancellation":
        reps = [lm.verify_cancellation_structure(prof)]
    elif name == "reduced":
        reps = [lm.verify_reduced_inequality(eta=eta, trials=trials, seed=seed)]
    elif name == "two-body-lower":
        reps = [lm.verify_two_body_lower(eta=eta, trials=trials, seed=seed)]
    else:
        gm = gaussian_machinery(1024, eta, GridSpec(3, 128, 2.0), trials=trials, seed=seed)
        return dict(row=dict(suites=1, worst_ratio=gm.min_quadratic_form),
                    report=dict(suites=[gm]), passed=bool(gm.passed),
                    lines=[f"{'PASS' if gm.passed else 'FAIL'} gaussian-machinery: "
                           f"integral_error={gm.integral_error:.3g} "
                           f"convolution_error={gm.convolution_error:.3g} "
                           f"min_form={gm.min_quadratic_form:.3g} diagonal_error={gm.diagonal_error:.3g}"])
    passed = all(r.passed for r in reps)
    return dict(row=dict(suites=len(reps), worst_ratio=max(r.worst_ratio for r in reps)),
                report=dict(suites=[r.to_dict() for r in reps]), passed=bool(passed),
                lines=[r.summary_line() for r in reps])


_EXPERIMENTS = {
    "scattering": _exp_scattering,
    "euler": _exp_euler,
    "nls": _exp_nls,
    "nbody": _exp_nbody,
    "modenergy": _exp_modenergy,
    "rate-sweep": _exp_rate_sweep,
    "verify-lemmas": _exp_verify_lemmas,
}

_FAULTS = (FloatingPointError, ArithmeticError, RuntimeError, np.linalg.LinAlgError)


def run_point(cfg: dict, point: dict, seed: int) -> dict:
    """Run one sweep point, turning exceptions into a recorded status."""
    try:
        out = _EXPERIMENTS[cfg["experiment"]](cfg, point, seed)
    except ConfigurationError as exc:
        return dict(status="config-error", reason=str(exc), passed=False, row={})
    except _FAULTS as exc:
        return dict(status="fault", reason=f"{type(exc).__name__}: {exc}", passed=False, row={})
    bad = [k for k, v in out["row"].items()
           if isinstance(v, (float, np.floating)) and not np.isfinite(v)]
    if bad and out["passed"] is not None:
        return dict(status="fault", reason=f"non-finite result: {', '.join(bad)}",
                    passed=False, row=out["row"])
    out["series"] = {k: (list(h), [list(r) for r in rows])
                     for k, (h, rows) in out.get("series", {}).items()}
    out["plots"] = {k: (xl, yl, [float(x) for x in xs], [float(y) for y in ys])
                    for k, (xl, yl, xs, ys) in out.get("plots", {}).items()}
    if out["passed"] is None:
        out["status"] = "excluded"
    else:
        out["status"] = "pass" if out["passed"] else "fail"
    out.setdefault("reason", "")
    return out


def _worker(args):
    return run_point(*args)


def _worker_count(cfg: RunConfig) -> int:
    env = os.environ.get("MODLIM_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigErrors([f"MODLIM_WORKERS must be an integer, got {env!r}"]) from None
        if n < 1:
            raise ConfigErrors(["MODLIM_WORKERS must be positive"])
        return n
    if cfg.workers is not None:
        return cfg.workers
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _point_seeds(seed: int, count: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def run_plan(cfg: RunConfig, workers: Optional[int] = None) -> List[dict]:
    """Evaluate every sweep point; results come back in plan order."""
    plan = cfg.plan
    data = cfg.to_dict()
    jobs = [(data, pt, s) for pt, s in zip(plan, _point_seeds(cfg.seed, len(plan)))]
    workers = _worker_count(cfg) if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_worker, jobs))
    return [_worker(j) for j in jobs]


# --- single writer ---------------------------------------------------------------

def _uniformity(results, key, factor):
    vals = np.array([r["row"][key] for r in results if r["status"] in ("pass", "fail")])
    if vals.size == 0:
        return None
    if np.all(vals <= 1e-13):
        return dict(key=key, spread=1.0, passed=True)
    spread = float(vals.max() / vals.min()) if vals.min() > 0 else float("inf")
    return dict(key=key, spread=spread, passed=bool(spread < factor))


class _Writer:
    def __init__(self, root: Path):
        self.root = root
        self.files: Dict[str, str] = {}

    def write(self, rel: str, text: str) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        path.write_bytes(data)
        self.files[rel] = hashlib.sha256(data).hexdigest()

    def write_json(self, rel: str, obj) -> None:
        self.write(rel, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def manifest(self) -> None:
        entries = [dict(path=k, sha256=v, bytes=(self.root / k).stat().st_size)
                   for k, v in sorted(self.files.items())]
        (self.root / "manifest.json").write_text(json.dumps(dict(files=entries), indent=2) + "\n")


def _clear_previous(root: Path) -> None:
    man = root / "manifest.json"
    if not man.exists():
        return
    try:
        listed = json.loads(man.read_text())["files"]
    except (ValueError, KeyError):
        return
    for entry in listed:
        p = root / entry["path"]
        if p.is_file():
            p.unlink()
    man.unlink()


def write_results(cfg: RunConfig, results: List[dict], out_dir: Path) -> dict:
    """Persist results and return the summary; the only function that writes."""
    out_dir.mkdir(parents=True, exist_ok=True)
    _clear_previous(out_dir)
    w = _Writer(out_dir)
    plan = cfg.plan
    axes = list(plan[0]) if plan else []
    w.write_json("config.json", cfg.to_dict())

    metric_keys = []
    for r in results:
        for k in r["row"]:
            if k not in metric_keys:
                metric_keys.append(k)
    header = ["index"] + axes + ["status"] + metric_keys + ["reason"]
    rows = [[i] + [pt[a] for a in axes] + [r["status"]] + [r["row"].get(k) for k in metric_keys]
            + [r["reason"]] for i, (pt, r) in enumerate(zip(plan, results))]
    w.write(f"{cfg.experiment}.csv", _csv_text(header, rows))

    for i, r in enumerate(results):
        tag = f"point-{i:03d}"
        for name, (hdr, srows) in r.get("series", {}).items():
            w.write(f"series/{tag}-{name}.csv", _csv_text(hdr, srows))
        for name, (xl, yl, xs, ys) in r.get("plots", {}).items():
            w.write(f"plots/{tag}-{name}.dat", _dat_text(xl, yl, xs, ys))
        if "report" in r:
            name = plan[i]["lemma"] if cfg.experiment == "verify-lemmas" else tag
            w.write_json(f"reports/{name}.json", dict(point=plan[i], status=r["status"], **r["report"]))

    checks = []
    tol = cfg.tolerances
    if cfg.experiment == "scattering":
        checks = [c for c in (_uniformity(results, "sup_w", tol["uniform_factor"]),
                              _uniformity(results, "sup_dw", tol["uniform_factor"])) if c]
    statuses = [r["status"] for r in results]
    counted = [s for s in statuses if s != "excluded"]
    failures = [dict(index=i, point=plan[i], status=r["status"], reason=r["reason"])
                for i, r in enumerate(results) if r["status"] not in ("pass", "excluded")]
    passed = bool(counted) and all(s == "pass" for s in counted) and all(c["passed"] for c in checks)
    summary = dict(
        experiment=cfg.experiment, seed=cfg.seed, points=len(plan),
        counts={k: statuses.count(k) for k in sorted(set(statuses))},
        checks=checks, failures=failures, passed=passed,
        lines=[line for r in results for line in r.get("lines", [])],
    )
    w.write_json("summary.json", summary)
    w.manifest()
    return summary


def _exit_code(summary: dict) -> int:
    statuses = summary["counts"]
    if statuses.get("fault"):
        return EXIT_FAULT
    if statuses.get("config-error"):
        return EXIT_CONFIG
    return EXIT_PASS if summary["passed"] else EXIT_FAIL


def run(cfg: RunConfig, out_dir: Optional[Path] = None, workers: Optional[int] = None) -> int:
    """Execute a validated configuration and return the exit status."""
    results = run_plan(cfg, workers)
    summary = write_results(cfg, results, Path(out_dir or cfg.output_dir))
    for line in summary["lines"]:
        print(line)
    for f in summary["failures"]:
        print(f"point {f['index']} {f['status']}: {f['reason']}", file=sys.stderr)
    print(f"{'PASS' if summary['passed'] else 'FAIL'} {cfg.experiment}: "
          f"{summary['points']} points {summary['counts']}")
    return _exit_code(summary)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modlim", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="YAML configuration file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a configuration entry (dotted keys), repeatable")
    ap.add_argument("--seed", type=int, help="random seed (overrides the config)")
    ap.add_argument("--out", type=Path, help="output directory (overrides the config)")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output_dir={json.dumps(str(args.out))}")
    try:
        text = args.config.read_text() if args.config else ""
        cfg = parse_config(text, overrides, experiment=args.experiment)
        workers = _worker_count(cfg)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, workers=workers)


if __name__ == "__main__":
    sys.exit(main())
