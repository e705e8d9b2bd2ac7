"""Reproducible experiment orchestration.

``dispersivelab run --config lab.cfg`` executes the requested experiment ids
in dependency order (certificates before anything that asserts decay), writes
one JSON report per experiment plus a suite summary, and exits 0 only if all
verdicts pass.  Timestamps live in a sidecar so reports are byte-identical
across reruns with the same config and seed.

Subcommands: run | certify | eikonal | parametrix | experiment <id> |
check-lemmas | dump.
"""

import argparse
import json
import os
import sys
import time
import traceback

import numpy as np

from . import estimates
from .config import LabConfig, load_config
from .errors import ConfigInvalid, DispersiveLabError
from .eikonal import phase_decay_report, region_probe_points, solve_eikonal, eikonal_residual
from .geometry import ConicRegion, nontrapping_certificate
from .grids import GridFunction, GridSpec, gaussian_state
from .propagators import discretize, fio_apply, free_propagate, reference_propagate
from .snapshots import dump_csv, save_phase_table
from .symbols import SymbolField, directional_cutoff, littlewood_paley, quantize_apply

EXIT_PASS, EXIT_VERDICT, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3

# experiments that assert decay conditional on the non-trapping hypothesis
_NEEDS_CERTIFICATE = {"dispersive", "local_energy_decay", "smoothing",
                      "strichartz", "propagation"}

_ORDER = ["certify", "eikonal", "symbols", "propagator", "parametrix",
          "dispersive", "local_energy_decay", "smoothing", "strichartz",
          "propagation", "littlewood_paley", "check_lemmas"]


def _energy_interval(cfg):
    lo, hi = cfg.window().support
    return (lo, hi)


def _outgoing_region(cfg, level=1):
    I1, I2, I3, I4 = cfg.intervals()
    s1, s2, s3, s4 = cfg.sigmas()
    R = cfg.region_radius()
    table = {1: (R / 2.0, I1, s1), 3: (R, I3, s3), 4: (2.0 * R, I4, s4)}
    r, I, s = table[level]
    return ConicRegion(+1, r, I, s)


def _default_cutoff(cfg):
    I1, I2, I3, I4 = cfg.intervals()
    s3, s4 = cfg.sigmas()[2:]
    width = I4[1] - I4[0]
    inner = (I4[0] + 0.25 * width, I4[1] - 0.25 * width)
    return directional_cutoff(+1, 2.0 * cfg.region_radius(), I4, inner, s4,
                              min(s4 + 0.1, 0.9))


def _separable_cutoff(cfg):
    """Radial-profile times energy-window cutoff (fast exact path on 2-d grids)."""
    from .windows import bump_window, rising_window
    I1, I2, I3, I4 = cfg.intervals()
    rho = 2.0 * cfg.region_radius()
    width = I4[1] - I4[0]
    plat = (I4[0] + 0.25 * width, I4[1] - 0.25 * width)

    def fx(x):
        r = np.sqrt(np.sum(x * x, axis=-1))
        return rising_window(r, rho / 4.0, rho / 2.0).astype(complex)

    def gxi(xi):
        e = np.sum(xi * xi, axis=-1)
        return bump_window(e, I4[0], plat[0], plat[1], I4[1]).astype(complex)

    return SymbolField.separable(fx, gxi, label="radial_cutoff")


def run_certify(cfg, ctx):
    metric = ctx["metric"]
    exp = cfg.section("experiment")
    cert = nontrapping_certificate(
        metric, _energy_interval(cfg),
        seed_ball=float(exp.get("seed_ball", 3.0)),
        escape_radius=float(exp.get("escape_radius", 20.0)),
        horizon=float(exp.get("cert_horizon", 40.0)),
        n_samples=int(exp.get("n_samples", 60)),
        seed=cfg.seed(), tol=float(exp.get("cert_tol", 1e-7)))
    ctx["certificate"] = cert
    return {"experiment_id": "certify", "verdict": cert["verdict"],
            "config": cfg.echo(), "result": cert}


def run_eikonal(cfg, ctx):
    metric = ctx["metric"]
    region = _outgoing_region(cfg, level=1)
    if metric.dim == 2:
        region = ConicRegion(+1, max(region.radius, 2.0), region.energy_interval,
                             region.sigma)
    pt = solve_eikonal(metric, region,
                       x_grid=np.linspace(region.radius,
                                          3.0 * cfg.grid().box_half_width
                                          if metric.dim == 1 else 6 * region.radius,
                                          49),
                       tol=float(cfg.section("experiment").get("eikonal_tol", 1e-8)))
    ctx["phase_table"] = pt
    px, pxi = region_probe_points(region, metric.dim)
    residual = eikonal_residual(pt, metric, px, pxi)
    decay = phase_decay_report(pt, metric, refine_check=False)
    verdict = "pass" if (residual <= 10.0 * max(pt.construction_tol, 1e-14)
                         and decay["verdict"] == "pass") else "fail"
    out_dir = ctx.get("out_dir")
    if out_dir:
        save_phase_table(os.path.join(out_dir, "phase_table.bin"), pt, metric)
    return {"experiment_id": "eikonal", "verdict": verdict, "config": cfg.echo(),
            "result": {"residual": residual, "node_residual": pt.node_residual(metric),
                       "decay": decay}}


def run_symbols(cfg, ctx):
    """Cutoff support/plateau probes and the dyadic partition identity."""
    chi = _default_cutoff(cfg)
    leak = chi.support_leak(ctx["metric"].dim)
    part = littlewood_paley(10)
    rng = np.random.default_rng(cfg.seed())
    lam = rng.uniform(0.0, 2.0 ** 9, 10000)
    defect = float(np.abs(part.sum_all(lam) - 1.0).max())
    verdict = "pass" if (leak <= 1e-12 and defect <= 1e-12) else "fail"
    return {"experiment_id": "symbols", "verdict": verdict, "config": cfg.echo(),
            "result": {"cutoff_support_leak": leak, "partition_defect": defect}}


def run_propagator(cfg, ctx):
    """Unitarity and flat-collapse sanity of the reference propagator."""
    metric = ctx["metric"]
    grid_cfg = cfg.grid()
    n = min(grid_cfg.n_points, 512)
    grid = GridSpec(grid_cfg.dim, grid_cfg.box_half_width, n)
    h = cfg.h_list()[0]
    P = discretize(metric, grid)
    center = [0.25 * grid.box_half_width] * grid.dim
    momentum = [np.sqrt(_energy_interval(cfg)[0])] + [0.0] * (grid.dim - 1)
    u = gaussian_state(grid, center, momentum, grid.box_half_width / 12.0, h)
    dt = 0.4 / (h * P.lambda_max())
    v = reference_propagate(P, u, 1.0, h, dt, boundary_check=False)
    drift = abs(v.norm_l2() - 1.0)
    verdict = "pass" if drift <= 1e-9 else "fail"
    return {"experiment_id": "propagator", "verdict": verdict,
            "config": cfg.echo(), "result": {"norm_drift": drift, "dt": dt}}


def run_parametrix(cfg, ctx):
    metric = ctx["metric"]
    if metric.dim != 1:
        return {"experiment_id": "parametrix", "verdict": "skip",
                "config": cfg.echo(),
                "result": {"note": "parametrix experiment runs in d = 1"}}
    grid = cfg.grid()
    I1, I2, I3, I4 = cfg.intervals()
    s1, s2, s3, s4 = cfg.sigmas()
    R = cfg.region_radius()
    chain = (ConicRegion(+1, R / 2.0, I1, s1), ConicRegion(+1, R, I3, s3),
             ConicRegion(+1, 2.0 * R, I4, s4))
    chi = _default_cutoff(cfg)
    pt = ctx.get("phase_table")
    if pt is None or pt.region.radius > chain[0].radius:
        pt = solve_eikonal(metric, chain[0],
                           x_grid=np.linspace(chain[0].radius,
                                              1.5 * grid.box_half_width, 60),
                           tol=1e-8)
    exp = cfg.section("experiment")
    horizon = float(exp.get("parametrix_horizon", 8.0))
    x0 = 5.0 * R
    rep = estimates.parametrix_remainder_experiment(dict(
        metric=metric, grid=grid, h_list=cfg.h_list(),
        t_grid=np.linspace(0.0, horizon, 9), region_chain=chain, cutoff=chi,
        phase_table=pt, packets=((x0, np.sqrt(np.mean(I4))),),
        seed=cfg.seed(), experiment_id="parametrix"))
    return _report_entry(rep, cfg)


def _report_entry(rep, cfg):
    entry = rep.to_dict()
    entry["config"] = cfg.echo()
    return entry


def run_dispersive(cfg, ctx):
    metric = ctx["metric"]
    grid = cfg.grid()
    window = cfg.window()
    exp = cfg.section("experiment")
    horizon = float(exp.get("horizon", 20.0))
    n_t = int(exp.get("n_t", 10))
    full_window = bool(exp.get("full_window", metric.is_flat))
    ecfg = dict(metric=metric, grid=grid, window=window, h_list=cfg.h_list(),
                t_grid=-np.linspace(max(horizon / n_t, 0.5), horizon, n_t),
                seed=cfg.seed(), experiment_id="dispersive",
                full_window=full_window,
                fit_window=(float(exp.get("fit_lo", horizon / 6.0)), horizon),
                exponent_slack=float(exp.get("exponent_slack", 0.15)),
                certificate=ctx.get("certificate"))
    if not full_window:
        if grid.dim == 2:
            # angular microlocalization is a d = 1 dense-path measurement;
            # 2-d runs use the separable radial cutoff (FFT-exact)
            ecfg["cutoff"] = _separable_cutoff(cfg)
            ecfg["n_probes"] = int(exp.get("n_probes", 4))
        else:
            ecfg["cutoff"] = _default_cutoff(cfg)
    rep = estimates.dispersive_experiment(ecfg)
    return _report_entry(rep, cfg)


def run_local_energy_decay(cfg, ctx):
    exp = cfg.section("experiment")
    horizon = float(exp.get("horizon", 20.0))
    rep = estimates.local_energy_decay_experiment(dict(
        metric=ctx["metric"], grid=cfg.grid(), window=cfg.window(),
        h=cfg.h_list()[0], N=int(exp.get("N", 3)),
        t_grid=np.linspace(0.5, horizon, int(exp.get("n_t", 12))),
        fit_window=(1.0, horizon), seed=cfg.seed(),
        experiment_id="local_energy_decay"))
    return _report_entry(rep, cfg)


def run_smoothing(cfg, ctx):
    exp = cfg.section("experiment")
    rep = estimates.smoothing_experiment(dict(
        metric=ctx["metric"], grid=cfg.grid(), window=cfg.window(),
        h_list=cfg.h_list(), s=float(exp.get("s", 1.0)),
        horizon=float(exp.get("horizon", 20.0)),
        n_batch=int(exp.get("n_batch", 12)), seed=cfg.seed(),
        experiment_id="smoothing"))
    return _report_entry(rep, cfg)


def run_strichartz(cfg, ctx):
    exp = cfg.section("experiment")
    grid = cfg.grid()
    pair = estimates.AdmissiblePair(float(exp.get("pair_p", 4)),
                                    float(exp.get("pair_q", 4)), grid.dim)
    rep = estimates.strichartz_experiment(dict(
        metric=ctx["metric"], grid=grid, window=cfg.window(), pair=pair,
        h_list=cfg.h_list(), horizon=float(exp.get("horizon", 4.0)),
        n_batch=int(exp.get("n_batch", 4)), seed=cfg.seed(),
        experiment_id="strichartz"))
    return _report_entry(rep, cfg)


def run_propagation(cfg, ctx):
    exp = cfg.section("experiment")
    I1, I2, I3, I4 = cfg.intervals()
    s4 = cfg.sigmas()[3]
    sigma_tilde = float(exp.get("sigma_tilde", 0.6))
    if not sigma_tilde > -s4:
        raise ConfigInvalid("propagation needs sigma_tilde > -sigma4")
    width = I4[1] - I4[0]
    inner = (I4[0] + 0.25 * width, I4[1] - 0.25 * width)
    chi_minus = directional_cutoff(-1, cfg.region_radius() / 2.0, I1, I4,
                                   sigma_tilde, min(sigma_tilde + 0.2, 0.95))
    horizon = float(exp.get("horizon", 20.0))
    rep = estimates.propagation_experiment(dict(
        metric=ctx["metric"], grid=cfg.grid(), window=cfg.window(),
        h_list=cfg.h_list(), M=int(exp.get("M", 4)),
        t_grid=-np.linspace(0.5, horizon, int(exp.get("n_t", 9))),
        cutoff_plus=_default_cutoff(cfg), cutoff_minus_tilde=chi_minus,
        compact_radius=cfg.region_radius(), fit_window=(1.0, horizon),
        seed=cfg.seed(), experiment_id="propagation"))
    return _report_entry(rep, cfg)


def run_littlewood_paley(cfg, ctx):
    exp = cfg.section("experiment")
    rep = estimates.littlewood_paley_reduction_check(dict(
        metric=ctx["metric"], grid=cfg.grid(), window=cfg.window(),
        h_list=cfg.h_list(), n_batch=int(exp.get("n_batch", 8)),
        horizon=float(exp.get("st_horizon", 1.5)), seed=cfg.seed(),
        experiment_id="littlewood_paley"))
    return _report_entry(rep, cfg)


def run_check_lemmas(cfg, ctx):
    exp = cfg.section("experiment")
    n = int(exp.get("n_samples", 100000))
    out = {}
    verdicts = []
    for d in (1, 2):
        rep = estimates.check_geometric_lemma(n, seed=cfg.seed(), dim=d)
        out[f"d{d}"] = rep
        verdicts.append(rep["verdict"])
    verdict = "pass" if all(v == "pass" for v in verdicts) else "fail"
    return {"experiment_id": "check_lemmas", "verdict": verdict,
            "config": cfg.echo(), "result": out}


_RUNNERS = {
    "certify": run_certify,
    "eikonal": run_eikonal,
    "symbols": run_symbols,
    "propagator": run_propagator,
    "parametrix": run_parametrix,
    "dispersive": run_dispersive,
    "local_energy_decay": run_local_energy_decay,
    "smoothing": run_smoothing,
    "strichartz": run_strichartz,
    "propagation": run_propagation,
    "littlewood_paley": run_littlewood_paley,
    "check_lemmas": run_check_lemmas,
}


def run_suite(cfg, out_dir=None, exhaustive=False):
    """Execute the configured experiments in dependency order.

    Returns (exit_code, summary dict).  Module errors become failed report
    entries, never crashes; dispersive-type verdicts are conditional on the
    non-trapping certificate.
    """
    out_dir = cfg.output_dir(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    requested = cfg.experiment_ids()
    ids = [i for i in _ORDER if i in requested]
    unknown = [i for i in requested if i not in _RUNNERS]
    if unknown:
        raise ConfigInvalid(f"unknown experiment ids: {unknown}")
    if any(i in _NEEDS_CERTIFICATE for i in ids) and "certify" not in ids:
        ids = ["certify"] + ids
    ctx = {"metric": cfg.metric(), "out_dir": out_dir}
    if exhaustive:
        ctx["exhaustive"] = True
    summary = {"experiments": [], "config": cfg.echo(), "seed": cfg.seed()}
    timing = {}
    worst = EXIT_PASS
    for exp_id in ids:
        t0 = time.time()
        try:
            entry = _RUNNERS[exp_id](cfg, ctx)
        except DispersiveLabError as exc:
            entry = {"experiment_id": exp_id, "verdict": "fail",
                     "config": cfg.echo(),
                     "error": {"type": type(exc).__name__, "message": str(exc)}}
        except Exception as exc:  # internal error, still captured
            entry = {"experiment_id": exp_id, "verdict": "error",
                     "config": cfg.echo(),
                     "error": {"type": type(exc).__name__, "message": str(exc),
                               "trace": traceback.format_exc()}}
            worst = max(worst, EXIT_INTERNAL)
        timing[exp_id] = time.time() - t0
        entry.pop("wall_clock", None)
        path = os.path.join(out_dir, f"report_{exp_id}.json")
        with open(path, "w") as fh:
            json.dump(entry, fh, sort_keys=True, indent=1, default=_np_default)
        verdict = entry.get("verdict")
        summary["experiments"].append({"id": exp_id, "verdict": verdict,
                                       "report": os.path.basename(path)})
        if verdict in ("fail", "not_asserted") and worst < EXIT_VERDICT:
            worst = EXIT_VERDICT
        if verdict == "error":
            worst = max(worst, EXIT_INTERNAL)
    summary["verdict"] = "pass" if worst == EXIT_PASS else "fail"
    with open(os.path.join(out_dir, "suite_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1, default=_np_default)
    with open(os.path.join(out_dir, "timing_sidecar.json"), "w") as fh:
        json.dump({"wall_clock": timing, "written_at": time.time()}, fh, indent=1)
    return worst, summary


def _np_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.tree.setdefault("experiment", {})["seed"] = int(args.seed)
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dispersivelab",
        description="Desk-scale dispersive-estimate laboratory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker cap for parallel cells (advisory)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--exhaustive", action="store_true")

    add_common(sub.add_parser("run", help="run the configured experiment suite"))
    add_common(sub.add_parser("certify", help="non-trapping certificate only"))
    add_common(sub.add_parser("eikonal", help="phase-table construction only"))
    add_common(sub.add_parser("parametrix", help="parametrix remainder only"))
    p_exp = sub.add_parser("experiment", help="run one experiment id")
    p_exp.add_argument("id")
    add_common(p_exp)
    p_lem = sub.add_parser("check-lemmas", help="exact lemma and cutoff checks")
    p_lem.add_argument("--samples", type=int, default=100000)
    p_lem.add_argument("--seed", type=int, default=0)
    p_lem.add_argument("--out", default=None)
    p_dump = sub.add_parser("dump", help="convert a binary container to CSV")
    p_dump.add_argument("snapshot")
    p_dump.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "dump":
            out = dump_csv(args.snapshot, args.out)
            print(out)
            return EXIT_PASS
        if args.command == "check-lemmas":
            ok = True
            for d in (1, 2):
                rep = estimates.check_geometric_lemma(args.samples,
                                                      seed=args.seed, dim=d)
                print(f"d={d}: {rep['verdict']}")
                ok = ok and rep["verdict"] == "pass"
            return EXIT_PASS if ok else EXIT_VERDICT

        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "run":
            code, summary = run_suite(cfg, out_dir=args.out,
                                      exhaustive=args.exhaustive)
            for entry in summary["experiments"]:
                print(f"{entry['id']}: {entry['verdict']}")
            return code
        single = {"certify": "certify", "eikonal": "eikonal",
                  "parametrix": "parametrix"}.get(args.command)
        if args.command == "experiment":
            single = args.id
        cfg.tree.setdefault("experiment", {})["ids"] = [single]
        code, summary = run_suite(cfg, out_dir=args.out,
                                  exhaustive=args.exhaustive)
        for entry in summary["experiments"]:
            print(f"{entry['id']}: {entry['verdict']}")
        return code
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
