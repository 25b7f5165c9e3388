"""Command line drivers: ``verify``, ``strip`` and ``rve``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 stalled
continuation.
"""

import argparse
import copy
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis
from . import config as cfgmod
from .errors import ConfigError, NoDominantMode
from .solver import continuation_run, write_checkpoint, read_checkpoint

log = logging.getLogger("morphofem")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_STALLED = 0, 1, 2, 3


def estimate_wavelength(cfg):
    """Classical thin-film estimate ``2 pi h (E_f / 3 E_s)^(1/3)`` with
    plane-strain moduli along the fibre (4 mu + 8 mu_f for the film, 4 mu
    for the substrate).  Used only to place probes before the real
    wavelength is known."""
    f = cfg["materials"]["film"]
    s = cfg["materials"]["substrate"]
    Ef = 4.0 * f["mu0"] + 8.0 * f.get("mu_fiber", 0.0)
    Es = 4.0 * s["mu0"] + 8.0 * s.get("mu_fiber", 0.0)
    return 2 * math.pi * cfg["geometry"]["h_film"] * (Ef / (3 * Es)) ** (1 / 3)


def _tag(mu):
    return f"mu_fiber_{mu:g}"


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def run_case(cfg, outdir, probe_wavelength=None, stop_after=None, resume=None):
    """One continuation with full outputs in ``outdir``.

    Returns the run summary (also written to ``summary.json``).
    """
    cfgmod.check_writable(outdir)
    cfgmod.save(cfg, os.path.join(outdir, "config.json"))
    t0 = time.perf_counter()
    problem = cfgmod.build_problem(cfg)
    mesh = problem.mesh
    axis = "y"
    lam_probe = probe_wavelength or estimate_wavelength(cfg)
    lo, hi = mesh.bounds
    lam_probe = min(lam_probe, hi[1] - lo[1])
    probes = analysis.ProbeSet.for_wavelength(mesh, lam_probe, axis)
    ccfg = cfgmod.continuation_config(cfg)
    out = cfg["outputs"]
    vtu_every = out["vtu_every_n_steps"]
    ck_every = out["checkpoint_every_g"]
    state = {"steps": 0, "next_ck": None}

    u0, g0, dt = None, 0.0, None
    if resume:
        ck = read_checkpoint(resume)
        u0, g0, dt = ck["u"], ck["g"], ck.get("dt")
    if ck_every:
        state["next_ck"] = (math.floor(g0 / ck_every) + 1) * ck_every

    def on_step(rec, u):
        state["steps"] += 1
        if vtu_every and state["steps"] % vtu_every == 0:
            analysis.write_fields_vtu(problem, u, rec.g, os.path.join(outdir, f"fields_{state['steps']:05d}.vtu"))
        if ck_every and rec.g >= state["next_ck"] - 1e-12:
            write_checkpoint(os.path.join(outdir, "checkpoint.json"), problem, u, rec.g, rec.dt)
            while state["next_ck"] <= rec.g + 1e-12:
                state["next_ck"] += ck_every

    def stop(result, g):
        return stop_after is not None and result.bifurcation_g is not None and g >= result.bifurcation_g + stop_after

    result = continuation_run(
        problem, ccfg, probes=probes, u0=u0, g0=g0, dt=dt, keep_snapshots=False, on_step=on_step, stop=stop
    )
    acc = result.accepted
    analysis.write_timeseries_csv(result.records, os.path.join(outdir, "timeseries.csv"))
    g = np.array([r.g for r in acc])
    w = np.array([r.probes for r in acc]) if acc else np.empty((0, 3))
    E = np.array([sum(r.energies.values()) for r in acc])
    H = mesh.meta["H"]
    events = analysis.detect_bifurcations(g, w, E, H) if len(acc) >= 3 else []
    g_final, u_final = result.final_state
    analysis.write_fields_vtu(problem, u_final, g_final, os.path.join(outdir, "fields_final.vtu"))
    if result.bifurcation_state is not None:
        analysis.write_fields_vtu(
            problem, result.bifurcation_state, result.bifurcation_g, os.path.join(outdir, "fields_bifurcation.vtu")
        )

    wavelength, source = None, None
    for label, u in (("final", u_final), ("bifurcation", result.bifurcation_state)):
        if u is None:
            continue
        try:
            wavelength, source = float(analysis.extract_wavelength(mesh, u, axis)), label
            break
        except NoDominantMode:
            continue
    if not events:
        wavelength, source = None, None
    kinks = {}
    if events:
        # slope change of each film energy part across the first event
        dg = 2.0 * ccfg.dt0
        for part in analysis.ENERGY_PARTS:
            try:
                Ep = np.array([r.energies[f"film_{part}"] for r in acc])
                kinks[f"film_{part}"] = analysis.kink_magnitude(g, Ep, events[0].index, dg)
            except ValueError:
                kinks[f"film_{part}"] = None
    summary = {
        "mu_fiber": cfg["materials"]["film"]["mu_fiber"],
        "status": result.status,
        "g_cr1": events[0].g if events else None,
        "g_cr1_confirmed_by_energy": events[0].confirmed if events else None,
        "g_cr2": events[1].g if len(events) > 1 else None,
        "film_energy_kinks": kinks,
        "events": [vars(e) for e in events],
        "wavelength": wavelength,
        "wavelength_source": source,
        "g_final": g_final,
        "accepted_steps": len(acc),
        "failed_attempts": len(result.records) - len(acc),
        "runtime_s": time.perf_counter() - t0,
        "probe_points": probes.points.tolist(),
        "thresholds": {
            "probe_divergence": analysis.PROBE_RTOL * H,
            "energy_kink_ratio": analysis.KINK_RATIO,
            "spectral_peak_ratio": 3.0,
        },
        "n_free_dofs": problem.dofmap.n_free,
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=_jsonable)
    return summary


def _strip_case(args):
    cfg, outdir = args
    _setup_logging(cfg.get("_verbose", False))
    cfg = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return run_case(cfg, outdir, stop_after=cfg["continuation"]["stop_after_buckling"])


def _rve_case(args):
    cfg, outdir, resume = args
    _setup_logging(cfg.get("_verbose", False))
    cfg = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return run_case(cfg, outdir, probe_wavelength=cfg["study"]["wavelength"], resume=resume)


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_strip(cfg, outdir, verbose=False):
    """Long-strip wavelength identification over the fibre sweep."""
    cfgmod.check_writable(outdir)
    cfgmod.save(cfg, os.path.join(outdir, "config.json"))
    jobs = []
    for mu in cfg["study"]["mu_fiber"]:
        c = cfgmod.with_mu_fiber(cfg, mu)
        c["_verbose"] = verbose
        jobs.append((c, os.path.join(outdir, _tag(mu))))
    summaries = _map(_strip_case, jobs, cfg["study"]["workers"])
    table = [
        {k: s[k] for k in ("mu_fiber", "status", "g_cr1", "wavelength", "runtime_s", "accepted_steps")}
        for s in summaries
    ]
    with open(os.path.join(outdir, "strip_summary.json"), "w") as fh:
        json.dump({"cases": table}, fh, indent=2, default=_jsonable)
    with open(os.path.join(outdir, "strip_summary.csv"), "w") as fh:
        fh.write("mu_fiber,status,g_cr1,wavelength,runtime_s\n")
        for s in table:
            fh.write(
                ",".join(
                    "" if s[k] is None else str(s[k]) for k in ("mu_fiber", "status", "g_cr1", "wavelength", "runtime_s")
                )
                + "\n"
            )
    return table


def _wavelength_for(cfg, mu):
    study = cfg["study"]
    if study["wavelength"] is not None:
        return study["wavelength"]
    path = study["strip_summary"]
    if not path:
        raise ConfigError("study.wavelength: required for rve runs (or give study.strip_summary)")
    try:
        with open(path) as fh:
            cases = json.load(fh)["cases"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"study.strip_summary: cannot read {path!r}: {exc}") from exc
    for c in cases:
        if math.isclose(c["mu_fiber"], mu) and c.get("wavelength"):
            return c["wavelength"]
    raise ConfigError(f"study.strip_summary: no wavelength for mu_fiber={mu:g} in {path!r}")


def run_rve(cfg, outdir, verbose=False, resume=None):
    """Periodic 2 lambda x 2 lambda x H cell run to g_max per fibre case."""
    cfgmod.check_writable(outdir)
    cfgmod.save(cfg, os.path.join(outdir, "config.json"))
    jobs = []
    for mu in cfg["study"]["mu_fiber"]:
        c = cfgmod.rve_geometry(cfgmod.with_mu_fiber(cfg, mu), _wavelength_for(cfg, mu))
        c["_verbose"] = verbose
        jobs.append((c, os.path.join(outdir, _tag(mu)), resume))
    summaries = _map(_rve_case, jobs, cfg["study"]["workers"])
    with open(os.path.join(outdir, "rve_summary.json"), "w") as fh:
        json.dump(
            {"cases": [{k: s[k] for k in ("mu_fiber", "status", "g_cr1", "g_cr2", "wavelength", "runtime_s")} for s in summaries]},
            fh,
            indent=2,
            default=_jsonable,
        )
    return summaries


def run_verify(outdir):
    from .verification import run_checks, write_report

    cfgmod.check_writable(outdir)
    report = run_checks()
    doc = write_report(report, os.path.join(outdir, "verify_report.json"))
    for c in report:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:<28} {c['detail']}")
    return doc


# ---------------------------------------------------------------------------


def _setup_logging(verbose):
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _parse_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--mu-fiber: expected comma separated numbers, got {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise ConfigError("--mu-fiber: values must be non-negative")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="morphofem", description="Growth-induced wrinkling of fibre-reinforced bilayers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every continuation step")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("verify", "run the verification suite"),
        ("strip", "long-strip wavelength identification"),
        ("rve", "periodic cell post-buckling study"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        s.add_argument("--out", help="output directory (overrides outputs.directory)")
        if name != "verify":
            s.add_argument("--mu-fiber", help="comma separated fibre moduli overriding study.mu_fiber")
            s.add_argument("--mesh-scale", type=float, help="factor applied to the element counts")
        if name == "rve":
            s.add_argument("--resume", help="checkpoint file to restart from (single fibre case)")
    return p


def resolve_cli_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve({})
    over = copy.deepcopy(cfg)
    if args.out:
        over["outputs"]["directory"] = args.out
    if getattr(args, "mu_fiber", None):
        over["study"]["mu_fiber"] = _parse_list(args.mu_fiber)
    if getattr(args, "mesh_scale", None) is not None:
        over["study"]["mesh_scale"] = args.mesh_scale
    return cfgmod.resolve(over)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = resolve_cli_config(args)
        outdir = cfg["outputs"]["directory"]
        cfgmod.check_writable(outdir)
        if args.command == "verify":
            cfgmod.save(cfg, os.path.join(outdir, "config.json"))
            doc = run_verify(outdir)
            return EXIT_OK if doc["passed"] else EXIT_CHECK
        if args.command == "strip":
            rows = run_strip(cfg, outdir, args.verbose)
        else:
            if args.resume and len(cfg["study"]["mu_fiber"]) != 1:
                raise ConfigError("--resume: needs exactly one fibre case")
            rows = run_rve(cfg, outdir, args.verbose, args.resume)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for r in rows:
        print(
            f"mu_fiber={r['mu_fiber']:g} status={r['status']} g_cr1={r['g_cr1']} "
            f"wavelength={r['wavelength']} runtime={r['runtime_s']:.0f}s"
        )
    return EXIT_STALLED if any(r["status"] == "stalled" for r in rows) else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
