"""Command-line harness: run flows, summarize runs, query reference data.

Exit codes: 0 success, 2 configuration problems, 3 numerical failures
inside a computation, 4 a flow that ended in a blow-up signal (the partial
diagnostics are still written in that case).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_BLOWUP = 4

# Columns exported as two-column (t, value) plot files after a run.
PLOT_COLUMNS = ("sup_rm", "sup_r", "soliton_res", "kappa_min", "volume",
                "oscillation", "diameter")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fanoflow",
        description="normalized Ricci flow laboratory for toric surfaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a configured flow")
    p_run.add_argument("config", help="path to a key = value config file")
    p_run.add_argument("--outdir", default=None,
                       help="output directory (default: outdir key in the "
                            "config, else <config stem>.out)")
    p_run.add_argument("--quiet", action="store_true",
                       help="suppress per-snapshot progress lines")

    p_rep = sub.add_parser("report", help="summarize a finished run directory")
    p_rep.add_argument("rundir")

    sub.add_parser("presets", help="list the built-in surfaces")

    p_eh = sub.add_parser("eh-reference",
                          help="closed-form checks of the Ricci-flat bubble "
                               "reference")
    p_eh.add_argument("--bolt-radius", type=float, default=1.0)
    p_eh.add_argument("--json", action="store_true")

    p_lat = sub.add_parser("lattice-search",
                           help="search the intersection lattice for a "
                                "square -2 class")
    p_lat.add_argument("preset")
    p_lat.add_argument("bound", type=int)
    return parser


# ---------------------------------------------------------------------------
# run


def _write_plot_files(outdir, rows) -> None:
    for col in PLOT_COLUMNS:
        path = os.path.join(outdir, f"plot_{col}.dat")
        with open(path, "w") as fh:
            fh.write(f"# t  {col}\n")
            for r in rows:
                fh.write(f"{r.t!r} {float(getattr(r, col))!r}\n")


def command_run(args) -> int:
    from .config import parse_config
    from .errors import (BlowupSuspectedError, ConfigurationError,
                         FanoflowError)
    from . import diagnostics, flow, soliton

    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = args.outdir or cfg.outdir
    if not outdir:
        stem = os.path.splitext(os.path.basename(args.config))[0]
        outdir = stem + ".out"
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.txt"), "w") as fh:
        fh.write(cfg.serialize())

    def progress(fs):
        if not args.quiet:
            print(f"t = {fs.t:8.3f}  dt = {fs.dt:.3e}  "
                  f"sup|Rm| = {fs.sup_rm:.4f}", flush=True)

    exit_code = EXIT_OK
    try:
        trace = flow.run(cfg, outdir=outdir, progress=progress)
    except BlowupSuspectedError as exc:
        trace = getattr(exc, "trace", None)
        print(f"blow-up signal: {exc}", file=sys.stderr)
        if trace is not None and trace.rows:
            _write_plot_files(outdir, trace.rows)
            blowup = dict(trace.blowup or {})
            state = trace.final_sample.state if trace.final_sample else None
            if state is not None:
                ev = soliton.rescale_at_peak(trace.final_sample.metric, state.t)
                blowup["rescaled_sup_rm"] = float(
                    ev.rescaled.masked_sup(ev.rescaled.abs_rm))
                blowup["curvature_energy"] = ev.energy
            with open(os.path.join(outdir, "blowup.json"), "w") as fh:
                json.dump(blowup, fh, indent=2, sort_keys=True)
        return EXIT_BLOWUP
    except FanoflowError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    rows = trace.rows
    _write_plot_files(outdir, rows)
    cert = soliton.certify_endpoint(
        trace.problem.dual,
        trace.final_sample.state.v,
        t_final=trace.t_final,
        initial_residual=rows[0].soliton_res,
    )
    with open(os.path.join(outdir, "certificate.json"), "w") as fh:
        fh.write(cert.to_json() + "\n")
    monitor = diagnostics.perelman_monitor(rows)
    with open(os.path.join(outdir, "monitor.json"), "w") as fh:
        json.dump(monitor, fh, indent=2, sort_keys=True)
    if not args.quiet:
        print(f"run complete: t = {trace.t_final:g}, verdict {cert.verdict}, "
              f"outputs in {outdir}")
    return exit_code


# ---------------------------------------------------------------------------
# report


def _drift(series) -> float:
    base = series[0]
    return max(abs(x - base) for x in series) / abs(base)


def command_report(args) -> int:
    from . import diagnostics

    csv_file = diagnostics.csv_path(args.rundir)
    if not os.path.isdir(args.rundir) or not os.path.exists(csv_file):
        print(f"no run found in {args.rundir!r}", file=sys.stderr)
        return EXIT_CONFIG
    rows = diagnostics.read_csv(csv_file)
    if not rows:
        print(f"no run found in {args.rundir!r} (empty diagnostics)",
              file=sys.stderr)
        return EXIT_CONFIG

    first, last = rows[0], rows[-1]
    n_areas = len(first.areas)
    print(f"run over t in [{first.t:g}, {last.t:g}] "
          f"({len(rows)} snapshots)")

    blowup_file = os.path.join(args.rundir, "blowup.json")
    if os.path.exists(blowup_file):
        with open(blowup_file) as fh:
            info = json.load(fh)
        print(f"INTERRUPTED by blow-up signal at t = {info.get('t')}: "
              f"peak |Rm| = {info.get('peak_value')} "
              f"at node {info.get('peak_node')}")

    print("conserved quantities (max relative drift):")
    print(f"  volume        {_drift([r.volume for r in rows]):.3e}")
    for i in range(n_areas):
        print(f"  divisor {i}     "
              f"{_drift([r.areas[i] for r in rows]):.3e}")
    fnorm = [math.hypot(r.futaki_1, r.futaki_2) for r in rows]
    print(f"  futaki norm   first {fnorm[0]:.6f}  last {fnorm[-1]:.6f}")
    mean_err = max(abs(r.mean_r - 2.0) for r in rows)
    print(f"  max |mean R - 2| over snapshots: {mean_err:.3e}")

    mon = diagnostics.perelman_monitor(rows)
    print("uniform bounds observed:")
    print(f"  sup |R|       {mon['sup_scalar']:.4f}")
    print(f"  diameter      {mon['sup_diameter']:.4f}")
    print(f"  sup |h|       {mon['sup_h']:.4f}")
    print(f"  sup |grad h|  {mon['sup_grad_h']:.4f}")
    print(f"  kappa floor   {mon['kappa_floor']:.4f} "
          f"(ratio to start {mon['kappa_ratio']:.3f})")
    print(f"  sup |Rm|      {max(r.sup_rm for r in rows):.4f} "
          f"(start {first.sup_rm:.4f})")

    cert_file = os.path.join(args.rundir, "certificate.json")
    if os.path.exists(cert_file):
        with open(cert_file) as fh:
            cert = json.load(fh)
        print(f"endpoint: {cert['verdict']} "
              f"(residual ratio {cert['residual_ratio']:.3e}, "
              f"futaki {tuple(cert['futaki'])})")
    try:
        alpha, resid = diagnostics.fit_decay_rate(
            [r.t for r in rows], [r.soliton_res for r in rows])
        print(f"soliton residual decay rate: {alpha:.4f} "
              f"(log-linear fit rms {resid:.3f})")
    except Exception:
        print("soliton residual decay rate: not fit (too few samples)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# static queries


def command_presets(args) -> int:
    from .polytopes import catalog

    for name, data in catalog().items():
        verts = " ".join(f"({v[0]},{v[1]})" for v in data["vertices"])
        kind = "KE expected" if data["futaki_expected_zero"] else \
            "KRS expected (nonzero Futaki)"
        print(f"{name:6s} c1^2 = {data['c1_squared']}  "
              f"vertices {verts}  [{kind}]")
    return EXIT_OK


def command_eh_reference(args) -> int:
    from .eguchi_hanson import reference_report

    rep = reference_report(a=args.bolt_radius)
    if args.json:
        print(json.dumps(rep, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"bolt radius a = {rep['bolt_radius']}")
    print(f"sup |Ric| analytic tables: {rep['ricci_sup_analytic']:.3e}")
    print(f"sup |Ric| finite-difference tables: {rep['ricci_sup_fd']:.3e}")
    print(f"Vol(B(t))/t^4 at radial coordinate {rep['probe_radius']:g}: "
          f"{rep['ball_ratio']:.6f} "
          f"(pi^2/4 = {rep['ball_ratio_target']:.6f}, "
          f"rel. err {rep['ball_ratio_rel_error']:.2e})")
    print(f"core sphere area: {rep['bolt_area']:.6f} (pi a^2)")
    print(f"curvature energy: {rep['curvature_energy_radial']:.6f} "
          f"(closed form 3 pi^2 = {3 * math.pi ** 2:.6f})")
    obs = rep["obstruction"]
    print(f"bubble obstruction verdict: {obs['verdict']}")
    return EXIT_OK


def command_lattice_search(args) -> int:
    from .errors import ConfigurationError, DomainError
    from .polytopes import PRESET_NAMES, minus_two_class_search, preset

    try:
        p = preset(args.preset)
    except ConfigurationError:
        print(f"unknown preset {args.preset!r}; valid presets: "
              + ", ".join(PRESET_NAMES), file=sys.stderr)
        return EXIT_CONFIG
    try:
        vec = minus_two_class_search(p.intersection_form, args.bound)
    except DomainError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    labels = p.intersection_form.basis_labels
    if vec is None:
        print(f"{args.preset}: no class with square -2 up to "
              f"|coeff| <= {args.bound} "
              f"(basis {', '.join(labels)})")
    else:
        combo = " + ".join(f"{c}*{l}" for c, l in zip(vec, labels) if c)
        print(f"{args.preset}: square -2 class found: {vec}  ({combo})")
    return EXIT_OK


def main(argv=None) -> int:
    from .errors import ConfigurationError, FanoflowError

    args = _build_parser().parse_args(argv)
    handler = {
        "run": command_run,
        "report": command_report,
        "presets": command_presets,
        "eh-reference": command_eh_reference,
        "lattice-search": command_lattice_search,
    }[args.command]
    try:
        return handler(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FanoflowError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
