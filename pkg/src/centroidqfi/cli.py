"""Command-line front end.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

from . import __version__
from .direct import direct_imaging_fisher
from .errors import ConfigError, NumericalError
from .experiment import load_config, run_twostage_experiment
from .qfi import qfi_matrix, qfi_two_point_analytic, sld_measurement
from .scene import GaussianPsf, PhotonBudget, SceneGeometry, scene_from_dict
from .simulate import sample_direct, sample_modes, sample_sld
from .spade import hg_mode_probs, hg_mode_terms, hg_spade_fisher
from .sweeps import PRESETS, diagnose_convergence, run_preset

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _scene_args(p):
    g = p.add_argument_group("scene")
    g.add_argument("--scene", help="JSON scene descriptor file (overridden by explicit flags)")
    g.add_argument("--sigma", type=float)
    g.add_argument("--theta1", type=float)
    g.add_argument("--theta2", type=float)
    g.add_argument("--n-sources", type=int)
    g.add_argument("--line", action="store_true", help="uniform line source instead of points")
    g.add_argument("--photons", type=float, help="mean photon number N")


def _out_args(p, formats=("json", "csv")):
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=formats, default=formats[0])


def _build_parser():
    ap = _Parser(prog="centroidqfi", description="Centroid Fisher information, QFI and photon simulation.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fisher", help="direct-imaging Fisher information")
    _scene_args(p)
    _out_args(p)

    p = sub.add_parser("qfi", help="quantum Fisher information")
    _scene_args(p)
    p.add_argument("--q-max", type=int)
    _out_args(p)

    p = sub.add_parser("spade", help="HG-SPADE Fisher information")
    _scene_args(p)
    p.add_argument("--q-max", type=int)
    p.add_argument("--modes", action="store_true", help="emit the per-mode centroid terms")
    _out_args(p)

    p = sub.add_parser("sweep", help="figure-data presets")
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--workers", type=int)
    _out_args(p, ("csv", "json"))

    p = sub.add_parser("simulate", help="draw a seeded measurement batch")
    _scene_args(p)
    p.add_argument("--receiver", choices=("direct", "hg", "sld"), default="direct")
    p.add_argument("--q-max", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-mode", choices=("exact", "poisson"), default="exact")
    p.add_argument("--ref-theta1", type=float, help="SLD reference centroid (default: true value)")
    p.add_argument("--ref-theta2", type=float, help="SLD reference extent (default: true value)")
    _out_args(p, ("csv",))

    p = sub.add_parser("two-stage", help="Monte Carlo run of the two-stage receiver from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="trial ledger CSV path (default stdout)")
    p.add_argument("--summary", help="summary JSON path (default stderr)")

    p = sub.add_parser("diagnose", help="truncation convergence report")
    _scene_args(p)
    p.add_argument("--q-max", type=int, nargs="*", help="truncations to test (default 25 50 100 200)")
    _out_args(p)
    return ap


def _scene(args):
    d = {}
    if args.scene:
        try:
            with open(args.scene) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read scene file {args.scene}: {exc}") from exc
    if args.line:
        d["kind"] = "line"
        d.pop("n", None)
    elif args.n_sources is not None:
        d["kind"] = "points"
        d["n"] = args.n_sources
    for key, val in (("sigma", args.sigma), ("theta1", args.theta1), ("theta2", args.theta2),
                     ("n_photons", args.photons)):
        if val is not None:
            d[key] = val
    if "kind" not in d and "n" not in d:
        raise ConfigError("give --n-sources, --line or --scene")
    return scene_from_dict(d)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _emit(args, payload, rows=None, meta=None):
    """Write a JSON payload, or CSV rows with '#'-prefixed metadata."""
    if getattr(args, "format", "json") == "csv":
        buf = io.StringIO()
        for k, v in (meta or {}).items():
            buf.write(f"# {k}={v}\n")
        rows = rows if rows is not None else [payload]
        cols = []
        for r in rows:
            cols += [c for c in r if c not in cols]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        text = buf.getvalue()
    else:
        text = json.dumps(payload, indent=2, default=_clean) + "\n"
    _write(args.out, text)


def _write(path, text):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _units(psf, budget):
    return {"version": __version__, "N": budget.n_mean, "sigma": psf.sigma, "units": "N/sigma^2 per photon"}


def _cmd_fisher(args):
    geo, psf, budget = _scene(args)
    f = direct_imaging_fisher(geo, psf, budget)
    s2 = psf.sigma**2
    out = {"scene": geo.label(), "theta1": geo.theta1, "theta2": geo.theta2, **_units(psf, budget),
           "j11": f.j11 * s2, "j22": f.j22 * s2, "j12": f.j12 * s2,
           "total_j11": f.total11, "total_j22": f.total22, "quadrature_error": f.error_estimate * s2}
    _emit(args, out, meta=_units(psf, budget))


def _cmd_qfi(args):
    geo, psf, budget = _scene(args)
    k = qfi_matrix(geo, psf, budget, args.q_max)
    s2 = psf.sigma**2
    out = {"scene": geo.label(), "theta1": geo.theta1, "theta2": geo.theta2, **_units(psf, budget),
           "k11": k.k11 * s2, "k22": k.k22 * s2 if k.k22_defined else None, "k12": k.k12 * s2,
           "total_k11": k.total11, "total_k22": k.total22 if k.k22_defined else None, "q_max": k.q_max}
    if geo.n == 2:
        a, _ = qfi_two_point_analytic(geo.theta2, psf, budget)
        out["k11_analytic"] = a.k11 * s2
    _emit(args, out, meta=_units(psf, budget))


def _cmd_spade(args):
    geo, psf, budget = _scene(args)
    if args.modes:
        rows = hg_mode_terms(geo, psf, args.q_max or 50)
        _emit(args, {"scene": geo.label(), "modes": rows}, rows, _units(psf, budget))
        return
    f = hg_spade_fisher(geo, psf, budget, args.q_max)
    s2 = psf.sigma**2
    out = {"scene": geo.label(), "theta1": geo.theta1, "theta2": geo.theta2, **_units(psf, budget),
           "j11_hg": f.j11 * s2, "j22_hg": f.j22 * s2, "j12_hg": f.j12 * s2,
           "total_j11_hg": f.total11, "total_j22_hg": f.total22}
    _emit(args, out, meta=_units(psf, budget))


def _cmd_sweep(args):
    rows = run_preset(args.preset, args.workers)
    meta = {"preset": args.preset, "version": __version__, "N": 1, "sigma": 1,
            "units": "information in N/sigma^2, lengths in sigma"}
    _emit(args, {"meta": meta, "rows": rows}, rows, meta)


def _cmd_simulate(args):
    geo, psf, budget = _scene(args)
    n = int(round(budget.n_mean))
    if args.receiver == "direct":
        batch = sample_direct(geo, psf, n, args.seed, args.count_mode)
    elif args.receiver == "hg":
        dist = hg_mode_probs(geo, psf, args.q_max or 50)
        batch = sample_modes(dist, n, args.seed, geo, psf, args.count_mode)
    else:
        ref = geo.with_params(
            args.ref_theta1 if args.ref_theta1 is not None else geo.theta1,
            args.ref_theta2 if args.ref_theta2 is not None else geo.theta2,
        )
        batch = sample_sld(sld_measurement(ref, psf, args.q_max), geo, n, args.seed, args.count_mode)
    _write(args.out, batch.to_csv())


def _cmd_two_stage(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    ledger, summary = run_twostage_experiment(cfg)
    _write(args.out, ledger)
    text = json.dumps(summary, indent=2, default=_clean) + "\n"
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(text)
    else:
        sys.stderr.write(text)


def _cmd_diagnose(args):
    geo, psf, _ = _scene(args)
    q = tuple(args.q_max) if args.q_max else (25, 50, 100, 200)
    rep = diagnose_convergence(geo, psf, q)
    _emit(args, rep, rep["rows"], {k: v for k, v in rep.items() if k != "rows"})


_COMMANDS = {
    "fisher": _cmd_fisher,
    "qfi": _cmd_qfi,
    "spade": _cmd_spade,
    "sweep": _cmd_sweep,
    "simulate": _cmd_simulate,
    "two-stage": _cmd_two_stage,
    "diagnose": _cmd_diagnose,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
