"""Command-line front end: ``wavegate <subcommand> [options]``.

Every file written carries ``#`` provenance lines (CSV) or a ``provenance``
field (JSON) listing the full parameter set and the seed.  Exit codes: 0 ok,
2 bad parameters, 3 CFL violation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .basis import SchemeParams, assemble_stiffness
from .errors import CFLViolation, NumericalFailure, ParameterError, TrackingError
from .evolve import ObservationRegion, PeriodicMesh, StatePair, run, write_energy_csv
from .gramian import (FilterSpec, build_pencil, ct_row, fit_rate, read_ct_csv, write_ct_csv)
from .packets import PacketSpec, build_packet, trap_experiment, write_trap_csv
from .spectral import cfl_margin, dispersion_table, positive_band, write_dispersion_csv

EXIT_OK, EXIT_PARAM, EXIT_CFL, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_H_LIST = (1.0, 0.5, 0.25, 0.125, 0.0625)
DEFAULT_RETENTIONS = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def resolve_seed(seed):
    env = os.environ.get("WAVEGATE_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise ParameterError(f"WAVEGATE_SEED must be an integer, got {env!r}") from exc
    return int(seed)


def provenance(args, seed):
    lines = [f"wavegate {__version__} {args.command}"]
    for key, val in sorted(vars(args).items()):
        if key in ("command", "func", "seed"):
            continue
        lines.append(f"{key}={val}")
    lines.append(f"seed={seed}")
    return lines


def _emit(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParameterError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _interval(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise ParameterError(f"expected 'lo,hi', got {text!r}")
    return tuple(vals)


# subcommands -------------------------------------------------------------------


def cmd_assemble(args, seed):
    local = assemble_stiffness(args.k, args.h)
    # keep the 17-digit serialisation and append provenance as a JSON field
    body = local.to_json().rstrip()[:-1].rstrip()
    _emit(args.out, body + ',\n  "provenance": ' + json.dumps(provenance(args, seed)) + "\n}\n")
    return EXIT_OK


def cmd_dispersion(args, seed):
    local = assemble_stiffness(args.k, args.h)
    rep = cfl_margin(local, args.lam)
    if not rep.stable:
        raise CFLViolation(f"CFL ratio {args.lam} exceeds the stability limit {rep.lam_max:.6g}",
                           margin=rep.margin, lambda_max=rep.lam_max)
    table = dispersion_table(args.k, args.h, args.lam, n=args.samples, levels=args.levels)
    header = provenance(args, seed) + [f"lambda_max={rep.lam_max!r}", f"branches={table.n_branches}"]
    try:
        band = positive_band(table)
        header.append(f"eta={band.eta!r} delta={band.delta!r} vg_min={band.vg_min!r}")
    except ParameterError:
        pass
    write_dispersion_csv(table, args.out, header)
    print(f"{table.n_branches} branches, lambda_max={rep.lam_max:.6g}, wrote {args.out}")
    return EXIT_OK


def _initial_pair(args, params, mesh, seed):
    n = (params.k + 1) * mesh.J
    if args.init == "random":
        rng = np.random.default_rng(seed)
        return StatePair(Un=rng.standard_normal(n), Unp1=rng.standard_normal(n), n=0, params=params)
    if args.init == "constant":
        U = np.zeros((mesh.J, params.k + 1))
        U[:, 0] = 1.0
        return StatePair(Un=U.ravel(), Unp1=U.ravel().copy(), n=0, params=params)
    spec = PacketSpec(gamma=args.gamma, s=args.s, x_c=args.xc, margin=args.margin)
    return build_packet(params, mesh, spec)


def cmd_simulate(args, seed):
    params = SchemeParams(args.k, args.h, args.lam)
    mesh = PeriodicMesh.from_domain(args.h, *args.domain)
    local = assemble_stiffness(args.k, args.h)
    state = _initial_pair(args, params, mesh, seed)
    res = run(state, local, args.T, region=ObservationRegion(*args.excluded), mesh=mesh)
    header = provenance(args, seed) + [f"N={res.N} T_realized={res.T_realized!r}",
                                       f"obs_integral={res.obs_integral!r}"]
    write_energy_csv(res, args.out, stride=args.stride, header_lines=header)
    print(f"N={res.N}, obs_integral={res.obs_integral:.6g}, wrote {args.out}")
    return EXIT_OK


def cmd_trap(args, seed):
    spec = PacketSpec(gamma=args.gamma, s=args.s, x_c=args.xc, margin=args.margin)
    results = []
    for h in args.h_list:
        params = SchemeParams(args.k, h, args.lam)
        mesh = PeriodicMesh.from_domain(h, *args.domain)
        results.append(trap_experiment(params, mesh, spec, args.T, ObservationRegion(*args.excluded)))
    write_trap_csv(results, args.out, provenance(args, seed))
    for r in results:
        print(f"h={r.h:g} E0={r.E0:.6g} obs={r.obs_integral:.6g} C_T>={r.ct_lower_bound:.6g}")
    return EXIT_OK


def _gramian_task(task):
    k, lam, h, T, domain, excluded, filters = task
    params = SchemeParams(k, h, lam)
    mesh = PeriodicMesh.from_domain(h, *domain)
    pencil = build_pencil(params, mesh, ObservationRegion(*excluded), T)
    return [ct_row(k, lam, h, T, domain, excluded, f, pencil=pencil) for f in filters]


def cmd_gramian(args, seed):
    T = args.T if args.T is not None else (2.4 if args.filter_gamma_sweep else 2.5)
    if args.filter_gamma_sweep:
        filters = [FilterSpec(delta=1.0 - g, physical_only=args.physical_only, slave_pair=args.slave_pair)
                   for g in args.retentions]
    elif args.filter_delta is not None:
        filters = [FilterSpec(delta=args.filter_delta, physical_only=args.physical_only,
                              slave_pair=args.slave_pair)]
    else:
        filters = [None]
    if args.jobs < 1:
        raise ParameterError("--jobs must be at least 1")
    tasks = [(args.k, args.lam, h, T, args.domain, args.excluded, filters) for h in args.h_list]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(args.jobs, len(tasks))) as ex:
            chunks = list(ex.map(_gramian_task, tasks))
    else:
        chunks = [_gramian_task(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    header = provenance(args, seed) + [f"T_used={T!r}"]
    write_ct_csv(rows, args.out, header)
    for r in rows:
        print(f"h={r.h:g} delta={r.delta:g} C_T={r.C_T:.6g}")
    if args.rate_out and not args.filter_gamma_sweep:
        fit = fit_rate([r.h for r in rows], [r.C_T for r in rows])
        _write_rate(args.rate_out, fit, header)
        print(f"r={fit.r:.4f} R2={fit.r2:.4f}")
    return EXIT_OK


def _write_rate(path, fit, header):
    payload = json.loads(fit.to_json())
    payload["provenance"] = header
    _emit(path, json.dumps(payload, indent=2) + "\n")


def cmd_fit_rate(args, seed):
    rows = read_ct_csv(args.input)
    if not rows:
        raise ParameterError(f"no data rows in {args.input}")
    keys = {(r.k, r.lam, r.T, r.delta, r.physical_only) for r in rows}
    if len(keys) > 1:
        raise ParameterError("input mixes several configurations; fit one (k, lambda, T, filter) at a time")
    fit = fit_rate([r.h for r in rows], [r.C_T for r in rows])
    _write_rate(args.out, fit, [f"wavegate {__version__} fit-rate", f"input={os.path.basename(args.input)}"])
    print(f"r={fit.r:.6g} intercept={fit.intercept:.6g} R2={fit.r2:.6g}")
    return EXIT_OK


# parser ------------------------------------------------------------------------


def _common(p, h_list=False):
    p.add_argument("--k", type=int, required=True, help="polynomial degree")
    p.add_argument("--lam", "--lambda", dest="lam", type=float, required=True, help="CFL ratio dt/h")
    if h_list:
        p.add_argument("--h-list", type=_floats, default=list(DEFAULT_H_LIST),
                       help="comma-separated mesh sizes")
    else:
        p.add_argument("--h", type=float, required=True, help="mesh size")
    p.add_argument("--domain", type=_interval, default=(-6.0, 6.0), help="periodic domain 'lo,hi'")
    p.add_argument("--excluded", type=_interval, default=(-1.0, 1.0),
                   help="unobserved interval 'a,b'")


def _packet_opts(p):
    p.add_argument("--gamma", type=float, default=0.8)
    p.add_argument("--s", type=float, default=1.5, help="Gevrey index")
    p.add_argument("--xc", type=float, default=0.0, help="packet centre")
    p.add_argument("--margin", type=float, default=1.0, help="placement factor below the zone edge")


def build_parser():
    ap = argparse.ArgumentParser(prog="wavegate", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"wavegate {__version__}")
    ap.add_argument("--seed", type=int, default=0, help="RNG seed (WAVEGATE_SEED overrides)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="dump local mass and stiffness blocks as JSON")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("dispersion", help="branch-tracked dispersion relations to CSV")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, required=True)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=2049, help="uniform samples on [-pi/h, pi/h]")
    p.add_argument("--levels", type=int, default=10, help="refinement levels near 0 and the zone edge")
    p.add_argument("--out", default="dispersion.csv")
    p.set_defaults(func=cmd_dispersion)

    p = sub.add_parser("simulate", help="run the leapfrog scheme and record energies")
    _common(p)
    p.add_argument("--T", type=float, default=2.5)
    p.add_argument("--init", choices=["random", "packet", "constant"], default="random")
    _packet_opts(p)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", default="energy.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("trap", help="trapped wave-packet experiment over a list of mesh sizes")
    _common(p, h_list=True)
    p.set_defaults(h_list=[0.2, 0.1, 0.05, 0.025])
    p.add_argument("--T", type=float, default=2.5)
    _packet_opts(p)
    p.add_argument("--out", default="trap.csv")
    p.set_defaults(func=cmd_trap)

    p = sub.add_parser("gramian", help="observability constants over a list of mesh sizes")
    _common(p, h_list=True)
    p.add_argument("--T", type=float, default=None, help="final time (default 2.5, or 2.4 for sweeps)")
    p.add_argument("--filter-delta", type=float, default=None, help="spectral truncation delta")
    p.add_argument("--physical-only", action="store_true", help="keep only the physical branch")
    p.add_argument("--slave-pair", action="store_true", help="tie U^1 to U^0 by the physical phase shift")
    p.add_argument("--filter-gamma-sweep", action="store_true",
                   help="sweep the retention 1-delta over --retentions")
    p.add_argument("--retentions", type=_floats, default=list(DEFAULT_RETENTIONS))
    p.add_argument("--jobs", type=int, default=1, help="worker processes for the mesh-size sweep")
    p.add_argument("--out", default="ct.csv")
    p.add_argument("--rate-out", default=None, help="also fit ln C_T against 1/h into this JSON file")
    p.set_defaults(func=cmd_gramian)

    p = sub.add_parser("fit-rate", help="fit ln C_T against 1/h from a ct.csv file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="rate.json")
    p.set_defaults(func=cmd_fit_rate)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        seed = resolve_seed(args.seed)
        return args.func(args, seed)
    except CFLViolation as exc:
        lam_max = f" (lambda_max={exc.lambda_max:.6g})" if exc.lambda_max is not None else ""
        print(f"error: {exc}{lam_max}", file=sys.stderr)
        return EXIT_CFL
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (NumericalFailure, TrackingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
