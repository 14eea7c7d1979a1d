"""Command-line front-end: ``wpl <subcommand> [--config PATH | --preset NAME] [--out DIR] [--tol X]``.

Subcommands
  simulate     integrate a scenario, write the trajectory CSV and a summary line
  landscape    export (dq, dp, L) grids with dqp at its conditional minimizer
  diffusion    evaluate D_omega(T) with branch and error estimate
  asymptotics  zero-mode report and the fluctuation-free long-time covariance
  limits       order-of-limits tables (``trap`` or ``fluctuation``)
  sweep        diffusion grid (``sweep`` section) or several scenarios in parallel

Exit status is 0 on success, 2 for usage errors and the ``exit_code`` of the
raised :class:`~wplandscape.errors.WPLError` otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import bath as bathmod
from .config import (ConfigError, get, load_config, load_preset, preset_names, scenario_from,
                     system_from)
from .dynamics import (InhomogeneitySource, integrate, late_time_slope, propagate_grid,
                       relaxation_time)
from .errors import WPLError
from .landscape import (decompose_degenerate, decompose_general, landscape_cho, landscape_fp,
                        landscape_grid, landscape_qbm)
from .model import BathSpec, SystemSpec, build_drift, independent_entries, is_hurwitz, to_reduced, unvec, vec, vectorize_drift
from .zeromodes import asymptotic_covariance, make_gaussian_state, zero_modes_for

DIFFUSION_HORIZON = 1e4  # gamma * t_end for free-particle runs with a bath


def _fmt(x):
    return f"{x:.17g}"


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _summary(name, fields, anchor=""):
    parts = [f"{k}={_fmt(v) if isinstance(v, (float, np.floating)) else v}" for k, v in fields.items()]
    tail = f" [{anchor}]" if anchor else ""
    return f"{name}: " + " ".join(parts) + tail


# ---------------------------------------------------------------- simulate

def _source_for(sc, t_end):
    spec, bath = sc.system, sc.bath
    if not bath.active:
        return InhomogeneitySource.off()
    if sc.bath_mode == "classical":
        return InhomogeneitySource.stationary(bathmod.classical_xi(spec, bath.temperature, bath.scale))
    if sc.bath_mode == "stationary":
        return InhomogeneitySource.stationary(bathmod.build_xi_matrix(spec, bath))
    times, xis = bathmod.transient_table(spec, bath, t_end)
    return InhomogeneitySource.transient(times, xis)


def _horizon(sc, h_sigma, basis):
    if sc.t_end is not None:
        return sc.t_end
    if sc.bath.active and basis is not None:
        return DIFFUSION_HORIZON / float(np.linalg.eigvalsh(sc.system.gamma_mat)[0])
    return relaxation_time(h_sigma)


def _output_times(sc, t_end):
    if sc.spacing == "linear" or sc.samples < 3:
        return np.linspace(0.0, t_end, sc.samples)
    first = sc.t_first if sc.t_first is not None else t_end * 1e-4
    return np.concatenate([[0.0], np.geomspace(first, t_end, sc.samples - 1)])


def _final_landscape(spec, xi, sigma_mat, h_sigma, basis):
    """Landscape value at the final state, and the decomposition label."""
    zeta = vec(xi)
    if spec.n == 1:
        g, w = float(spec.gamma_mat[0, 0]), float(np.sqrt(spec.omega_mat[0, 0]))
        if basis is not None:
            w = 0.0
        dec = landscape_qbm(g, w, float(xi[0, 1]), float(xi[1, 1]) / 2)
        return dec.value(to_reduced(sigma_mat)), dec.label
    if basis is None:
        dec = decompose_general(h_sigma, zeta)
    else:
        dec = decompose_degenerate(h_sigma, basis, zeta)
    return dec.value(vec(sigma_mat)), dec.label


def run_simulate(sc, out_dir=None):
    """Run a scenario; returns ``(trajectory, summary dict)`` and writes files when ``out_dir`` is set."""
    spec = sc.system
    h = build_drift(spec)
    hs = vectorize_drift(h)
    basis = zero_modes_for(spec)
    t_end = _horizon(sc, hs, basis)
    source = _source_for(sc, t_end)
    state = make_gaussian_state(sc.widths, spec.hbar)
    times = _output_times(sc, t_end)
    method = sc.method
    if method == "auto":
        method = "expm" if source.mode == "off" else "rk45"
    if method == "expm":
        if source.mode != "off":
            raise ConfigError("solver.method expm needs the bath disabled")
        traj = propagate_grid(state, h, times)
    else:
        traj = integrate(state, h, source, t_end=t_end, tol=sc.tol, atol=sc.atol, t_eval=times)

    n = spec.n
    final = traj.sigmas[-1]
    xi_end = source.xi(t_end, 2 * n)
    fields = {"t_end": float(t_end), "final_dq": float(final[0, 0])}
    predicted = None
    if source.mode == "off":
        predicted = unvec(asymptotic_covariance(basis, state.sigma), 2 * n)
    elif basis is None and source.mode == "stationary":
        predicted = solve_continuous_lyapunov(h, -source.stationary_xi)
    if predicted is not None:
        fields["predicted_dq_inf"] = float(predicted[0, 0])
    else:
        fields["predicted_dq_inf"] = "unbounded"
    value, label = _final_landscape(spec, xi_end, final, hs, basis)
    fields["landscape_end"] = float(value)
    fields["method"] = method

    traj.metadata.update({"scenario": sc.name, "landscape": label})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traj.to_csv(out / sc.outputs.get("trajectory", f"{sc.name}.csv"))
        meta = {"summary": fields, "anchor": sc.anchor, "metadata": traj.metadata}
        if predicted is not None:
            labels, vals = independent_entries(predicted)
            meta["predicted_sigma_inf"] = dict(zip(labels, map(float, vals)))
        _write_json(out / f"{sc.name}.summary.json", meta)
    return traj, fields


# ---------------------------------------------------------------- asymptotics

def run_asymptotics(sc, out_dir=None):
    spec = sc.system
    basis = zero_modes_for(spec)
    state = make_gaussian_state(sc.widths, spec.hbar)
    sigma_inf = unvec(asymptotic_covariance(basis, state.sigma), 2 * spec.n)
    labels, vals = independent_entries(sigma_inf)
    report = {"kernel_dim": 0 if basis is None else basis.d,
              "pairing_cond": 0.0 if basis is None else basis.pairing_cond,
              "sigma_inf": dict(zip(labels, map(float, vals)))}
    if out_dir is not None:
        _write_rows(Path(out_dir) / f"{sc.name}.asymptotics.csv", ["entry", "value"], zip(labels, vals))
    return report


# ---------------------------------------------------------------- landscape

def _grid_axis(spec, default):
    lo, hi, num = spec if spec is not None else default
    if int(num) != num or num < 2 or not hi > lo:
        raise ConfigError("grid axis needs [lo, hi, n] with hi > lo and n >= 2")
    return np.linspace(float(lo), float(hi), int(num))


def panel_decomposition(panel):
    mode = panel.get("mode")
    g = float(panel.get("gamma", 1.0))
    w = float(panel.get("omega", 0.0))
    if mode == "fp":
        return landscape_fp(g), {}
    if mode == "cho":
        return landscape_cho(g, w), {}
    if mode == "qbm":
        extra = {}
        if "temperature" in panel:
            terms = bathmod.fluctuation_terms(g, w, float(panel["temperature"]), panel.get("cutoff"))
            qx, px = terms.delta_qxi, terms.delta_pxi
            extra = {"temperature": float(panel["temperature"]), "cutoff": terms.cutoff}
        else:
            qx, px = float(panel.get("delta_qxi", 0.0)), float(panel.get("delta_pxi", 0.0))
        extra.update({"delta_qxi": qx, "delta_pxi": px})
        return landscape_qbm(g, w, qx, px), extra
    raise ConfigError(f"unknown landscape mode '{mode}' (fp, cho or qbm)")


def run_landscape(doc, out_dir):
    sect = doc.get("landscape") or {}
    dq = _grid_axis(sect.get("dq"), (-2.0, 2.0, 41))
    dp = _grid_axis(sect.get("dp"), (-2.0, 2.0, 41))
    grids = {}
    for panel in sect.get("panels") or []:
        dec, extra = panel_decomposition(panel)
        name = panel.get("name", panel["mode"])
        meta = {"mode": panel["mode"], "gamma": float(panel.get("gamma", 1.0)),
                "omega": float(panel.get("omega", 0.0)), **extra}
        grid = landscape_grid(dec, dq, dp, meta)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            grid.to_csv(out / f"{name}.csv")
            grid.write_metadata(out / f"{name}.json")
        grids[name] = grid
    if not grids:
        raise ConfigError("landscape needs at least one panel")
    return grids


# ---------------------------------------------------------------- diffusion and sweep

def diffusion_row(gamma, omega, temperature, hbar=1.0, rtol=1e-8):
    d, info = bathmod.diffusion_coefficient(gamma, omega, temperature, hbar=hbar, rtol=rtol,
                                            full_output=True)
    return gamma, omega, temperature, d, info["error"], info["regime"]


def _diffusion_task(args):
    return diffusion_row(*args)


def run_sweep_grid(doc, workers=1, rtol=1e-8):
    gammas = get(doc, ("sweep", "gamma"), [1.0], lambda v: [float(x) for x in np.atleast_1d(v)])
    omegas = get(doc, ("sweep", "omega"), [1.0], lambda v: [float(x) for x in np.atleast_1d(v)])
    temps = get(doc, ("sweep", "temperature"), [0.0], lambda v: [float(x) for x in np.atleast_1d(v)])
    hbar = get(doc, ("sweep", "hbar"), 1.0, float)
    tasks = [(g, w, t, hbar, rtol) for g in gammas for w in omegas for t in temps]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_diffusion_task, tasks))
    return [_diffusion_task(t) for t in tasks]


def _scenario_task(args):
    doc, out_dir, tol = args
    sc = scenario_from(doc, str(doc.get("name")), tol)
    _, fields = run_simulate(sc, out_dir)
    return _summary(sc.name, fields, sc.anchor)


# ---------------------------------------------------------------- limits

def _limits_trap(doc):
    g = get(doc, ("limits", "gamma"), 1.0, float)
    a = get(doc, ("limits", "width"), 1.0, float)
    t_end = get(doc, ("limits", "t_end"), 1e4, float)
    omegas = get(doc, ("limits", "omegas"), [0.0, 1e-3, 1e-2, 1e-1],
                 lambda v: [float(x) for x in v])
    rows = []
    state = make_gaussian_state([a])
    for w in omegas:
        spec = SystemSpec.oscillator(g, w)
        traj = propagate_grid(state, build_drift(spec), [0.0, t_end])
        inf = unvec(asymptotic_covariance(zero_modes_for(spec), state.sigma), 2)[0, 0]
        rows.append((w, t_end, float(traj.sigmas[-1][0, 0]), float(inf)))
    header = ["omega", "t", "dq_at_t", "dq_limit"]
    return header, rows


def _limits_fluctuation(doc, tol):
    g = get(doc, ("limits", "gamma"), 1.0, float)
    a = get(doc, ("limits", "width"), 1.0, float)
    temp = get(doc, ("limits", "temperature"), 1.0, float)
    t_end = get(doc, ("limits", "t_end"), DIFFUSION_HORIZON / g, float)
    scales = get(doc, ("limits", "scales"), [0.0, 1e-2, 1e-1, 1.0], lambda v: [float(x) for x in v])
    spec = SystemSpec.oscillator(g, 0.0)
    h = build_drift(spec)
    xi_full = bathmod.build_xi_matrix(spec, BathSpec(temp))
    state = make_gaussian_state([a])
    times = np.linspace(0.0, t_end, 401)
    rows = []
    for lam in scales:
        src = InhomogeneitySource.stationary(lam * xi_full)
        traj = integrate(state, h, src, t_end=t_end, tol=tol, t_eval=times)
        slope = late_time_slope(traj, window=0.2)
        if lam == 0:
            limit = float(asymptotic_covariance(zero_modes_for(spec), state.sigma)[0])
        else:
            limit = float("inf")
        rows.append((lam, t_end, float(traj.sigmas[-1][0, 0]), slope, limit))
    header = ["lambda", "t", "dq_at_t", "slope", "dq_limit"]
    return header, rows


def run_limits(doc, mode=None, tol=1e-9):
    mode = mode or get(doc, ("limits", "mode"), None, str)
    if mode == "trap":
        return _limits_trap(doc)
    if mode == "fluctuation":
        return _limits_fluctuation(doc, tol)
    raise ConfigError("limits mode must be trap or fluctuation")


# ---------------------------------------------------------------- argument handling

def _load(args, required=True):
    if args.config and args.preset:
        raise ConfigError("give --config or --preset, not both")
    if args.config:
        return load_config(args.config), args.config
    if args.preset:
        return load_preset(args.preset), f"preset {args.preset}"
    if required:
        raise ConfigError("a --config or --preset is required")
    return {}, "<arguments>"


def _out(args, doc):
    return Path(args.out) if args.out else Path("wpl-out") / str(doc.get("name", "run"))


def cmd_simulate(args):
    doc, src = _load(args)
    sc = scenario_from(doc, src, args.tol)
    _, fields = run_simulate(sc, _out(args, doc))
    print(_summary(sc.name, fields, sc.anchor))


def cmd_asymptotics(args):
    doc, src = _load(args)
    sc = scenario_from(doc, src, args.tol)
    report = run_asymptotics(sc, _out(args, doc) if args.out else None)
    print(f"kernel dimension: {report['kernel_dim']}")
    print(f"cond(M_l M_r): {_fmt(report['pairing_cond'])}")
    for k, v in report["sigma_inf"].items():
        print(f"{k} {_fmt(v)}")
    anchor = doc.get("anchor", "")
    print(_summary(sc.name, {"predicted_dq_inf": report["sigma_inf"].get("dq", report["sigma_inf"].get("dq11"))},
                   anchor))


def cmd_landscape(args):
    doc, _ = _load(args, required=args.mode is None)
    if args.mode is not None:
        panel = {"name": args.mode, "mode": args.mode, "gamma": args.gamma}
        if args.omega is not None:
            panel["omega"] = args.omega
        elif args.mode == "cho":
            panel["omega"] = 1.0
        if args.delta_qxi is not None:
            panel["delta_qxi"] = args.delta_qxi
        if args.delta_pxi is not None:
            panel["delta_pxi"] = args.delta_pxi
        doc = {"name": f"landscape-{args.mode}", "landscape": {"panels": [panel]}}
        if args.dq:
            doc["landscape"]["dq"] = args.dq
        if args.dp:
            doc["landscape"]["dp"] = args.dp
    out = _out(args, doc)
    grids = run_landscape(doc, out)
    for name, grid in grids.items():
        flag = ",".join(grid.unbounded_axes) or "none"
        print(_summary(name, {"min_L": float(grid.values.min()), "max_L": float(grid.values.max()),
                              "unbounded": flag, "file": str(out / f"{name}.csv")}, doc.get("anchor", "")))


def cmd_diffusion(args):
    rtol = args.tol if args.tol is not None else 1e-8
    g, w, t, d, err, branch = diffusion_row(args.gamma, args.omega, args.temperature, args.hbar, rtol)
    print(f"D = {_fmt(d)}")
    print(f"branch = {branch}")
    print(f"error = {_fmt(err)}")
    if args.series is not None and w > 0:
        s = bathmod.diffusion_low_t_series(g, w, t, order=args.series, hbar=args.hbar)
        print(f"low-T series = {_fmt(s.value)} next-term = {_fmt(s.next_term)} valid = {s.valid}")
    if args.out:
        _write_rows(args.out, ["gamma", "omega", "T", "D", "err"], [(g, w, t, d, err)])


def cmd_limits(args):
    doc, _ = _load(args, required=args.mode is None)
    mode = args.mode or get(doc, ("limits", "mode"), None, str)
    header, rows = run_limits(doc, mode, args.tol if args.tol is not None else 1e-9)
    name = doc.get("name", f"limits-{mode}")
    out = _out(args, doc)
    _write_rows(out / f"{name}.csv", header, rows)
    for row in rows:
        print(",".join(_fmt(v) for v in row))
    print(_summary(name, {"rows": len(rows), "file": str(out / f"{name}.csv")}, doc.get("anchor", "")))


def cmd_sweep(args):
    docs = [(load_config(p), p) for p in args.config or []]
    docs += [(load_preset(p), p) for p in args.preset or []]
    if not docs:
        raise ConfigError("sweep needs at least one --config or --preset")
    workers = args.workers
    grid_docs = [d for d, _ in docs if "sweep" in d]
    if grid_docs:
        if len(docs) != 1:
            raise ConfigError("a diffusion sweep takes exactly one config")
        doc = grid_docs[0]
        workers = workers or get(doc, ("sweep", "workers"), 1, int)
        rows = run_sweep_grid(doc, workers, args.tol if args.tol is not None else 1e-8)
        name = doc.get("name", "sweep")
        path = _out(args, doc) / f"{name}.csv"
        _write_rows(path, ["gamma", "omega", "T", "D", "err"], [r[:5] for r in rows])
        print(_summary(name, {"points": len(rows), "file": str(path)}, doc.get("anchor", "")))
        return
    base = Path(args.out) if args.out else Path("wpl-out")
    tasks = []
    for doc, src in docs:
        system_from(doc, src)  # validate everything before any work starts
        scenario_from(doc, src, args.tol)
        tasks.append((dict(doc), base / str(doc.get("name")), args.tol))
    if (workers or 1) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            lines = list(pool.map(_scenario_task, tasks))
    else:
        lines = [_scenario_task(t) for t in tasks]
    for line in lines:
        print(line)


def _axis(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("axis must be lo,hi,n")
    return [float(parts[0]), float(parts[1]), int(parts[2])]


def build_parser():
    p = argparse.ArgumentParser(prog="wpl", description="Covariance landscapes of damped quantum oscillators.")
    p.add_argument("--list-presets", action="store_true", help="print bundled preset names and exit")
    sub = p.add_subparsers(dest="command")

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="YAML scenario file")
            sp.add_argument("--preset", metavar="NAME", help="bundled scenario name")
        sp.add_argument("--out", metavar="PATH", help="output directory (file for diffusion)")
        sp.add_argument("--tol", type=float, metavar="REAL", help="integrator or quadrature tolerance")

    common(sub.add_parser("simulate", help="integrate a scenario"))
    common(sub.add_parser("asymptotics", help="zero-mode long-time prediction"))

    sp = sub.add_parser("landscape", help="export landscape grids")
    common(sp)
    sp.add_argument("--mode", choices=["fp", "cho", "qbm"])
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--omega", type=float)
    sp.add_argument("--delta-qxi", type=float)
    sp.add_argument("--delta-pxi", type=float)
    sp.add_argument("--dq", type=_axis, metavar="LO,HI,N")
    sp.add_argument("--dp", type=_axis, metavar="LO,HI,N")

    sp = sub.add_parser("diffusion", help="evaluate D_omega(T)")
    common(sp, config=False)
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--omega", type=float, required=True)
    sp.add_argument("--temperature", type=float, default=0.0)
    sp.add_argument("--hbar", type=float, default=1.0)
    sp.add_argument("--series", type=int, metavar="ORDER", help="also print the low-T series")

    sp = sub.add_parser("limits", help="order-of-limits tables")
    common(sp)
    sp.add_argument("--mode", choices=["trap", "fluctuation"])

    sp = sub.add_parser("sweep", help="parameter or scenario sweep")
    sp.add_argument("--config", metavar="PATH", action="append")
    sp.add_argument("--preset", metavar="NAME", action="append")
    sp.add_argument("--out", metavar="PATH")
    sp.add_argument("--tol", type=float, metavar="REAL")
    sp.add_argument("--workers", type=int, help="worker processes")
    return p


_COMMANDS = {"simulate": cmd_simulate, "asymptotics": cmd_asymptotics, "landscape": cmd_landscape,
             "diffusion": cmd_diffusion, "limits": cmd_limits, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_presets:
        print("\n".join(preset_names()))
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        _COMMANDS[args.command](args)
    except WPLError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
