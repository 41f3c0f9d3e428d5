"""Command-line entry point ``oscilab``.

Exit status: 0 success, 2 invalid input, 3 failed numerical check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .classical_flow import averaged_flow
from .frequency import FrequencyError
from .measure_lab import (
    MeasureError,
    PhaseGrid,
    actions_of,
    bracket_defect,
    husimi_cloud,
    invariance_test,
    localization_test,
    torus_mass,
    width_bracket,
)
from .normal_form import normal_form_iterate, offresonant_residual
from .quantization import (
    BasisError,
    basis_for,
    cluster_spectrum,
    quantize,
    spectrum,
)
from .quasimode_synth import BumpFunction, synthesize, target_defects
from .symbol_algebra import SymbolError, WeylSymbol, average
from .xcli import (
    NUMERICAL_ERRORS,
    ExperimentConfig,
    RunRecord,
    ToleranceError,
    ValidationError,
    default_point,
    load_json_arg,
    parse_point,
    parse_spec,
    parse_symbol,
    report,
    run,
    save_matrix,
    save_state,
    to_csv,
    window_norm,
)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _eps(args) -> float:
    if getattr(args, "eps", None) is not None:
        return float(args.eps)
    return float(args.hbar) ** float(args.eps_exponent)


def _problem(args):
    spec = parse_spec(args.spec)
    V = parse_symbol(args.V, d=spec.d) if getattr(args, "V", None) else WeylSymbol.zero(spec.d)
    return spec, V


def _matrices(spec, V, hbar, emax, degree=2):
    basis = basis_for(spec.d, hbar, emax, spec.omega, degree=degree)
    H = quantize(WeylSymbol.harmonic(spec.omega), basis, "H")
    Vq = quantize(V, basis, "V")
    return basis, H, Vq


def cmd_spectrum(args) -> int:
    spec, V = _problem(args)
    eps = _eps(args)
    basis, H, Vq = _matrices(spec, V, args.hbar, max(args.emax, args.window[1]))
    P = H + Vq * eps
    if args.save_matrix:
        save_matrix(args.save_matrix, P, basis, "P")
    pairs = spectrum(P, tuple(args.window), omega=spec.omega)
    lines = ["index,eigenvalue"] + [f"{i},{v:.15g}" for i, v in enumerate(pairs.values)]
    _emit("\n".join(lines), args.out)
    return 0


def cmd_average(args) -> int:
    spec = parse_spec(args.spec)
    s = parse_symbol(args.symbol, d=spec.d)
    _emit(json.dumps(average(s, spec).to_json(), indent=1), args.out)
    return 0


def cmd_nf(args) -> int:
    spec, V = _problem(args)
    eps = _eps(args)
    basis, H, Vq = _matrices(spec, V, args.hbar, args.emax, degree=2 * args.order)
    band = basis.band_mask(spec.omega, emax=args.emax)
    res = normal_form_iterate(H, Vq, spec, eps, args.order, band=band, V_symbol=V)
    steps = [{"step": 0, "residual": offresonant_residual(H + Vq * eps, spec, band)}]
    steps += [{"step": st.j, "residual": st.residual_norm} for st in res.steps]
    _emit(json.dumps({"eps": eps, "hbar": args.hbar, "basis": basis.to_json(), "steps": steps}, indent=1), args.out)
    return 0


def cmd_flow(args) -> int:
    spec = parse_spec(args.spec)
    h = parse_symbol(args.symbol, d=spec.d)
    z0 = parse_point(args.z0, spec.d)
    times = np.linspace(0, args.time, args.samples)
    pts = averaged_flow(z0, times, h)
    vals = np.real(h.evaluate(pts))
    d = spec.d
    head = ["s"] + [f"x{j + 1}" for j in range(d)] + [f"xi{j + 1}" for j in range(d)] + ["value"]
    rows = [",".join(head)]
    for t, p, v in zip(times, pts, vals):
        rows.append(",".join(f"{c:.12g}" for c in [t, *p, v]))
    _emit("\n".join(rows), args.out)
    drift = float(np.max(np.abs(vals - vals[0])))
    if drift > args.tol * max(1.0, abs(vals[0])):
        raise ToleranceError(f"generator drifted by {drift:.3g} along the orbit")
    return 0


def cmd_clusters(args) -> int:
    spec, V = _problem(args)
    eps = _eps(args)
    basis, H, Vq = _matrices(spec, V, args.hbar, max(args.emax, args.window[1]))
    P = H + Vq * eps
    rep = cluster_spectrum(P, H, eps, tuple(args.window), vnorm=window_norm(Vq, H, args.window), omega=spec.omega)
    lines = ["center,size,width,max_shift"] + [f"{c:.15g},{n},{w:.6g},{m:.6g}" for c, n, w, m in rep.rows()]
    _emit("\n".join(lines), args.out)
    return 0


def cmd_quasimode(args) -> int:
    spec, V = _problem(args)
    eps = float(args.hbar) ** float(args.eps_exponent)
    z0 = parse_point(args.z0, spec.d) if args.z0 else default_point(spec)
    basis = basis_for(spec.d, args.hbar, args.emax, spec.omega, degree=2)
    q = synthesize(z0, args.T, BumpFunction(), average(V, spec), eps, basis, spec, V=V)
    payload = {
        "lambda": q.lam,
        "width": q.width,
        "T": q.T,
        "pre_norm": q.pre_norm,
        "admitted_radii": width_bracket(q.width, eps, args.hbar) if eps > 0 else None,
        "grid": q.grid,
        "target_measure": q.target_measure,
        "basis": basis.to_json(),
    }
    if args.out:
        stem = Path(args.out)
        stem.with_suffix(".json").write_text(json.dumps(payload, indent=1))
        save_state(stem.with_suffix(".npz"), q.state.coefficients, basis, {"lambda": q.lam})
    else:
        _emit(json.dumps(payload, indent=1), None)
    return 0


def _cluster_vectors(spec, V, hbar, eps, emax, window):
    basis, H, Vq = _matrices(spec, V, hbar, emax)
    P = H + Vq * eps
    pairs = spectrum(P, window, omega=spec.omega)
    levels = np.unique(np.round(np.real(np.diag(H.entries)), 12))
    center = levels[np.argmin(np.abs(levels - 1.0))]
    sel = np.abs(pairs.values - center) < 0.5 * hbar * spec.omega.min()
    return basis, pairs.values[sel], pairs.vectors[:, sel]


def cmd_verify(args) -> int:
    spec, V = _problem(args)
    eps = _eps(args)
    Vavg = average(V, spec)
    d = spec.d
    x, xi = WeylSymbol.x, WeylSymbol.xi
    report_out: dict = {"theorem": args.theorem, "hbar": args.hbar, "eps": eps}
    cloud_points = None
    if args.theorem == "invariance":
        basis, vals, vecs = _cluster_vectors(spec, V, args.hbar, eps, args.emax, tuple(args.window))
        obs = {"x1*xi2": x(0, d) * xi(min(1, d - 1), d), "x1*xi1": x(0, d) * xi(0, d)}
        rows = []
        for k, lam in enumerate(vals):
            rows.append({"eigenvalue": float(lam), **{n: bracket_defect(vecs[:, k], basis, Vavg, a) for n, a in obs.items()}})
        report_out["bracket_defects"] = rows
        worst = max((max(r[n] for n in obs) for r in rows), default=0.0)
        report_out["max_defect"] = worst
        failed = worst > args.tol
    elif args.theorem == "localization":
        basis, vals, vecs = _cluster_vectors(spec, V, args.hbar, eps, args.emax, tuple(args.window))
        r = 4 * np.sqrt(args.hbar)
        grid = PhaseGrid.covering(args.emax, args.hbar, float(spec.omega.min()), per_sqrt_hbar=1.5)
        rows = []
        for k, lam in enumerate(vals):
            mu = husimi_cloud(vecs[:, k], basis, grid)
            out = localization_test(vecs[:, k], basis, {"H": (WeylSymbol.harmonic(spec.omega), float(lam))}, r, cloud=mu)
            E = actions_of(vecs[:, k], basis)
            rows.append({"eigenvalue": float(lam), "outside_H_tube": out["H"], "torus_mass": torus_mass(mu, E, r)})
            cloud_points = (mu.points, mu.weights)
        report_out["rows"] = rows
        failed = any(row["outside_H_tube"] > 0.05 for row in rows)
    else:
        z0 = parse_point(args.z0, d) if args.z0 else default_point(spec)
        basis = basis_for(d, args.hbar, args.emax, spec.omega, degree=2)
        q = synthesize(z0, args.T, BumpFunction(), Vavg, eps, basis, spec, V=V)
        obs = {"H1": WeylSymbol.action(0, d), "x1^2": x(0, d) ** 2, "x1*xi1": x(0, d) * xi(0, d)}
        times, s_values = np.linspace(0, 2 * np.pi, 5), np.linspace(0, args.T / 2, 3)
        inv = invariance_test(q.state, basis, spec, Vavg, obs, times, s_values)
        rows = [dict(zip(["observable", "t", "s", "defect"], r)) for r in inv.rows()]
        report_out["max_defect"] = inv.max_defect()
        try:
            target = target_defects(obs, z0, args.T, BumpFunction(), Vavg, spec, times, s_values)
        except ValueError:
            target = None
        if target is None:
            failed = inv.max_defect() > args.tol
        else:
            mismatch = 0.0
            for row in rows:
                i = int(np.argmin(np.abs(times - row["t"])))
                k = int(np.argmin(np.abs(s_values - row["s"])))
                row["target_defect"] = float(target[row["observable"]][i, k])
                mismatch = max(mismatch, abs(row["defect"] - row["target_defect"]))
            report_out["max_target_mismatch"] = mismatch
            failed = mismatch > args.tol
        report_out["rows"] = rows
    report_out["passed"] = not failed
    _emit(json.dumps(report_out, indent=1), args.out)
    if args.cloud and cloud_points is not None:
        pts, w = cloud_points
        keep = w > 1e-8
        np.savetxt(args.cloud, np.column_stack([pts[keep], w[keep]]), delimiter=",", comments="")
    if failed:
        raise ToleranceError(f"{args.theorem} check exceeded tolerance {args.tol}")
    return 0


def cmd_report(args) -> int:
    if args.record:
        record = RunRecord.from_json(load_json_arg(args.record))
    elif args.run_config or args.config:
        cfg = ExperimentConfig.load(args.run_config or args.config)
        record = run(cfg)
    else:
        raise ValidationError("report needs --record or --config")
    table = report(record, args.kind)
    text = to_csv(table) if args.format == "csv" else json.dumps(table, indent=1)
    _emit(text, args.out)
    if record.failed:
        raise ToleranceError(f"{len(record.failed)} sweep cell(s) failed")
    return 0


def _add_problem(p, need_V=True):
    p.add_argument("--spec", required=True, help="frequency spec JSON file or inline JSON")
    p.add_argument("--V", required=need_V, help="perturbation symbol JSON file or inline JSON")
    p.add_argument("--hbar", type=float, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--eps", type=float)
    g.add_argument("--eps-exponent", type=float, default=2.0)
    p.add_argument("--emax", type=float, default=1.3)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oscilab", description="Semiclassical experiments on perturbed harmonic oscillators.")
    ap.add_argument("--config", help="JSON file whose keys supply option defaults")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="eigenvalues of H + eps V in a window (CSV)")
    _add_problem(p)
    p.add_argument("--window", type=float, nargs=2, default=[0.9, 1.1])
    p.add_argument("--save-matrix")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("average", help="average a symbol along the oscillator flow (JSON)")
    p.add_argument("--spec", required=True)
    p.add_argument("--symbol", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("nf", help="quantum normal form residuals per step (JSON)")
    _add_problem(p)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_nf)

    p = sub.add_parser("flow", help="orbit table of a Hamiltonian symbol (CSV)")
    p.add_argument("--spec", required=True)
    p.add_argument("--symbol", required=True)
    p.add_argument("--z0", required=True, help="comma-separated x then xi coordinates")
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("quasimode", help="synthesize a quasimode (JSON + state archive)")
    _add_problem(p)
    p.add_argument("--z0")
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--out", help="output stem; writes STEM.json and STEM.npz")
    p.set_defaults(func=cmd_quasimode)

    p = sub.add_parser("clusters", help="spectral clusters around unperturbed levels (CSV)")
    _add_problem(p)
    p.add_argument("--window", type=float, nargs=2, default=[0.9, 1.1])
    p.add_argument("--out")
    p.set_defaults(func=cmd_clusters)

    p = sub.add_parser("verify", help="invariance / localization / bi-invariance checks (JSON)")
    _add_problem(p)
    p.add_argument("--theorem", choices=["invariance", "localization", "bi-invariance"], required=True)
    p.add_argument("--window", type=float, nargs=2, default=[0.9, 1.1])
    p.add_argument("--z0")
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--cloud", help="CSV file for the Husimi cloud of the last state")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="sweep tables from a run record or a config")
    p.add_argument("--record", help="record.json from an earlier run")
    p.add_argument("--config", dest="run_config", help="experiment config to run first")
    p.add_argument("--kind", choices=["width-scaling", "cluster", "invariance"], required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    ap._oscilab_commands = sub.choices
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    """Options from ``--config FILE`` are injected unless given explicitly."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config or not rest or rest[0] == "report":
        return ap.parse_args(argv)
    data = load_json_arg(known.config)
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    explicit = {t.split("=")[0] for t in rest if t.startswith("--")}
    sub = ap._oscilab_commands.get(rest[0])
    accepted = set(sub._option_string_actions) if sub else set()
    extra = []
    for key, val in data.items():
        flag = "--" + key.replace("_", "-")
        if flag not in accepted:
            flag = "--" + key
        if flag not in accepted or flag in explicit:
            continue
        if isinstance(val, dict):
            extra += [flag, json.dumps(val)]
        elif isinstance(val, list) and key in ("window",):
            extra += [flag, *map(str, val)]
        elif isinstance(val, list):
            extra += [flag, ",".join(map(str, val))]
        else:
            extra += [flag, str(val)]
    return ap.parse_args(["--config", known.config, rest[0], *extra, *rest[1:]])


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"oscilab: invalid input: {exc}", file=sys.stderr)
        return 2
    except (FrequencyError, SymbolError, BasisError, MeasureError) as exc:
        print(f"oscilab: invalid input: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"oscilab: numerical check failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
