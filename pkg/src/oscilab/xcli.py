"""Experiment runner: configs, sweeps over (hbar, eps exponent, T), records, tables.

A config is JSON::

    {"spec": "freq.json" | {...}, "V": "V.json" | {...},
     "hbar": [0.1, 0.05], "eps_exponent": [2], "T": [4],
     "z0": [...], "emax": 1.3, "window": [0.9, 1.1],
     "output": "runs/demo", "workers": 1}

Each sweep cell is a pure function of the config and its ``(hbar, alpha, T)``
triple.  Failures are captured per cell so siblings still run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .frequency import FrequencyError, FrequencySpec
from .quantization import (
    BandError,
    BasisError,
    ClusterAmbiguityError,
    HermiteBasisSpec,
    OperatorMatrix,
    basis_for,
    cluster_spectrum,
    quantize,
    spectrum,
)
from .measure_lab import invariance_test
from .quasimode_synth import BumpFunction, QuadratureError, synthesize
from .symbol_algebra import SymbolError, WeylSymbol, average

VERSION = "0.1.0"


class ValidationError(ValueError):
    """Bad input; the CLI maps it to exit status 2."""


class ToleranceError(RuntimeError):
    """A numerical check failed; the CLI maps it to exit status 3."""


NUMERICAL_ERRORS = (ClusterAmbiguityError, QuadratureError, BandError, ArithmeticError, ToleranceError)


def load_json_arg(value, base: Path | None = None):
    """Inline JSON object, or a path to a JSON file (relative to ``base``)."""
    if isinstance(value, dict):
        return value
    text = str(value).strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad inline JSON: {exc}") from exc
    path = Path(text)
    if base is not None and not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def parse_spec(value, base: Path | None = None) -> FrequencySpec:
    try:
        return FrequencySpec.from_json(load_json_arg(value, base))
    except (FrequencyError, KeyError, TypeError) as exc:
        raise ValidationError(f"frequency spec: {exc}") from exc


def parse_symbol(value, base: Path | None = None, d: int | None = None) -> WeylSymbol:
    try:
        data = dict(load_json_arg(value, base))
        if d is not None:
            data.setdefault("d", d)
        sym = WeylSymbol.from_json(data)
    except (SymbolError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"symbol: {exc}") from exc
    if d is not None and sym.d != d:
        raise ValidationError(f"symbol dimension {sym.d} does not match spec dimension {d}")
    return sym


def parse_point(text, d: int) -> np.ndarray:
    try:
        vals = np.array([float(t) for t in str(text).replace(" ", "").split(",")] if not isinstance(text, list) else text, dtype=float)
    except ValueError as exc:
        raise ValidationError(f"bad phase point {text!r}") from exc
    if vals.shape != (2 * d,):
        raise ValidationError(f"phase point needs {2 * d} coordinates")
    return vals


def default_point(spec: FrequencySpec) -> np.ndarray:
    """A point on ``H = 1`` with unequal actions and generic angles."""
    d = spec.d
    share = np.linspace(1.0, 0.4, d)
    E = share / (share @ spec.omega)
    ang = 0.2 + 0.9 * np.arange(d)
    r = np.sqrt(2 * E)
    return np.concatenate([r * np.cos(ang), r * np.sin(ang)])


def window_norm(Vq, H, window) -> float:
    """Operator norm of ``V`` compressed to the ``H``-levels inside ``window``."""
    Hd = np.real(np.diag(H.entries))
    keep = (Hd >= window[0] - 1e-12) & (Hd <= window[1] + 1e-12)
    if not keep.any():
        return 0.0
    block = Vq.entries[np.ix_(keep, keep)]
    return float(np.max(np.abs(np.linalg.eigvalsh(block))))


# ---------------------------------------------------------------- matrices

def save_matrix(path, matrix, basis: HermiteBasisSpec | None = None, tag: str = "") -> None:
    """Binary container: numpy archive holding a JSON header and the data."""
    header = {"basis": basis.to_json() if basis else None, "tag": tag, "format": "dense"}
    if isinstance(matrix, OperatorMatrix):
        header["basis"] = matrix.basis.to_json() if matrix.basis else header["basis"]
        header["tag"] = tag or matrix.symbol_tag
        matrix = matrix.entries
    arrays = {}
    if sp.issparse(matrix):
        M = sp.csr_matrix(matrix)
        header["format"] = "csr"
        header["shape"] = list(M.shape)
        arrays.update(data=M.data, indices=M.indices, indptr=M.indptr)
    else:
        arrays["data"] = np.asarray(matrix)
    np.savez(path, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_matrix(path):
    with np.load(path, allow_pickle=False) as f:
        header = json.loads(str(f["header"]))
        if header["format"] == "csr":
            M = sp.csr_matrix((f["data"], f["indices"], f["indptr"]), shape=tuple(header["shape"]))
        else:
            M = np.array(f["data"])
    return M, header


def save_state(path, vec: np.ndarray, basis: HermiteBasisSpec, meta: dict | None = None) -> None:
    header = {"basis": basis.to_json(), "meta": meta or {}}
    np.savez(path, header=np.array(json.dumps(header, sort_keys=True)), data=np.asarray(vec))


# ---------------------------------------------------------------- configs

@dataclass
class ExperimentConfig:
    spec: FrequencySpec
    V: WeylSymbol
    hbar: list
    eps_exponent: list
    T: list
    z0: np.ndarray
    emax: float = 1.3
    window: tuple = (0.9, 1.1)
    output: str | None = None
    workers: int = 1
    seed: int = 0
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ExperimentConfig":
        for key in ("spec", "V", "hbar", "eps_exponent", "T"):
            if key not in data:
                raise ValidationError(f"config is missing {key!r}")
        spec = parse_spec(data["spec"], base)
        V = parse_symbol(data["V"], base, spec.d)
        sweeps = {}
        for key in ("hbar", "eps_exponent", "T"):
            vals = data[key] if isinstance(data[key], list) else [data[key]]
            if not vals:
                raise ValidationError(f"sweep {key!r} is empty")
            sweeps[key] = [float(v) for v in vals]
        if min(sweeps["hbar"]) <= 0 or min(sweeps["T"]) <= 0:
            raise ValidationError("hbar and T must be positive")
        z0 = parse_point(data["z0"], spec.d) if "z0" in data else default_point(spec)
        window = tuple(float(v) for v in data.get("window", (0.9, 1.1)))
        emax = float(data.get("emax", 1.3))
        if emax < window[1]:
            raise ValidationError("emax must reach the top of the spectral window")
        for hb in sweeps["hbar"]:
            try:
                basis_for(spec.d, hb, emax, spec.omega, degree=2)
            except BasisError as exc:
                raise ValidationError(f"hbar={hb}: {exc}") from exc
        resolved = dict(data)
        resolved["spec"] = spec.to_json()
        resolved["V"] = V.to_json()
        return cls(
            spec, V, sweeps["hbar"], sweeps["eps_exponent"], sweeps["T"], z0, emax, window,
            data.get("output"), int(data.get("workers", 1)), int(data.get("seed", 0)), resolved,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(load_json_arg(str(path)), path.parent)

    def config_hash(self) -> str:
        keys = ("spec", "V", "hbar", "eps_exponent", "T", "z0", "emax", "window", "seed")
        payload = {k: self.raw.get(k) for k in keys}
        payload["z0"] = [float(v) for v in self.z0]
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=float).encode()).hexdigest()

    def cells(self):
        return [(h, a, t) for h in self.hbar for a in self.eps_exponent for t in self.T]


@dataclass
class RunRecord:
    config_hash: str
    cells: list
    versions: dict
    timings: dict

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c.get("error")]

    def payload(self) -> str:
        """Deterministic numeric payload (no timings)."""
        return json.dumps({"config_hash": self.config_hash, "cells": self.cells}, sort_keys=True, indent=1)

    def to_json(self) -> dict:
        return {"config_hash": self.config_hash, "cells": self.cells, "versions": self.versions, "timings": self.timings}

    @classmethod
    def from_json(cls, data: dict) -> "RunRecord":
        return cls(data["config_hash"], data["cells"], data.get("versions", {}), data.get("timings", {}))


def _round(x, digits=12):
    return float(f"{float(x):.{digits}g}")


def _run_cell(cfg: ExperimentConfig, hbar: float, alpha: float, T: float) -> dict:
    spec, V = cfg.spec, cfg.V
    eps = hbar**alpha
    out = {"hbar": hbar, "eps_exponent": alpha, "T": T, "eps": _round(eps)}
    basis = basis_for(spec.d, hbar, cfg.emax, spec.omega, degree=2)
    H = quantize(WeylSymbol.harmonic(spec.omega), basis)
    Vq = quantize(V, basis)
    P = H + Vq * eps
    pairs = spectrum(P, cfg.window, omega=spec.omega)
    out["spectrum"] = [_round(v) for v in pairs.values]
    try:
        rep = cluster_spectrum(P, H, eps, cfg.window, vnorm=window_norm(Vq, H, cfg.window), omega=spec.omega)
        out["clusters"] = [
            {"center": _round(c), "size": n, "width": _round(w), "max_shift": _round(m), "ambiguous": False}
            for c, n, w, m in rep.rows()
        ]
    except ClusterAmbiguityError as exc:
        out["clusters"] = [{"ambiguous": True, "reason": str(exc)}]
    Vavg = average(V, spec)
    q = synthesize(cfg.z0, T, BumpFunction(), Vavg, eps, basis, spec, V=V)
    out["quasimode"] = {
        "lambda": _round(q.lam),
        "width": _round(q.width),
        "width_over_eps_hbar": _round(q.width / (eps * hbar)),
        "pre_norm": _round(q.pre_norm),
    }
    x, xi = WeylSymbol.x, WeylSymbol.xi
    d = spec.d
    observables = {"H1": WeylSymbol.action(0, d), "x1^2": x(0, d) ** 2, "x1*xi1": x(0, d) * xi(0, d)}
    inv = invariance_test(q.state, basis, spec, Vavg, observables, [0.0, np.pi / 2, np.pi], [0.0, T / 4, T / 2])
    out["invariance"] = [[name, _round(t), _round(s_), _round(v, 6)] for name, t, s_, v in inv.rows()]
    return out


def run(cfg: ExperimentConfig) -> RunRecord:
    """Execute every sweep cell; errors are recorded per cell."""
    cells = cfg.cells()
    if not cells:
        raise ValidationError("empty sweep")
    timings = {}

    def task(cell):
        t0 = time.perf_counter()
        try:
            res = _run_cell(cfg, *cell)
        except NUMERICAL_ERRORS as exc:
            res = {"hbar": cell[0], "eps_exponent": cell[1], "T": cell[2], "error": f"{type(exc).__name__}: {exc}", "kind": "numerical"}
        except Exception as exc:  # crash isolation: record and continue
            res = {"hbar": cell[0], "eps_exponent": cell[1], "T": cell[2], "error": f"{type(exc).__name__}: {exc}", "kind": "other"}
        return res, time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(task, cells))
    out = []
    for cell, (res, dt) in zip(cells, results):
        out.append(res)
        timings[f"{cell[0]}/{cell[1]}/{cell[2]}"] = round(dt, 3)
    record = RunRecord(cfg.config_hash(), out, {"oscilab": VERSION, "numpy": np.__version__}, timings)
    if cfg.output:
        root = Path(cfg.output)
        root.mkdir(parents=True, exist_ok=True)
        (root / "record.json").write_text(json.dumps(record.to_json(), sort_keys=True, indent=1))
        (root / "payload.json").write_text(record.payload())
    return record


def _slope(xs, ys) -> float:
    xs, ys = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(xs, ys, 1)[0])


def report(record: RunRecord, kind: str) -> dict:
    """Tables for ``width-scaling``, ``cluster`` or ``invariance``.

    Returns ``{"rows": [...], "columns": [...], "summary": {...}}``.
    """
    cells = [c for c in record.cells if not c.get("error")]
    if kind == "width-scaling":
        cols = ["eps_exponent", "T", "hbar", "width", "eps_hbar", "slope", "expected_slope"]
        rows = []
        groups: dict = {}
        for c in cells:
            groups.setdefault((c["eps_exponent"], c["T"]), []).append(c)
        for (alpha, T), group in sorted(groups.items()):
            group = sorted(group, key=lambda c: c["hbar"])
            hs = [c["hbar"] for c in group]
            ws = [c["quasimode"]["width"] for c in group]
            slope = _slope(hs, ws) if len(group) > 1 else float("nan")
            for c in group:
                rows.append([alpha, T, c["hbar"], c["quasimode"]["width"], c["eps"] * c["hbar"], slope, alpha + 1])
        if not rows:
            raise ValidationError("no completed cells for width scaling")
        return {"columns": cols, "rows": rows, "summary": {"tolerance": 0.4}}
    if kind == "cluster":
        cols = ["hbar", "eps_exponent", "center", "size", "width", "max_shift", "ambiguous"]
        rows = []
        for c in record.cells:
            if c.get("error"):
                continue
            for cl in c["clusters"]:
                if cl.get("ambiguous"):
                    rows.append([c["hbar"], c["eps_exponent"], None, None, None, None, True])
                else:
                    rows.append([c["hbar"], c["eps_exponent"], cl["center"], cl["size"], cl["width"], cl["max_shift"], False])
        if not rows:
            raise ValidationError("no cluster data in record")
        return {"columns": cols, "rows": rows, "summary": {"ambiguous": sum(1 for r in rows if r[-1])}}
    if kind == "invariance":
        cols = ["hbar", "eps_exponent", "T", "observable", "t", "s", "defect"]
        rows = []
        for c in cells:
            for r in c.get("invariance", []):
                rows.append([c["hbar"], c["eps_exponent"], c["T"]] + list(r))
        if not rows:
            raise ValidationError("record has no invariance tables; run verify --theorem bi-invariance")
        return {"columns": cols, "rows": rows, "summary": {"max_defect": max(r[-1] for r in rows)}}
    raise ValidationError(f"unknown report kind {kind!r}")


def to_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table["columns"])
    for row in table["rows"]:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def record_json(record: RunRecord) -> str:
    return json.dumps(asdict(record), sort_keys=True, indent=1)
