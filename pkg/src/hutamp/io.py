"""Text formats for cubes, matrices, result bundles, and run logs.

Matrix CSV: a one-line header (``M=<int>,T1=<int>,T2=<int>`` for cubes,
``ROWS=<int>,COLS=<int>`` for plain matrices) followed by comma-separated
rows.  Values are written with ``repr`` so a store/load round trip is
bit-exact.

A result bundle is a directory holding ``S.csv``, ``A.csv``, ``omega.json``
(flat name -> number/array map), and ``log.jsonl`` (one JSON object per
turbo iteration).  A truth bundle holds ``S_true.csv``, ``A_true.csv``, and
``meta.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .chains import GmChainParams
from .cube import Abundances, Endmembers, HsiCube
from .errors import InputError
from .mrf import MrfParams
from .priors import NngmParams
from .turbo import ModelParams, UnmixResult


def _format_row(row) -> str:
    return ",".join(repr(float(v)) for v in row)


def _parse_header(line: str, path) -> dict:
    fields = {}
    for part in line.strip().split(","):
        if "=" not in part:
            raise InputError(f"{path}: malformed header field {part!r}")
        key, _, val = part.partition("=")
        try:
            fields[key.strip()] = int(val)
        except ValueError as exc:
            raise InputError(f"{path}: header value {val!r} is not an integer") from exc
    return fields


def _parse_body(lines, n_rows, n_cols, path) -> np.ndarray:
    rows = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != n_cols:
            raise InputError(
                f"{path}: row {i + 1} has {len(parts)} values, expected {n_cols}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise InputError(f"{path}: unparseable numeric in row {i + 1}") from exc
    if len(rows) != n_rows:
        raise InputError(f"{path}: found {len(rows)} rows, header declares {n_rows}")
    return np.array(rows, dtype=float)


def store_cube(path, cube: HsiCube) -> None:
    path = Path(path)
    lines = [f"M={cube.m},T1={cube.t1},T2={cube.t2}"]
    lines += [_format_row(row) for row in cube.data]
    path.write_text("\n".join(lines) + "\n")


def load_cube(path, fmt: str = "csv") -> HsiCube:
    if fmt != "csv":
        raise InputError(f"unsupported cube format {fmt!r} (only 'csv')")
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty file")
    header = _parse_header(lines[0], path)
    for key in ("M", "T1", "T2"):
        if key not in header:
            raise InputError(f"{path}: header missing {key}")
    m, t1, t2 = header["M"], header["T1"], header["T2"]
    data = _parse_body(lines[1:], m, t1 * t2, path)
    return HsiCube(data=data, spatial=(t1, t2))


def store_matrix(path, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines = [f"ROWS={mat.shape[0]},COLS={mat.shape[1]}"]
    lines += [_format_row(row) for row in mat]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty file")
    header = _parse_header(lines[0], path)
    for key in ("ROWS", "COLS"):
        if key not in header:
            raise InputError(f"{path}: header missing {key}")
    return _parse_body(lines[1:], header["ROWS"], header["COLS"], path)


def omega_to_dict(params: ModelParams) -> dict:
    out = {"psi": [float(v) for v in params.psi]}
    out["nngm_omega"] = [[float(v) for v in s.omega] for s in params.nngm]
    out["nngm_theta"] = [[float(v) for v in s.theta] for s in params.nngm]
    out["nngm_phi"] = [[float(v) for v in s.phi] for s in params.nngm]
    out["gm_kappa"] = [g.kappa for g in params.gm]
    out["gm_sigma2"] = [g.sigma2 for g in params.gm]
    out["gm_eta"] = [g.eta for g in params.gm]
    out["mrf_alpha"] = [f.alpha for f in params.mrf]
    out["mrf_beta"] = [f.beta for f in params.mrf]
    return out


def omega_from_dict(d: dict) -> ModelParams:
    n = len(d["gm_kappa"])
    return ModelParams(
        psi=np.asarray(d["psi"], dtype=float),
        nngm=tuple(
            NngmParams(
                omega=np.asarray(d["nngm_omega"][j]),
                theta=np.asarray(d["nngm_theta"][j]),
                phi=np.asarray(d["nngm_phi"][j]),
            )
            for j in range(n)
        ),
        gm=tuple(
            GmChainParams(d["gm_kappa"][j], d["gm_sigma2"][j], d["gm_eta"][j])
            for j in range(n)
        ),
        mrf=tuple(MrfParams(d["mrf_alpha"][j], d["mrf_beta"][j]) for j in range(n)),
    )


def store_result(path, result: UnmixResult) -> None:
    """Write a result bundle directory (spectra, abundances, parameters, log)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    store_matrix(path / "S.csv", result.endmembers.s)
    store_matrix(path / "A.csv", result.abundances.a)
    (path / "omega.json").write_text(json.dumps(omega_to_dict(result.omega), indent=1))
    diag = result.diagnostics
    history = diag.get("params_history", [])
    with open(path / "log.jsonl", "w") as fh:
        for i, res in enumerate(diag.get("residuals", [])):
            entry = {"iteration": i, "residual": float(res)}
            if i < len(history):
                entry["omega"] = omega_to_dict(history[i])
            elif i == len(diag.get("residuals", [])) - 1:
                entry["omega"] = omega_to_dict(result.omega)
            fh.write(json.dumps(entry) + "\n")


def load_result(path) -> tuple[Endmembers, Abundances, ModelParams]:
    path = Path(path)
    s = load_matrix(path / "S.csv")
    a = load_matrix(path / "A.csv")
    omega = omega_from_dict(json.loads((path / "omega.json").read_text()))
    return Endmembers(s=s), Abundances(a=a), omega


def store_truth_bundle(path, cube: HsiCube, s: Endmembers, a: Abundances, meta: dict) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    store_cube(path / "cube.csv", cube)
    store_matrix(path / "S_true.csv", s.s)
    store_matrix(path / "A_true.csv", a.a)
    (path / "meta.json").write_text(json.dumps(meta, indent=1, default=str))


def load_truth_bundle(path) -> tuple[HsiCube, Endmembers, Abundances, dict]:
    path = Path(path)
    cube = load_cube(path / "cube.csv")
    s = Endmembers(s=load_matrix(path / "S_true.csv"))
    a = Abundances(a=load_matrix(path / "A_true.csv"))
    meta = json.loads((path / "meta.json").read_text())
    return cube, s, a, meta
