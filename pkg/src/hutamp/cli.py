"""Command-line harness: unmixing jobs, model-order selection, synthetic
scenes, Monte-Carlo sweeps, and metric reports.

Subcommands: ``unmix``, ``mos``, ``synth``, ``sweep``, ``metrics``.  Options
can come from ``key=value`` config files (``--config``), with command-line
flags taking precedence.  Exit codes: 0 success, 1 validation error,
2 numeric failure, 3 partial failure (some sweep trials failed).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import fcls, fsnmf_extract
from .bigamp import BigAmpOptions
from .errors import InputError, NumericError, ParameterError, UnmixError
from .io import (
    load_cube,
    load_matrix,
    load_truth_bundle,
    store_result,
    store_truth_bundle,
)
from .metrics import evaluate
from .model_order import MosOptions, dof_count, select_model_order
from .synthetic import SyntheticSpec, gen_synthetic
from .turbo import TurboOptions, unmix

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_PARTIAL = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved command: its name plus validated settings."""

    command: str
    params: dict


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_config_file(path) -> dict:
    out = {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config: no such file: {path}")
    for i, line in enumerate(p.read_text().splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"config line {i + 1}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _turbo_options(args) -> TurboOptions:
    bigamp = BigAmpOptions(max_iters=args.bigamp_iters)
    return TurboOptions(
        max_turbo=args.max_turbo,
        spectral_coherence=args.coherence in ("on", "spectral"),
        spatial_coherence=args.coherence in ("on", "spatial"),
        bigamp=bigamp,
    )


def _log(args, message: str) -> None:
    if not args.quiet:
        print(message)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(
        m=args.m,
        n=args.n,
        t1=args.t1,
        t2=args.t2,
        scene=args.scene,
        abundance=args.abundance,
        k=args.k,
        p=args.p,
        dirichlet_alpha=args.alpha,
        snr_db=args.snr_db,
        seed=args.seed,
        library=load_matrix(args.library) if args.library else None,
    )
    cube, s_true, a_true = gen_synthetic(spec)
    meta = {
        "command": "synth",
        "seed": args.seed,
        "spec": {
            k: v
            for k, v in vars(spec).items()
            if k != "library" and not k.startswith("_")
        },
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    store_truth_bundle(args.out, cube, s_true, a_true, meta)
    _log(args, f"wrote truth bundle to {args.out}")
    return EXIT_OK


def _cmd_unmix(args) -> int:
    cube = load_cube(args.input)
    opts = _turbo_options(args)
    out_dir = Path(args.out)
    if args.mos:
        mos = select_model_order(cube, MosOptions(n_max=args.n_max, turbo=opts))
        result = mos.selected
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = [
            [n, mos.scores[n], mos.rss[n], dof_count(n, cube.m, cube.t, 3)]
            for n in sorted(mos.scores)
        ]
        _write_csv(out_dir / "mos_scores.csv", ["N", "score", "rss", "dof"], rows)
        _log(args, f"selected N={mos.n_hat} (boundary={mos.boundary})")
    else:
        if args.n is None:
            raise ParameterError("n: required unless --mos is given")
        result = unmix(cube, args.n, opts)
    store_result(out_dir, result)
    _log(
        args,
        f"unmix done: {result.diagnostics['turbo_iterations']} turbo iterations, "
        f"residual {result.diagnostics['residuals'][-1]:.4g}",
    )
    return EXIT_OK


def _cmd_mos(args) -> int:
    cube = load_cube(args.input)
    opts = MosOptions(n_min=args.n_min, n_max=args.n_max, turbo=_turbo_options(args))
    mos = select_model_order(cube, opts)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [
        [n, mos.scores[n], mos.rss[n], dof_count(n, cube.m, cube.t, 3)]
        for n in sorted(mos.scores)
    ]
    _write_csv(out_dir / "mos_scores.csv", ["N", "score", "rss", "dof"], rows)
    store_result(out_dir / f"order_{mos.n_hat}", mos.selected)
    (out_dir / "mos.json").write_text(
        json.dumps({"n_hat": mos.n_hat, "boundary": mos.boundary, "flags": {str(k): str(v) for k, v in mos.flags.items()}}, indent=1)
    )
    _log(args, f"selected N={mos.n_hat}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    cube, s_true, a_true, _meta = load_truth_bundle(args.truth)
    s_est = load_matrix(Path(args.result) / "S.csv")
    a_est = load_matrix(Path(args.result) / "A.csv")
    rep = evaluate(s_true.s, s_est, a_true.a, a_est, args.success_db)
    rows = [
        ["nmse_s_db", rep.nmse_s_db],
        ["nmse_a_db", rep.nmse_a_db if rep.nmse_a_db is not None else float("nan")],
        ["sad_avg_deg", rep.sad_avg],
        ["success", int(rep.success)],
    ]
    rows += [[f"sad_deg_{i}", v] for i, v in enumerate(rep.sad_per_material)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["metric", "value"], rows)
    _log(args, f"NMSE_S={rep.nmse_s_db:.2f} dB, mean angle={rep.sad_avg:.3f} deg")
    return EXIT_OK


def _sweep_trial(task):
    """One (cell, trial) evaluation; module-level for use in worker pools."""
    cell, trial_idx, args_dict = task
    seed = int(np.random.default_rng([args_dict["seed"], cell["cell_index"], trial_idx]).integers(2**31))
    row = {
        "k": cell["k"],
        "p": cell["p"],
        "snr_db": cell["snr_db"],
        "alpha": cell["alpha"],
        "trial": trial_idx,
        "seed": seed,
        "algo": args_dict["algo"],
    }
    try:
        spec = SyntheticSpec(
            m=args_dict["m"],
            n=args_dict["n"],
            t1=args_dict["t1"],
            t2=args_dict["t2"],
            scene=args_dict["scene"],
            abundance=args_dict["abundance"],
            k=cell["k"],
            p=cell["p"],
            dirichlet_alpha=cell["alpha"],
            snr_db=cell["snr_db"],
            seed=seed,
        )
        cube, s_true, a_true = gen_synthetic(spec)
        if args_dict["algo"] == "hutamp":
            opts = TurboOptions(
                max_turbo=args_dict["max_turbo"],
                spectral_coherence=args_dict["coherence"] in ("on", "spectral"),
                spatial_coherence=args_dict["coherence"] in ("on", "spatial"),
                bigamp=BigAmpOptions(max_iters=args_dict["bigamp_iters"]),
            )
            res = unmix(cube, args_dict["n"], opts)
            s_est, a_est = res.endmembers.s, res.abundances.a
        elif args_dict["algo"] == "fsnmf_fcls":
            s_hat = fsnmf_extract(cube, args_dict["n"], denoise=True)
            s_est, a_est = s_hat.s, fcls(cube, s_hat).a
        else:
            raise ParameterError(f"algo: unknown value {args_dict['algo']!r}")
        rep = evaluate(s_true.s, s_est, a_true.a, a_est, args_dict["success_db"])
        row.update(
            nmse_s_db=rep.nmse_s_db,
            nmse_a_db=rep.nmse_a_db,
            sad_avg_deg=rep.sad_avg,
            success=int(rep.success),
            status="ok",
        )
    except UnmixError as exc:
        row.update(
            nmse_s_db=float("nan"),
            nmse_a_db=float("nan"),
            sad_avg_deg=float("nan"),
            success=0,
            status=f"failed:{type(exc).__name__}",
        )
    return row


def _cmd_sweep(args) -> int:
    k_grid = args.k_grid or [args.k]
    p_grid = args.p_grid or [args.p]
    snr_grid = args.snr_grid or [args.snr_db]
    alpha_grid = args.alpha_grid or [args.alpha]
    cells = []
    for k in k_grid:
        for p in p_grid:
            for snr in snr_grid:
                for alpha in alpha_grid:
                    cells.append(
                        {
                            "cell_index": len(cells),
                            "k": k,
                            "p": p,
                            "snr_db": snr,
                            "alpha": alpha,
                        }
                    )
    args_dict = {
        "seed": args.seed,
        "m": args.m,
        "n": args.n,
        "t1": args.t1,
        "t2": args.t2,
        "scene": args.scene,
        "abundance": args.abundance,
        "algo": args.algo,
        "coherence": args.coherence,
        "max_turbo": args.max_turbo,
        "bigamp_iters": args.bigamp_iters,
        "success_db": args.success_db,
    }
    tasks = [(cell, t, args_dict) for cell in cells for t in range(args.trials)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_trial, tasks))
    else:
        rows = [_sweep_trial(task) for task in tasks]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = [
        "k", "p", "snr_db", "alpha", "trial", "seed", "algo",
        "nmse_s_db", "nmse_a_db", "sad_avg_deg", "success", "status",
    ]
    _write_csv(out_dir / "results.csv", header, [[r[h] for h in header] for r in rows])

    agg_rows = []
    n_failed = 0
    for cell in cells:
        sub = [
            r
            for r in rows
            if (r["k"], r["p"], r["snr_db"], r["alpha"])
            == (cell["k"], cell["p"], cell["snr_db"], cell["alpha"])
        ]
        ok = [r for r in sub if r["status"] == "ok"]
        n_failed += len(sub) - len(ok)
        nmse_s = np.array([r["nmse_s_db"] for r in ok]) if ok else np.array([np.nan])
        nmse_a = np.array([r["nmse_a_db"] for r in ok]) if ok else np.array([np.nan])
        agg_rows.append(
            [
                cell["k"], cell["p"], cell["snr_db"], cell["alpha"], args.algo,
                len(sub), len(sub) - len(ok),
                float(np.mean([r["success"] for r in sub])) if sub else 0.0,
                float(np.median(nmse_s)), float(np.mean(nmse_s)),
                float(np.median(nmse_a)), float(np.mean(nmse_a)),
            ]
        )
    _write_csv(
        out_dir / "aggregate.csv",
        [
            "k", "p", "snr_db", "alpha", "algo", "trials", "failed",
            "success_rate", "nmse_s_db_median", "nmse_s_db_mean",
            "nmse_a_db_median", "nmse_a_db_mean",
        ],
        agg_rows,
    )
    (out_dir / "meta.json").write_text(
        json.dumps(
            {"config": args_dict, "cells": len(cells), "trials": args.trials,
             "finished": time.strftime("%Y-%m-%dT%H:%M:%S")},
            indent=1,
        )
    )
    _log(args, f"sweep finished: {len(rows)} rows, {n_failed} failures")
    return EXIT_PARTIAL if n_failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hutamp", description="Joint hyperspectral unmixing harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=str, required=True)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--max-turbo", type=int, default=20)
        p.add_argument("--bigamp-iters", type=int, default=600)
        p.add_argument("--coherence", choices=["on", "off", "spectral", "spatial"], default="on")

    def add_scene(p):
        p.add_argument("--m", type=int, default=50)
        p.add_argument("--n", type=int, default=3)
        p.add_argument("--t1", type=int, default=20)
        p.add_argument("--t2", type=int, default=20)
        p.add_argument("--scene", default="iid_endmembers",
                       choices=["iid_endmembers", "library_endmembers", "pure_strips"])
        p.add_argument("--abundance", default="k_sparse_p_pure",
                       choices=["k_sparse_p_pure", "dirichlet_full", "strips"])
        p.add_argument("--k", type=int, default=1)
        p.add_argument("--p", type=int, default=0)
        p.add_argument("--alpha", type=float, default=1.0)
        p.add_argument("--snr-db", type=float, default=None)

    p = sub.add_parser("synth", help="generate a synthetic truth bundle")
    add_shared(p)
    add_scene(p)
    p.add_argument("--library", type=str, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("unmix", help="run one unmixing job")
    add_shared(p)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--mos", action="store_true")
    p.add_argument("--n-max", type=int, default=None)
    p.set_defaults(func=_cmd_unmix)

    p = sub.add_parser("mos", help="select the number of materials")
    add_shared(p)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=None)
    p.set_defaults(func=_cmd_mos)

    p = sub.add_parser("metrics", help="score a result bundle against truth")
    add_shared(p)
    p.add_argument("--truth", type=str, required=True)
    p.add_argument("--result", type=str, required=True)
    p.add_argument("--success-db", type=float, default=-40.0)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over scene grids")
    add_shared(p)
    add_scene(p)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--algo", choices=["hutamp", "fsnmf_fcls"], default="hutamp")
    p.add_argument("--k-grid", type=_int_list, default=None)
    p.add_argument("--p-grid", type=_int_list, default=None)
    p.add_argument("--snr-grid", type=_float_list, default=None)
    p.add_argument("--alpha-grid", type=_float_list, default=None)
    p.add_argument("--success-db", type=float, default=-40.0)
    p.set_defaults(func=_cmd_sweep)

    return parser


def _apply_config(parser, argv):
    """Parse once to find --config, then re-parse with file values as defaults."""
    ns, _ = parser.parse_known_args(argv)
    if getattr(ns, "config", None):
        file_vals = _read_config_file(ns.config)
        sub_parser = None
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                sub_parser = action.choices[ns.command]
        known = {a.dest for a in sub_parser._actions}
        unknown = set(file_vals) - known
        if unknown:
            raise ParameterError(f"config key not recognized: {sorted(unknown)[0]}")
        converted = {}
        for key, raw in file_vals.items():
            action = next(a for a in sub_parser._actions if a.dest == key)
            if action.type is not None:
                converted[key] = action.type(raw)
            elif isinstance(action, (argparse._StoreTrueAction,)):
                converted[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                converted[key] = raw
        sub_parser.set_defaults(**converted)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (InputError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UnmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
