"""Command-line front end.

Subcommands map one-to-one onto module operations:

  cell       solve the periodic cell problem, write the effective tensor
  simulate   advance one interacting ensemble, write states and ledgers
  ladder     coupled multi-resolution study with the full diagnostics
  corrector  same engine, reported through the gradient-residual lens
  report     re-render JSON/CSV tables from a stored raw archive

Every run directory receives a deterministic manifest.json (config
digest, seed, per-file sha256) and a volatile run_info.json (wall clock,
environment). Reruns with identical config and seed rewrite the data
files and the manifest byte for byte.

Exit codes: 0 success, 2 configuration rejected, 3 solver failure,
4 archive integrity failure. Failures print one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cell import CellGrid, solve_cell_problem
from .config import RunConfig, parse_config
from .diagnostics import reduce_raw, run_ladder
from .ensemble import Ensemble
from .errors import ConfigError, IntegrityError, ToolkitError
from .grid import ScalarField, field_to_csv
from .integrator import run_ensemble
from .manifest import (
    verify_archive,
    write_manifest,
    write_run_info,
)
from .noise import partial_trace, trace_tail_bound

OUTPUT_ROOT_ENV = "TWOSCALE_OUTPUT_ROOT"

_EXIT_CONFIG = 2
_EXIT_SOLVER = 3
_EXIT_INTEGRITY = 4


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        _emit_error(exc, line=exc.line, field=exc.field)
        return _EXIT_CONFIG
    except IntegrityError as exc:
        _emit_error(exc, digest=exc.digest, path=exc.path)
        return _EXIT_INTEGRITY
    except (ToolkitError, ValueError) as exc:
        _emit_error(exc)
        return _EXIT_SOLVER


def _emit_error(exc: Exception, **extra) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    payload.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twoscale",
        description="oscillating-coefficient stochastic parabolic toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_command(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", required=True,
                       help="path to the INI configuration")
        p.add_argument("-o", "--output", default=None,
                       help="output directory (default: from config, else "
                            f"${OUTPUT_ROOT_ENV} or ./runs)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed from the config")
        return p

    add_run_command("cell", "solve the periodic cell problem") \
        .set_defaults(handler=_cmd_cell)
    add_run_command("simulate", "advance one interacting ensemble") \
        .set_defaults(handler=_cmd_simulate)
    for name, help_text, handler in (
            ("ladder", "coupled resolution-ladder study", _cmd_ladder),
            ("corrector", "gradient-residual study", _cmd_corrector)):
        p = add_run_command(name, help_text)
        p.add_argument("--plot-data", action="store_true",
                       help="also write plot_data.csv with (epsilon, error) "
                            "pairs for external plotting")
        p.set_defaults(handler=handler)

    rep = sub.add_parser("report",
                         help="re-render tables from a stored archive")
    rep.add_argument("-d", "--directory", required=True,
                     help="run directory holding manifest.json and raw data")
    rep.set_defaults(handler=_cmd_report)
    return parser


# ---------------------------------------------------------------------------
# shared plumbing


def _load_config(args) -> tuple[RunConfig, str]:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    cfg = parse_config(text)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(args.seed))
    return cfg, text


def _resolve_output(args, cfg: RunConfig, command: str) -> Path:
    if args.output:
        out = Path(args.output)
    elif cfg.output:
        out = Path(cfg.output)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = root / f"{command}-{cfg.digest()[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out: Path, cfg: RunConfig, text: str, command: str,
            files: list[str], t0: float) -> int:
    snapshot = "config.snapshot.ini"
    (out / snapshot).write_text(text, encoding="utf-8")
    spec = cfg.noise_spec()
    noise_block = {
        "noise": {
            "modes": int(spec.modes),
            "gamma": float(spec.gamma),
            "lambda0": float(spec.lambda0),
            "partial_trace": partial_trace(spec),
            "trace_tail_bound": trace_tail_bound(spec),
        }
    }
    write_manifest(out, cfg.digest(), cfg.seed, sorted(files + [snapshot]),
                   extra=noise_block)
    write_run_info(out, time.time() - t0, command)
    print(str(out))
    return 0


def _dump_json(out: Path, name: str, payload: dict) -> str:
    (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True)
                            + "\n", encoding="utf-8")
    return name


# ---------------------------------------------------------------------------
# subcommands


def _cmd_cell(args) -> int:
    t0 = time.time()
    cfg, text = _load_config(args)
    out = _resolve_output(args, cfg, "cell")
    st = cfg.values["study"]
    coeff = cfg.coefficient()
    cell_grid = CellGrid(dimension=coeff.dimension, cells=st["cell_cells"],
                         tau_slices=st["cell_tau_slices"])
    sol = solve_cell_problem(coeff, cell_grid)
    payload = {
        "family": coeff.family,
        "dimension": coeff.dimension,
        "cells": cell_grid.cells,
        "tau_slices": cell_grid.tau_slices,
        "a_tilde": np.atleast_2d(sol.a_tilde).tolist(),
        "slice_tensors": [np.atleast_2d(m).tolist()
                          for m in sol.slice_tensors],
        "iterations": np.asarray(sol.iterations).tolist(),
        "residuals": np.asarray(sol.residuals).tolist(),
    }
    files = [_dump_json(out, "cell.json", payload)]
    name = "correctors.csv"
    with open(out / name, "w", encoding="utf-8") as fh:
        fh.write(f"# m={cell_grid.cells} N={coeff.dimension} "
                 f"S={cell_grid.tau_slices} order=row-major\n")
        fh.write("slice,direction,index,value\n")
        for s in range(cell_grid.tau_slices):
            for k in range(coeff.dimension):
                flat = sol.correctors[s, k].reshape(-1)
                for i, v in enumerate(flat):
                    fh.write(f"{s},{k},{i},{float(v)!r}\n")
    files.append(name)
    return _finish(out, cfg, text, "cell", files, t0)


def _cmd_simulate(args) -> int:
    t0 = time.time()
    cfg, text = _load_config(args)
    out = _resolve_output(args, cfg, "simulate")
    grid = cfg.grid()
    st = cfg.values["study"]
    eps = st["epsilons"][-1]
    model = cfg.model_for(eps)
    spec = cfg.noise_spec()
    stepper_cfg = cfg.stepper()
    mesh = grid.meshgrid()
    vals = np.full(grid.shape, st["initial_amplitude"])
    for c in mesh:
        vals = vals * np.sin(st["initial_mode"] * np.pi * c)
    u0 = ScalarField(grid, vals)
    members = cfg.values["ensemble"]["members"]
    ens = Ensemble(members=[u0] * members, noise=spec)
    final, ledgers = run_ensemble(ens, model, stepper_cfg)

    files = []
    states = np.stack([m.values for m in final.members])
    np.save(out / "final_states.npy", states)
    files.append("final_states.npy")
    for i, led in enumerate(ledgers):
        name = f"ledger_m{i:03d}.csv"
        led.to_csv(out / name)
        files.append(name)
    name = "final_member000.csv"
    field_to_csv(final.members[0], out / name)
    files.append(name)
    summary = {
        "epsilon": eps,
        "members": members,
        "final_time": final.time,
        "mean_H2": float(np.mean(np.sum(states.reshape(members, -1) ** 2,
                                        axis=-1)) * grid.h ** grid.dimension),
    }
    files.append(_dump_json(out, "simulate.json", summary))
    return _finish(out, cfg, text, "simulate", files, t0)


def _run_study(args, command: str, render) -> int:
    t0 = time.time()
    cfg, text = _load_config(args)
    out = _resolve_output(args, cfg, command)
    result = run_ladder(cfg.study())
    np.savez(out / "raw.npz", **result.raw)
    files = ["raw.npz"] + render(out, result)
    if getattr(args, "plot_data", False):
        files.append(_write_plot_data(out, result.report))
    return _finish(out, cfg, text, command, files, t0)


def _write_plot_data(out: Path, report) -> str:
    lines = ["epsilon,error"]
    for eps, err in zip(report.epsilons, report.errors):
        lines.append(f"{eps!r},{err!r}")
    (out / "plot_data.csv").write_text("\n".join(lines) + "\n",
                                       encoding="utf-8")
    return "plot_data.csv"


def _render_ladder(out: Path, result) -> list[str]:
    report = result.report
    (out / "report.json").write_text(report.to_json() + "\n",
                                     encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    return ["report.json", "report.csv"]


def _render_corrector(out: Path, result) -> list[str]:
    report = result.report
    payload = {
        "epsilons": report.epsilons,
        "plain_gradient": report.plain_gradient,
        "plain_stderr": report.plain_stderr,
        "corrected_gradient": report.corrected_gradient,
        "corrected_stderr": report.corrected_stderr,
        "a_tilde": report.a_tilde,
    }
    return _render_ladder(out, result) + \
        [_dump_json(out, "corrector.json", payload)]


def _cmd_ladder(args) -> int:
    return _run_study(args, "ladder", _render_ladder)


def _cmd_corrector(args) -> int:
    return _run_study(args, "corrector", _render_corrector)


def _cmd_report(args) -> int:
    out = Path(args.directory)
    manifest = verify_archive(out, only=["raw.npz"])
    with np.load(out / "raw.npz") as archive:
        raw = {k: archive[k] for k in archive.files}
    report = reduce_raw(raw)
    (out / "report.json").write_text(report.to_json() + "\n",
                                     encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    if "plot_data.csv" in manifest["files"]:
        _write_plot_data(out, report)
    refreshed = sorted(set(manifest["files"]) | {"report.json", "report.csv"})
    carried = {k: v for k, v in manifest.items()
               if k not in ("toolkit_version", "config_digest", "seed",
                            "files")}
    write_manifest(out, manifest["config_digest"], manifest["seed"],
                   refreshed, extra=carried)
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
