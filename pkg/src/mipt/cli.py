"""Command-line front end: YAML run configs, CSV result tables, analysis commands.

Example config::

    simulation:
      dt: 0.01
      t_burn: 20          # omit for max(20, 10/lambda^2)
      sample_interval: 1.0
      n_steady_samples: 100
      n_realizations: 100
      master_seed: 1
      record_tmi: true
    grid:
      L: [8, 12]
      lambda: [0.2, 0.4, 0.6]
      xi_r: [1.3]
      xi_s: [0.0]
    output:
      directory: results
      checkpoint: true
    threads: 4
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .analysis import (
    AnalysisError,
    data_collapse,
    extrapolate_linear,
    tmi_crossing_estimate,
    variance_peak_estimate,
)
from .trajectory import EnsembleResult, SimParams, default_threads, point_seed, sweep

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("L", "lambda", "xi_r", "xi_s", "mean_S", "stderr_S", "var_S", "stderr_var",
                  "mean_tmi", "stderr_tmi", "n_effective")
_INT_COLUMNS = {"L", "n_effective"}

_SIM_KEYS = {
    "dt": float, "t_max": float, "t_burn": float, "sample_interval": float,
    "n_steady_samples": int, "n_realizations": int, "master_seed": int, "record_tmi": bool,
}
_GRID_KEYS = {"L": int, "lambda": float, "xi_r": float, "xi_s": float}
_OUTPUT_KEYS = {"directory": str, "table": str, "checkpoint": bool}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    L: list
    lambdas: list
    xi_r: list
    xi_s: list
    simulation: dict = field(default_factory=dict)
    output_dir: str = "results"
    table: str = "results.csv"
    checkpoint: bool = True
    threads: Optional[int] = None

    @property
    def master_seed(self) -> int:
        return int(self.simulation.get("master_seed", 0))

    def grid(self) -> list[SimParams]:
        """One SimParams per grid point, each with its own seed derived from the master seed."""
        sim = {k: v for k, v in self.simulation.items() if k != "master_seed"}
        out = []
        for L, lam, xr, xs in itertools.product(self.L, self.lambdas, self.xi_r, self.xi_s):
            seed = point_seed(self.master_seed, L, lam, xr, xs)
            out.append(SimParams(L=L, xi_r=xr, xi_s=xs, lam=lam, master_seed=seed, **sim))
        return out

    def config_hash(self) -> str:
        d = asdict(self)
        d.pop("threads")  # scheduling does not change results
        blob = json.dumps({"config": d, "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line(node) -> int:
    return node.start_mark.line + 1


def _mapping(node, where, src):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{src}:{_line(node)}: '{where}' must be a mapping")
    return {k.value: (k, v) for k, v in node.value}


def _convert(raw, kind, where, node, src):
    if raw is None:
        return None
    try:
        if kind is bool:
            if not isinstance(raw, bool):
                raise TypeError
            return raw
        if kind is int and (isinstance(raw, bool) or float(raw) != int(raw)):
            raise TypeError
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{src}:{_line(node)}: {where}: expected {kind.__name__}, got {raw!r}") from None


def load_config(path) -> RunConfig:
    """Parse and validate a run config; errors name the file, line and field."""
    src = str(path)
    text = Path(path).read_text()
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{src}: malformed YAML: {exc}") from None
    if root is None:
        raise ConfigError(f"{src}: empty config")
    data = yaml.safe_load(text)
    top = _mapping(root, "<top level>", src)
    for key, (knode, _) in top.items():
        if key not in ("simulation", "grid", "output", "threads"):
            raise ConfigError(f"{src}:{_line(knode)}: unknown section '{key}'")
    if "grid" not in top:
        raise ConfigError(f"{src}: missing 'grid' section")

    def section(name, schema):
        if name not in top:
            return {}
        nodes = _mapping(top[name][1], name, src)
        out = {}
        for key, (knode, vnode) in nodes.items():
            if key not in schema:
                raise ConfigError(f"{src}:{_line(knode)}: {name}.{key}: unknown field")
            raw = data[name][key]
            if name == "grid":
                items = raw if isinstance(raw, list) else [raw]
                vnodes = vnode.value if isinstance(vnode, yaml.SequenceNode) else [vnode]
                if not items:
                    raise ConfigError(f"{src}:{_line(vnode)}: grid.{key}: must not be empty")
                out[key] = [_convert(v, schema[key], f"grid.{key}[{i}]", n, src)
                            for i, (v, n) in enumerate(zip(items, vnodes))]
            else:
                out[key] = _convert(raw, schema[key], f"{name}.{key}", vnode, src)
        return out

    grid = section("grid", _GRID_KEYS)
    for key in _GRID_KEYS:
        if key not in grid:
            raise ConfigError(f"{src}:{_line(top['grid'][0])}: grid.{key}: missing")
    sim = {k: v for k, v in section("simulation", _SIM_KEYS).items() if v is not None}
    outp = section("output", _OUTPUT_KEYS)
    threads = None
    if "threads" in top:
        threads = _convert(data["threads"], int, "threads", top["threads"][1], src)
        if threads is not None and threads < 1:
            raise ConfigError(f"{src}:{_line(top['threads'][1])}: threads: must be >= 1")

    gnodes = _mapping(top["grid"][1], "grid", src)
    lnode = gnodes["L"][1]
    for i, L in enumerate(grid["L"]):
        n = lnode.value[i] if isinstance(lnode, yaml.SequenceNode) else lnode
        if L < 2 or L % 2:
            raise ConfigError(f"{src}:{_line(n)}: grid.L[{i}]: L must be even and >= 2, got {L}")
        if sim.get("record_tmi") and L % 4:
            raise ConfigError(f"{src}:{_line(n)}: grid.L[{i}]: TMI needs L divisible by 4, got {L}")
    cfg = RunConfig(L=grid["L"], lambdas=grid["lambda"], xi_r=grid["xi_r"], xi_s=grid["xi_s"],
                    simulation=sim, threads=threads)
    for key, attr in (("directory", "output_dir"), ("table", "table"), ("checkpoint", "checkpoint")):
        if outp.get(key) is not None:
            setattr(cfg, attr, outp[key])
    try:
        cfg.grid()
    except ValueError as exc:
        raise ConfigError(f"{src}: invalid parameters: {exc}") from None
    return cfg


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def result_row(res: EnsembleResult) -> dict:
    p = res.params
    return {"L": p.L, "lambda": p.lam, "xi_r": p.xi_r, "xi_s": p.xi_s, "mean_S": res.mean_S,
            "stderr_S": res.stderr_S, "var_S": res.var_S, "stderr_var": res.stderr_var,
            "mean_tmi": res.mean_tmi, "stderr_tmi": res.stderr_tmi, "n_effective": res.n_effective}


def write_table(path, rows: Sequence[dict], columns: Sequence[str], meta: Optional[dict] = None) -> None:
    """CSV with a ``# key: value`` header block; floats written with ``repr`` so they re-read exactly."""
    with Path(path).open("w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_table(path):
    """Returns ``(meta, columns)`` with each column as a numpy array."""
    meta, lines = {}, []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif line.strip():
                lines.append(line)
    if not lines:
        raise AnalysisError(f"{path}: no table found")
    reader = csv.reader(lines)
    header = next(reader)
    body = [r for r in reader]
    cols = {}
    for i, name in enumerate(header):
        try:
            vals = [float(r[i]) for r in body]
        except (ValueError, IndexError):
            raise AnalysisError(f"{path}: column '{name}' is not numeric on every row") from None
        cols[name] = np.array(vals, dtype=int if name in _INT_COLUMNS else float)
    return meta, cols


def write_results(path, results: Sequence[EnsembleResult], cfg: RunConfig) -> None:
    meta = {"mipt results": "", "version": __version__, "config_hash": cfg.config_hash(),
            "master_seed": cfg.master_seed}
    write_table(path, [result_row(r) for r in results], RESULT_COLUMNS, meta)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.simulation["master_seed"] = args.seed
            cfg.grid()
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    threads = args.threads or cfg.threads or default_threads()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    ck = out / f"checkpoint-{cfg.config_hash()}.jsonl" if cfg.checkpoint else None

    def progress(k, n, res):
        p = res.params
        print(f"[{k + 1}/{n}] L={p.L} lambda={p.lam:g} xi_r={p.xi_r:g} xi_s={p.xi_s:g} "
              f"S={res.mean_S:.4f} var={res.var_S:.3g}", file=sys.stderr, flush=True)

    results = sweep(grid, checkpoint=ck, threads=threads, progress=progress)
    table = out / cfg.table
    write_results(table, results, cfg)
    print(str(table))
    bad = [r for r in results if r.aborted]
    for r in bad:
        print(f"error: {len(r.aborted)} aborted realization(s) at {r.params}", file=sys.stderr)
    return 1 if bad else 0


def _require(cols, names, path):
    missing = [n for n in names if n not in cols]
    if missing:
        raise AnalysisError(f"{path}: missing column(s) {', '.join(missing)}")


def _select_line(cols, args, path):
    """Restrict a results table to one (xi_r, xi_s) line."""
    mask = np.ones(cols["L"].size, dtype=bool)
    for name in ("xi_r", "xi_s"):
        want = getattr(args, name)
        if name in cols and want is not None:
            mask &= np.isclose(cols[name], want)
    for name in ("xi_r", "xi_s"):
        if name in cols and np.unique(cols[name][mask]).size > 1:
            raise AnalysisError(f"{path}: several {name} values present; pick one with --{name.replace('_', '-')}")
    if not mask.any():
        raise AnalysisError(f"{path}: no rows match the --xi-r/--xi-s selection")
    return {k: v[mask] for k, v in cols.items()}


def _curves(cols, y, e):
    out = {}
    for L in np.unique(cols["L"]):
        sel = cols["L"] == L
        order = np.argsort(cols["lambda"][sel])
        out[int(L)] = tuple(cols[c][sel][order] for c in ("lambda", y, e))
    return out


def cmd_analyze(args) -> int:
    path = args.table
    rng = np.random.default_rng(args.rng_seed)
    try:
        _, cols = read_table(path)
        kind = args.kind
        if kind == "extrapolate":
            _require(cols, ("x", "y", "yerr"), path)
            c, e = extrapolate_linear(cols["x"], cols["y"], cols["yerr"])
            record = {"intercept": c, "error": e}
        elif kind in ("peak", "crossing"):
            y, e = ("var_S", "stderr_var") if kind == "peak" else ("mean_tmi", "stderr_tmi")
            _require(cols, ("L", "lambda", y, e), path)
            cols = _select_line(cols, args, path)
            curves = _curves(cols, y, e)
            fn = variance_peak_estimate if kind == "peak" else tmi_crossing_estimate
            if kind == "peak" and len(curves) == 1:
                (L,) = curves
                est = variance_peak_estimate({L: curves[L], L + 1: curves[L]}, args.domain, args.nboot, rng)
                r = est.inputs[0]
                record = {"L": L, "lambda_max": r["lambda_max"], "error": r["error"]}
            else:
                record = fn(curves, args.domain, args.nboot, rng).to_dict()
        elif kind == "collapse":
            if args.lambda_c is None:
                raise AnalysisError("collapse needs --lambda-c")
            _require(cols, ("L", "lambda", "mean_S", "stderr_S"), path)
            cols = _select_line(cols, args, path)
            rows = zip(cols["L"], cols["lambda"], cols["mean_S"], cols["stderr_S"])
            res = data_collapse(list(rows), args.lambda_c)
            prof = Path(args.profile) if args.profile else Path(path).with_name(Path(path).stem + "_collapse_profile.csv")
            write_table(prof, [{"nu": a, "chi2": b} for a, b in res.chi2_profile], ("nu", "chi2"),
                        {"lambda_c": repr(float(args.lambda_c)), "version": __version__})
            record = {"nu": res.nu, "nu_band": list(res.nu_error_band), "chi2_min": res.chi2_min,
                      "lambda_c": args.lambda_c, "s_critical": {str(k): v for k, v in res.s_critical.items()},
                      "profile": str(prof)}
        else:  # pragma: no cover - argparse restricts choices
            raise AnalysisError(f"unknown analysis '{kind}'")
    except (AnalysisError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mipt", description="Monitored noisy Heisenberg chain: trajectories and transition analysis.",
                                 formatter_class=argparse.RawDescriptionHelpFormatter, epilog=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a parameter sweep from a YAML config",
                         formatter_class=argparse.RawDescriptionHelpFormatter,
                         epilog="simulation defaults: dt=0.01, t_burn=max(20, 10/lambda^2) capped at t_max/2, "
                                "t_max=t_burn+(n_steady_samples+1)*sample_interval, sample_interval=1.0, "
                                "n_steady_samples=100, n_realizations=100, master_seed=0, record_tmi=false; "
                                "output: directory=results, table=results.csv, checkpoint=true; "
                                "threads from --threads, the config, or MIPT_THREADS (default 1).")
    run.add_argument("config")
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--seed", type=int, default=None, help="override simulation.master_seed")
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", help="extract lambda_c or nu from a results table")
    an.add_argument("kind", choices=("peak", "crossing", "extrapolate", "collapse"))
    an.add_argument("table")
    an.add_argument("--domain", nargs=2, type=float, metavar=("LO", "HI"), default=None)
    an.add_argument("--nboot", type=int, default=1000)
    an.add_argument("--lambda-c", type=float, default=None)
    an.add_argument("--xi-r", type=float, default=None)
    an.add_argument("--xi-s", type=float, default=None)
    an.add_argument("--rng-seed", type=int, default=0, help="bootstrap seed")
    an.add_argument("--output", default=None, help="also write the JSON record here")
    an.add_argument("--profile", default=None, help="collapse: path for the chi^2(nu) table")
    an.set_defaults(func=cmd_analyze)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
