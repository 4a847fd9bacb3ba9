"""Command-line front end.

Subcommands
-----------
analyze     analytic CDF and Chernoff tail bound on an s-grid
simulate    full-scale Monte Carlo sample batch
fit         build (and cache) the synthetic model
synth       synthetic sample batch
compare     ECDFs, DKW band, two-sample KS and Q-Q pairs for two batches
elementary  curves for the two elementary modules

Exit codes: 0 success, 2 configuration error, 3 numerical instability,
4 fit failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bb84_analysis import analysis
from .config import HardwareConfig, ShiftedExp, baseline
from .elementary import (DiffCutoffModel, DiffCutoffParams, Example1Params, ex1_bound, ex1_prior_reference,
                         ex1_sharper_condition, t_star)
from .errors import ConfigError, FitFailureError, NumericalInstabilityError, ParameterError
from .sim_full import TAG_PILOT, SampleBatch, sample_bb84_fast, sample_rng, simulate_batch
from .sim_synth import SynthModel, synth_batch
from .stats import auto_grid, dkw_band, dkw_halfwidth, ecdf, ks_two_sample, qq_pairs
from .transforms import invert_laplace_cdf

log = logging.getLogger("bb84time")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FIT = 0, 2, 3, 4
DKW_DELTA = 0.01


@dataclass
class ExperimentConfig:
    hardware: HardwareConfig
    seed: int = 12345
    samples: int = 10_000
    s_grid: list | None = None
    t_grid: list | None = None
    workers: int = 1
    output_dir: str = "out"
    nodes: int | None = None
    method: str = "euler"
    chernoff_grid: int = 64
    synth_d: int = 7
    model_path: str | None = None

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for name in ("s_grid", "t_grid"):
            g = getattr(self, name)
            if g is not None and (len(g) == 0 or np.any(np.diff(g) <= 0)):
                raise ConfigError(f"{name} must be strictly increasing")
        if self.method not in ("euler", "talbot"):
            raise ConfigError("method must be euler or talbot")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        hw = doc.pop("hardware", None)
        hardware = HardwareConfig.from_dict(hw) if isinstance(hw, dict) else baseline()
        known = set(cls.__dataclass_fields__) - {"hardware"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown experiment fields: {sorted(extra)}")
        return cls(hardware=hardware, **doc)


HW_FLAGS = {
    "n": int, "alpha": float, "beta": float, "p_gen": float, "p_swap": float,
    "w0": float, "t_c": float, "t_de": float, "t_da": float,
}
PHASES = ("gen", "com", "swap", "ab")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment document")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--s-grid", help="comma-separated increasing s values")
    p.add_argument("--nodes", type=int, help="inversion terms/nodes")
    p.add_argument("--method", choices=("euler", "talbot"))
    p.add_argument("--chernoff-grid", type=int)
    p.add_argument("--d", dest="synth_d", type=int, help="Coxian phase count")
    p.add_argument("--model", dest="model_path", help="synthetic model cache (JSON)")
    for k, typ in HW_FLAGS.items():
        p.add_argument("--" + k.replace("_", "-"), dest="hw_" + k, type=typ)
    for ph in PHASES:
        p.add_argument(f"--{ph}-rate", dest=f"hw_{ph}_rate", type=float)
        p.add_argument(f"--{ph}-shift", dest=f"hw_{ph}_shift", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bb84time", description="Completion-time analysis of BB84 over one repeater.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, hlp in (("analyze", "analytic CDF and Chernoff bound"),
                      ("simulate", "full-scale sample batch"),
                      ("fit", "build the synthetic model"),
                      ("synth", "synthetic sample batch"),
                      ("compare", "compare batches with the analytic CDF")):
        _add_common(sub.add_parser(name, help=hlp))
    cp = sub.choices["compare"]
    cp.add_argument("--full", help="full-scale samples CSV (simulated if omitted)")
    cp.add_argument("--synth", help="synthetic samples CSV (simulated if omitted)")
    ep = sub.add_parser("elementary", help="elementary-module curves")
    ep.add_argument("--out", dest="output_dir", default="out")
    ep.add_argument("--lam", type=float, default=1.0)
    ep.add_argument("--p", type=float, default=0.5)
    ep.add_argument("--s-max", type=float, default=300.0)
    ep.add_argument("--points", type=int, default=60)
    ep.add_argument("--dc-lam", type=float, default=2.0)
    ep.add_argument("--dc-a", type=float, default=0.5)
    ep.add_argument("--dc-p", type=float, default=0.3)
    ep.add_argument("--dc-tau", type=float, default=1.0)
    ep.add_argument("--chernoff-grid", type=int, default=64)
    return ap


def resolve_config(args) -> ExperimentConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    exp = ExperimentConfig.from_dict(doc)
    hw = exp.hardware.to_dict()
    for k in HW_FLAGS:
        v = getattr(args, "hw_" + k, None)
        if v is not None:
            hw[k] = v
    for ph in PHASES:
        for part in ("rate", "shift"):
            v = getattr(args, f"hw_{ph}_{part}", None)
            if v is not None:
                hw[ph] = dict(hw[ph], **{part: v})
    changes = {"hardware": HardwareConfig.from_dict(hw)}
    for k in ("seed", "samples", "workers", "output_dir", "nodes", "method", "chernoff_grid", "synth_d", "model_path"):
        v = getattr(args, k, None)
        if v is not None:
            changes[k] = v
    if getattr(args, "s_grid", None):
        try:
            changes["s_grid"] = [float(x) for x in args.s_grid.split(",")]
        except ValueError:
            raise ConfigError("s-grid must be a comma-separated list of numbers") from None
    return replace(exp, **changes)


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows, exp: ExperimentConfig | None = None):
    """UTF-8 CSV; every row carries the config hash and seed."""
    tag = [] if exp is None else [exp.hardware.config_hash(), exp.seed]
    cols = list(header) + ([] if exp is None else ["config_hash", "seed"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) for v in list(r) + tag])


def write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_meta(out: Path, name: str, exp: ExperimentConfig | None, t0: float, extra=None):
    doc = {"command": name, "runtime_s": time.time() - t0, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
           "version": __version__}
    if exp is not None:
        doc.update(config_hash=exp.hardware.config_hash(), seed=exp.seed, hardware=exp.hardware.to_dict(),
                   notes=list(exp.hardware.notes))
    doc.update(extra or {})
    write_json(out / f"{name}.meta.json", doc)


def read_samples(path: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "total_time" not in rows[0]:
        raise ConfigError(f"{path} is not a sample file")
    return np.array([float(r["total_time"]) for r in rows])


def _out(exp) -> Path:
    p = Path(exp.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- commands

def pilot_grid(exp: ExperimentConfig, points: int = 20, pilot: int = 1000) -> np.ndarray:
    cfg = exp.hardware
    x = [sample_bb84_fast(cfg, sample_rng(exp.seed, i, TAG_PILOT)).total_time for i in range(pilot)]
    return auto_grid(cfg.floor, x, points)


def s_grid(exp: ExperimentConfig) -> np.ndarray:
    return np.asarray(exp.s_grid, float) if exp.s_grid is not None else pilot_grid(exp)


def analytic_columns(exp: ExperimentConfig, grid):
    """``(cdf, chernoff, flag)`` per grid point; unstable points are flagged."""
    an = analysis(exp.hardware)
    ev = an.W_evaluator()
    cdf, flag = [], []
    for s in grid:
        try:
            cdf.append(invert_laplace_cdf(ev, s, exp.method, exp.nodes, cross_check=True))
            flag.append("")
        except NumericalInstabilityError as exc:
            log.warning("%s", exc)
            cdf.append(math.nan)
            flag.append("instability")
    cdf = np.array(cdf)
    # flag points where the inverted CDF drops below an earlier value
    run = -math.inf
    for i, v in enumerate(cdf):
        if math.isnan(v):
            continue
        if v < run - 1e-4:
            flag[i] = flag[i] or "nonmonotone"
        run = max(run, v)
    chern = an.chernoff_W_v1(np.asarray(grid, float), exp.chernoff_grid)
    return cdf, np.atleast_1d(chern), flag


def cmd_analyze(exp: ExperimentConfig):
    t0 = time.time()
    out = _out(exp)
    grid = s_grid(exp)
    cdf, chern, flag = analytic_columns(exp, grid)
    write_csv(out / "analyze.csv", ["s", "cdf", "chernoff_ccdf", "flag"], zip(grid, cdf, chern, flag), exp)
    write_meta(out, "analyze", exp, t0, {"abscissa_W": analysis(exp.hardware).abscissa_W,
                                          "unstable_points": int(sum(bool(f) for f in flag))})
    return EXIT_NUMERIC if any(flag) else EXIT_OK


def _write_batch(out: Path, name: str, b: SampleBatch, exp: ExperimentConfig):
    rows = zip(range(b.size), b.attempts, b.times, b.draws)
    write_csv(out / f"{name}.csv", ["sample_id", "n_attempts", "total_time", "draws_used"], rows, exp)


def cmd_simulate(exp: ExperimentConfig):
    t0 = time.time()
    out = _out(exp)
    b = simulate_batch(exp.hardware, exp.seed, exp.samples, exp.workers)
    _write_batch(out, "samples_full", b, exp)
    write_meta(out, "simulate", exp, t0, {"samples": b.size, "mean_draws": b.mean_draws, "workers": exp.workers})
    return EXIT_OK


def load_or_fit(exp: ExperimentConfig) -> SynthModel:
    path = Path(exp.model_path) if exp.model_path else None
    if path is not None and path.exists():
        return SynthModel.from_json(path.read_text(), exp.hardware)
    model = SynthModel.build(exp.hardware, exp.synth_d)
    for kind, rep in model.reports.items():
        log.info("%s fit: %s", kind, rep.summary())
    if path is not None:
        path.write_text(model.to_json(), encoding="utf-8")
    return model


def cmd_fit(exp: ExperimentConfig):
    t0 = time.time()
    out = _out(exp)
    model = load_or_fit(exp)
    (out / "model.json").write_text(model.to_json(), encoding="utf-8")
    write_meta(out, "fit", exp, t0, {k: r.summary() for k, r in model.reports.items()})
    return EXIT_OK


def cmd_synth(exp: ExperimentConfig):
    t0 = time.time()
    out = _out(exp)
    model = load_or_fit(exp)
    b = synth_batch(model, exp.hardware, exp.seed, exp.samples, exp.workers)
    _write_batch(out, "samples_synth", b, exp)
    write_meta(out, "synth", exp, t0, {"samples": b.size, "mean_draws": b.mean_draws})
    return EXIT_OK


def cmd_compare(exp: ExperimentConfig, full=None, synth=None):
    t0 = time.time()
    out = _out(exp)
    xf = read_samples(full) if full else simulate_batch(exp.hardware, exp.seed, exp.samples, exp.workers).times
    xs = read_samples(synth) if synth else synth_batch(load_or_fit(exp), exp.hardware, exp.seed, exp.samples,
                                                       exp.workers).times
    grid = s_grid(exp)
    cdf, chern, flag = analytic_columns(exp, grid)
    ef, lo, hi = dkw_band(xf, grid, DKW_DELTA)
    es = ecdf(xs, grid)
    write_csv(out / "tail_report.csv",
              ["s", "analytic_cdf", "chernoff_ccdf", "ecdf_full", "ecdf_synth", "band_lo", "band_hi", "flag"],
              zip(grid, cdf, chern, ef, es, lo, hi, flag), exp)
    pc, qf, qs = qq_pairs(xf, xs)
    write_csv(out / "qq.csv", ["percentile", "q_full", "q_synth"], zip(pc, qf, qs), exp)
    ks = ks_two_sample(xf, xs, DKW_DELTA)
    inside = int(np.sum((cdf >= lo) & (cdf <= hi)))
    write_json(out / "ks.json", dict(ks.to_dict(), n_full=int(xf.size), n_synth=int(xs.size),
                                     config_hash=exp.hardware.config_hash(), seed=exp.seed,
                                     band="DKW", band_delta=DKW_DELTA, band_halfwidth=dkw_halfwidth(xf.size, DKW_DELTA),
                                     analytic_inside_band=inside, grid_points=int(grid.size)))
    write_meta(out, "compare", exp, t0, {"band": "DKW: ecdf +- sqrt(ln(2/delta)/(2m))", "delta": DKW_DELTA})
    return EXIT_NUMERIC if any(flag) else EXIT_OK


def _params_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cmd_elementary(args):
    """Example 1 and diff-time cut-off curves (deterministic, so no seed column)."""
    t0 = time.time()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    p1 = Example1Params(args.lam, args.p)
    pd = DiffCutoffParams(args.dc_lam, args.dc_a, args.dc_p, args.dc_tau)
    h1 = _params_hash({"lam": p1.lam, "p": p1.p})
    h2 = _params_hash({"lam": pd.lam, "a": pd.a, "p": pd.p, "tau": pd.tau})
    holds, cross = ex1_sharper_condition(p1)
    s = np.linspace(args.s_max / args.points, args.s_max, args.points)
    rows = ((x, b, t, r, h1) for x, b, t, r in zip(s, ex1_bound(p1, s), t_star(p1, s), ex1_prior_reference(p1, s)))
    write_csv(out / "ex1.csv", ["s", "bound", "t_star", "prior_reference", "params_hash"], rows)
    dc = DiffCutoffModel(pd)
    b = dc.abscissa
    sd = np.linspace(2 * pd.a, 2 * pd.a + 12 / b, args.points)
    write_csv(out / "diffco_bound.csv", ["s", "chernoff_ccdf", "params_hash"],
              ((x, c, h2) for x, c in zip(sd, dc.chernoff(sd, args.chernoff_grid))))
    tg = np.linspace(0, 0.95 * b, 20)
    write_csv(out / "diffco_mgf.csv", ["t", "mgf", "params_hash"], ((t, float(np.real(dc.mgf(t))), h2) for t in tg))
    write_json(out / "elementary.json", {"b_prime": p1.b_prime, "sharper": holds, "crossover_s": cross,
                                         "diffco_k": dc.fit.k, "diffco_theta": dc.fit.theta, "diffco_abscissa": b,
                                         "ex1_params_hash": h1, "diffco_params_hash": h2})
    write_meta(out, "elementary", None, t0)
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.cmd == "elementary":
            return cmd_elementary(args)
        exp = resolve_config(args)
        if args.cmd == "analyze":
            return cmd_analyze(exp)
        if args.cmd == "simulate":
            return cmd_simulate(exp)
        if args.cmd == "fit":
            return cmd_fit(exp)
        if args.cmd == "synth":
            return cmd_synth(exp)
        return cmd_compare(exp, args.full, args.synth)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FitFailureError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
