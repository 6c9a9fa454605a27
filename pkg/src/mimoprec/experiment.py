"""Batch experiments: spec parsing, seeded Monte-Carlo sweeps and CSV output."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import baselines, modulation
from .mse import downlink_sinrs, nats_to_bits, rate_breakdown, user_slices
from .pdetmse import pdetmse_solve
from .pmse import pmse_solve
from .system import (ConfigError, RngStream, SystemConfig, generate_channels,
                     snr_to_noise, validate_config)

__all__ = ["ALGORITHMS", "ExperimentError", "ExperimentSpec", "ResultRow",
           "parse_experiment", "load_experiment", "run_experiment",
           "emit_csv", "read_csv", "aggregate", "format_rows"]

ALGORITHMS = ("pmse", "pdetmse", "dpc", "zf", "bd", "zf-select", "bd-select")
MODULATION_MODES = ("off", "naive", "prob")


class ExperimentError(ValueError):
    """Invalid experiment description; the message names the offending key."""


@dataclass(frozen=True)
class ExperimentSpec:
    configs: tuple                 # one SystemConfig per user-count point
    snr_db: tuple
    algorithms: tuple
    trials: int
    seed: int
    modulation: str = "off"
    ber_target: float = 1e-2
    symbols: int = 5000
    pmse_starts: int = 1
    pdetmse_starts: int = 4
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if not self.snr_db:
            raise ExperimentError("snr: empty SNR grid")
        if self.trials < 1:
            raise ExperimentError("trials: must be >= 1")
        if not self.algorithms:
            raise ExperimentError("algs: no algorithms selected")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ExperimentError(f"algs: unknown algorithm {a!r}")
        if self.modulation not in MODULATION_MODES:
            raise ExperimentError(f"modulation: expected one of {MODULATION_MODES}")
        if not 0 < self.ber_target < 1:
            raise ExperimentError("ber_target: must lie in (0, 1)")
        if self.symbols < 1:
            raise ExperimentError("symbols: must be >= 1")
        if self.pmse_starts < 1 or self.pdetmse_starts < 1:
            raise ExperimentError("pmse_starts/pdetmse_starts: must be >= 1")
        if self.workers < 1:
            raise ExperimentError("workers: must be >= 1")
        for cfg in self.configs:
            try:
                validate_config(cfg)
            except ConfigError as exc:
                raise ExperimentError(f"config: {exc}") from exc


_KEYS = {
    "K": (int, list), "M": (int,), "M_per_user": (int,), "N": (int, list),
    "L": (int, list), "P_max": (int, float), "epsilon": (float, int),
    "max_iters": (int,), "snr": (list,), "algs": (list,), "trials": (int,),
    "seed": (int,), "modulation": (str,), "ber_target": (float, int),
    "symbols": (int,), "force_streams": (str, list), "pmse_starts": (int,),
    "pdetmse_starts": (int,), "workers": (int,), "out": (str,),
}


def _per_user(key, value, K):
    if isinstance(value, int):
        return (value,) * K
    if len(value) != K:
        raise ExperimentError(f"{key}: expected {K} entries, got {len(value)}")
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ExperimentError(f"{key}: entries must be integers")
    return tuple(value)


def parse_stream_pattern(pattern):
    """'3,1' -> (3, 1)."""
    if isinstance(pattern, (list, tuple)):
        items = list(pattern)
    else:
        items = [s for s in str(pattern).replace(" ", "").split(",") if s]
    try:
        return tuple(int(x) for x in items)
    except ValueError as exc:
        raise ExperimentError(f"force_streams: bad pattern {pattern!r}") from exc


def spec_from_mapping(doc: dict) -> ExperimentSpec:
    """Validate a flat key/value mapping into an :class:`ExperimentSpec`."""
    for key, value in doc.items():
        if key not in _KEYS:
            raise ExperimentError(f"{key}: unknown key")
        if isinstance(value, bool) or not isinstance(value, _KEYS[key]):
            raise ExperimentError(
                f"{key}: expected {' or '.join(t.__name__ for t in _KEYS[key])}, "
                f"got {type(value).__name__}")
    for key in ("K", "snr", "algs", "trials", "seed"):
        if key not in doc:
            raise ExperimentError(f"{key}: required key missing")
    if ("M" in doc) == ("M_per_user" in doc):
        raise ExperimentError("M: give exactly one of M or M_per_user")
    Ks = doc["K"] if isinstance(doc["K"], list) else [doc["K"]]
    if not Ks or not all(isinstance(k, int) and k >= 1 for k in Ks):
        raise ExperimentError("K: must be a positive integer or list of them")
    if len(Ks) > 1 and (isinstance(doc.get("N", 0), list) or isinstance(doc.get("L", 0), list)):
        raise ExperimentError("N: per-user lists need a single K; use an integer")
    configs = []
    for K in Ks:
        M = doc["M"] if "M" in doc else doc["M_per_user"] * K
        N = _per_user("N", doc.get("N", 1), K)
        L = _per_user("L", doc.get("L", N), K)
        if "force_streams" in doc:
            L = parse_stream_pattern(doc["force_streams"])
            if len(L) != K:
                raise ExperimentError(f"force_streams: expected {K} entries")
        configs.append(SystemConfig(K, M, N, L, float(doc.get("P_max", 1.0)), 1.0,
                                    float(doc.get("epsilon", 1e-6)),
                                    int(doc.get("max_iters", 2000))))
    snr = doc["snr"]
    if not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in snr):
        raise ExperimentError("snr: entries must be numbers")
    algs = doc["algs"]
    if not all(isinstance(a, str) for a in algs):
        raise ExperimentError("algs: entries must be strings")
    return ExperimentSpec(
        configs=tuple(configs), snr_db=tuple(float(s) for s in snr),
        algorithms=tuple(a.lower() for a in algs), trials=doc["trials"],
        seed=doc["seed"], modulation=doc.get("modulation", "off"),
        ber_target=float(doc.get("ber_target", 1e-2)),
        symbols=doc.get("symbols", 5000), pmse_starts=doc.get("pmse_starts", 1),
        pdetmse_starts=doc.get("pdetmse_starts", 4), workers=doc.get("workers", 1),
        out=doc.get("out"))


def parse_experiment(text: str) -> ExperimentSpec:
    """Parse a TOML experiment document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ExperimentError(f"syntax: {exc}") from exc
    return spec_from_mapping(doc)


def load_experiment(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ExperimentError(f"syntax: {exc}") from exc


@dataclass
class ResultRow:
    K: int
    M: int
    snr_db: float
    algorithm: str
    trial: int
    sum_rate: float | None = None          # bits per channel use
    user_rates: tuple = ()                 # bits
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    avg_bits: float | None = None          # bits per transmission, all streams
    avg_ber: float | None = None
    user_bits: tuple = ()
    status: str = "ok"


_TIMING_FIELDS = {"wall_time"}


def _linear_rates(channels, state, sigma2, scalar):
    """Per-user rates in nats: stream-wise log(1 + SINR) for orthogonalized
    designs, joint MMSE-decoding rate otherwise."""
    if scalar:
        sinr = downlink_sinrs(channels, state, sigma2)
        return np.array([np.sum(np.log1p(sinr[sl])) for sl in state.slices])
    return rate_breakdown(channels, state, sigma2).user_rates


def _run_algorithm(alg, cfg, channels, rng, spec):
    """Return (state or None, user_rates_nats or None, sum_nats, iters, converged)."""
    s2 = cfg.sigma2
    if alg == "pmse":
        state, trace = pmse_solve(cfg, channels, rng, spec.pmse_starts)
        r = _linear_rates(channels, state, s2, False)
        return state, r, r.sum(), trace.iterations, trace.converged
    if alg == "pdetmse":
        state, obj, info = pdetmse_solve(cfg, channels, rng, spec.pdetmse_starts,
                                         return_info=True)
        r = _linear_rates(channels, state, s2, False)
        return state, r, r.sum(), info["iterations"], info["converged"]
    if alg == "dpc":
        return None, None, baselines.dpc_sum_capacity(channels, cfg.P_max, s2), 0, True
    scheme = alg.split("-")[0].upper()
    design = baselines.zf_precoder if scheme == "ZF" else baselines.bd_precoder
    subset = None
    if alg.endswith("-select"):
        subset, _ = baselines.best_subset_orthogonal(channels, scheme, cfg.P_max, s2)
    state, rate = design(channels, subset, cfg.P_max, s2)
    r = _linear_rates(channels, state, s2, True)
    return state, r, rate, 0, True


def _trial(args):
    spec, ci, trial = args
    base = spec.configs[ci]
    root = RngStream(spec.seed, trial).child(ci)
    channels = generate_channels(base, root.child(0))
    rows = []
    for si, snr in enumerate(spec.snr_db):
        cfg = base.with_noise(snr_to_noise(snr, base.P_max))
        for ai, alg in enumerate(spec.algorithms):
            row = ResultRow(base.K, base.M, snr, alg, trial)
            t0 = time.perf_counter()
            try:
                state, urates, total, iters, conv = _run_algorithm(
                    alg, cfg, channels, root.child(1, si, ai), spec)
                row.sum_rate = float(nats_to_bits(total))
                row.user_rates = tuple(float(x) for x in nats_to_bits(urates)) if urates is not None else ()
                row.iterations, row.converged = int(iters), bool(conv)
                if spec.modulation != "off" and state is not None:
                    sinr = downlink_sinrs(channels, state, cfg.sigma2)
                    plan = modulation.plan_modulation(sinr, state.p, spec.ber_target,
                                                      spec.modulation)
                    rep = modulation.simulate_ber(channels, state, plan, spec.symbols,
                                                  cfg.sigma2, root.child(2, si, ai))
                    row.avg_bits, row.avg_ber = rep.avg_bits, rep.avg_ber
                    row.user_bits = tuple(float(x) for x in rep.user_bits(state.L))
            except Exception as exc:  # a failed trial must not abort the sweep
                row.status = f"failed: {type(exc).__name__}: {exc}".replace(",", ";")
                row.sum_rate, row.user_rates = None, ()
            row.wall_time = time.perf_counter() - t0
            rows.append(row)
    return rows


def run_experiment(spec: ExperimentSpec, workers: int | None = None):
    """Run every (config, trial, SNR, algorithm) cell.

    Channel draws depend only on (seed, config index, trial) and are shared
    by all SNRs and algorithms of a trial; output order is deterministic
    regardless of ``workers``.
    """
    workers = spec.workers if workers is None else workers
    jobs = [(spec, ci, t) for ci in range(len(spec.configs)) for t in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_trial, jobs))
    else:
        chunks = [_trial(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    snr_pos = {s: i for i, s in enumerate(spec.snr_db)}
    alg_pos = {a: i for i, a in enumerate(spec.algorithms)}
    rows.sort(key=lambda r: (r.K, r.M, snr_pos[r.snr_db], alg_pos[r.algorithm], r.trial))
    return rows


def _fmt(name, value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value in field {name!r}")
        return f"{value:.9g}"
    if isinstance(value, tuple):
        return ";".join(_fmt(name, v) for v in value)
    return str(value)


def _columns(timing):
    return [f.name for f in fields(ResultRow) if timing or f.name not in _TIMING_FIELDS]


def format_rows(rows, timing=False) -> str:
    """Render rows as CSV text (header first)."""
    if not rows:
        raise ValueError("no rows to emit")
    cols = _columns(timing)
    for r in rows:
        for f in fields(ResultRow):
            _fmt(f.name, getattr(r, f.name))     # validate every field
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(c, getattr(r, c)) for c in cols) + "\n")
    return buf.getvalue()


def emit_csv(rows, path, timing=False) -> None:
    """Write rows to ``path``; wall times are included only with ``timing``
    so that repeated runs produce identical files."""
    text = format_rows(rows, timing)
    with open(path, "w", newline="") as fh:
        fh.write(text)


_PARSERS = {
    "K": int, "M": int, "snr_db": float, "algorithm": str, "trial": int,
    "sum_rate": float, "iterations": int, "wall_time": float,
    "avg_bits": float, "avg_ber": float, "status": str,
    "converged": lambda s: s == "true",
}


def read_csv(path):
    """Parse a file written by :func:`emit_csv` back into ResultRow objects."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                if k in ("user_rates", "user_bits"):
                    kw[k] = tuple(float(x) for x in v.split(";")) if v else ()
                elif v == "" and k not in ("status", "algorithm"):
                    kw[k] = None
                else:
                    kw[k] = _PARSERS[k](v)
            out.append(ResultRow(**kw))
    return out


def aggregate(rows, metric="sum_rate"):
    """Mean and standard error of ``metric`` per (K, M, SNR, algorithm)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.K, r.M, r.snr_db, r.algorithm), []).append(r)
    out = []
    for (K, M, snr, alg), rs in groups.items():
        vals = np.array([getattr(r, metric) for r in rs if r.status == "ok"
                         and getattr(r, metric) is not None], float)
        n = vals.size
        out.append({
            "K": K, "M": M, "snr_db": snr, "algorithm": alg, "n": n,
            "failures": sum(r.status != "ok" for r in rs),
            "mean": float(vals.mean()) if n else float("nan"),
            "stderr": float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        })
    return out
