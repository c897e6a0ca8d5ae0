"""Command line front end: config resolution, sweeps, metric CSV files.

Option precedence is flags > config file > built-in defaults. Config
files are flat `key=value` lines (# starts a comment) whose keys are
RunConfig field names; unknown keys are rejected so typos fail loudly.
The resolved configuration is echoed into the output directory in the
same format, and a summary JSON aggregates final metrics across seeds.

Exit codes: 0 success, 2 usage or configuration problem, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .compression import compress, decode, decompress, ef_step, encode, wire_size_bytes
from .errors import (
    ConfigurationError,
    ParseError,
    PartitionError,
    RunAbortError,
    UsageError,
)
from .metrics import MetricsRow
from .models import evaluate
from .simulator import RunConfig, run

SCHEMA_LINE = "# decentsim metrics schema v1"
CSV_HEADER = ("round,epoch,train_loss,val_loss,val_acc,consensus_error,"
              "eps_l1,omega_l1,param_bytes,crossgrad_bytes")

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {
    "agents", "epochs", "batch_size", "seed", "classes", "dim", "per_class",
    "val_per_class", "hidden_dim", "workers", "metric_every", "torus_rows",
    "data_seed",
}
_FLOAT_FIELDS = {"alpha", "beta", "eta", "gamma", "spread", "val_fraction"}
_BOOL_FIELDS = {"gossip_post_update"}


def _coerce(key: str, raw: str):
    if key in _INT_FIELDS:
        return int(raw)
    if key in _FLOAT_FIELDS:
        return float(raw)
    if key in _BOOL_FIELDS:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return raw


def read_config_file(path: str) -> dict:
    """Parse key=value lines into RunConfig field overrides."""
    overrides = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot open config file: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise UsageError(f"{path} line {lineno}: expected key=value")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in _FIELD_TYPES:
                raise UsageError(f"{path} line {lineno}: unknown key {key!r}")
            try:
                overrides[key] = _coerce(key, raw)
            except ValueError as exc:
                raise UsageError(f"{path} line {lineno}: {exc}") from None
    return overrides


def write_config_file(config: RunConfig, path: str):
    """Echo the resolved configuration; readable back by read_config_file."""
    with open(path, "w") as fh:
        for f in dataclasses.fields(RunConfig):
            value = getattr(config, f.name)
            if value is None:
                continue
            fh.write(f"{f.name}={value}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="decentsim",
        description="Decentralized training simulator (dpsgd, ngc, compngc).",
    )
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--algorithm", choices=("dpsgd", "ngc", "compngc"))
    p.add_argument("--agents", type=int)
    p.add_argument("--topology", choices=("ring", "chain", "torus", "full"))
    p.add_argument("--partition", choices=("iid", "skew"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    seed_group = p.add_mutually_exclusive_group()
    seed_group.add_argument("--seed", type=int)
    seed_group.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--dataset", help="'synthetic' or a CSV path")
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--compress-check", action="store_true",
                   help="run the compressor self-test and exit")
    p.add_argument("--verbose", action="store_true")
    return p


_RANGES = {
    "alpha": (0.0, 1.0, True, True),
    "beta": (0.0, 1.0, True, False),
    "gamma": (0.0, 1.0, False, True),
}


def _check_ranges(values: dict):
    for key, (lo, hi, lo_in, hi_in) in _RANGES.items():
        if key not in values:
            continue
        v = values[key]
        ok = (lo <= v if lo_in else lo < v) and (v <= hi if hi_in else v < hi)
        if not ok:
            lo_b = "[" if lo_in else "("
            hi_b = "]" if hi_in else ")"
            raise UsageError(f"--{key} {v} outside {lo_b}{lo}, {hi}{hi_b}")
    if "eta" in values and values["eta"] <= 0:
        raise UsageError(f"--eta {values['eta']} must be positive")


def parse_config(argv) -> tuple[RunConfig, list[int], argparse.Namespace]:
    """Resolve flags over config file over defaults; returns config and seeds."""
    args = _build_parser().parse_args(argv)
    overrides: dict = {}
    if args.config:
        overrides.update(read_config_file(args.config))

    flag_values = {}
    for key in ("algorithm", "agents", "topology", "partition", "alpha", "beta",
                "eta", "gamma", "epochs", "batch_size", "seed", "dataset", "workers"):
        val = getattr(args, key)
        if val is not None:
            flag_values[key] = val
    overrides.update(flag_values)

    algorithm = overrides.get("algorithm", RunConfig.algorithm)
    if algorithm == "dpsgd" and "alpha" in overrides:
        raise UsageError("dpsgd does not take --alpha; it has no cross-gradient mixing")
    _check_ranges(overrides)

    seeds = [overrides.get("seed", RunConfig.seed)]
    if args.seeds:
        try:
            seeds = [int(tok) for tok in args.seeds.split(",") if tok.strip()]
        except ValueError:
            raise UsageError(f"--seeds wants comma-separated integers, got {args.seeds!r}")
        if not seeds:
            raise UsageError("--seeds list is empty")

    try:
        config = RunConfig(**overrides)
        config.validate()
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    return config, seeds, args


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(value)
    return f"{value:.9g}"


def emit_metrics_csv(rows: list[MetricsRow], path: str):
    """Write the metric table; floats carry 9 significant digits."""
    with open(path, "w") as fh:
        fh.write(SCHEMA_LINE + "\n")
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(",".join([
                str(r.round), str(r.epoch), _fmt(r.train_loss), _fmt(r.val_loss),
                _fmt(r.val_acc), _fmt(r.consensus_error), _fmt(r.eps_l1),
                _fmt(r.omega_l1), str(r.param_bytes), str(r.crossgrad_bytes),
            ]) + "\n")


def read_metrics_csv(path: str) -> list[MetricsRow]:
    """Inverse of emit_metrics_csv (up to float formatting)."""
    rows = []
    with open(path) as fh:
        header_seen = False
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line != CSV_HEADER:
                    raise ParseError(f"line {lineno}: unexpected header {line!r}")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 10:
                raise ParseError(f"line {lineno}: expected 10 fields, got {len(parts)}")
            rows.append(MetricsRow(
                round=int(parts[0]), epoch=int(parts[1]), train_loss=float(parts[2]),
                val_loss=float(parts[3]), val_acc=float(parts[4]),
                consensus_error=float(parts[5]), eps_l1=float(parts[6]),
                omega_l1=float(parts[7]), param_bytes=int(parts[8]),
                crossgrad_bytes=int(parts[9]),
            ))
    if not header_seen:
        raise ParseError("no header line found")
    return rows


def run_sweep(config: RunConfig, seeds: list[int], out_dir: str,
              verbose: bool = False) -> dict:
    """Run one config across seeds; write per-seed CSVs plus a summary JSON."""
    os.makedirs(out_dir, exist_ok=True)
    completed = []
    failed = []
    final_accs = []
    bytes_per_agent = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed)
        seed_dir = os.path.join(out_dir, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        write_config_file(cfg, os.path.join(seed_dir, "config.txt"))
        try:
            result = run(cfg)
        except RunAbortError as exc:
            failed.append({"seed": seed, "error": str(exc)})
            continue
        emit_metrics_csv(result.rows, os.path.join(seed_dir, "metrics.csv"))
        completed.append(seed)
        final_accs.append(result.final_row.val_acc)
        bytes_per_agent.append(result.ledger.total_bytes / cfg.agents)
        if verbose:
            for row in result.rows:
                print(f"seed {seed} epoch {row.epoch}: val_acc {row.val_acc:.4f} "
                      f"val_loss {row.val_loss:.6f} consensus_err {row.consensus_error:.3e}")
            per_agent = [
                evaluate(result.spec, s.params, result.val_data)[1] for s in result.states
            ]
            print(f"seed {seed} per-agent val_acc: "
                  + " ".join(f"{a:.4f}" for a in per_agent))
    summary = {
        "algorithm": config.algorithm,
        "topology": config.topology,
        "agents": config.agents,
        "seeds": seeds,
        "completed": completed,
        "failed": failed,
        "final_acc_mean": float(np.mean(final_accs)) if final_accs else None,
        "final_acc_std": float(np.std(final_accs)) if final_accs else None,
        "total_bytes_per_agent": float(np.mean(bytes_per_agent)) if bytes_per_agent else None,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def compress_self_check(dim: int = 100_000, calls: int = 1000, seed: int = 0) -> list[str]:
    """Exercise the compressor invariants; returns human-readable report lines."""
    rng = np.random.default_rng(seed)
    worst_rel = 0.0
    small_d = 64
    for _ in range(calls):
        g = rng.standard_normal(small_d) * 10.0 ** rng.integers(-3, 4)
        e = rng.standard_normal(small_d)
        ct, e_next = ef_step(g, e)
        lhs = decompress(ct) + e_next
        rel = float(np.abs(lhs - (g + e)).max() / max(np.abs(g + e).max(), 1e-300))
        worst_rel = max(worst_rel, rel)
    identity_ok = worst_rel <= 1e-12

    vec = rng.standard_normal(dim)
    ct = compress(vec)
    blob = encode(ct)
    size_ok = len(blob) == wire_size_bytes(dim) == (dim + 7) // 8 + 12
    back = decode(blob)
    roundtrip_ok = bool(
        (back.signs == ct.signs).all() and back.scale == float(np.float32(ct.scale))
    )
    ratio = 4.0 * dim / wire_size_bytes(dim)
    lines = [
        f"error-feedback identity over {calls} calls: worst rel dev {worst_rel:.3e} "
        f"-> {'PASS' if identity_ok else 'FAIL'}",
        f"wire size at d={dim}: {len(blob)} bytes -> {'PASS' if size_ok else 'FAIL'}",
        f"wire round-trip -> {'PASS' if roundtrip_ok else 'FAIL'}",
        f"raw/compressed ratio at d={dim}: {ratio:.2f}x -> "
        f"{'PASS' if ratio >= 31.5 else 'FAIL'}",
    ]
    if not (identity_ok and size_ok and roundtrip_ok and ratio >= 31.5):
        raise RunAbortError(0, "compressor self-check failed:\n" + "\n".join(lines))
    return lines


def main(argv=None) -> int:
    try:
        config, seeds, args = parse_config(sys.argv[1:] if argv is None else argv)
        if args.compress_check:
            for line in compress_self_check():
                print(line)
            return 0
        summary = run_sweep(config, seeds, args.out_dir, verbose=args.verbose)
    except (UsageError, ConfigurationError, ParseError, PartitionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunAbortError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {os.path.join(args.out_dir, 'summary.json')}")
    if summary["final_acc_mean"] is not None:
        print(f"final_acc_mean={summary['final_acc_mean']:.4f} "
              f"final_acc_std={summary['final_acc_std']:.4f}")
    if summary["failed"]:
        print(f"failed seeds: {[f['seed'] for f in summary['failed']]}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
