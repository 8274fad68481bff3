"""Experiment runner.

Ingests line-delimited logits records (or synthesizes positions), applies a
generation temperature, and reports per-position acceptance rates: the
optimal rate per draft scheme, each verification method's rate, and the gap
between them. Methods with exact formulas (rejection sampling with
replacement, the thresholded scheme, the greedy verifier) are evaluated in
closed form; the rest are estimated by seeded Monte Carlo.

Logits provenance is the caller's responsibility: records are treated as
"the two models' logits at one decoding position" and nothing more.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .alpha import alpha_greedy_closed, alpha_scan, alpha_single_draft
from .dists import Dist, LogitsRecord, softmax_temp
from .drafts import DraftScheme
from .mc import estimate_alpha
from .verify import kseq_solve, rrs_w_rate_exact

__all__ = [
    "ExperimentConfig",
    "MalformedInputError",
    "load_logits",
    "synth_positions",
    "run_experiment",
    "main",
]

SCHEME_NAMES = ("with-replacement", "without-replacement", "greedy")
METHOD_NAMES = ("rrs-w", "kseq", "rrs-wo", "greedy", "ot-single")
BASE_COLUMNS = (
    "position",
    "scheme",
    "method",
    "alpha",
    "alpha_star",
    "gap",
    "stderr",
    "seed",
    "config_hash",
)


class MalformedInputError(ValueError):
    """Raised for unusable logits records; carries the offending line."""


@dataclass(frozen=True)
class ExperimentConfig:
    input_path: str | None = None
    synth: str | None = None  # "dirichlet:<conc>" or "zipf:<s>"
    vocab: int = 1000
    positions: int = 64
    temperature: float = 0.7
    num_drafts: int = 3
    schemes: tuple[str, ...] = SCHEME_NAMES
    methods: tuple[str, ...] = ("rrs-w", "kseq", "rrs-wo", "greedy")
    trials: int = 1024
    seed: int = 0
    sweep: str | None = None  # "temperature" | "drafts"
    sweep_values: tuple[float, ...] = ()
    output: str | None = None
    fmt: str = "csv"

    def config_hash(self) -> str:
        # Identifies the experiment for replay; where and how the report is
        # serialized does not change the numbers, so output/fmt stay out.
        fields = {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in vars(self).items()
            if k not in ("output", "fmt")
        }
        return hashlib.sha256(json.dumps(fields, sort_keys=True).encode()).hexdigest()[:12]


def load_logits(path: str):
    """Stream `LogitsRecord`s from a line-delimited file of objects with
    "p_logits" and "q_logits" array fields. Malformed lines raise
    `MalformedInputError` naming the line number."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedInputError(f"line {lineno}: invalid JSON ({exc.msg})")
            if not isinstance(obj, dict):
                raise MalformedInputError(f"line {lineno}: record is not an object")
            for key in ("p_logits", "q_logits"):
                if key not in obj:
                    raise MalformedInputError(f"line {lineno}: missing field {key!r}")
            try:
                yield LogitsRecord(
                    np.asarray(obj["p_logits"], dtype=np.float64),
                    np.asarray(obj["q_logits"], dtype=np.float64),
                )
            except (TypeError, ValueError) as exc:
                raise MalformedInputError(f"line {lineno}: {exc}")


def synth_positions(kind: str, param: float, vocab: int, count: int, seed: int):
    """Yield ``count`` independent (p, q) pairs.

    dirichlet: both drawn from a symmetric Dirichlet with the given
    concentration. zipf: power-law masses 1/rank^s dealt to tokens in an
    independent random order for p and for q.
    """
    if vocab < 2:
        raise ValueError("vocab must be >= 2")
    rng = np.random.default_rng(seed)
    if kind == "dirichlet":
        conc = np.full(vocab, float(param))
        for _ in range(count):
            yield Dist(rng.dirichlet(conc)), Dist(rng.dirichlet(conc))
    elif kind == "zipf":
        base = 1.0 / np.arange(1, vocab + 1) ** float(param)
        base /= base.sum()
        for _ in range(count):
            yield Dist(rng.permutation(base)), Dist(rng.permutation(base))
    else:
        raise ValueError(f"unknown synthetic generator {kind!r}")


def _parse_synth(spec: str) -> tuple[str, float]:
    kind, sep, param = spec.partition(":")
    if not sep:
        raise ValueError("synthetic spec must look like dirichlet:5.0 or zipf:1.0")
    return kind, float(param)


_SCHEME_METHODS = {
    "with-replacement": ("rrs-w", "kseq"),
    "without-replacement": ("rrs-wo",),
    "greedy": ("greedy",),
}


def _compatible(scheme_name: str, method: str, n: int) -> bool:
    if method == "ot-single":
        return n == 1 and scheme_name in ("with-replacement", "without-replacement")
    return method in _SCHEME_METHODS.get(scheme_name, ())


def _build_scheme(name: str, q: Dist, n: int) -> DraftScheme:
    if name == "with-replacement":
        return DraftScheme.with_replacement(q, n)
    if name == "without-replacement":
        return DraftScheme.without_replacement(q, n)
    if name == "greedy":
        return DraftScheme.greedy(q, n)
    raise ValueError(f"unknown scheme {name!r}")


def _position_seed(seed: int, position: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(position,))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class _Task:
    position: int
    p_logits: np.ndarray
    q_logits: np.ndarray
    temperature: float
    num_drafts: int
    schemes: tuple[str, ...]
    methods: tuple[str, ...]
    trials: int
    mc_seed: int
    extra: dict = field(default_factory=dict)


def _method_alpha(method: str, p: Dist, q: Dist, scheme: DraftScheme, task: _Task):
    if method == "rrs-w":
        return rrs_w_rate_exact(p, q, scheme.n), 0.0
    if method == "kseq":
        return kseq_solve(p, q, scheme.n).alpha_closed, 0.0
    if method == "greedy":
        return alpha_greedy_closed(p, q, scheme.n), 0.0
    if method == "ot-single":
        return alpha_single_draft(p, q), 0.0
    if method == "rrs-wo":
        rep = estimate_alpha(p, scheme, "rrs-wo", task.trials, task.mc_seed)
        return rep.acceptance_mean, rep.acceptance_stderr
    raise ValueError(f"unknown method {method!r}")


def _run_position(task: _Task) -> list[dict]:
    p = softmax_temp(task.p_logits, task.temperature)
    q = softmax_temp(task.q_logits, task.temperature)
    rows = []
    for scheme_name in task.schemes:
        scheme = _build_scheme(scheme_name, q, task.num_drafts)
        alpha_star = alpha_scan(p, scheme).alpha_star
        for method in task.methods:
            if not _compatible(scheme_name, method, task.num_drafts):
                continue
            alpha, stderr = _method_alpha(method, p, q, scheme, task)
            rows.append(
                dict(
                    position=task.position,
                    scheme=scheme_name,
                    method=method,
                    alpha=alpha,
                    alpha_star=alpha_star,
                    gap=alpha - alpha_star,
                    stderr=stderr,
                    **task.extra,
                )
            )
    return rows


def _worker_count(tasks: int) -> int:
    cap = os.cpu_count() or 1
    env = os.environ.get("MDSD_THREADS")
    if env:
        cap = min(cap, max(1, int(env)))
    return max(1, min(cap, tasks))


def _collect_positions(cfg: ExperimentConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    if (cfg.input_path is None) == (cfg.synth is None):
        raise ValueError("exactly one of input_path / synth must be set")
    out = []
    if cfg.input_path is not None:
        for rec in load_logits(cfg.input_path):
            out.append((rec.p_logits, rec.q_logits))
    else:
        kind, param = _parse_synth(cfg.synth)
        with np.errstate(divide="ignore"):
            for p, q in synth_positions(kind, param, cfg.vocab, cfg.positions, cfg.seed):
                out.append((np.log(p.mass), np.log(q.mass)))
    return out


def _sweep_tasks(cfg: ExperimentConfig, positions) -> list[_Task]:
    variants: list[tuple[dict, float, int]] = []
    if cfg.sweep is None:
        variants.append(({}, cfg.temperature, cfg.num_drafts))
    elif cfg.sweep == "temperature":
        for v in cfg.sweep_values:
            variants.append(
                ({"sweep_param": "temperature", "sweep_value": v}, float(v), cfg.num_drafts)
            )
    elif cfg.sweep == "drafts":
        for v in cfg.sweep_values:
            variants.append(
                ({"sweep_param": "drafts", "sweep_value": int(v)}, cfg.temperature, int(v))
            )
    else:
        raise ValueError(f"unknown sweep {cfg.sweep!r}")
    tasks = []
    for extra, temperature, n in variants:
        for idx, (pl, ql) in enumerate(positions):
            tasks.append(
                _Task(
                    position=idx,
                    p_logits=pl,
                    q_logits=ql,
                    temperature=temperature,
                    num_drafts=n,
                    schemes=cfg.schemes,
                    methods=cfg.methods,
                    trials=cfg.trials,
                    mc_seed=_position_seed(cfg.seed, idx),
                    extra=dict(extra),
                )
            )
    return tasks


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _aggregate(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (
            row.get("sweep_param", ""),
            row.get("sweep_value", ""),
            row["scheme"],
            row["method"],
        )
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=str):
        grp = groups[key]
        alphas = np.array([r["alpha"] for r in grp])
        stars = np.array([r["alpha_star"] for r in grp])
        gaps = np.array([r["gap"] for r in grp])
        agg = dict(
            position="mean",
            scheme=key[2],
            method=key[3],
            alpha=float(alphas.mean()),
            alpha_star=float(stars.mean()),
            gap=float(gaps.mean()),
            stderr=float(alphas.std(ddof=1) / np.sqrt(alphas.size)) if alphas.size > 1 else 0.0,
        )
        if key[0]:
            agg["sweep_param"], agg["sweep_value"] = key[0], key[1]
        out.append(agg)
    return out


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run all positions, write the report, and return the rows."""
    for name in cfg.schemes:
        if name not in SCHEME_NAMES:
            raise ValueError(f"unknown scheme {name!r}")
    for name in cfg.methods:
        if name not in METHOD_NAMES:
            raise ValueError(f"unknown method {name!r}")
    skipped = [
        f"{s}/{m}"
        for s in cfg.schemes
        for m in cfg.methods
        if not _compatible(s, m, cfg.num_drafts)
    ]
    if skipped:
        print(
            "warning: skipping incompatible scheme/method pairs: " + ", ".join(skipped),
            file=sys.stderr,
        )

    positions = _collect_positions(cfg)
    if not positions:
        print("warning: no positions in input", file=sys.stderr)
        _write_report(cfg, [])
        return []

    tasks = _sweep_tasks(cfg, positions)
    workers = _worker_count(len(tasks))
    if workers > 1:
        chunk = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_task = list(pool.map(_run_position, tasks, chunksize=chunk))
    else:
        per_task = [_run_position(t) for t in tasks]
    rows = [row for batch in per_task for row in batch]
    rows.extend(_aggregate(rows))

    hash_ = cfg.config_hash()
    for row in rows:
        row["seed"] = cfg.seed
        row["config_hash"] = hash_
    _write_report(cfg, rows)
    return rows


def _write_report(cfg: ExperimentConfig, rows: list[dict]) -> None:
    columns = list(BASE_COLUMNS)
    if any("sweep_param" in r for r in rows):
        columns += ["sweep_param", "sweep_value"]
    lines = []
    if cfg.fmt == "csv":
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_fmt(row.get(c, "")) for c in columns))
    elif cfg.fmt == "jsonl":
        for row in rows:
            lines.append(
                json.dumps({c: row[c] for c in columns if c in row}, sort_keys=True)
            )
    else:
        raise ValueError(f"unknown format {cfg.fmt!r}")
    text = "\n".join(lines) + "\n"
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mdsd-bench",
        description="Acceptance-rate report for multi-draft speculative decoding.",
    )
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="line-delimited logits records (JSON per line)")
    src.add_argument("--synth", help="synthetic generator, e.g. dirichlet:5.0 or zipf:1.0")
    ap.add_argument("--vocab", type=int, default=1000, help="synthetic vocabulary size")
    ap.add_argument("--positions", type=int, default=64, help="synthetic position count")
    ap.add_argument("--temperature", type=float, default=0.7)
    ap.add_argument("--num-drafts", type=int, default=3)
    ap.add_argument("--schemes", default="with-replacement,without-replacement,greedy")
    ap.add_argument("--methods", default="rrs-w,kseq,rrs-wo,greedy")
    ap.add_argument("--trials", type=int, default=1024, help="Monte Carlo trials per position")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sweep", choices=("temperature", "drafts"))
    ap.add_argument("--sweep-values", default="", help="comma-separated sweep values")
    ap.add_argument("--output", help="report path (default: stdout)")
    ap.add_argument("--format", dest="fmt", choices=("csv", "jsonl"), default="csv")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    sweep_values = tuple(float(v) for v in args.sweep_values.split(",") if v.strip())
    if args.sweep and not sweep_values:
        print("error: --sweep requires --sweep-values", file=sys.stderr)
        return 2
    cfg = ExperimentConfig(
        input_path=args.input,
        synth=args.synth,
        vocab=args.vocab,
        positions=args.positions,
        temperature=args.temperature,
        num_drafts=args.num_drafts,
        schemes=tuple(s.strip() for s in args.schemes.split(",") if s.strip()),
        methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
        trials=args.trials,
        seed=args.seed,
        sweep=args.sweep,
        sweep_values=sweep_values,
        output=args.output,
        fmt=args.fmt,
    )
    try:
        run_experiment(cfg)
    except (MalformedInputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
