"""Latency harness: single-pass conditioned inference vs autoregressive
recognition, with warmup, per-sentence statistics, and decoder-pass counts."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import model as mdl
from .phonemes import default_inventory
from .synthdata import Manifest
from .training import LoadedItem, _pad_features, _pad_rows, load_split

BENCH_MODES = ("asr_autoregressive", "conditioned")


@dataclass(frozen=True)
class BenchConfig:
    mode: str
    batch_size: int = 1
    repetitions: int = 10
    warmup_runs: int = 1
    split: str = "test"

    def __post_init__(self):
        if self.mode not in BENCH_MODES:
            raise ValueError(f"mode must be one of {BENCH_MODES}")
        if self.repetitions < 10:
            raise ValueError("repetitions must be >= 10")
        if self.warmup_runs < 1:
            raise ValueError("warmup_runs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class BenchReport:
    mode: str
    batch: int
    mean_ms: float
    std_ms: float
    median_ms: float
    passes_mean: float
    n_sentences: int
    split: str
    d_model: int
    threads: str
    speedup: float = 1.0


def _run_group(state: mdl.ModelState, items: list[LoadedItem], mode: str, inv):
    """Time one inference over a padded group; returns (seconds, decoder passes)."""
    feats, flens = _pad_features(items)
    if mode == "conditioned":
        dec_in = _pad_rows([[inv.sos, *it.target] for it in items], inv.pad)
    else:
        max_len = 2 * max(len(it.target) for it in items)
    before = state.counters["decoder_passes"]
    t0 = time.perf_counter()
    with ag.no_grad():
        memory, _ = mdl.encode_batch(state, feats, flens)
        if mode == "conditioned":
            mdl.decode_conditioned_batch(state, memory, flens, dec_in)
        else:
            mdl.greedy_decode_batch(state, memory, flens, inv, max_len)
    elapsed = time.perf_counter() - t0
    return elapsed, state.counters["decoder_passes"] - before


def run_bench(state: mdl.ModelState, manifest: Manifest, cfg: BenchConfig) -> BenchReport:
    """Per-sentence decode latency over the split, after warmup runs."""
    inv = default_inventory()
    items = load_split(manifest, cfg.split, state.config)
    groups = [items[i : i + cfg.batch_size] for i in range(0, len(items), cfg.batch_size)]
    for _ in range(cfg.warmup_runs):
        for group in groups:
            _run_group(state, group, cfg.mode, inv)
    times_ms: list[float] = []
    passes: list[float] = []
    for _ in range(cfg.repetitions):
        for group in groups:
            elapsed, n_passes = _run_group(state, group, cfg.mode, inv)
            per_sentence = elapsed * 1000.0 / len(group)
            times_ms.extend([per_sentence] * len(group))
            passes.extend([n_passes / len(group)] * len(group))
    arr = np.asarray(times_ms)
    return BenchReport(
        mode=cfg.mode,
        batch=cfg.batch_size,
        mean_ms=float(arr.mean()),
        std_ms=float(arr.std()),
        median_ms=float(np.median(arr)),
        passes_mean=float(np.mean(passes)),
        n_sentences=len(items),
        split=cfg.split,
        d_model=state.config.d_model,
        threads=os.environ.get("OMP_NUM_THREADS", "default"),
    )


@dataclass
class SpeedupRow:
    mode: str
    batch: int
    mean_speedup: float
    median_speedup: float


def compare(rep: BenchReport, baseline: BenchReport) -> SpeedupRow:
    """Speedup of `rep` relative to `baseline` (ratio of means and medians)."""
    if rep.split != baseline.split or rep.d_model != baseline.d_model:
        raise ValueError("reports must share the same split and model dims")
    return SpeedupRow(
        mode=rep.mode,
        batch=rep.batch,
        mean_speedup=baseline.mean_ms / rep.mean_ms,
        median_speedup=baseline.median_ms / rep.median_ms,
    )


REPORT_HEADER = "mode,batch,mean_ms,std_ms,median_ms,passes_mean,speedup"


def report_csv(reports: list[BenchReport]) -> str:
    meta = reports[0]
    lines = [f"#aped-bench split={meta.split} d_model={meta.d_model} threads={meta.threads}",
             REPORT_HEADER]
    for r in reports:
        lines.append(
            f"{r.mode},{r.batch},{r.mean_ms:.3f},{r.std_ms:.3f},"
            f"{r.median_ms:.3f},{r.passes_mean:.3f},{r.speedup:.2f}"
        )
    return "\n".join(lines) + "\n"


def read_report_csv(path) -> BenchReport:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    meta = {}
    for token in lines[0].lstrip("#").split():
        if "=" in token:
            key, val = token.split("=", 1)
            meta[key] = val
    row = lines[2].split(",")
    return BenchReport(
        mode=row[0], batch=int(row[1]), mean_ms=float(row[2]), std_ms=float(row[3]),
        median_ms=float(row[4]), passes_mean=float(row[5]), n_sentences=0,
        split=meta.get("split", ""), d_model=int(meta.get("d_model", 0)),
        threads=meta.get("threads", ""), speedup=float(row[6]),
    )
