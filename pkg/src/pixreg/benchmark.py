"""Desk-scale comparison of the three regularized objectives against BCE alone.

Every (objective, lambda, seed) run trains from the same synthetic images and
is scored by whole-image test AUC. Runs are independent and spread over a
process pool; each run is deterministic, so the pool size does not change
results.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import synthetic_split
from .regularizers import ObjectiveKind, RegularizerConfig
from .segnet import NetworkSpec
from .trainer import TrainConfig, evaluate, train_on_samples


@dataclass(frozen=True)
class BenchmarkSetup:
    images: int = 16
    data_seed: int = 0
    shape: tuple[int, int] = (64, 64)
    epochs: int = 10
    patches_per_image: int = 200
    patch_size: int = 32
    depth: int = 2
    base_channels: int = 8
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    lambdas: tuple[float, ...] = (0.05, 0.1)


@dataclass(frozen=True)
class RunResult:
    objective: str
    lam: float
    seed: int
    auc: float
    acc: float
    final_loss: float


def _run(setup: BenchmarkSetup, kind: ObjectiveKind, lam: float, seed: int) -> RunResult:
    train, test = synthetic_split(setup.images, setup.data_seed, setup.shape)
    spec = NetworkSpec(setup.depth, setup.base_channels)
    cfg = TrainConfig(
        epochs=setup.epochs, objective=kind, reg=RegularizerConfig(lam=lam), seed=seed,
        patches_per_image=setup.patches_per_image, patch_size=setup.patch_size,
    )
    params, history = train_on_samples(train, spec, cfg)
    report = evaluate(params, spec, test)
    return RunResult(kind.value, lam, seed, report.auc, report.acc, history.records[-1].loss)


def run_benchmark(setup: BenchmarkSetup = BenchmarkSetup(), workers: int | None = None) -> list[RunResult]:
    jobs = [(ObjectiveKind.BASELINE, 0.0, s) for s in setup.seeds]
    jobs += [(kind, lam, s)
             for kind in (ObjectiveKind.O1_GBS, ObjectiveKind.O2_GLRDN, ObjectiveKind.O3_EC)
             for lam in setup.lambdas for s in setup.seeds]
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        return [_run(setup, *job) for job in jobs]
    with ProcessPoolExecutor(workers) as pool:
        futures = [pool.submit(_run, setup, *job) for job in jobs]
        return [f.result() for f in futures]


def median_auc(results: list[RunResult]) -> dict[tuple[str, float], float]:
    groups: dict[tuple[str, float], list[float]] = {}
    for r in results:
        groups.setdefault((r.objective, r.lam), []).append(r.auc)
    return {k: float(np.median(v)) for k, v in groups.items()}


def write_results(results: list[RunResult], path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["objective", "lambda", "seed", "auc", "acc", "final_loss"])
        for r in results:
            w.writerow([r.objective, r.lam, r.seed, f"{r.auc:.6f}", f"{r.acc:.6f}", f"{r.final_loss:.6f}"])
