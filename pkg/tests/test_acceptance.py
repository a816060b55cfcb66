"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]`` / ``[FAIL]`` line (also collected into
the terminal summary) before asserting. Tolerances are fixed by the criteria
and are not to be loosened.
"""
import dataclasses
import itertools
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, central_differences
from pixreg import cli, segnet
from pixreg.benchmark import BenchmarkSetup, median_auc, run_benchmark, write_results
from pixreg.data import PatchSpec, load_mask, parse_manifest, patch_dataset, save_pgm, synthetic_split
from pixreg.grid_graph import Connectivity, GridShape, build_grid_edges, laplacian_from_edges, laplacian_matvec, quadratic_form
from pixreg.labeling import component_sizes
from pixreg.metrics import auc, roc_curve
from pixreg.optim import lr_schedule
from pixreg.regularizers import (
    EcDirection,
    ObjectiveKind,
    RegularizerConfig,
    bce_value_grad,
    ec_regularizer,
    euler_characteristic_hard,
    euler_characteristic_soft,
    gbs_value_grad,
    glrdn_value_grad,
)
from pixreg.segnet import NetworkSpec
from pixreg.trainer import TrainConfig, TrainLog, gradient_check, mean_bce, train

ndimage = pytest.importorskip("scipy.ndimage")


def record(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- independent oracles


def neighbour_pairs(rows, cols, connectivity):
    """Adjacent vertex pairs by testing every pair of pixels."""
    out = []
    for i, j in itertools.combinations(range(rows * cols), 2):
        (ri, ci), (rj, cj) = divmod(i, cols), divmod(j, cols)
        dr, dc = abs(ri - rj), abs(ci - cj)
        if dr + dc == 1 or (connectivity is Connectivity.N8 and dr == dc == 1):
            out.append((i, j))
    return out


def dense_laplacian(n, pairs, weights):
    adj = np.zeros((n, n))
    for (i, j), w in zip(pairs, weights):
        adj[i, j] = adj[j, i] = w
    return np.diag(adj.sum(axis=1)) - adj


def loop_edge_sum(pairs, weights, y):
    return sum(w * (y[i] - y[j]) ** 2 for (i, j), w in zip(pairs, weights))


def pairwise_auc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def hole_free(b):
    """Certificate: filling 4-connected background holes changes nothing."""
    return bool(np.array_equal(ndimage.binary_fill_holes(b), b))


def components8(b):
    return int(ndimage.label(b, structure=np.ones((3, 3), int))[1])


def max_rel(a, n):
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-300))


# ---------------------------------------------------------------- criteria


def test_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}

    def check(name, f, g, y):
        err = max_rel(g(y), central_differences(f, y, 1e-5))
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(100):
        shape = tuple(int(v) for v in rng.integers(2, 8, 2))
        y = rng.uniform(0.02, 0.98, shape)
        t = rng.random(shape)
        tb = (rng.random(shape) < 0.4).astype(float)
        check("gbs", lambda z: gbs_value_grad(z, t).value, lambda z: gbs_value_grad(z, t).grad, y)
        check("glrdn", lambda z: glrdn_value_grad(z, t).value, lambda z: glrdn_value_grad(z, t).grad, y)
        check("bce", lambda z: bce_value_grad(z, tb).value, lambda z: bce_value_grad(z, tb).grad, y)
        for d in EcDirection:
            check(f"ec_soft_{d.name.lower()}", lambda z: euler_characteristic_soft(z, d).value,
                  lambda z: euler_characteristic_soft(z, d).grad, y)
        check("ec_regularizer", lambda z: ec_regularizer(z).value, lambda z: ec_regularizer(z).grad, y)

    tiny = NetworkSpec(depth=1, base_channels=2)
    for kind in (ObjectiveKind.O1_GBS, ObjectiveKind.O2_GLRDN, ObjectiveKind.O3_EC):
        worst[f"net_{kind.value}"] = max(gradient_check(tiny, s, kind, entries=40) for s in range(100))
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 120
    summary = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    record("gradient correctness", ok, f"max rel err {summary}; {elapsed:.0f}s (limit 1e-4, 120s)")


def test_laplacian_algebra():
    rng = np.random.default_rng(7)
    worst = 0.0
    row_sum = 0.0
    min_eig = np.inf
    for k in range(1000):
        rows, cols = (int(v) for v in rng.integers(1, 9, 2))
        conn = Connectivity.N4 if k % 2 else Connectivity.N8
        pairs = neighbour_pairs(rows, cols, conn)
        weights = rng.random(len(pairs)) * 2
        edges = build_grid_edges(GridShape(rows, cols), conn)
        assert sorted(map(tuple, edges.pairs.tolist())) == sorted(pairs)
        order = {p: w for p, w in zip(pairs, weights)}
        edges = edges.with_weights([order[tuple(p)] for p in edges.pairs.tolist()])
        lap = laplacian_from_edges(edges)
        dense = dense_laplacian(rows * cols, pairs, weights)
        y = rng.normal(size=rows * cols)
        q = quadratic_form(lap, y)
        for ref in (loop_edge_sum(pairs, weights, y), y @ dense @ y):
            worst = max(worst, abs(q - ref) / max(abs(ref), 1e-300))
        row_sum = max(row_sum, float(np.max(np.abs(laplacian_matvec(lap, np.ones(rows * cols))))))
        if k % 10 == 0:
            min_eig = min(min_eig, float(np.linalg.eigvalsh(dense).min()))
    ok = worst <= 1e-12 and row_sum <= 1e-12 and min_eig >= -1e-12
    record("laplacian algebra", ok,
           f"max rel diff {worst:.1e} (limit 1e-12), max |L1| {row_sum:.1e}, min eigenvalue {min_eig:.1e} over 100 dense spot checks")


def test_glrdn_matrix_sum_identity():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        rows, cols = (int(v) for v in rng.integers(1, 9, 2))
        y, t = rng.random((rows, cols)), rng.random((rows, cols))
        pairs = neighbour_pairs(rows, cols, Connectivity.N4)
        d = (t - y).ravel()
        matrix_form = d @ dense_laplacian(rows * cols, pairs, np.ones(len(pairs))) @ d
        sum_form = glrdn_value_grad(y, t).value
        worst = max(worst, abs(matrix_form - sum_form) / max(abs(matrix_form), 1e-300))
    mismatches = 0
    grids = [np.array(bits, float).reshape(2, 3) for bits in itertools.product([0, 1], repeat=6)]
    for t, y in itertools.product(grids, grids):
        # a connected grid: zero exactly when t - y is constant
        if (glrdn_value_grad(y, t).value == 0) != (len(np.unique(t - y)) == 1):
            mismatches += 1
    ok = worst <= 1e-12 and mismatches == 0
    record("GLRDN matrix/sum identity", ok,
           f"max rel diff {worst:.1e} over 1000 pairs (limit 1e-12); 2x3 zero-set mismatches {mismatches}/4096")


def test_ec_oracle_equivalence():
    rng = np.random.default_rng(3)
    images = []
    while len(images) < 1000:
        b = rng.random((12, 12)) < rng.uniform(0.05, 0.6)
        if hole_free(b):
            images.append(b)
    mismatch = {d: 0 for d in EcDirection}
    explained = 0
    soft_bad = 0
    for b in images:
        ref = components8(b)
        for d in EcDirection:
            hard = euler_characteristic_hard(b.astype(int), d)
            if hard != ref:
                mismatch[d] += 1
                # diagnostic only: components when just the selected diagonal links pixels
                structure = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]] if d is EcDirection.DIR1
                                     else [[0, 1, 1], [1, 1, 1], [1, 1, 0]])
                explained += hard == ndimage.label(b, structure=structure)[1]
            soft_bad += euler_characteristic_soft(b.astype(float), d).value != hard
    ring = np.ones((3, 3), int)
    ring[1, 1] = 0
    ring_vals = [euler_characteristic_hard(ring, d) for d in EcDirection]
    ok = all(v == 0 for v in mismatch.values()) and soft_bad == 0 and ring_vals == [0, 0]
    record("EC oracle equivalence", ok,
           f"hard EC != 8-connected components on {mismatch[EcDirection.DIR1]}/1000 (dir1), "
           f"{mismatch[EcDirection.DIR2]}/1000 (dir2) hole-free 12x12 images; "
           f"soft != hard on {soft_bad}/2000; ring fixture {ring_vals}; "
           f"{explained}/{sum(mismatch.values())} mismatches equal the component count under "
           f"rook plus selected-diagonal adjacency (diagonal-only contacts on the other diagonal split)")


def test_ec_symmetry():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        y = rng.random(tuple(int(v) for v in rng.integers(2, 16, 2)))
        v = ec_regularizer(y).value
        for g in (y[:, ::-1], y[::-1, :], y[::-1, ::-1]):
            worst = max(worst, abs(ec_regularizer(np.ascontiguousarray(g)).value - v) / max(abs(v), 1.0))
    record("EC symmetry", worst <= 1e-12, f"max rel diff {worst:.1e} over 200 maps x 3 transforms (limit 1e-12)")


def test_auc_correctness():
    rng = np.random.default_rng(13)
    worst = 0.0
    for k in range(1000):
        n = int(rng.integers(2, 201))
        truth = rng.random(n) < rng.uniform(0.05, 0.95)
        if truth.all() or not truth.any():
            truth[0], truth[1] = True, False
        scores = rng.integers(0, 6, n) / 5 if k % 2 else rng.random(n)
        worst = max(worst, abs(auc(roc_curve(scores, truth)) - pairwise_auc(scores, truth)))
    record("AUC correctness", worst <= 1e-9, f"max |trapezoid - pairwise| {worst:.1e} over 1000 instances (limit 1e-9)")


def test_training_protocol():
    rates = [lr_schedule(e, epochs=100) for e in range(100)]
    schedule_ok = rates == [1e-3] * 25 + [1e-4] * 25 + [1e-5] * 25 + [1e-6] * 25

    spec = NetworkSpec()
    train_set, _ = synthetic_split(8, 0)
    data = patch_dataset(train_set, PatchSpec(32, 100, 0))
    cfg = TrainConfig(epochs=2, patch_size=32, patches_per_image=100, objective=ObjectiveKind.O2_GLRDN,
                      reg=RegularizerConfig(lam=0.1))
    a, _ = train(data, spec, cfg)
    b, _ = train(data, spec, cfg)
    bitwise = segnet.checkpoint_bytes(a, spec) == segnet.checkpoint_bytes(b, spec)

    reductions = []
    for seed in range(3):
        seeded = dataclasses.replace(cfg, seed=seed)
        before = mean_bce(segnet.init_params(spec, seed, np.float32), spec, data)
        params, _ = train(data, spec, seeded)
        reductions.append(before - mean_bce(params, spec, data))
    smoke_ok = sum(r > 0 for r in reductions) == 3
    record("training protocol fidelity", schedule_ok and bitwise and smoke_ok,
           f"schedule exact={schedule_ok}, bitwise reproducible={bitwise}, "
           f"BCE reduction per seed {[round(r, 4) for r in reductions]}")


def test_directional_benchmark(tmp_path):
    setup = BenchmarkSetup()
    start = time.perf_counter()
    results = run_benchmark(setup)
    elapsed = time.perf_counter() - start
    write_results(results, tmp_path / "benchmark.csv")
    medians = median_auc(results)
    base = medians[("baseline", 0.0)]
    rows = {k: v for k, v in medians.items() if k[0] != "baseline"}
    not_worse = all(v >= base - 0.005 for v in rows.values())
    better = any(v > base for v in rows.values())
    table = ", ".join(f"{o}@{lam}={v:.4f}" for (o, lam), v in sorted(rows.items()))
    record("directional regularizer benefit", not_worse and better,
           f"baseline median AUC {base:.4f}; {table}; wall time {elapsed / 60:.1f} min on {os.cpu_count()} CPU(s)")


def test_cli_contract(tmp_path, capsys):
    checks = {}
    run = tmp_path / "run"
    example = ["train", "--synthetic", "8", "--objective", "o2", "--lambda", "0.1", "--epochs", "2", "--seed", "7"]
    checks["train example"] = cli.main([*example, "--out", str(run)]) == 0 and \
        (run / "checkpoint.bin").is_file() and len(TrainLog.from_csv(run / "train_log.csv")) == 2
    checks["train without dataset exits 2"] = cli.main(["train", "--out", str(tmp_path / "none")]) == 2
    rerun = tmp_path / "rerun"
    cli.main([*example, "--out", str(rerun)])
    checks["same seed, identical checkpoint"] = (rerun / "checkpoint.bin").read_bytes() == (run / "checkpoint.bin").read_bytes()

    data = tmp_path / "data"
    checks["synth exit 0"] = cli.main(["synth", str(data), "--count", "4", "--seed", "0"]) == 0
    splits = parse_manifest((data / "manifest.txt").read_text())
    stems = splits["train"] + splits["test"]
    checks["synth 8 PGMs + 4 stems"] = len(list(data.rglob("*.pgm"))) == 8 and len(stems) == 4
    cli.main(["synth", str(tmp_path / "data2"), "--count", "4", "--seed", "0"])
    checks["synth same bytes"] = all(p.read_bytes() == (tmp_path / "data2" / p.relative_to(data)).read_bytes()
                                     for p in data.rglob("*.pgm"))
    masks = [load_mask(data / "masks" / f"{s}.pgm") for s in stems]
    checks["synth masks valid"] = all(0.02 <= m.mean() <= 0.25 and component_sizes(m).max() >= 20 for m in masks)
    capsys.readouterr()

    for s in stems:
        save_pgm(data / "images" / f"{s}.pgm", load_mask(data / "masks" / f"{s}.pgm"))
    segnet.save_checkpoint(tmp_path / "oracle.bin", segnet.identity_params(NetworkSpec()), NetworkSpec())
    cli.main(["eval", "--data", str(data), "--checkpoint", str(tmp_path / "oracle.bin"),
              "--out", str(tmp_path / "ev"), "--name", "oracle"])
    row = capsys.readouterr().out.strip()
    checks["oracle eval row"] = row == "oracle,1.000000,1.000000,1.000000,1.000000"
    cli.main(["eval", "--synthetic", "8", "--seed", "7", "--out", str(run)])
    row = capsys.readouterr().out.strip().split(",")
    checks["eval row has 5 columns"] = len(row) == 5
    lines = (run / "roc.csv").read_text().splitlines()[1:]
    pts = [tuple(map(float, line.split(","))) for line in lines]
    area = sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))
    checks["ROC re-integrates within 1e-6"] = abs(area - float(row[4])) <= 1e-6

    fixtures = {"0 0 0.0 0": np.zeros((4, 4)), "1 1 1.0 1": np.pad([[1.0]], 2), "1 2 1.5 1": np.eye(2)}
    for expected, img in fixtures.items():
        path = tmp_path / "ec.pgm"
        save_pgm(path, img)
        cli.main(["ec", str(path)])
        checks[f"ec prints {expected!r}"] = capsys.readouterr().out.strip() == expected
    failed = [k for k, v in checks.items() if not v]
    record("CLI contract", not failed, f"{len(checks) - len(failed)}/{len(checks)} checks ok" +
           (f"; failed: {failed}" if failed else ""))
