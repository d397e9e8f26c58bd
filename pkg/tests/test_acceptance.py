"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines as
they happen; they are also summarized at the end of every run.
"""

import math
import time

import numpy as np
import pytest

from stgcn.cli import dispatch
from stgcn.config import RunConfig
from stgcn.evaluation import evaluate, parse_comparison_csv
from stgcn.gradcheck import random_sample, run_suite
from stgcn.graph import adjacency, build_snapshot
from stgcn.model import MODEL_KINDS, ModelConfig, TrainHyper, fit, gcn_forward, init_params, mean_loss
from stgcn.numerics import make_rng

from .conftest import record_criterion

# (method, mission, accuracy, rmse) as reported for the two missions
REPORTED_SCORES = [
    ("RF", "A", 0.59, 0.62),
    ("RF", "B", 0.55, 0.67),
    ("SVC", "A", 0.66, 0.58),
    ("SVC", "B", 0.52, 0.70),
    ("FNN", "A", 0.72, 0.52),
    ("FNN", "B", 0.70, 0.55),
    ("GCN", "A", 0.69, 0.55),
    ("GCN", "B", 0.69, 0.56),
    ("GRU", "A", 0.71, 0.53),
    ("GRU", "B", 0.69, 0.56),
    ("DCRNN", "A", 0.72, 0.53),
    ("DCRNN", "B", 0.71, 0.54),
    ("ST-GCN", "A", 0.75, 0.49),
    ("ST-GCN", "B", 0.74, 0.51),
]


def table_misfits(tol=0.015):
    return [(m, s, round(abs(math.sqrt(1 - a) - r), 4)) for m, s, a, r in REPORTED_SCORES if abs(math.sqrt(1 - a) - r) > tol]


@pytest.mark.xfail(strict=True, reason="RF/Mission A pair: sqrt(1 - 0.59) = 0.640 vs printed 0.62 (see decisions ledger)")
def test_criterion_1_table_identity():
    bad = table_misfits()
    record_criterion(1, not bad, f"sqrt(1 - acc) vs printed RMSE within 0.015 on {14 - len(bad)}/14 pairs; misfits {bad}")
    assert not bad


def test_table_identity_misfit_is_only_rf_a():
    # pins the failure analysis: even after allowing for two-decimal rounding of
    # both printed numbers, the RF/A pair cannot satisfy the identity
    assert [(m, s) for m, s, _ in table_misfits()] == [("RF", "A")]
    lo = math.sqrt(1 - 0.595)
    assert lo - 0.625 > 0.011


def test_criterion_2_gradient_oracle():
    t0 = time.perf_counter()
    results = run_suite(range(5), ModelConfig(hidden_dim=8), MODEL_KINDS, eps=1e-5)
    elapsed = time.perf_counter() - t0
    worst = max(err for blocks in results.values() for err in blocks.values())
    ok = worst < 1e-4 and elapsed < 60
    record_criterion(2, ok, f"worst block relative error {worst:.2e} over 5 seeds x 4 models, {elapsed:.1f}s")
    assert ok


def test_criterion_3_graph_construction():
    t0 = time.perf_counter()
    rng = make_rng(3, "acceptance")
    row_err = perm_adj = perm_gcn = 0.0
    params = init_params(ModelConfig(hidden_dim=8), rng)
    for _ in range(1000):
        p = rng.normal(scale=10, size=(3, 2))
        a = adjacency(p)
        row_err = max(row_err, np.abs(a.sum(axis=1) - 1).max())
        P = np.eye(3)[rng.permutation(3)]
        perm_adj = max(perm_adj, np.abs(adjacency(P @ p) - P @ a @ P.T).max())
        lap = build_snapshot(p).laplacian
        x = rng.normal(size=(3, 6))
        lhs = gcn_forward(P @ x, build_snapshot(P @ p).laplacian, params)
        perm_gcn = max(perm_gcn, np.abs(lhs - P @ gcn_forward(x, lap, params)).max())
    snap = build_snapshot(np.full((3, 2), 4.0))
    colocated = max(
        np.abs(snap.adjacency - 1 / 3).max(),
        np.abs(snap.laplacian - (np.full((3, 3), 1 / 6) + np.eye(3) / 2)).max(),
    )
    elapsed = time.perf_counter() - t0
    ok = row_err <= 1e-9 and perm_adj <= 1e-9 and perm_gcn <= 1e-9 and colocated <= 1e-12 and elapsed < 5
    record_criterion(
        3,
        ok,
        f"row-sum {row_err:.1e}, perm adjacency {perm_adj:.1e}, perm gcn {perm_gcn:.1e}, co-located {colocated:.1e}, {elapsed:.2f}s",
    )
    assert ok


def test_criterion_4_overfit():
    t0 = time.perf_counter()
    cfg = ModelConfig(seed=0)
    x, lap, _ = random_sample(cfg, make_rng(0, "overfit"), batch=8)
    y = np.array([0, 1] * 4)
    params, _, _ = fit("stgcn", x, lap, y, cfg, TrainHyper(lr=1e-3, batch=8, iterations=2000))
    final = mean_loss("stgcn", x, lap, y, params, cfg)
    elapsed = time.perf_counter() - t0
    ok = final < 0.01 and elapsed < 60
    record_criterion(4, ok, f"mean training loss {final:.2e} after 2000 iterations at lr 1e-3, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def bench_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench42")
    t0 = time.perf_counter()
    code = dispatch(["bench", "--seed", "42", "--out", str(out)])
    return out, code, time.perf_counter() - t0


def test_criterion_5_synthetic_benchmark(bench_run):
    out, code, elapsed = bench_run
    assert code == 0
    acc = {name: row["accuracy"] for name, row in parse_comparison_csv((out / "comparison.csv").read_text()).items()}
    st = acc["stgcn"]
    ok = st >= 0.80 and st >= acc["gcn_only"] - 0.02 and st >= acc["gru_only"] - 0.02 and elapsed < 300
    detail = ", ".join(f"{k} {v:.4f}" for k, v in acc.items())
    record_criterion(5, ok, f"test accuracy {detail}; {elapsed:.0f}s")
    assert ok


def test_criterion_6_default_hyperparameters():
    d = RunConfig().to_dict()
    expected = {
        "hidden_dim": 32,
        "num_windows": 15,
        "window_interval_s": 2,
        "segment_len_s": 30,
        "lr": 0.0001,
        "batch": 64,
        "iterations": 1000,
        "threshold_points": 10,
        "split_ratio": 0.8,
    }
    got = {k: d[k] for k in expected}
    ok = got == expected and all(type(got[k]) is type(v) or float(got[k]) == v for k, v in expected.items())
    record_criterion(6, ok, f"default RunConfig {got}")
    assert ok


def test_criterion_7_determinism(bench_run, tmp_path):
    out, code, _ = bench_run
    assert code == 0
    t0 = time.perf_counter()
    for name in ("a", "b"):
        assert dispatch(["train", "--data", str(out / "prepared.npz"), "--out", str(tmp_path / f"{name}.json"), "--seed", "42"]) == 0
    elapsed = time.perf_counter() - t0
    same_ckpt = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    same_hist = (tmp_path / "a.history.csv").read_bytes() == (tmp_path / "b.history.csv").read_bytes()
    ok = same_ckpt and same_hist and elapsed < 120
    record_criterion(7, ok, f"checkpoints identical {same_ckpt}, histories identical {same_hist}, {elapsed:.1f}s")
    assert ok


def test_criterion_8_metric_identities():
    rng = make_rng(8, "metrics")
    identity = auc_gap = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 80))
        truth = rng.integers(0, 2, n)
        prob = rng.integers(0, 33, n) / 32
        pred = (prob > 0.5).astype(int)
        m = evaluate(pred, prob, truth)
        identity = max(identity, abs(m.rmse**2 + m.accuracy - 1))
        for f in (np.sqrt, lambda p: p**2, lambda p: 1 / (1 + np.exp(-8 * (p - 0.5)))):
            auc_gap = max(auc_gap, abs(evaluate(pred, f(prob), truth).auc - m.auc))
    hand = evaluate([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1], [1, 0, 0, 0])
    hand_ok = (hand.accuracy, hand.rmse, round(hand.f1, 4)) == (0.75, 0.5, 0.6667)
    ok = identity <= 1e-12 and auc_gap <= 1e-12 and hand_ok
    record_criterion(
        8,
        ok,
        f"max |rmse^2 + acc - 1| {identity:.1e}, AUC transform gap {auc_gap:.1e}, "
        f"hand example acc {hand.accuracy} rmse {hand.rmse} F1 {hand.f1:.4f}",
    )
    assert ok
