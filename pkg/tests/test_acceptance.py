"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The desk-scale task used by the trend criteria is a width-4 tiny transformer on
the 32-class marker task (vocab 40, length 16, 4000 sequences), pretrained for
60 epochs, pruned to 50% with a 1500-step budget.
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from instant_soup.data import gen_gaussian_clusters, pretrain, seed_steps
from instant_soup.engine import fresh_checkpoint, train_steps
from instant_soup.engine.models import forward
from instant_soup.engine.tensor import cross_entropy
from instant_soup.harness import cli
from instant_soup.harness.config import ExperimentConfig
from instant_soup.harness.runs import compare_masks, cmd_sweep, run_method
from instant_soup.ledger import BudgetLedger
from instant_soup.masks import Mask, cosine_similarity, intersect, is_subset, union
from instant_soup.pruning import (
    DenoiserConfig, PruneSchedule, TrainConfig, denoised_prune, imp_run, isp_run, kept_for_sparsity, magnitude_prune,
)
from instant_soup.soup import DEFAULT_GRID, SoupConfig, ims_run, interpolate_greedy

from conftest import ACCEPTANCE, make_mlp
from gradcheck import all_cases, run_case

SEEDS = (0, 1, 2)
TASK = dict(model="tiny-transformer", dataset="sequence", width=4, heads=1, classes=32, vocab=40, seq_len=16, n=4000,
            pretrain_epochs=60, total_budget=1500, look_ahead=10, denoisers=4, compare_round_budget=300)


def record(n, ok, detail):
    ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    assert ok, ACCEPTANCE[n]


def task_config(seed, **over):
    return ExperimentConfig(**{**TASK, **over, "seed": seed})


@pytest.fixture(scope="session")
def task():
    """Per seed: (config, dataset, pretrained checkpoint, T)."""
    out = {}
    for s in SEEDS:
        cfg = task_config(s)
        ds = cfg.build_dataset()
        pre = pretrain(cfg.model_spec(ds), ds, cfg.pretrain_epochs, lr=cfg.pretrain_lr, batch_size=cfg.batch_size,
                       seed=s)
        out[s] = (cfg, ds, pre, cfg.total_steps(ds))
    return out


@pytest.fixture(scope="session")
def quality(task):
    """Test accuracy per method per seed on the shared 50% / T=1500 setting."""
    res = {m: [] for m in ("isp", "isp-n0", "oneshot", "random", "imp")}
    for s in SEEDS:
        cfg, ds, pre, T = task[s]
        for name in res:
            method, kw = ("isp", {"denoisers": 0}) if name == "isp-n0" else (name, {})
            ledger = BudgetLedger(pre.model.spec, cfg.batch_size, record_trace=False)
            _, _, met = run_method(cfg, method, ds, pre, T, ledger, **kw)
            res[name].append(met["test_accuracy"])
    return res


def test_criterion_01_gradients():
    t0 = time.perf_counter()
    cases = all_cases()
    errs = [run_case(c) for c in cases]
    kinds = {c[1] for c in cases}
    elapsed = time.perf_counter() - t0
    ok = len(cases) >= 100 and max(errs) < 1e-4 and elapsed < 60 and {"attention", "feed_forward"} <= kinds
    record(1, ok, f"{len(cases)} cases over {len(kinds)} layer/op types, max rel err {max(errs):.2e}, {elapsed:.1f}s")


def _expected_calls(method, size, target, n_calls, rate):
    """Kept count after each prune call, recomputed from the removal rule."""
    if method in ("oneshot", "random", "snip"):
        return [target]
    kept, out = size, []
    for j in range(n_calls):
        r = 1.0 - target / kept if method == "progressive" and j == n_calls - 1 else rate
        kept = max(target, kept - math.floor(r * kept + 1e-9))
        out.append(kept)
    return out


def test_criterion_02_sparsity_exactness():
    worst, checked = 0, 0
    for S in (0.5, 0.8):
        cfg = ExperimentConfig(model="tiny-transformer", dataset="sequence", width=8, classes=4, vocab=8, seq_len=6,
                               n=400, pretrain_epochs=2, total_budget=400, look_ahead=5, denoisers=2,
                               imp_round_budget=20, imp_rounds=11, target_sparsity=S, mask_budget_fraction=0.75)
        ds = cfg.build_dataset()
        pre = pretrain(cfg.model_spec(ds), ds, cfg.pretrain_epochs, seed=0)
        size = pre.model.ones_mask().size
        target = kept_for_sparsity(size, S)
        for method in ("isp", "imp", "imp-rewind", "oneshot", "random", "progressive", "snip"):
            ledger = BudgetLedger(pre.model.spec, cfg.batch_size, record_trace=False)
            _, mask, met = run_method(cfg, method, ds, pre, cfg.total_steps(ds), ledger)
            rate = (1.0 - (1.0 - S) ** (1.0 / cfg.progressive_prunes) if method == "progressive"
                    else cfg.compression_rate)
            expect = _expected_calls(method, size, target, len(met["masks"]), rate)
            got = [m.kept for m in met["masks"]]
            assert len(got) == len(expect)
            worst = max([worst, abs(mask.kept - target)] + [abs(a - b) for a, b in zip(got, expect)])
            checked += len(got)
            for a, b in zip(met["masks"], met["masks"][1:]):
                assert is_subset(b, a)
    record(2, worst <= 1, f"{checked} prune calls over 7 methods x 2 targets, worst |kept - target| = {worst}")


def test_criterion_03_mask_laws():
    reg = (("a", (3, 5)), ("b", (7,)))
    rng = np.random.default_rng(0)
    n = 0
    for _ in range(1000):
        a, b, c = (Mask.from_flat(reg, rng.random(22) < rng.random()) for _ in range(3))
        assert union(a, b) == union(b, a) and intersect(a, b) == intersect(b, a)
        assert union(union(a, b), c) == union(a, union(b, c))
        assert intersect(intersect(a, b), c) == intersect(a, intersect(b, c))
        assert union(a, a) == a and intersect(a, a) == a
        if a.kept and b.kept:
            cab = cosine_similarity(a, b)
            x, y = a.flat().astype(float), b.flat().astype(float)
            assert abs(cab - x @ y / math.sqrt(x.sum() * y.sum())) < 1e-12
            assert cosine_similarity(a, a) == 1.0
            assert (cab == 0.0) == (not intersect(a, b).kept)
        n += 1
    four = (("w", (4,)),)
    m = lambda bits: Mask.from_flat(four, np.array(bits, bool))  # noqa: E731
    ok = (cosine_similarity(m([1, 1, 0, 0]), m([1, 0, 1, 0])) == 0.5
          and cosine_similarity(m([1, 1, 0, 0]), m([1, 1, 0, 0])) == 1.0
          and cosine_similarity(m([1, 1, 0, 0]), m([0, 0, 1, 1])) == 0.0)
    record(3, ok and n >= 1000, f"{n} random triples satisfy the set laws; cosine endpoints and 0.5 example hold")


def test_criterion_04_n0_equivalence(task):
    cfg, ds, pre, _ = task[0]
    ck = fresh_checkpoint(pre.model.copy(), ds.train, lr=1e-3, weight_decay=0.1, total_steps=100,
                          batch_size=32, seed=0)
    train_steps(ck, ds, 20)
    trials = 0
    ok = True
    m = ck.model.ones_mask()
    for rate in (0.05, 0.15, 0.3, 0.5):
        ok &= denoised_prune(ck, m, DenoiserConfig(0, 10), rate, ds) == magnitude_prune(ck.model, m, rate)
        m = magnitude_prune(ck.model, m, 0.15)
        trials += 1
    record(4, ok, f"N=0 denoised mask bit-identical to magnitude mask at {trials} rates")


def test_criterion_05_restoration(task):
    cfg, ds, pre, _ = task[1]
    ck = fresh_checkpoint(pre.model.copy(), ds.train, lr=1e-3, weight_decay=0.1, total_steps=100,
                          batch_size=32, seed=1)
    train_steps(ck, ds, 15)
    snap = ck.copy()
    denoised_prune(ck, ck.model.ones_mask(), DenoiserConfig(4, 10), 0.15, ds)
    ok = all(np.array_equal(p.data, snap.model.params[n].data) for n, p in ck.model.params.items())
    ok &= all(np.array_equal(ck.optimizer.exp_avg[n], snap.optimizer.exp_avg[n])
              and np.array_equal(ck.optimizer.exp_avg_sq[n], snap.optimizer.exp_avg_sq[n])
              for n in snap.optimizer.exp_avg)
    ok &= ck.optimizer.step_count == snap.optimizer.step_count and ck.stream.same_state(snap.stream)
    ok &= ck.step == snap.step
    record(5, bool(ok), "weights, AdamW moments, step count and data-stream position unchanged after 4 look-aheads")


def test_criterion_06_budget_ratio(task):
    t0 = time.perf_counter()
    cfg, ds, pre, _ = task[0]
    T = 3000
    train = TrainConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size, seed=0)
    t = seed_steps(ds.train.size, cfg.batch_size)
    isp_l = BudgetLedger(pre.model.spec, cfg.batch_size)
    _, mask, _ = isp_run(pre, PruneSchedule(t, 0.15, 0.5, T // 2, T), DenoiserConfig(5, 50), ds, isp_l, train)
    imp_l = BudgetLedger(pre.model.spec, cfg.batch_size, record_trace=False)
    imp_run(pre, 5, T, 0.15, ds, imp_l, train, target_sparsity=0.5, finetune_budget=T)
    ratio = imp_l.total_flops / isp_l.total_flops
    elapsed = time.perf_counter() - t0
    ok = isp_l.total_steps <= 1.1 * T and ratio >= 4.5 and elapsed < 600
    record(6, ok, f"ISP {isp_l.total_steps} steps for T={T} (look-ahead {isp_l.steps['lookahead']}); "
                  f"IMP/ISP FLOPs = {ratio:.2f}; {elapsed:.0f}s")


def test_criterion_07_quality_trend(quality):
    mean = {k: float(np.mean(v)) for k, v in quality.items()}
    ok = (mean["isp"] - mean["oneshot"] >= 0.01 and mean["isp"] - mean["random"] >= 0.01
          and abs(mean["isp"] - mean["imp"]) <= 0.02)
    detail = ", ".join(f"{k} {100 * mean[k]:.2f}" for k in ("isp", "oneshot", "random", "imp"))
    record(7, ok, f"mean test accuracy (%) over 3 seeds: {detail}")


def test_criterion_08_denoiser_ablation(quality, tmp_path):
    cfg = ExperimentConfig(model="tiny-transformer", dataset="sequence", width=8, classes=4, vocab=8, seq_len=6,
                           n=400, pretrain_epochs=2, total_budget=1000, look_ahead=5)
    grid = (0, 2, 4, 6, 8, 16)
    rows = cmd_sweep(cfg, tmp_path, "denoiser_count", grid)
    sweep_ok = [r["value"] for r in rows] == list(grid) and all(r["status"] == "ok" for r in rows)
    sweep_ok &= (tmp_path / "sweep.csv").exists()
    n4, n0 = float(np.mean(quality["isp"])), float(np.mean(quality["isp-n0"]))
    record(8, n4 >= n0 and sweep_ok,
           f"N=4 mean {100 * n4:.2f}% vs N=0 mean {100 * n0:.2f}%; sweep over {list(grid)} "
           f"{'reported' if sweep_ok else 'incomplete'}")


def test_criterion_09_mask_similarity(task):
    wins, cells = 0, []
    for s in SEEDS:
        cfg, ds, pre, T = task[s]
        rows = compare_masks(cfg, ds, pre, T, ("oneshot", "imp"), (0.1, 0.8))
        cos = {r["sparsity"]: r["cosine_keep"] for r in rows if r["method_a"] != r["method_b"]}
        wins += cos[0.1] > cos[0.8]
        cells.append(f"s{s}: {cos[0.1]:.3f} vs {cos[0.8]:.3f}")
    record(9, wins >= 2, f"one-shot/IMP cosine at 10% vs 80%: {'; '.join(cells)} ({wins}/3 seeds)")


def _probe(p):
    return make_mlp(p, input_dim=2, width=2, classes=2, depth=0)


def _k2_matches_enumeration():
    ds = gen_gaussian_clusters(classes=2, dim=2, separation=2.0, n=40, seed=9)
    val = ds.split("val")
    rng = np.random.default_rng(1)
    base = {"head.weight": rng.normal(size=(2, 2)), "head.bias": rng.normal(size=2)}
    c1 = {k: v + rng.normal(scale=0.5, size=v.shape) for k, v in base.items()}
    c2 = {k: v + rng.normal(scale=0.5, size=v.shape) for k, v in base.items()}
    tmpl = _probe(base)
    cur, a1, _ = interpolate_greedy(c1, base, tmpl, val, metric="loss")
    _, a2, _ = interpolate_greedy(c2, cur, tmpl, val, metric="loss")

    def score(x1, x2):
        m = tmpl.copy()
        m.load_state({k: (1 - x2) * ((1 - x1) * base[k] + x1 * c1[k]) + x2 * c2[k] for k in base})
        return -float(cross_entropy(forward(m, val[0]), val[1]).data)

    table = {(x1, x2): score(x1, x2) for x1, x2 in itertools.product(DEFAULT_GRID, repeat=2)}
    s1 = max(DEFAULT_GRID, key=lambda x: (table[(x, 0.0)], -x))
    s2 = max(DEFAULT_GRID, key=lambda x: (table[(s1, x)], -x))
    return (a1, a2) == (s1, s2)


def test_criterion_10_ims_guarantees(task):
    gains = []
    for s in SEEDS:
        cfg, ds, pre, _ = task[s]
        out, log, _ = ims_run(pre, SoupConfig(n_candidates=4, weak_steps=100), ds, seed=s)
        before = log[0]["val_before"]
        gains.append(out.meta["val_accuracy"] - before)
    cfg, ds, pre, _ = task[0]
    same, _, _ = ims_run(pre, SoupConfig(n_candidates=1, weak_steps=0), ds)
    exact = all(np.array_equal(same.model.params[n].data, p.data) for n, p in pre.model.params.items())
    brute = _k2_matches_enumeration()
    ok = min(gains) >= 0 and exact and brute
    record(10, ok, f"val gain per seed {[round(g, 4) for g in gains]}; K=1,C=0 bit-exact={exact}; "
                   f"K=2 greedy = grid enumeration: {brute}")


def _snapshot(d: Path):
    keep = ("*.mask", "masks/*.mask", "*.ckpt", "*.csv")
    return {str(p.relative_to(d)): p.read_bytes() for pat in keep for p in sorted(d.glob(pat))}


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "tiny-transformer", "dataset": "sequence", "width": 8, "classes": 4,
                               "vocab": 8, "seq_len": 6, "n": 400, "pretrain_epochs": 3, "total_budget": 300,
                               "look_ahead": 10, "denoisers": 2, "imp_round_budget": 60, "soup_candidates": 2,
                               "soup_steps": 10, "seed": 5}))
    commands = [["prune", "--method", m] for m in ("isp", "imp", "progressive", "snip")] + [["ims"], ["pretrain"]]
    same, files = True, 0
    for i, cmd in enumerate(commands):
        snaps = []
        for rep in ("a", "b"):
            out = tmp_path / f"{i}{rep}"
            assert cli.run([cmd[0], "--config", str(cfg), "--out", str(out), *cmd[1:]]) == 0
            snaps.append(_snapshot(out))
        same &= snaps[0] == snaps[1] and bool(snaps[0])
        files += len(snaps[0])
    record(11, same, f"{len(commands)} commands run twice: {files} mask/checkpoint/CSV files byte-identical")
