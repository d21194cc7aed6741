"""Prune one pretrained tiny transformer to 50% with every method and print a table.

Usage: python3 demos/compare_methods.py [config.json] [seed]
"""

import sys
import time

from instant_soup.harness.config import load_config
from instant_soup.harness.runs import run_method
from instant_soup.data import evaluate, pretrain
from instant_soup.ledger import BudgetLedger

METHODS = ("isp", "oneshot", "random", "snip", "progressive", "imp", "imp-rewind")


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "demos/desk_task.json"
    cfg = load_config(path, seed=int(sys.argv[2]) if len(sys.argv) > 2 else 0)
    ds = cfg.build_dataset()
    pre = pretrain(cfg.model_spec(ds), ds, cfg.pretrain_epochs, lr=cfg.pretrain_lr, batch_size=cfg.batch_size,
                   seed=cfg.seed)
    T = cfg.total_steps(ds)
    print(f"pretrained: test accuracy {evaluate(pre, ds, 'test'):.3f}; budget T = {T} steps\n")
    print(f"{'method':<12}{'test acc':>10}{'sparsity':>10}{'steps':>8}{'GFLOPs':>9}{'secs':>7}")
    for m in METHODS:
        t0 = time.perf_counter()
        ledger = BudgetLedger(pre.model.spec, cfg.batch_size, record_trace=False)
        _, mask, met = run_method(cfg, m, ds, pre, T, ledger)
        print(f"{m:<12}{met['test_accuracy']:>10.3f}{met['sparsity']:>10.3f}{ledger.total_steps:>8}"
              f"{ledger.total_flops / 1e9:>9.2f}{time.perf_counter() - t0:>7.1f}")


if __name__ == "__main__":
    main()
