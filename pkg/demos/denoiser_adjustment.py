"""Why more denoisers do not change the ISP mask when the union is trimmed by snapshot magnitudes.

The union of candidate masks always contains the snapshot's own magnitude
mask, and trimming the union back to the target by those same magnitudes
selects exactly that mask again. Trimming by look-ahead-averaged magnitudes
instead lets the candidates vote. This script counts how often each rule
reproduces the plain magnitude mask, then compares ISP accuracy on one seed.

Usage: python3 demos/denoiser_adjustment.py [config.json] [seed]
"""

import sys

from instant_soup.data import pretrain
from instant_soup.engine import fresh_checkpoint, train_steps
from instant_soup.harness.config import load_config
from instant_soup.harness.runs import run_method
from instant_soup.ledger import BudgetLedger
from instant_soup.pruning import DenoiserConfig, denoised_prune, magnitude_prune


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "demos/desk_task.json"
    cfg = load_config(path, seed=int(sys.argv[2]) if len(sys.argv) > 2 else 1)
    ds = cfg.build_dataset()
    pre = pretrain(cfg.model_spec(ds), ds, cfg.pretrain_epochs, lr=cfg.pretrain_lr, seed=cfg.seed)
    ck = fresh_checkpoint(pre.model.copy(), ds.train, lr=cfg.lr, weight_decay=cfg.weight_decay, total_steps=500,
                          batch_size=cfg.batch_size, seed=cfg.seed)
    # walk five prune calls and count how often each rule returns the plain magnitude mask
    same = {"snapshot": 0, "lookahead_mean": 0}
    mask = ck.model.ones_mask()
    for call in range(5):
        train_steps(ck, ds, 50, mask=mask)
        plain = magnitude_prune(ck.model, mask, 0.15)
        for adjust in same:
            m = denoised_prune(ck, mask, DenoiserConfig(4, cfg.look_ahead, adjust_by=adjust), 0.15, ds,
                               call_index=call)
            same[adjust] += m == plain
        mask = plain
        ck.model.apply_mask(mask)
    for adjust, n in same.items():
        print(f"{adjust:<15} returned the plain magnitude mask in {n}/5 calls")
    print()
    for adjust, n in (("snapshot", 0), ("snapshot", 4), ("lookahead_mean", 4)):
        c = load_config(path, seed=cfg.seed, adjust_by=adjust, denoisers=n)
        ledger = BudgetLedger(pre.model.spec, c.batch_size, record_trace=False)
        _, _, met = run_method(c, "isp", ds, pre, c.total_steps(ds), ledger)
        print(f"ISP N={n} adjust={adjust:<15} test accuracy {met['test_accuracy']:.3f}  "
              f"fine-tune steps {ledger.steps.get('finetune', 0)}")


if __name__ == "__main__":
    main()
