import numpy as np
import pytest

from instant_soup.data import gen_sequence_task
from instant_soup.engine import ModelSpec, fresh_checkpoint, init_model, train_steps
from instant_soup.ledger import BudgetExceeded, BudgetLedger, flops_from_trace, flops_per_step, prunable_weight_count
from instant_soup.masks import Mask


def test_density_halves_prunable_contribution():
    spec = ModelSpec("mlp", 1, 6, 2, input_dim=4)
    dense = flops_per_step(spec, 8)
    half = flops_per_step(spec, 8, 0.5)
    # prunable: 4x6 hidden matrix; head 6x2 stays dense
    assert dense - half == 3 * 2 * 8 * (4 * 6) // 2
    assert flops_per_step(spec, 8, kept=12) == half
    assert prunable_weight_count(spec) == 24
    with pytest.raises(ValueError):
        flops_per_step(spec, 8, 0.0)


def test_transformer_counts_tokens_and_head_once():
    spec = ModelSpec("tiny-transformer", 1, 4, 3, vocab=5, seq_len=2, heads=1, ffn_mult=2)
    # per token: q,k,v,o (4x4 each) + ffn 4x8 + 8x4; head 4x3 once per example on the pooled token
    per_token = 4 * 16 + 2 * 32
    assert prunable_weight_count(spec) == per_token
    assert flops_per_step(spec, 1, train=False) == 2 * (3 * per_token + 12)


def test_trace_recomputation_and_phase_totals():
    ds = gen_sequence_task(8, 4, 3, 120, seed=0)
    spec = ModelSpec("tiny-transformer", 1, 8, 3, vocab=8, seq_len=4, heads=2)
    ck = fresh_checkpoint(init_model(spec, 0), ds.train, lr=1e-3, weight_decay=0.1, total_steps=20, batch_size=8,
                          seed=0)
    ledger = BudgetLedger(spec, 8)
    mask = Mask.from_flat(ck.model.registry, np.random.default_rng(0).random(ck.model.ones_mask().size) < 0.5)
    train_steps(ck, ds, 4, ledger=ledger, phase="mask_generation")
    train_steps(ck, ds, 6, mask=mask, ledger=ledger, phase="finetune")
    ledger.charge_eval(10, mask.kept)
    assert ledger.steps == {"mask_generation": 4, "finetune": 6}
    assert ledger.flops == flops_from_trace(spec, 8, ledger.trace)
    assert ledger.flops["finetune"] == 6 * flops_per_step(spec, 8, kept=mask.kept)
    assert ledger.total_flops == sum(ledger.flops.values())
    assert [r["step"] for r in ledger.trace if r["phase"] != "eval"] == list(range(1, 11))


def test_require_and_unknown_phase():
    ledger = BudgetLedger(ModelSpec("mlp", 0, 2, 2, input_dim=2), 4, budget=3)
    ledger.require(3, "x")
    for _ in range(2):
        ledger.charge_step("finetune", 4, 0.1, 1.0, 0.0)
    assert ledger.remaining() == 1
    with pytest.raises(BudgetExceeded, match="2 steps"):
        ledger.require(2, "look-ahead")
    with pytest.raises(ValueError):
        ledger.charge_step("bogus", 4, 0.1, 1.0, 0.0)
    s = ledger.summary()
    assert s["total_steps"] == 2 and s["budget"] == 3
