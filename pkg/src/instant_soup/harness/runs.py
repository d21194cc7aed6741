"""Run orchestration behind the CLI: every function writes into its own output directory.

Layout of a prune run::

    record.json        RunRecord (config, config hash, metrics, ledger totals, artifact paths)
    trace.jsonl        one JSON object per optimizer step / eval pass
    summary.csv        one-row summary
    ledger.json        per-phase steps and FLOPs
    masks/call_000.mask ...
    final.ckpt
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..data import evaluate, pretrain, save_dataset, seed_steps
from ..engine import checkpoint_io
from ..engine.training import Checkpoint
from ..ledger import BudgetExceeded, BudgetLedger, flops_from_trace
from ..masks import cosine_similarity, serialize
from ..pruning import (
    DenoiserConfig, PruneSchedule, TrainConfig, calls_needed, imp_run, isp_run, kept_for_sparsity,
    magnitude_prune, oneshot_run, progressive_prune_run, random_prune, snip_prune,
)
from ..rng import derive_rng
from ..soup import SoupConfig, ims_run
from .config import ExperimentConfig, config_from_dict

TRACE_SCHEMA = "instant-soup.trace/1"
SUMMARY_SCHEMA = "instant-soup.summary/1"
SUMMARY_FIELDS = ["schema", "config_hash", "seed", "method", "test_accuracy", "val_accuracy", "sparsity", "kept",
                  "target_kept", "total_steps", "budget", "budget_ratio", "total_flops", "trace_flops"]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: row.get(k, "") for k in header})
    path.write_text(buf.getvalue())


def _write_trace(path: Path, trace: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps({"schema": TRACE_SCHEMA, **rec}, sort_keys=True) + "\n")


def read_trace(path: Path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rec.pop("schema", None)
                out.append(rec)
    return out


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size, seed=cfg.seed)


def prepare(cfg: ExperimentConfig, out: Path):
    """Dataset, model spec, budget T and the pretrained checkpoint (loaded or trained here)."""
    out.mkdir(parents=True, exist_ok=True)
    ds = cfg.build_dataset()
    spec = cfg.model_spec(ds)
    if cfg.pretrained:
        pre = checkpoint_io.load(cfg.pretrained)
        if pre.model.spec != spec:
            raise ValueError(f"pretrained checkpoint {cfg.pretrained} was built for a different model spec")
    else:
        pre = pretrain(spec, ds, cfg.pretrain_epochs, lr=cfg.pretrain_lr, batch_size=cfg.batch_size, seed=cfg.seed)
    return ds, spec, cfg.total_steps(ds), pre


def cmd_pretrain(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    ds = cfg.build_dataset()
    spec = cfg.model_spec(ds)
    ledger = BudgetLedger(spec, cfg.batch_size)
    ckpt = pretrain(spec, ds, cfg.pretrain_epochs, lr=cfg.pretrain_lr, batch_size=cfg.batch_size, seed=cfg.seed,
                    ledger=ledger)
    digest = checkpoint_io.save(ckpt, out / "pretrained.ckpt")
    save_dataset(ds, out / "dataset.bin")
    _write_trace(out / "trace.jsonl", ledger.trace)
    record = {"command": "pretrain", "config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed,
              "val_accuracy": ckpt.meta["val_accuracy"], "test_accuracy": evaluate(ckpt, ds, "test"),
              "checkpoint": "pretrained.ckpt", "checkpoint_sha256": digest, "ledger": ledger.summary()}
    _write_json(out / "record.json", record)
    return record


def run_method(cfg: ExperimentConfig, method: str, ds, pre: Checkpoint, T: int, ledger: BudgetLedger,
               *, denoisers: int | None = None, look_ahead: int | None = None):
    """Dispatch one pruning method; returns (checkpoint, mask, metrics)."""
    train = _train_config(cfg)
    S = cfg.target_sparsity
    if method == "isp":
        t = seed_steps(ds.train.size, cfg.batch_size, cfg.seed_fraction)
        M = max(t, int(cfg.mask_budget_fraction * T))
        schedule = PruneSchedule(t, cfg.compression_rate, S, min(M, T), T)
        den = DenoiserConfig(cfg.denoisers if denoisers is None else denoisers,
                             cfg.look_ahead if look_ahead is None else look_ahead, adjust_by=cfg.adjust_by)
        return isp_run(pre, schedule, den, ds, ledger, train)
    if method in ("imp", "imp-rewind"):
        per_round = cfg.imp_round_budget or T
        rewind = cfg.rewind_step if method == "imp-rewind" else 0
        if method == "imp-rewind" and rewind == 0:
            rewind = max(1, per_round // 20)
        return imp_run(pre, cfg.imp_rounds, per_round, cfg.compression_rate, ds, ledger, train, rewind_step=rewind,
                       target_sparsity=S, finetune_budget=cfg.imp_finetune_budget or T)
    if method in ("oneshot", "random", "snip"):
        criterion = {"oneshot": "magnitude"}.get(method, method)
        return oneshot_run(pre, criterion, S, T, ds, ledger, train)
    if method == "progressive":
        return progressive_prune_run(pre, cfg.progressive_prunes, S, T, ds, ledger, train)
    raise ValueError(f"unknown method {method!r}")


def _summary_row(cfg: ExperimentConfig, method: str, metrics: dict, ledger: BudgetLedger, T: int) -> dict:
    trace_flops = sum(flops_from_trace(ledger.spec, ledger.batch_size, ledger.trace).values())
    return {
        "schema": SUMMARY_SCHEMA, "config_hash": cfg.config_hash(), "seed": cfg.seed, "method": method,
        "test_accuracy": repr(metrics["test_accuracy"]), "val_accuracy": repr(metrics["val_accuracy"]),
        "sparsity": repr(metrics["sparsity"]), "kept": metrics["kept"], "target_kept": metrics["target_kept"],
        "total_steps": ledger.total_steps, "budget": T, "budget_ratio": repr(ledger.total_steps / T),
        "total_flops": ledger.total_flops, "trace_flops": trace_flops,
    }


def cmd_prune(cfg: ExperimentConfig, out: Path, method: str | None = None) -> dict:
    method = method or cfg.method
    ds, spec, T, pre = prepare(cfg, out)
    ledger = BudgetLedger(spec, cfg.batch_size)
    ckpt, mask, metrics = run_method(cfg, method, ds, pre, T, ledger)
    if method not in ("imp", "imp-rewind") and ledger.total_steps > T:
        raise BudgetExceeded(f"{method} used {ledger.total_steps} steps, more than T={T}")
    (out / "masks").mkdir(exist_ok=True)
    mask_paths = []
    for i, m in enumerate(metrics["masks"]):
        p = f"masks/call_{i:03d}.mask"
        (out / p).write_bytes(serialize(m))
        mask_paths.append(p)
    (out / "final.mask").write_bytes(serialize(mask))
    digest = checkpoint_io.save(ckpt, out / "final.ckpt")
    _write_trace(out / "trace.jsonl", ledger.trace)
    _write_json(out / "ledger.json", ledger.summary())
    row = _summary_row(cfg, method, metrics, ledger, T)
    _write_csv(out / "summary.csv", SUMMARY_FIELDS, [row])
    extra = {k: v for k, v in metrics.items() if k not in ("masks", "ledger")}
    record = {"command": "prune", "method": method, "config": cfg.to_dict(), "config_hash": cfg.config_hash(),
              "seed": cfg.seed, "budget": T, "metrics": extra, "ledger": ledger.summary(),
              "summary": row, "artifacts": {"masks": mask_paths, "final_mask": "final.mask",
                                            "checkpoint": "final.ckpt", "checkpoint_sha256": digest,
                                            "trace": "trace.jsonl", "summary": "summary.csv"}}
    _write_json(out / "record.json", record)
    return record


def cmd_ims(cfg: ExperimentConfig, out: Path) -> dict:
    ds, spec, _, pre = prepare(cfg, out)
    ledger = BudgetLedger(spec, cfg.batch_size)
    soup_cfg = SoupConfig(n_candidates=cfg.soup_candidates, sparsities=tuple(cfg.soup_sparsities),
                          weak_steps=cfg.soup_steps, metric=cfg.soup_metric)
    ckpt, log, _ = ims_run(pre, soup_cfg, ds, ledger, lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed)
    digest = checkpoint_io.save(ckpt, out / "ims.ckpt")
    _write_csv(out / "soup_log.csv", ["k", "sparsity", "lr", "weight_decay", "alpha", "val_before", "val_after"],
               [{k: repr(v) if isinstance(v, float) else v for k, v in row.items()} for row in log])
    _write_trace(out / "trace.jsonl", ledger.trace)
    record = {"command": "ims", "config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed,
              "val_before": evaluate(pre, ds, "val"), "val_after": evaluate(ckpt, ds, "val"),
              "test_before": evaluate(pre, ds, "test"), "test_after": evaluate(ckpt, ds, "test"),
              "soup_log": log, "ledger": ledger.summary(),
              "artifacts": {"checkpoint": "ims.ckpt", "checkpoint_sha256": digest, "soup_log": "soup_log.csv"}}
    _write_json(out / "record.json", record)
    return record


def compare_masks(cfg: ExperimentConfig, ds, pre: Checkpoint, T: int, methods, sparsities) -> list[dict]:
    """Masks for each (method, sparsity) from the same pretrained weights, then pairwise cosines."""
    train = _train_config(cfg)
    round_budget = cfg.compare_round_budget or T
    rows = []
    for S in sparsities:
        masks = {}
        for method in methods:
            ones = pre.model.ones_mask()
            target = kept_for_sparsity(ones.size, S)
            rate = 1.0 - target / ones.size
            if method == "oneshot":
                masks[method] = magnitude_prune(pre.model, ones, rate, min_kept=target)
            elif method == "random":
                masks[method] = random_prune(ones, rate, derive_rng(cfg.seed, "compare-random", repr(S)),
                                             min_kept=target)
            elif method == "snip":
                rng = derive_rng(cfg.seed, "compare-snip")
                idx = rng.choice(ds.train, size=min(cfg.batch_size, ds.train.size), replace=False)
                masks[method] = snip_prune(pre, ones, rate, (ds.inputs[idx], ds.labels[idx]), min_kept=target)
            elif method in ("imp", "imp-rewind"):
                rounds = calls_needed(ones.size, target, cfg.compression_rate)
                rewind = max(1, round_budget // 20) if method == "imp-rewind" else 0
                ledger = BudgetLedger(pre.model.spec, cfg.batch_size, record_trace=False)
                _, masks[method], _ = imp_run(pre, rounds, round_budget, cfg.compression_rate, ds, ledger, train,
                                              rewind_step=rewind, target_sparsity=S, finetune_budget=0)
            else:
                raise ValueError(f"mask-compare does not support method {method!r}")
        names = list(methods)
        for i, a in enumerate(names):
            for b in names[i:]:
                rows.append({"sparsity": S, "method_a": a, "method_b": b,
                             "cosine_keep": cosine_similarity(masks[a], masks[b], polarity="keep"),
                             "cosine_prune": cosine_similarity(masks[a], masks[b], polarity="prune")})
    return rows


def cmd_mask_compare(cfg: ExperimentConfig, out: Path) -> list[dict]:
    ds, _, T, pre = prepare(cfg, out)
    rows = compare_masks(cfg, ds, pre, T, cfg.compare_methods, cfg.compare_sparsities)
    _write_csv(out / "mask_similarity.csv", ["schema", "sparsity", "method_a", "method_b", "cosine_keep",
                                             "cosine_prune"],
               [{"schema": "instant-soup.masksim/1", **{k: repr(v) if isinstance(v, float) else v
                                                         for k, v in r.items()}} for r in rows])
    return rows


def cmd_sweep(cfg: ExperimentConfig, out: Path, axis: str | None = None, values=None) -> list[dict]:
    """ISP at each value of one axis; budget violations become rows, not crashes."""
    axis = axis or cfg.sweep_axis
    values = list(cfg.sweep_values if values is None else values)
    ds, spec, T, pre = prepare(cfg, out)
    rows = []
    for v in values:
        ledger = BudgetLedger(spec, cfg.batch_size)
        kwargs = {"denoisers": int(v)} if axis == "denoiser_count" else {"look_ahead": int(v)}
        row = {"schema": "instant-soup.sweep/1", "axis": axis, "value": v, "config_hash": cfg.config_hash(),
               "seed": cfg.seed, "budget": T}
        try:
            _, _, metrics = run_method(cfg, "isp", ds, pre, T, ledger, **kwargs)
        except BudgetExceeded as exc:
            row.update(status="budget_exceeded", detail=str(exc))
        else:
            row.update(status="ok", test_accuracy=repr(metrics["test_accuracy"]),
                       val_accuracy=repr(metrics["val_accuracy"]), sparsity=repr(metrics["sparsity"]),
                       total_steps=ledger.total_steps, lookahead_steps=ledger.steps.get("lookahead", 0),
                       finetune_steps=ledger.steps.get("finetune", 0), total_flops=ledger.total_flops)
        rows.append(row)
    _write_csv(out / "sweep.csv", ["schema", "axis", "value", "status", "test_accuracy", "val_accuracy", "sparsity",
                                   "total_steps", "lookahead_steps", "finetune_steps", "total_flops", "budget",
                                   "config_hash", "seed", "detail"], rows)
    return rows


def cmd_report(run_dirs, out: Path) -> list[dict]:
    """Collect prune-run records into summary.csv, accuracy_vs_sparsity.csv and flops.csv.

    FLOPs are recomputed from each run's step trace and compared with the ledger total.
    """
    out.mkdir(parents=True, exist_ok=True)
    rows, acc_rows, flop_rows = [], [], []
    for d in run_dirs:
        d = Path(d)
        record = json.loads((d / "record.json").read_text())
        if record.get("command") != "prune":
            continue
        cfg = record["config"]
        exp = config_from_dict(cfg)
        spec = exp.model_spec(exp.build_dataset())
        trace = read_trace(d / "trace.jsonl")
        per_phase = flops_from_trace(spec, cfg["batch_size"], trace)
        recomputed = sum(per_phase.values())
        row = dict(record["summary"])
        row["trace_flops"] = recomputed
        rows.append(row)
        acc_rows.append({"method": record["method"], "seed": record["seed"], "sparsity": row["sparsity"],
                         "test_accuracy": row["test_accuracy"], "config_hash": record["config_hash"]})
        for phase in sorted(set(per_phase) | set(record["ledger"]["flops"])):
            flop_rows.append({"config_hash": record["config_hash"], "method": record["method"], "phase": phase,
                              "steps": record["ledger"]["steps"].get(phase, 0),
                              "ledger_flops": record["ledger"]["flops"].get(phase, 0),
                              "trace_flops": per_phase.get(phase, 0)})
    rows.sort(key=lambda r: (r["config_hash"], str(r["method"]), str(r["seed"])))
    _write_csv(out / "summary.csv", SUMMARY_FIELDS, rows)
    _write_csv(out / "accuracy_vs_sparsity.csv", ["method", "seed", "sparsity", "test_accuracy", "config_hash"],
               acc_rows)
    _write_csv(out / "flops.csv", ["config_hash", "method", "phase", "steps", "ledger_flops", "trace_flops"],
               flop_rows)
    return rows

