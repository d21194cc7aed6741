import csv
import json
import math

import pytest

from instant_soup.engine import checkpoint_io, init_model
from instant_soup.harness import cli
from instant_soup.harness.config import ConfigError, ExperimentConfig, config_from_dict
from instant_soup.ledger import prunable_weight_count
from instant_soup.masks import deserialize, density

TINY = {"model": "tiny-transformer", "dataset": "sequence", "width": 8, "classes": 4, "vocab": 8, "seq_len": 6,
        "n": 400, "pretrain_epochs": 3, "total_budget": 300, "look_ahead": 10, "denoisers": 2,
        "imp_round_budget": 60, "soup_candidates": 2, "soup_steps": 5, "compare_round_budget": 20}


def _cfg(tmp_path, name="c.json", **over):
    p = tmp_path / name
    p.write_text(json.dumps({**TINY, **over}))
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_errors_name_the_field():
    raw = dict(TINY)
    del raw["dataset"]
    with pytest.raises(ConfigError, match="dataset"):
        config_from_dict(raw)
    with pytest.raises(ConfigError, match="widht"):
        config_from_dict({**TINY, "widht": 3})
    with pytest.raises(ConfigError, match="method"):
        config_from_dict({**TINY, "method": "lth"})
    with pytest.raises(ConfigError, match="width"):
        config_from_dict({**TINY, "width": "big"})


def test_config_hash_ignores_out_dir_only():
    a = config_from_dict(TINY)
    assert a.config_hash() == config_from_dict({**TINY, "out_dir": "elsewhere"}).config_hash()
    assert a.config_hash() != config_from_dict({**TINY, "seed": 1}).config_hash()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, capsys):
    raw = dict(TINY)
    del raw["dataset"]
    (tmp_path / "bad.json").write_text(json.dumps(raw))
    assert cli.run(["pretrain", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "x")]) == 2
    assert "dataset" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.run(["prune", "--config", _cfg(tmp_path), "--method", "lth", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2
    assert "imp-rewind" in capsys.readouterr().err
    # schedule cannot reach S within the mask budget
    sched = _cfg(tmp_path, "s.json", target_sparsity=0.95, mask_budget_fraction=0.05)
    assert cli.run(["prune", "--config", sched, "--method", "isp", "--out", str(tmp_path / "s")]) == 2
    # look-aheads alone exceed T
    over = _cfg(tmp_path, "o.json", denoisers=5, look_ahead=200)
    assert cli.run(["prune", "--config", over, "--method", "isp", "--out", str(tmp_path / "o")]) == 3
    nan = _cfg(tmp_path, "n.json", lr=1e200, weight_decay=0.0)
    assert cli.run(["prune", "--config", nan, "--method", "oneshot", "--out", str(tmp_path / "n")]) == 4


def test_pretrain_rerun_is_identical_and_zero_epochs_is_init(tmp_path):
    cfg = _cfg(tmp_path)
    for d in ("a", "b"):
        assert cli.run(["pretrain", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "pretrained.ckpt").read_bytes() == (tmp_path / "b" / "pretrained.ckpt").read_bytes()
    zero = _cfg(tmp_path, "z.json", pretrain_epochs=0)
    assert cli.run(["pretrain", "--config", zero, "--out", str(tmp_path / "z")]) == 0
    exp = config_from_dict({**TINY, "pretrain_epochs": 0})
    ck = checkpoint_io.load(tmp_path / "z" / "pretrained.ckpt")
    init = init_model(exp.model_spec(exp.build_dataset()), 0)
    assert all((ck.model.params[n].data == p.data).all() for n, p in init.params.items())


def test_default_output_dir_uses_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "root"))
    assert cli.run(["pretrain", "--config", _cfg(tmp_path, pretrain_epochs=0), "--seed", "3"]) == 0
    made = list((tmp_path / "root").iterdir())
    assert len(made) == 1 and made[0].name.startswith("pretrain-") and made[0].name.endswith("-s3")


@pytest.fixture(scope="module")
def pruned(tmp_path_factory):
    base = tmp_path_factory.mktemp("prune")
    cfg = _cfg(base)
    dirs = {}
    for method in ("isp", "imp", "imp-rewind", "oneshot", "random", "progressive", "snip"):
        dirs[method] = base / method
        assert cli.run(["prune", "--config", cfg, "--method", method, "--out", str(dirs[method])]) == 0
    return base, dirs


def test_every_method_hits_sparsity_and_budget(pruned):
    _, dirs = pruned
    totals = {}
    for method, d in dirs.items():
        rec = json.loads((d / "record.json").read_text())
        m = rec["metrics"]
        assert abs(m["kept"] - m["target_kept"]) <= 1
        for p in rec["artifacts"]["masks"]:
            deserialize((d / p).read_bytes())
        final = deserialize((d / "final.mask").read_bytes())
        assert density(final).kept == m["kept"]
        totals[method] = rec["ledger"]["total_steps"]
        if method not in ("imp", "imp-rewind"):
            assert totals[method] == rec["budget"] == 300
        row = _rows(d / "summary.csv")[0]
        assert int(row["trace_flops"]) == int(row["total_flops"])
    rounds = ExperimentConfig.__dataclass_fields__["imp_rounds"].default
    assert totals["imp"] == rounds * 60 + 300


def test_report(pruned, tmp_path):
    base, dirs = pruned
    assert cli.run(["report", "--out", str(tmp_path / "empty")]) == 0
    with open(tmp_path / "empty" / "summary.csv") as fh:
        assert fh.read().count("\n") == 1
    assert cli.run(["report", str(dirs["isp"]), str(dirs["oneshot"]), "--out", str(tmp_path / "r")]) == 0
    rows = _rows(tmp_path / "r" / "summary.csv")
    assert sorted(r["method"] for r in rows) == ["isp", "oneshot"]
    assert len({r["config_hash"] for r in rows}) == 2
    for r in _rows(tmp_path / "r" / "flops.csv"):
        assert r["ledger_flops"] == r["trace_flops"]


def test_ims_command(tmp_path):
    assert cli.run(["ims", "--config", _cfg(tmp_path, soup_candidates=3), "--out", str(tmp_path / "i")]) == 0
    log = _rows(tmp_path / "i" / "soup_log.csv")
    assert len(log) == 3
    vals = [float(log[0]["val_before"])] + [float(r["val_after"]) for r in log]
    assert vals == sorted(vals)
    trivial = _cfg(tmp_path, "t.json", soup_candidates=1, soup_steps=0)
    assert cli.run(["pretrain", "--config", trivial, "--out", str(tmp_path / "p")]) == 0
    assert cli.run(["ims", "--config", trivial, "--out", str(tmp_path / "k")]) == 0
    a = checkpoint_io.load(tmp_path / "p" / "pretrained.ckpt")
    b = checkpoint_io.load(tmp_path / "k" / "ims.ckpt")
    assert all((a.model.params[n].data == p.data).all() for n, p in b.model.params.items())


def test_mask_compare(tmp_path):
    cfg = _cfg(tmp_path, compare_methods=["oneshot", "random", "imp"], compare_sparsities=[0.1, 0.5])
    assert cli.run(["mask-compare", "--config", cfg, "--out", str(tmp_path / "m")]) == 0
    rows = _rows(tmp_path / "m" / "mask_similarity.csv")
    for r in rows:
        if r["method_a"] == r["method_b"]:
            assert float(r["cosine_keep"]) == 1.0 == float(r["cosine_prune"])
    exp = config_from_dict(TINY)
    size = prunable_weight_count(exp.model_spec(exp.build_dataset()))
    rm = next(r for r in rows if r["sparsity"] == "0.5" and {r["method_a"], r["method_b"]} == {"oneshot", "random"})
    # a random half overlaps a fixed half in ~n/4 places: cosine ~ 0.5, sd ~ 1/(2 sqrt n)
    assert abs(float(rm["cosine_keep"]) - 0.5) < 4 / (2 * math.sqrt(size))


def test_single_value_sweep_equals_prune(pruned, tmp_path):
    base, dirs = pruned
    cfg = _cfg(tmp_path)
    assert cli.run(["sweep", "--config", cfg, "--axis", "denoiser_count", "--values", "2", "--out",
                    str(tmp_path / "w")]) == 0
    row = _rows(tmp_path / "w" / "sweep.csv")[0]
    summary = _rows(dirs["isp"] / "summary.csv")[0]
    assert row["status"] == "ok"
    assert row["test_accuracy"] == summary["test_accuracy"]
    assert int(row["total_steps"]) == int(summary["total_steps"])
    assert cli.run(["sweep", "--config", cfg, "--axis", "look_ahead", "--values", "10,500", "--out",
                    str(tmp_path / "v")]) == 0
    assert [r["status"] for r in _rows(tmp_path / "v" / "sweep.csv")] == ["ok", "budget_exceeded"]
