import csv
import json

import numpy as np
import pytest

from trmsm import config as cfg
from trmsm.cli import main

TINY = ["--set", "d_w=8", "--set", "d_u=8", "--set", "heads=2", "--set", "layers=1",
        "--set", "vocab_hash_buckets=64", "--set", "total_steps=20", "--set", "warmup_steps=2",
        "--set", "eval_every=10", "--set", "peak_lr=1e-3", "--set", "select_metric=accuracy"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synth", "--out", str(root / "data"), "--train", "8", "--dev", "3", "--test", "3",
                 "--utterances", "5", "--speakers", "3", "--classes", "4", "--seed", "1"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus):
    out = corpus / "run"
    assert main(["train", "--data", str(corpus / "data"), "--out", str(out), "--seed", "0"] + TINY) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_presets(self):
        iem, meld = cfg.preset("iemocap"), cfg.preset("meld")
        assert (iem.d_u, iem.layers, iem.heads, iem.peak_lr) == (300, 6, 6, 1e-5)
        assert (meld.d_u, meld.layers, meld.heads, meld.peak_lr) == (200, 1, 4, 8e-6)
        for run in (iem, meld):
            assert (run.total_steps, run.warmup_steps, run.dropout, run.weight_decay) == (10000, 1000, 0.1, 0.01)
        with pytest.raises(cfg.ConfigError):
            cfg.preset("nope")

    def test_file_round_trip(self, tmp_path):
        run = cfg.preset("meld").replace(window=(3, 1), blocks=("intra",), seeds=(1, 2), d_ff=50)
        (tmp_path / "c.txt").write_text(run.dumps())
        assert cfg.load(tmp_path / "c.txt") == run
        assert cfg.RunConfig.from_dict(run.to_dict()) == run

    def test_file_syntax(self, tmp_path):
        (tmp_path / "c.txt").write_text("# comment\nlayers = 2  # trailing\n\nwindow = -4,2\nblocks = C,ER\n")
        run = cfg.load(tmp_path / "c.txt")
        assert (run.layers, run.window, run.blocks) == (2, (4, 2), ("conventional", "inter"))

    def test_bad_values(self):
        with pytest.raises(cfg.ConfigError):
            cfg.RunConfig().with_values({"layerz": "2"})
        with pytest.raises(cfg.ConfigError):
            cfg.RunConfig().with_values({"layers": "two"})
        with pytest.raises(cfg.ConfigError):
            cfg.RunConfig().replace(heads=7).validate()
        with pytest.raises(cfg.ConfigError):
            cfg.RunConfig().replace(provider="precomputed").validate()


class TestTrainEval:
    def test_outputs(self, trained):
        summary = json.loads((trained / "summary.json").read_text())
        assert [s["seed"] for s in summary["seeds"]] == [0]
        seed_dir = trained / "seed_0"
        for name in ("train_log.jsonl", "best.ckpt", "last.ckpt", "metrics.json", "config.txt"):
            assert (seed_dir / name).exists()

    def test_config_echo(self, trained):
        echoed = cfg.load(trained / "seed_0" / "config.txt")
        assert (echoed.d_u, echoed.layers, echoed.total_steps, echoed.seeds) == (8, 1, 20, (0,))

    def test_eval_reproduces_logged_dev_metric(self, trained, tmp_path):
        log = [json.loads(line) for line in (trained / "seed_0" / "train_log.jsonl").read_text().splitlines()]
        best_step = json.loads((trained / "seed_0" / "metrics.json").read_text())["best_step"]
        logged = next(e["dev"] for e in log if e.get("step") == best_step and "dev" in e)
        assert main(["eval", "--checkpoint", str(trained / "seed_0" / "best.ckpt"), "--split", "dev",
                     "--out", str(tmp_path / "dev.json")]) == 0
        assert json.loads((tmp_path / "dev.json").read_text()) == logged

    def test_eval_is_byte_identical_on_rerun(self, trained, tmp_path):
        args = ["eval", "--checkpoint", str(trained / "seed_0" / "best.ckpt")]
        assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_window_flag_accepted(self, trained, tmp_path):
        ck = str(trained / "seed_0" / "best.ckpt")
        assert main(["eval", "--checkpoint", ck, "--out", str(tmp_path / "w.json"), "--window=0,0"]) == 0
        assert main(["eval", "--checkpoint", ck, "--out", str(tmp_path / "a.json"), "--window", "all"]) == 0
        w, a = (json.loads((tmp_path / f).read_text()) for f in ("w.json", "a.json"))
        assert w["count"] == a["count"]

    def test_empty_test_file(self, trained, tmp_path, capsys):
        (tmp_path / "empty.jsonl").write_text("")
        code = main(["eval", "--checkpoint", str(trained / "seed_0" / "best.ckpt"),
                     "--file", str(tmp_path / "empty.jsonl")])
        assert code == 2
        assert "nothing to evaluate" in capsys.readouterr().err

    def test_trm_baseline_flags(self, corpus):
        out = corpus / "trm"
        assert main(["train", "--data", str(corpus / "data"), "--out", str(out), "--seed", "0",
                     "--blocks", "C", "--fusion", "add"] + TINY) == 0
        echoed = cfg.load(out / "seed_0" / "config.txt")
        assert (echoed.blocks, echoed.fusion) == (("conventional",), "add")

    def test_bad_config_exit_code(self, corpus, capsys):
        assert main(["train", "--data", str(corpus / "data"), "--out", str(corpus / "bad"),
                     "--set", "heads=7"]) == 2
        assert main(["train", "--data", str(corpus / "missing"), "--out", str(corpus / "bad")] + TINY) == 2
        assert main(["train", "--data", str(corpus / "data"), "--out", str(corpus / "bad"),
                     "--set", "nokey=1"]) == 2


class TestProbe:
    def test_csvs(self, trained, corpus, tmp_path):
        conv_id = json.loads((corpus / "data" / "test.jsonl").read_text().splitlines()[0])["id"]
        assert main(["probe", "--checkpoint", str(trained / "seed_0" / "best.ckpt"), "--conversation", conv_id,
                     "--out", str(tmp_path), "--per-head"]) == 0
        n = 5
        rows = read_csv(tmp_path / "attention.csv")
        assert len(rows) == 3 * n * n
        for block in ("conventional", "intra", "inter"):
            weights = np.zeros((n, n))
            for r in rows:
                if r["block"] == block:
                    weights[int(r["query_index"]), int(r["key_index"])] = float(r["weight"])
            sums = weights.sum(1)
            assert np.all((np.abs(sums - 1) < 1e-9) | (sums == 0))
            mask = np.loadtxt(tmp_path / f"mask_{block}.csv", delimiter=",", dtype=int).reshape(n, n)
            assert np.all(weights[mask == 0] == 0)
            assert np.all(np.abs(sums[mask.any(1)] - 1) < 1e-9)
        fusion = read_csv(tmp_path / "fusion.csv")
        assert len(fusion) == n and len(fusion[0]) - 1 == 3
        assert all(abs(sum(float(v) for k, v in r.items() if k.startswith("alpha")) - 1) < 1e-9 for r in fusion)
        assert len(read_csv(tmp_path / "predictions.csv")) == n
        assert len(read_csv(tmp_path / "attention_heads.csv")) == 3 * 1 * 2 * n * n

    def test_window_restricts_context(self, trained, corpus, tmp_path):
        conv_id = json.loads((corpus / "data" / "test.jsonl").read_text().splitlines()[0])["id"]
        assert main(["probe", "--checkpoint", str(trained / "seed_0" / "best.ckpt"), "--conversation", conv_id,
                     "--out", str(tmp_path), "--window=0,1"]) == 0
        mask = np.loadtxt(tmp_path / "mask_conventional.csv", delimiter=",", dtype=int)
        assert np.array_equal(mask, np.eye(5, dtype=int) + np.eye(5, k=1, dtype=int))

    def test_unknown_conversation(self, trained, tmp_path):
        assert main(["probe", "--checkpoint", str(trained / "seed_0" / "best.ckpt"), "--conversation", "nope",
                     "--out", str(tmp_path)]) == 2


def test_sweep_tables(corpus):
    out = corpus / "sweep"
    assert main(["sweep", "--data", str(corpus / "data"), "--out", str(out), "--seed", "0",
                 "--axis", "window", "--values", "0,0;all"] + TINY) == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert [r["value"] for r in rows] == ["0,0", "all"]
    table = read_csv(out / "sweep.csv")
    assert list(table[0])[:2] == ["axis", "value"] and "test_weighted_f1" in table[0]


def test_gen_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-synth", "--out", str(tmp_path / name), "--train", "4", "--dev", "1", "--test", "1",
                     "--seed", "9"]) == 0
    for f in ("labels.json", "train.jsonl", "dev.jsonl", "test.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
