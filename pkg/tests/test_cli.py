import hashlib
import json
import os

import pytest

from ehrpath.checkpoint import load_checkpoint
from ehrpath.cli import main
from ehrpath.corpus import CORPUS_FILE, CODES_FILE, SPLITS_FILE, TABLE_FILE, TOKENS_FILE

GEN_FLAGS = ["--docs", "48", "--vocab", "60", "--codes", "6", "--top-k", "6",
             "--doc-len-min", "6", "--doc-len-max", "10", "--planted-pairs", "2",
             "--cooccur", "0.9", "--min-support", "3", "--seed", "7"]
TRAIN_FLAGS = ["--epochs", "1", "--pretrain-epochs", "1", "--batch-size", "8",
               "--lr", "0.001", "--max-len", "4", "--seed", "1",
               "--d-embed", "8", "--d-code", "8", "--n-filters", "4"]


def digest_dir(path):
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


def gen_corpus(tmp_path, sub="corpus"):
    out = tmp_path / sub
    out.mkdir()
    assert main(["gen-data", "--out", str(out)] + GEN_FLAGS) == 0
    return out


class TestGenData:
    def test_writes_the_five_corpus_files(self, tmp_path):
        out = gen_corpus(tmp_path)
        assert sorted(os.listdir(out)) == sorted([CORPUS_FILE, TOKENS_FILE, CODES_FILE,
                                                  TABLE_FILE, SPLITS_FILE])

    def test_same_seed_identical_digests(self, tmp_path):
        a = gen_corpus(tmp_path, "a")
        b = gen_corpus(tmp_path, "b")
        assert digest_dir(a) == digest_dir(b)

    def test_missing_output_dir_exits_2(self, tmp_path, capsys):
        rc = main(["gen-data", "--out", str(tmp_path / "nope")] + GEN_FLAGS)
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_infeasible_config_exits_2(self, tmp_path):
        out = tmp_path / "c"
        out.mkdir()
        rc = main(["gen-data", "--out", str(out), "--docs", "0"])
        assert rc == 2

    def test_explicit_planted_pairs(self, tmp_path):
        out = tmp_path / "c"
        out.mkdir()
        rc = main(["gen-data", "--out", str(out), "--docs", "48", "--vocab", "60",
                   "--codes", "6", "--top-k", "6", "--doc-len-min", "6",
                   "--doc-len-max", "10", "--planted", "0:3:0.9,1:4:0.8",
                   "--min-support", "3", "--seed", "3"])
        assert rc == 0


class TestTrainCommand:
    def test_smoke_writes_checkpoint_and_report(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "run"
        out.mkdir()
        rc = main(["train", "--corpus", str(corpus), "--out", str(out)] + TRAIN_FLAGS)
        assert rc == 0
        assert (out / "model.ckpt").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["ablation"] == "none"
        assert len(report["pretrain_losses"]) == 1

    def test_no_copy_tagged_in_report(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "run"
        out.mkdir()
        rc = main(["train", "--corpus", str(corpus), "--out", str(out), "--no-copy"]
                  + TRAIN_FLAGS)
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["ablation"] == "no_copy"

    def test_no_arl_drops_scorer_slots_from_checkpoint(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "run"
        out.mkdir()
        rc = main(["train", "--corpus", str(corpus), "--out", str(out), "--no-arl"]
                  + TRAIN_FLAGS)
        assert rc == 0
        _, slots = load_checkpoint(str(out / "model.ckpt"))
        assert not any(name.startswith("disc.") for name in slots)

    def test_corrupt_corpus_exits_3(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        (corpus / CORPUS_FILE).write_text("garbage\n")
        out = tmp_path / "run"
        out.mkdir()
        rc = main(["train", "--corpus", str(corpus), "--out", str(out)] + TRAIN_FLAGS)
        assert rc == 3

    def test_config_file_defaults_with_flag_precedence(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "run"
        out.mkdir()
        conf = tmp_path / "run.conf"
        conf.write_text("epochs=1\npretrain-epochs=1\nbatch-size=8\nlr=0.001\n"
                        "max-len=4\nd-embed=8\nd-code=8\nn-filters=4\nseed=5\n")
        rc = main(["train", "--corpus", str(corpus), "--out", str(out),
                   "--config", str(conf), "--seed", "9"])
        assert rc == 0
        kv, _ = load_checkpoint(str(out / "model.ckpt"))
        assert kv["seed"] == "9"  # flag beats config file

    def test_unknown_config_key_exits_2(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "run"
        out.mkdir()
        conf = tmp_path / "bad.conf"
        conf.write_text("not-a-key=1\n")
        rc = main(["train", "--corpus", str(corpus), "--out", str(out),
                   "--config", str(conf)])
        assert rc == 2


class TestEvalCommand:
    def _train(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        run = tmp_path / "run"
        run.mkdir()
        assert main(["train", "--corpus", str(corpus), "--out", str(run)]
                    + TRAIN_FLAGS) == 0
        return corpus, run / "model.ckpt"

    def test_eval_writes_predictions_and_ten_metric_lines(self, tmp_path, capsys):
        corpus, ckpt = self._train(tmp_path)
        out = tmp_path / "eval"
        out.mkdir()
        rc = main(["eval", "--corpus", str(corpus), "--checkpoint", str(ckpt),
                   "--out", str(out)])
        assert rc == 0
        lines = (out / "metrics.txt").read_text().strip().split("\n")
        assert len(lines) == 10
        keys = [ln.split()[0] for ln in lines]
        assert keys == ["jaccard", "complication", "precision_micro", "precision_macro",
                        "recall_micro", "recall_macro", "f1_micro", "f1_macro",
                        "auc_micro", "auc_macro"]
        assert (out / "predictions.jsonl").exists()

    def test_rerun_identical_report(self, tmp_path):
        corpus, ckpt = self._train(tmp_path)
        outs = []
        for sub in ("e1", "e2"):
            out = tmp_path / sub
            out.mkdir()
            assert main(["eval", "--corpus", str(corpus), "--checkpoint", str(ckpt),
                         "--out", str(out)]) == 0
            outs.append(digest_dir(out))
        assert outs[0] == outs[1]

    def test_perfect_oracle_predictions_score_one(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        bundle_lines = (corpus / CORPUS_FILE).read_text().strip().split("\n")
        splits = json.loads((corpus / SPLITS_FILE).read_text())
        preds = tmp_path / "perfect.jsonl"
        with open(preds, "w") as fh:
            for doc_id in splits["test"]:
                gold = json.loads(bundle_lines[doc_id])["codes"]
                fh.write(json.dumps({"doc": doc_id, "pred": gold, "gold": gold,
                                     "scores": {str(c): 1.0 for c in gold}}) + "\n")
        out = tmp_path / "eval"
        out.mkdir()
        rc = main(["eval", "--corpus", str(corpus), "--from-predictions", str(preds),
                   "--out", str(out)])
        assert rc == 0
        values = dict(ln.split() for ln in (out / "metrics.txt").read_text().strip().split("\n"))
        for key, val in values.items():
            if key in ("complication", "auc_micro", "auc_macro"):
                continue  # data-dependent or degenerate under constant scores
            assert float(val) == pytest.approx(1.0), key

    def test_incompatible_checkpoint_exits_4(self, tmp_path):
        corpus, ckpt = self._train(tmp_path)
        other = tmp_path / "other"
        other.mkdir()
        assert main(["gen-data", "--out", str(other), "--docs", "48", "--vocab", "70",
                     "--codes", "5", "--top-k", "5", "--doc-len-min", "6",
                     "--doc-len-max", "10", "--planted-pairs", "2", "--min-support", "3",
                     "--seed", "2"]) == 0
        out = tmp_path / "eval"
        out.mkdir()
        rc = main(["eval", "--corpus", str(other), "--checkpoint", str(ckpt),
                   "--out", str(out)])
        assert rc == 4

    def test_eval_without_checkpoint_or_predictions_exits_2(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "eval"
        out.mkdir()
        rc = main(["eval", "--corpus", str(corpus), "--out", str(out)])
        assert rc == 2


class TestReportAndBuildTable:
    def test_report_matches_eval_from_predictions(self, tmp_path, capsys):
        corpus = gen_corpus(tmp_path)
        lines = (corpus / CORPUS_FILE).read_text().strip().split("\n")
        preds = tmp_path / "p.jsonl"
        with open(preds, "w") as fh:
            rec = json.loads(lines[0])
            fh.write(json.dumps({"doc": 0, "pred": rec["codes"], "gold": rec["codes"],
                                 "scores": {}}) + "\n")
        capsys.readouterr()  # drop the gen-data status line
        rc = main(["report", "--corpus", str(corpus), "--predictions", str(preds)])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("jaccard 1.000000")

    def test_build_table_rewrites_with_new_threshold(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        before = (corpus / TABLE_FILE).read_text()
        rc = main(["build-table", "--corpus", str(corpus), "--or-threshold", "1000000",
                   "--min-support", "3"])
        assert rc == 0
        after = (corpus / TABLE_FILE).read_text()
        assert before != after
        assert len(after.strip().split("\n")) == 1  # header only, no pair survives
