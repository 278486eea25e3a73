import json
import time
from pathlib import Path

import numpy as np
import pytest

from ziln_ltv import cli, data
from ziln_ltv.data import FeatureSchema
from ziln_ltv.model import Predictions, load_checkpoint

FIXTURES = Path(__file__).parent / "fixtures"
TRAIN64 = ["--examples", str(FIXTURES / "train64.csv"), "--schema", str(FIXTURES / "train64_schema.json")]


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestFeaturize:
    args = ("--command", "featurize", "--cohort-start", "2012-03-01", "--cohort-end", "2012-07-01")

    def test_fixture_byte_compare(self, tmp_path):
        assert run(*self.args, "--transactions", FIXTURES / "transactions.csv", "--out-dir", tmp_path) == 0
        assert (tmp_path / "examples.csv").read_bytes() == (FIXTURES / "featurized_expected.csv").read_bytes()
        assert (tmp_path / "vocab" / "brand.txt").read_text() == "<OOV>\nacme\n"
        schema = FeatureSchema.load(tmp_path / "schema.json")
        got = data.load_examples(tmp_path / "examples.csv", schema)
        assert [e.label for e in got] == [5.0, 0.0, 0.0]

    def test_empty_cohort(self, tmp_path):
        code = run("--command", "featurize", "--cohort-start", "2020-01-01", "--cohort-end", "2020-02-01",
                   "--transactions", FIXTURES / "transactions.csv", "--out-dir", tmp_path)
        assert code == 0
        assert (tmp_path / "examples.csv").read_text().splitlines() == [
            "id,label,first_purchase_value,initial_amount,item_count,chain,category,brand,size_measure"
        ]

    def test_bad_date(self, tmp_path, capsys):
        bad = tmp_path / "t.csv"
        lines = (FIXTURES / "transactions.csv").read_text().splitlines()
        lines[4] = lines[4].replace("2012-03-10", "10/03/2012")
        bad.write_text("\n".join(lines) + "\n")
        assert run(*self.args, "--transactions", bad, "--out-dir", tmp_path / "o") == cli.EXIT_DATA
        assert ":5:" in capsys.readouterr().err

    def test_split_outputs(self, tmp_path):
        run(*self.args, "--transactions", FIXTURES / "transactions.csv", "--out-dir", tmp_path, "--test-fraction", 0.34)
        train = (tmp_path / "train.csv").read_text().splitlines()[1:]
        test = (tmp_path / "test.csv").read_text().splitlines()[1:]
        assert (len(train), len(test)) == (2, 1)

    def test_missing_input(self, tmp_path):
        assert run(*self.args, "--transactions", tmp_path / "nope.csv", "--out-dir", tmp_path) == cli.EXIT_USAGE


class TestTrain:
    def test_linear_ziln_smoke(self, tmp_path):
        code = run("--command", "train", *TRAIN64, "--arch", "linear", "--loss", "ziln",
                   "--batch-size", 16, "--learning-rate", 1e-2, "--max-epochs", 60, "--out-dir", tmp_path)
        assert code == 0
        records = [json.loads(s) for s in (tmp_path / "linear_ziln_r0.log.jsonl").read_text().splitlines()]
        assert records[-1]["train_loss"] < records[0]["train_loss"]
        params = load_checkpoint(tmp_path / "linear_ziln_r0.ckpt")
        assert params.config.architecture.value == "LINEAR"

    def test_repeats_distinct_and_deterministic(self, tmp_path):
        args = ("--command", "train", *TRAIN64, "--arch", "dnn", "--hidden", "8", "--loss", "ziln",
                "--repeats", 2, "--batch-size", 16, "--max-epochs", 5, "--seed", 11)
        assert run(*args, "--out-dir", tmp_path / "a") == 0
        assert run(*args, "--out-dir", tmp_path / "b") == 0
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert a == b
        assert a["dnn_ziln_r0.ckpt"] != a["dnn_ziln_r1.ckpt"]

    def test_grid(self, tmp_path):
        code = run("--command", "train", *TRAIN64, "--arch", "linear,dnn", "--hidden", "4",
                   "--loss", "ziln,mse,bce", "--batch-size", 32, "--max-epochs", 2, "--out-dir", tmp_path)
        assert code == 0
        assert len(list(tmp_path.glob("*.ckpt"))) == 6

    def test_missing_schema(self, tmp_path):
        code = run("--command", "train", "--examples", FIXTURES / "train64.csv",
                   "--schema", tmp_path / "missing.json", "--out-dir", tmp_path / "o")
        assert code != 0
        assert not list((tmp_path / "o").glob("*.ckpt"))
        assert not list((tmp_path / "o").glob("*.jsonl"))

    def test_bad_loss(self, tmp_path):
        assert run("--command", "train", *TRAIN64, "--loss", "hinge", "--out-dir", tmp_path) == cli.EXIT_USAGE

    def test_abort_exit_code(self, tmp_path):
        # one astronomically large label overflows the squared error
        ex = tmp_path / "ex.csv"
        rows = (FIXTURES / "train64.csv").read_text().splitlines()
        rows[1] = "big,1e300,1.0,1.0,1.0,acme"
        ex.write_text("\n".join(rows) + "\n")
        code = run("--command", "train", "--examples", ex, "--schema", FIXTURES / "train64_schema.json",
                   "--arch", "linear", "--loss", "mse", "--batch-size", 64,
                   "--max-epochs", 50, "--out-dir", tmp_path / "o")
        assert code == cli.EXIT_ABORT


def perfect_predictions(path, labels):
    labels = np.asarray(labels, dtype=float)
    n = labels.size
    pred = Predictions(np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan), labels.copy())
    cli.write_predictions(path, [f"c{i}" for i in range(n)], pred, labels, np.ones(n))


class TestEvaluate:
    def test_perfect_model(self, tmp_path):
        labels = np.r_[np.zeros(2), np.arange(1.0, 39.0)]
        perfect_predictions(tmp_path / "p.csv", labels)
        assert run("--command", "evaluate", "--predictions", tmp_path / "p.csv", "--out-dir", tmp_path / "o") == 0
        rep = json.loads((tmp_path / "o" / "report.json").read_text())
        assert rep["gini"]["normalized"] == 1.0
        assert rep["decile_mape"] == 0.0
        assert rep["spearman"] == pytest.approx(1.0, abs=1e-15)
        assert "total_profit" not in rep
        assert (tmp_path / "o" / "gain_curve.csv").exists() and (tmp_path / "o" / "deciles.csv").exists()

    def test_cost_adds_profit(self, tmp_path):
        labels = np.r_[np.zeros(2), np.arange(1.0, 39.0)]
        perfect_predictions(tmp_path / "p.csv", labels)
        run("--command", "evaluate", "--predictions", tmp_path / "p.csv", "--cost", 0.68, "--out-dir", tmp_path)
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["total_profit"] == pytest.approx(sum(labels[labels > 0.68] - 0.68))

    def test_model_then_predictions_round_trip(self, tmp_path):
        assert run("--command", "train", *TRAIN64, "--arch", "linear", "--batch-size", 16,
                   "--max-epochs", 20, "--learning-rate", 1e-2, "--out-dir", tmp_path / "t") == 0
        ev = ("--command", "evaluate", "--examples", FIXTURES / "train64.csv", "--cost", 0.68)
        assert run(*ev, "--model-in", tmp_path / "t" / "linear_ziln_r0.ckpt", "--out-dir", tmp_path / "e") == 0
        assert run("--command", "evaluate", "--predictions", tmp_path / "e" / "predictions.csv", "--cost", 0.68,
                   "--out-dir", tmp_path / "r") == 0
        original = (tmp_path / "e" / "report.json").read_bytes()
        assert (tmp_path / "r" / "report.json").read_bytes() == original
        rep = json.loads(original)
        for key in ("spearman", "gini", "deciles", "decile_mape", "auc_roc", "auc_pr", "total_profit"):
            assert key in rep

    def test_repeats_mean(self, tmp_path):
        run("--command", "train", *TRAIN64, "--arch", "linear", "--repeats", 2, "--batch-size", 16,
            "--max-epochs", 3, "--out-dir", tmp_path / "t")
        code = run("--command", "evaluate", "--examples", FIXTURES / "train64.csv",
                   "--model-in", tmp_path / "t" / "linear_ziln_r0.ckpt",
                   "--model-in", tmp_path / "t" / "linear_ziln_r1.ckpt", "--out-dir", tmp_path / "e")
        assert code == 0
        rep = json.loads((tmp_path / "e" / "report.json").read_text())
        assert rep["repeats"] == 2 and len(rep["per_repeat"]) == 2
        vals = [r["spearman"] for r in rep["per_repeat"]]
        assert rep["mean"]["spearman"] == pytest.approx(sum(vals) / 2)
        assert (tmp_path / "e" / "predictions_r1.csv").exists()

    def test_schema_mismatch(self, tmp_path):
        run("--command", "train", *TRAIN64, "--arch", "linear", "--max-epochs", 1, "--out-dir", tmp_path / "t")
        other = tmp_path / "other.csv"
        other.write_text("id,label,first_purchase_value,x\na,1.0,1.0,2.0\n")
        code = run("--command", "evaluate", "--examples", other,
                   "--model-in", tmp_path / "t" / "linear_ziln_r0.ckpt", "--out-dir", tmp_path / "e")
        assert code == cli.EXIT_DATA
        assert not (tmp_path / "e" / "report.json").exists()


class TestSimulate:
    def test_smoke_fast_and_identical(self, tmp_path):
        t0 = time.perf_counter()
        assert run("--command", "simulate", "--reps", 2, "--n", 1000, "--out-dir", tmp_path / "a") == 0
        assert time.perf_counter() - t0 < 1.0
        run("--command", "simulate", "--reps", 2, "--n", 1000, "--out-dir", tmp_path / "b")
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
        rows = (tmp_path / "a" / "efficiency.csv").read_text().splitlines()
        assert [float(r.split(",")[0]) for r in rows[1:]] == [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]

    def test_defaults(self, tmp_path):
        args = cli.build_parser().parse_args(["--command", "simulate", "--out-dir", str(tmp_path)])
        cfg = cli.resolve_config(args)
        assert (cfg.n, cfg.reps) == (10_000, 2_000)
        assert [float(s) for s in cfg.sigmas.split(",")] == [0.25 * k for k in range(1, 9)]

    def test_bad_sigmas(self, tmp_path):
        assert run("--command", "simulate", "--sigmas", "0,1", "--out-dir", tmp_path) == cli.EXIT_USAGE


class TestConfig:
    def test_ini_then_flags(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[run]\ncommand = simulate\nseed = 5\n[simulate]\nsigmas = 0.5\nn = 20\nreps = 3\n")
        assert run("--config", ini, "--reps", 4, "--out-dir", tmp_path / "o") == 0
        resolved = (tmp_path / "o" / "resolved_config.ini").read_text()
        assert "reps = 4" in resolved and "seed = 5" in resolved and "n = 20" in resolved
        rows = (tmp_path / "o" / "efficiency.csv").read_text().splitlines()
        assert rows[1].startswith("0.5,20,4,")

    def test_usage_errors(self, tmp_path):
        assert run("--out-dir", tmp_path) == cli.EXIT_USAGE
        assert run("--command", "simulate") == cli.EXIT_USAGE
        assert run("--config", tmp_path / "missing.ini", "--out-dir", tmp_path) == cli.EXIT_USAGE
        with pytest.raises(SystemExit) as e:
            cli.main(["--command", "bogus"])
        assert e.value.code == cli.EXIT_USAGE
