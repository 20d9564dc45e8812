"""Command-line surface: outputs, exit codes, flag precedence."""

import json

import pytest

from ntp.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("world") / "data"
    rc = main(["gen-data", "--out", str(out), "--countries", "40",
               "--subregions", "6", "--regions", "3",
               "--dev", "4", "--test", "4"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("runs") / "s1"
    rc = main(["train", "--kb", str(data_dir / "countries.tsv"),
               "--splits", str(data_dir), "--task", "s1",
               "--templates", str(data_dir / "s1.tmpl"),
               "--out", str(out), "--epochs", "2", "--k", "6",
               "--kmax", "5", "--seed", "1"])
    assert rc == 0
    return out


class TestGenData:
    def test_writes_corpus(self, data_dir, capsys):
        for name in ("countries.tsv", "train.txt", "dev.txt", "test.txt",
                     "types.json", "s1.tmpl", "s2.tmpl", "s3.tmpl",
                     "linkpred.tmpl"):
            assert (data_dir / name).exists(), name
        assert len((data_dir / "dev.txt").read_text().split()) == 4

    def test_deterministic(self, data_dir, tmp_path, capsys):
        again = tmp_path / "again"
        main(["gen-data", "--out", str(again), "--countries", "40",
              "--subregions", "6", "--regions", "3",
              "--dev", "4", "--test", "4"])
        assert ((again / "countries.tsv").read_text()
                == (data_dir / "countries.tsv").read_text())

    def test_impossible_split_exits_one(self, tmp_path, capsys):
        rc = main(["gen-data", "--out", str(tmp_path / "x"),
                   "--countries", "9", "--subregions", "3",
                   "--regions", "3", "--dev", "4", "--test", "4"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_countries_outputs(self, run_dir, capsys):
        metrics = json.loads((run_dir / "metrics.json").read_text())
        assert 0.0 <= metrics["auc_pr"] <= 1.0
        assert 0.0 <= metrics["dev_auc_pr"] <= 1.0
        log = [json.loads(s)
               for s in (run_dir / "log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [1, 2]
        ckpt = json.loads((run_dir / "checkpoint.json").read_text())
        assert ckpt["config"]["epochs"] == 2
        assert ckpt["config"]["seed"] == 1

    def test_kbc_with_splits(self, data_dir, tmp_path, capsys):
        lines = (data_dir / "countries.tsv").read_text().splitlines()
        kbc = tmp_path / "kbc"
        kbc.mkdir()
        (kbc / "train.txt").write_text("\n".join(lines[:-8]) + "\n")
        (kbc / "dev.txt").write_text("\n".join(lines[-8:-4]) + "\n")
        (kbc / "test.txt").write_text("\n".join(lines[-4:]) + "\n")
        out = tmp_path / "run"
        rc = main(["train", "--kb", str(kbc / "train.txt"),
                   "--splits", str(kbc), "--task", "kbc",
                   "--out", str(out), "--epochs", "1", "--k", "4",
                   "--mode", "complex"])
        assert rc == 0
        printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert "mrr" in printed["metrics"]
        assert "per_fact" not in printed["metrics"]

    def test_flags_override_config(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "hp.json"
        cfg.write_text(json.dumps({"lr": 0.5, "epochs": 9}))
        out = tmp_path / "run"
        rc = main(["train", "--kb", str(data_dir / "countries.tsv"),
                   "--splits", str(data_dir), "--task", "s1",
                   "--out", str(out), "--config", str(cfg),
                   "--epochs", "1", "--k", "4"])
        assert rc == 0
        saved = json.loads((out / "checkpoint.json").read_text())["config"]
        assert saved["epochs"] == 1          # flag wins
        assert saved["lr"] == 0.5            # config survives
        assert saved["k"] == 4

    def test_bad_config_key_exits_one(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "hp.json"
        cfg.write_text(json.dumps({"learning_rate": 0.5}))
        rc = main(["train", "--kb", str(data_dir / "countries.tsv"),
                   "--splits", str(data_dir), "--task", "s1",
                   "--out", str(tmp_path / "run"), "--config", str(cfg)])
        assert rc == 1
        assert "unknown config" in capsys.readouterr().err

    def test_countries_needs_splits(self, data_dir, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--kb", str(data_dir / "countries.tsv"),
                  "--task", "s1", "--out", str(tmp_path / "run")])
        assert exc.value.code == 2


class TestEval:
    def test_matches_training_metric(self, data_dir, run_dir, capsys):
        out = run_dir / "eval.json"
        rc = main(["eval", "--checkpoint", str(run_dir / "checkpoint.json"),
                   "--kb", str(data_dir / "countries.tsv"),
                   "--splits", str(data_dir), "--task", "s1",
                   "--out", str(out)])
        assert rc == 0
        trained = json.loads((run_dir / "metrics.json").read_text())
        fresh = json.loads(out.read_text())
        assert fresh["auc_pr"] == pytest.approx(trained["auc_pr"], abs=1e-12)

    def test_countries_needs_kb(self, run_dir, data_dir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--checkpoint", str(run_dir / "checkpoint.json"),
                  "--splits", str(data_dir), "--task", "s1"])
        assert exc.value.code == 2


class TestProve:
    def test_symbolic_on_triples(self, data_dir, capsys):
        kb = str(data_dir / "countries.tsv")
        first = (data_dir / "countries.tsv").read_text().splitlines()[0]
        rel, subj, obj = first.split("\t")
        rc = main(["prove", "--kb", kb, "--query", f"{rel}({subj}, {obj})",
                   "--symbolic"])
        assert rc == 0
        assert "proved" in capsys.readouterr().out

    def test_symbolic_bindings(self, tmp_path, capsys):
        kb = tmp_path / "kb.ntp"
        kb.write_text("fatherOf(abe, homer).\nparentOf(homer, bart).\n"
                      "grandpaOf(X,Y) :- fatherOf(X,Z), parentOf(Z,Y).\n")
        rc = main(["prove", "--kb", str(kb), "--query", "grandpaOf(abe, Q)",
                   "--symbolic"])
        assert rc == 0
        assert "Q = bart" in capsys.readouterr().out

    def test_differentiable_trace(self, run_dir, data_dir, capsys):
        first = (data_dir / "countries.tsv").read_text().splitlines()[0]
        rel, subj, obj = first.split("\t")
        rc = main(["prove", "--checkpoint", str(run_dir / "checkpoint.json"),
                   "--query", f"{rel}({subj}, {obj})", "--kmax", "5"])
        assert rc == 0
        trace = json.loads(capsys.readouterr().out)
        assert trace["score"] == pytest.approx(1.0)

    def test_bad_query_exits_one(self, data_dir, capsys):
        rc = main(["prove", "--kb", str(data_dir / "countries.tsv"),
                   "--query", "locatedIn(", "--symbolic"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_symbol_exits_one(self, data_dir, capsys):
        rc = main(["prove", "--kb", str(data_dir / "countries.tsv"),
                   "--query", "locatedIn(atlantis, mu)", "--symbolic"])
        assert rc == 1

    def test_needs_some_kb(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["prove", "--query", "p(a, b)"])
        assert exc.value.code == 2

    def test_depth_validated(self, data_dir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["prove", "--kb", str(data_dir / "countries.tsv"),
                  "--query", "p(a, b)", "--depth", "0"])
        assert exc.value.code == 2

    def test_missing_file_exits_one(self, tmp_path, capsys):
        rc = main(["prove", "--kb", str(tmp_path / "nope.tsv"),
                   "--query", "p(a, b)", "--symbolic"])
        assert rc == 1


class TestDecode:
    def test_prints_and_writes(self, run_dir, tmp_path, capsys):
        out = tmp_path / "rules.txt"
        rc = main(["decode", "--checkpoint", str(run_dir / "checkpoint.json"),
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines
        confs = []
        for line in lines:
            conf, text = line.split(" ", 1)
            confs.append(float(conf))
            assert text.endswith(".")
        assert confs == sorted(confs, reverse=True)
        assert capsys.readouterr().out.strip() == "\n".join(lines)
