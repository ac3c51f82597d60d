import json

import pytest

from vmsight.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small end-to-end CLI workspace: corpus, db, models, profiles."""
    root = tmp_path_factory.mktemp("cli")
    corpus = str(root / "corpus.jsonl")
    profiles = str(root / "profiles.json")
    db = str(root / "db")
    models = str(root / "models")
    assert (
        main(
            [
                "simulate",
                "--out",
                corpus,
                "--sessions",
                "170",
                "--duration-s",
                "120",
                "--seed",
                "7",
                "--isolated",
                "25",
                "--profiles-out",
                profiles,
            ]
        )
        == 0
    )
    assert main(["fingerprint", "--corpus", corpus, "--out", db, "--refs-per-app", "2"]) == 0
    assert (
        main(
            [
                "train",
                "--corpus",
                corpus,
                "--profiles",
                profiles,
                "--models",
                models,
                "--max-epochs",
                "80",
                "--seed",
                "0",
            ]
        )
        == 0
    )
    return {"root": root, "corpus": corpus, "profiles": profiles, "db": db, "models": models}


class TestBasics:
    def test_help_exits_zero(self, capsys):
        code, out, _ = run(capsys, "--help")
        assert code == 0
        assert "simulate" in out and "predict" in out

    def test_unknown_flag_exits_two(self, capsys):
        code, _, _ = run(capsys, "identify", "--frobnicate")
        assert code == 2

    def test_missing_subcommand_exits_two(self, capsys):
        code, _, _ = run(capsys)
        assert code == 2

    def test_domain_error_exits_one(self, capsys):
        code, _, err = run(capsys, "identify", "--corpus", "/nonexistent", "--db", "/also-missing")
        assert code == 1
        assert "IoError" in err


class TestIdentify:
    def test_fingerprinted_session_identified(self, capsys, workspace):
        code, out, err = run(
            capsys,
            "identify",
            "--corpus",
            workspace["corpus"],
            "--db",
            workspace["db"],
            "--json",
        )
        assert code == 0
        payload = json.loads(out)
        results = payload["results"]
        assert len(results) == 295  # 170 colocated + 25 isolated per app
        # self-identification on the fingerprint corpus should be essentially perfect
        from vmsight.tracemodel import load_corpus

        labels = {r.session_id: r.app_label for r in load_corpus(workspace["corpus"])}
        acc = sum(row["label"] == labels[row["session_id"]] for row in results) / len(results)
        assert acc >= 0.95

    def test_json_and_logs_do_not_share_stdout(self, capsys, workspace):
        code, out, err = run(
            capsys,
            "identify",
            "--corpus",
            workspace["corpus"],
            "--db",
            workspace["db"],
            "--json",
        )
        assert code == 0
        json.loads(out)  # stdout must be pure JSON
        assert "{" not in err

    def test_jobs_flag_preserves_order_and_results(self, capsys, workspace):
        code1, out1, _ = run(
            capsys, "identify", "--corpus", workspace["corpus"], "--db", workspace["db"],
            "--json",
        )
        code2, out2, _ = run(
            capsys, "identify", "--corpus", workspace["corpus"], "--db", workspace["db"],
            "--json", "--jobs", "2",
        )
        assert code1 == code2 == 0
        assert out1 == out2


class TestPredict:
    def test_predict_known_sessions(self, capsys, workspace):
        code, out, _ = run(
            capsys,
            "predict",
            "--corpus",
            workspace["corpus"],
            "--db",
            workspace["db"],
            "--models",
            workspace["models"],
            "--profiles",
            workspace["profiles"],
            "--json",
        )
        assert code == 0
        rows = json.loads(out)["results"]
        assert all("deg" in row for row in rows if "error" not in row)

    def test_csv_batch_report(self, capsys, workspace, tmp_path):
        out = str(tmp_path / "deg.csv")
        code, _, err = run(
            capsys,
            "predict",
            "--corpus",
            workspace["corpus"],
            "--db",
            workspace["db"],
            "--models",
            workspace["models"],
            "--profiles",
            workspace["profiles"],
            "--out",
            out,
        )
        assert code == 0
        lines = open(out).read().strip().splitlines()
        assert lines[0].startswith("session_id,label,")
        assert len(lines) > 100

    def test_unknown_application_exits_one(self, capsys, workspace, tmp_path):
        outsider = str(tmp_path / "outsider.jsonl")
        assert (
            main(
                [
                    "simulate",
                    "--out",
                    outsider,
                    "--sessions",
                    "1",
                    "--duration-s",
                    "120",
                    "--seed",
                    "9",
                    "--outsider",
                    "3",
                ]
            )
            == 0
        )
        # keep only the outsider sessions
        lines = [
            line
            for line in open(outsider).read().splitlines()
            if '"app_label": "batch_transcoder"' in line
        ]
        with open(outsider, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        code, out, err = run(
            capsys,
            "predict",
            "--corpus",
            outsider,
            "--db",
            workspace["db"],
            "--models",
            workspace["models"],
            "--profiles",
            workspace["profiles"],
            "--json",
        )
        assert code == 1
        assert "UnknownApplication" in err
        rows = json.loads(out)["results"]
        assert all(row.get("error") == "UnknownApplication" for row in rows)


class TestConfigFile:
    def test_env_config_supplies_defaults_and_flags_win(
        self, capsys, workspace, tmp_path, monkeypatch
    ):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"corpus": workspace["corpus"], "json": True}))
        monkeypatch.setenv("CLOUDPROPHET_CONFIG", str(cfg_path))
        code, out, _ = run(capsys, "identify", "--db", workspace["db"])
        assert code == 0
        json.loads(out)

    def test_unknown_config_keys_rejected(self, capsys, workspace, tmp_path, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"corpus": workspace["corpus"], "bogus": 1}))
        monkeypatch.setenv("CLOUDPROPHET_CONFIG", str(cfg_path))
        code, _, err = run(capsys, "identify", "--db", workspace["db"])
        assert code == 1
        assert "ConfigInvalid" in err


class TestDeterminism:
    def test_simulate_rerun_byte_identical(self, tmp_path, capsys):
        a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
        for path in (a, b):
            assert (
                main(
                    ["simulate", "--out", path, "--sessions", "25",
                     "--duration-s", "60", "--seed", "3"]
                )
                == 0
            )
        capsys.readouterr()
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_select_metrics_rerun_identical(self, capsys, workspace):
        args = (
            "select-metrics", "--corpus", workspace["corpus"],
            "--app", "web_serving", "--target", "workload", "--json",
        )
        _, out1, _ = run(capsys, *args)
        _, out2, _ = run(capsys, *args)
        assert out1 == out2 and json.loads(out1)["target"] == "workload"
