import json

import pytest
from fastapi.testclient import TestClient

from gazeattn import cli
from gazeattn.data_model import read_gaze_map
from gazeattn.service import schemas as s
from gazeattn.service.app import create_app


@pytest.fixture
def http():
    with TestClient(create_app()) as client:
        yield client


def test_health_and_unknown_job(http):
    assert http.get("/health").json() == {"status": "ok"}
    assert http.get("/jobs/nope").status_code == 404
    assert http.get("/jobs").json() == []


def test_make_data_and_gaze_prep_routes(http, tmp_path):
    resp = http.post("/make-data", json={"n": 4, "seed": 1, "out_dir": str(tmp_path / "d")})
    assert resp.status_code == 200
    body = resp.json()
    assert body["n_records"] == 4 and sum(body["splits"].values()) == 4
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    rec = manifest["records"][0]
    resp = http.post("/gaze-prep", json={
        "fixations": str(tmp_path / "d" / rec["fixations"]["expert"]),
        "volume": str(tmp_path / "d" / rec["image"]),
        "output": str(tmp_path / "g"),
    })
    assert resp.status_code == 200
    assert resp.json()["shape"] == [2, 2, 2]
    assert read_gaze_map(tmp_path / "g").shape == (2, 2, 2)


def test_bad_requests(http, tmp_path):
    assert http.post("/make-data", json={"n": 0, "out_dir": str(tmp_path)}).status_code == 422
    resp = http.post("/gaze-prep", json={"fixations": str(tmp_path / "x.csv"), "volume": str(tmp_path / "v"),
                                         "output": str(tmp_path / "o")})
    assert resp.status_code == 400


def test_summary_route(http):
    body = http.post("/summary", json={"variant": "ours"}).json()
    assert body["total_parameters"] > http.post("/summary", json={"variant": "backbone"}).json()["total_parameters"]


def test_train_job_eval_and_report(http, tiny_dataset, tmp_path):
    config = {"manifest": str(tiny_dataset), "variant": "backbone", "epochs": 1, "output_dir": str(tmp_path)}
    job = http.post("/train", json={"config": config}).json()
    assert job["state"] in ("queued", "running", "done")
    client = cli.Client(http=http, poll_seconds=0.05)
    result = client.call("train", s.TrainRequest(config=config))
    assert result["checkpoint"].endswith("checkpoint.json")
    status = http.get(f"/jobs/{job['id']}").json()
    assert status["state"] == "done"
    report = http.post("/eval", json={"checkpoint": result["checkpoint"], "output": str(tmp_path / "m.json")})
    assert report.status_code == 200 and "mean_dice" in report.json()["summary"]
    text = http.post("/report", json={"path": str(tmp_path / "m.json")}).json()
    assert text["kind"] == "metrics" and "mean_dice" in text["text"]


def test_failed_job_reports_error(http, tmp_path):
    job = http.post("/train", json={"config": {"manifest": str(tmp_path / "missing")}}).json()
    client = cli.Client(http=http, poll_seconds=0.05)
    with pytest.raises(RuntimeError, match="failed"):
        client.call("train", s.TrainRequest(config={"manifest": str(tmp_path / "missing")}))
    assert http.get(f"/jobs/{job['id']}").json()["state"] == "failed"


def test_cli_in_process(tmp_path, tiny_dataset, capsys, monkeypatch):
    monkeypatch.delenv(cli.SERVER_ENV, raising=False)
    assert cli.main(["make-data", "--n", "3", "--out", str(tmp_path / "d")]) == 0
    assert json.loads(capsys.readouterr().out)["n_records"] == 3
    assert cli.main(["summary", "--variant", "backbone"]) == 0
    capsys.readouterr()
    out_dir = tmp_path / "sw"
    assert cli.main(["sweep", "--manifest", str(tiny_dataset), "--epochs", "1", "--ratios", "1.0",
                     "--variants", "backbone", "--seeds", "0", "--out", str(out_dir)]) == 0
    capsys.readouterr()
    assert cli.main(["report", str(out_dir / "sweep.json")]) == 0
    assert "| backbone |" in capsys.readouterr().out
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "nothing.json")]) == 1


def test_cli_train_uses_output_root(tmp_path, tiny_dataset, capsys, monkeypatch):
    monkeypatch.delenv(cli.SERVER_ENV, raising=False)
    monkeypatch.setenv("GAZEATTN_OUTPUT_ROOT", str(tmp_path / "root"))
    assert cli.main(["train", "--manifest", str(tiny_dataset), "--variant", "backbone", "--epochs", "1"]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["run_dir"].startswith(str(tmp_path / "root"))


def test_cli_parser_has_all_subcommands():
    parser = cli.build_parser()
    for cmd in ("make-data", "gaze-prep", "train", "eval", "sweep", "report"):
        assert parser.parse_args([cmd] + {"make-data": ["--out", "x"],
                                          "gaze-prep": ["--fixations", "f", "--volume", "v", "--out", "o"],
                                          "eval": ["--checkpoint", "c"], "report": ["p"]}.get(cmd, [])).command == cmd
