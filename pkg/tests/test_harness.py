import json
import math
import shutil

import numpy as np
import pytest
import torch

from gazeattn.harness import training
from gazeattn.harness.checkpoint import load_model, load_optimizer_state, read_checkpoint
from gazeattn.harness.config import OUTPUT_ROOT_ENV, ExperimentConfig, load_config, output_root
from gazeattn.harness.data import load_manifest, select_subset
from gazeattn.harness.optim import Lookahead, lr_at, make_optimizer
from gazeattn.harness.sweep import cell_mean, sweep
from gazeattn.harness.training import TrainingError, evaluate, train
from gazeattn.network import ModelOutput


def cfg_for(manifest, **kw):
    base = dict(manifest=str(manifest), epochs=2, eval_every=1, batch_size=2, lr=1e-3)
    return ExperimentConfig(**{**base, **kw})


# -- optimizer and schedule ---------------------------------------------------


def quadratic_param(x0=1.0):
    return torch.nn.Parameter(torch.tensor([x0], dtype=torch.float64))


def run_steps(opt, p, n):
    for _ in range(n):
        opt.zero_grad()
        (0.5 * p ** 2).sum().backward()
        opt.step()


def test_lookahead_alpha_one_equals_inner():
    a, b = quadratic_param(), quadratic_param()
    run_steps(torch.optim.SGD([a], lr=0.1), a, 6)
    run_steps(Lookahead(torch.optim.SGD([b], lr=0.1), k=3, alpha=1.0), b, 6)
    assert torch.equal(a, b)


def test_lookahead_k1_halves_each_update():
    p = quadratic_param()
    run_steps(Lookahead(torch.optim.SGD([p], lr=0.1), k=1, alpha=0.5), p, 1)
    assert p.item() == pytest.approx(1 - 0.5 * 0.1)


def test_lookahead_two_step_hand_trace():
    # fast: 1 -> 0.9 -> 0.81; sync: slow = 1 + 0.5 (0.81 - 1) = 0.905
    p = quadratic_param()
    opt = Lookahead(torch.optim.SGD([p], lr=0.1), k=2, alpha=0.5)
    run_steps(opt, p, 1)
    assert p.item() == pytest.approx(0.9)
    run_steps(opt, p, 1)
    assert p.item() == pytest.approx(0.905)
    assert opt.slow[0].item() == pytest.approx(0.905)
    with pytest.raises(ValueError):
        Lookahead(torch.optim.SGD([p], lr=0.1), k=0)


def test_make_optimizer():
    p = [quadratic_param()]
    assert isinstance(make_optimizer(p, "adam", 1e-3), torch.optim.Adam)
    ranger = make_optimizer(p, "ranger", 1e-3, k=5, alpha=0.5)
    assert isinstance(ranger.inner, torch.optim.RAdam) and ranger.k == 5
    with pytest.raises(ValueError):
        make_optimizer(p, "sgd", 1e-3)


def test_cosine_after_schedule():
    assert lr_at(100, 1e-4, 210, "cosine_after", 100) == 1e-4
    assert lr_at(50, 1e-4, 210, "cosine_after", 100) == 1e-4
    assert lr_at(209, 1e-4, 210, "cosine_after", 100) < 1e-6
    lrs = [lr_at(e, 1.0, 210, "cosine_after", 100) for e in range(100, 210)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert lr_at(5, 0.1, 10, "constant") == 0.1


# -- config -----------------------------------------------------------------


def test_config_files_and_fingerprint(tmp_path):
    (tmp_path / "c.yaml").write_text("manifest: m.json\nvariant: backbone\nepochs: 3\n")
    (tmp_path / "c.json").write_text(json.dumps({"manifest": "m.json", "variant": "backbone", "epochs": 3}))
    a = load_config(tmp_path / "c.yaml")
    b = load_config(tmp_path / "c.json", output_dir="elsewhere", seeds=[4])
    assert a.fingerprint("h") == b.fingerprint("h")
    assert a.fingerprint("h") != load_config(tmp_path / "c.json", epochs=4).fingerprint("h")
    with pytest.raises(ValueError):
        ExperimentConfig(manifest="m", data_ratio=0)
    with pytest.raises(ValueError):
        ExperimentConfig(manifest="m", unknown_key=1)


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert output_root() == tmp_path


# -- data selection -----------------------------------------------------------


def test_subset_selection_size_nesting_and_pairing():
    records = [{"id": f"r{i:02d}"} for i in range(40)]
    for seed in range(3):
        s2 = select_subset(records, 0.2, seed)
        s3 = select_subset(records, 0.3, seed)
        s5 = select_subset(records, 0.5, seed)
        assert len(s2) == 8 and len(s3) == 12 and len(s5) == 20
        ids = lambda s: {r["id"] for r in s}  # noqa: E731
        assert ids(s2) <= ids(s3) <= ids(s5)
        assert s2 == select_subset(list(reversed(records)), 0.2, seed)
    assert select_subset(records, 0.2, 0) != select_subset(records, 0.2, 1)
    with pytest.raises(ValueError):
        select_subset(records, 1.5, 0)


# -- training -------------------------------------------------------------------


def test_train_checkpoint_reload_is_bitwise(tiny_dataset, tmp_path):
    result = train(cfg_for(tiny_dataset, variant="ours", epochs=1), run_dir=tmp_path / "r")
    model, header = load_model(result.checkpoint)
    assert header["variant"] == "ours" and header["fingerprint"] == result.fingerprint
    x = torch.randn(2, 4, 16, 16, 16)
    result.model.eval()
    with torch.no_grad():
        assert torch.equal(model(x).logits, result.model(x).logits)
    lines = (tmp_path / "r" / "log.jsonl").read_text().splitlines()
    assert len(lines) == 1 and {"loss", "task_loss", "gaze_loss", "lr"} <= set(json.loads(lines[0]))
    opt = make_optimizer(model.parameters(), "adam", 1e-3)
    load_optimizer_state(result.checkpoint, opt)
    assert len(opt.state) == len(list(model.parameters()))
    _, arrays = read_checkpoint(result.checkpoint)
    assert all(a.dtype == np.float32 for a in arrays.values())


def test_ranger_checkpoint_round_trip(tiny_dataset, tmp_path):
    result = train(cfg_for(tiny_dataset, variant="backbone", epochs=1, optimizer="ranger"), run_dir=tmp_path)
    model, _ = load_model(result.checkpoint)
    opt = make_optimizer(model.parameters(), "ranger", 1e-3)
    load_optimizer_state(result.checkpoint, opt)
    assert opt.counter == 3  # 6 train records / batch 2


def test_training_and_evaluation_are_deterministic(tiny_dataset, tmp_path):
    cfg = cfg_for(tiny_dataset, variant="ours")
    a = train(cfg, run_dir=tmp_path / "a")
    b = train(cfg, run_dir=tmp_path / "b")
    assert a.log == b.log
    ra, rb = evaluate(a.checkpoint), evaluate(b.checkpoint)
    assert ra.model_dump() == rb.model_dump()
    assert evaluate(a.checkpoint).model_dump() == ra.model_dump()
    assert (tmp_path / "a" / "checkpoint.raw").read_bytes() == (tmp_path / "b" / "checkpoint.raw").read_bytes()


def test_report_has_no_gaze_fields(tiny_dataset, tmp_path):
    result = train(cfg_for(tiny_dataset, variant="ours", epochs=1), run_dir=tmp_path)
    text = evaluate(result.checkpoint, "val").model_dump_json()
    assert "gaze" not in text
    rep = evaluate(result.checkpoint, "val")
    assert set(rep.aggregate) == {"dice", "hd95"}
    assert set(rep.aggregate["dice"]) == {"WT", "TC", "ET"}
    assert {"mean_dice", "mean_hd95"} == set(rep.summary)


def test_perfect_prediction_scores(tiny_dataset, tmp_path, monkeypatch):
    result = train(cfg_for(tiny_dataset, variant="backbone", epochs=1), run_dir=tmp_path)
    manifest = load_manifest(tiny_dataset)
    from gazeattn.harness.data import load_tensors

    truth = load_tensors(manifest, manifest.split("test")).masks

    def perfect(model, images, batch_size=4):
        return [ModelOutput(truth, truth)]

    monkeypatch.setattr(training, "predict", perfect)
    rep = evaluate(result.checkpoint, "test")
    for name in ("WT", "TC", "ET"):
        assert rep.aggregate["dice"][name]["mean"] == pytest.approx(1.0)
        assert rep.aggregate["hd95"][name]["mean"] == 0.0


def test_missing_gaze_is_an_error(tmp_path):
    from gazeattn.synthetic import GazeSimConfig, PhantomConfig, build_dataset

    build_dataset(6, PhantomConfig(shape=(16, 16, 16), blob_radius=(2.0, 3.0)), GazeSimConfig(), tmp_path,
                  gaze_ratio=0.0)
    with pytest.raises(TrainingError, match="needs gaze"):
        train(cfg_for(tmp_path, variant="ours", epochs=1), run_dir=tmp_path / "r")
    # the mask-supervised and gaze-free variants do not need gaze
    train(cfg_for(tmp_path, variant="ours_no_gaze", epochs=1), run_dir=tmp_path / "n")


def test_gaze_files_of_unflagged_records_are_never_read(tiny_dataset, tmp_path):
    copy = tmp_path / "data"
    shutil.copytree(tiny_dataset.parent, copy)
    manifest = json.loads((copy / "manifest.json").read_text())
    for r in manifest["records"]:
        if not r["has_gaze"]:
            for f in r["fixations"].values():
                (copy / f).unlink()
    cfg = dict(variant="ours", epochs=1)
    a = train(cfg_for(tiny_dataset, **cfg), run_dir=tmp_path / "a")
    b = train(cfg_for(copy / "manifest.json", **cfg), run_dir=tmp_path / "b")
    assert a.log == b.log


def test_non_finite_loss_names_the_batch(tiny_dataset, tmp_path, monkeypatch):
    build = training.build_model

    def poisoned(cfg, manifest, seed):
        model = build(cfg, manifest, seed)
        with torch.no_grad():
            model.head.final.bias.fill_(math.nan)
        return model

    monkeypatch.setattr(training, "build_model", poisoned)
    with pytest.raises(TrainingError, match=r"epoch 0 batch 0 \(records"):
        train(cfg_for(tiny_dataset, variant="backbone"), run_dir=tmp_path)


def test_classification_training_2d(tmp_path):
    from gazeattn.synthetic import GazeSimConfig, PhantomConfig, build_dataset

    build_dataset(12, PhantomConfig(shape=(1, 32, 32), channels=1, blob_radius=(2.0, 3.0)), GazeSimConfig(),
                  tmp_path, split=(0.5, 0.25, 0.25))
    result = train(cfg_for(tmp_path, variant="ours", epochs=2), run_dir=tmp_path / "r")
    rep = evaluate(result.checkpoint, "test")
    assert rep.task == "classification" and "mean_auroc" in rep.summary
    assert len(rep.aggregate["auroc"]) + len(rep.flags) == 5


def test_sweep_counts_and_table(tiny_dataset, tmp_path):
    base = cfg_for(tiny_dataset, epochs=1)
    result = sweep(base, [0.5], ["backbone", "ours"], [0, 1, 2], out_dir=tmp_path)
    assert len(result["runs"]) == 6
    assert [row["label"] for row in result["table"]] == ["backbone", "ours"]
    cell = result["table"][0]["cells"]["mean@0.5"]
    assert cell["n"] == 3 and cell["std"] >= 0
    for seed in range(3):
        ids = {r["variant"]: r["train_ids"] for r in result["runs"] if r["seed"] == seed}
        assert ids["backbone"] == ids["ours"]
    rows = [l for l in (tmp_path / "sweep.md").read_text().splitlines() if l.startswith("| ")]
    assert [r.split(" |")[0] for r in rows] == ["| method", "| backbone", "| ours"]
    assert cell_mean(result, "ours", "mean@0.5") is not None


def test_sweep_with_two_gaze_sources(tiny_dataset, tmp_path):
    base = cfg_for(tiny_dataset, epochs=1)
    result = sweep(base, [0.5], ["backbone", "ours"], [0], gaze_sources=["expert", "nonexpert"], out_dir=tmp_path)
    assert [row["label"] for row in result["table"]] == ["backbone", "ours[expert]", "ours[nonexpert]"]
