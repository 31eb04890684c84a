# File: test_cli.py
# End-to-end runs of the seqnet command line against small configs and synthetic data

import json
import subprocess
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from seqnet.scripts import run_pipeline
from seqnet.scripts.cli import main
from seqnet.scripts.gradcheck import network_grad_check
from seqnet.services.checkpoint import restore_training_state
from seqnet.services.trainer import init_weights
from seqnet.src.builder import ConvSpec, HeadSpec, InputSpec, NetworkSpec, StageSpec, build_cifar_template
from seqnet.src.errors import EXIT_CONFIG, EXIT_DATA, EXIT_OK
from seqnet.src.seqconv import window_mask

DATA = "synthetic:10:40:8"


def run_config(**train):
    settings = dict(epochs=2, batch_size=20, schedule=[], augment=False, seed=4)
    settings.update(train)
    return {
        "name": "cli-test",
        "network": {"template": "cifar", "k": 4, "r": 1, "n": 1},
        "train": settings,
        "data": {"train": DATA},
    }


def micro_spec():
    return NetworkSpec(
        name="micro",
        input=InputSpec(channels=3, height=4, width=4),
        stem=[ConvSpec(in_channels=3, out_channels=4)],
        stages=[StageSpec(name="conv2", width=4, k=2, blocks=1)],
        head=HeadSpec(width=4, classes=3),
    )


@pytest.fixture
def config_path(run_config_file):
    return run_config_file(run_config())


# --- analyze and schema ---


def test_analyze_writes_report(tmp_path, config_path, capsys):
    assert main(["analyze", "--config", str(config_path), "--out", str(tmp_path / "a"), "--graph"]) == EXIT_OK
    report = json.loads((tmp_path / "a" / "complexity.json").read_text())
    assert report["total_params"] == 81_466
    assert report["spec"]["name"] == "SeqResNet(k=4,r=1,N=1/1/1)"
    printed = capsys.readouterr().out
    assert "81,466 params" in printed
    assert "stage1/downsample/downsize" in printed


def test_analyze_named_imagenet_template(tmp_path, run_config_file):
    path = run_config_file({"network": {"template": "imagenet", "name": "SeqResNeXt-24"}})
    assert main(["analyze", "--config", str(path), "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "complexity.json").read_text())
    assert abs(report["total_params"] - 26.2e6) / 26.2e6 <= 0.02


def test_malformed_json_exits_with_config_code(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{\"network\": ")
    assert main(["analyze", "--config", str(path)]) == EXIT_CONFIG
    assert "malformed JSON" in capsys.readouterr().err


@pytest.mark.parametrize(
    "payload,json_path",
    [
        ({**run_config(), "train": {"lr0": -1}}, "train.lr0"),
        ({**run_config(), "network": {"template": "cifar", "k": 4, "r": 1, "depth": 3}}, "network.depth"),
        ({**run_config(), "network": {"template": "vgg"}}, "network.template"),
        ({**run_config(), "network": {"spec": {"stem": [{"in_channels": 1, "out_channels": 4}]}}},
         "network.spec"),
        ({**run_config(), "optimizer": "adam"}, "optimizer"),
    ],
)
def test_invalid_configs_name_their_json_path(run_config_file, capsys, payload, json_path):
    path = run_config_file(payload)
    assert main(["analyze", "--config", str(path)]) == EXIT_CONFIG
    assert json_path in capsys.readouterr().err


def test_indivisible_template_is_a_config_error(run_config_file, capsys):
    path = run_config_file({"network": {"template": "cifar", "k": 5, "r": 1}})
    assert main(["analyze", "--config", str(path)]) == EXIT_CONFIG
    assert "stage conv2" in capsys.readouterr().err


def test_missing_config_and_bad_arguments():
    assert main(["analyze"]) == EXIT_CONFIG
    assert main(["no-such-command"]) == 2


def test_schema_lists_templates(tmp_path, capsys):
    assert main(["schema"]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert set(document["templates"]) == {"cifar", "imagenet", "ablation"}
    assert main(["schema", "--out", str(tmp_path / "schema.json")]) == EXIT_OK
    assert json.loads((tmp_path / "schema.json").read_text())["imagenet_names"][0] == "SeqResNeXt-24"


# --- train, eval, export ---


def test_zero_epochs_writes_the_initialization(tmp_path, config_path):
    out = tmp_path / "init"
    assert main(["train", "--config", str(config_path), "--out", str(out), "--epochs", "0"]) == EXIT_OK
    network, state, meta = restore_training_state(out / "checkpoint.sqcv")
    assert meta["epoch"] == 0 and meta["name"] == "cli-test"
    assert state.velocities == {}
    expected = init_weights(build_cifar_template(k=4, r=1, n=1), seed=4).state_arrays()
    for name, array in network.state_arrays().items():
        np.testing.assert_array_equal(array, expected[name])


def test_seeded_runs_repeat_exactly(tmp_path, config_path):
    for name in ("first", "second"):
        assert main(["train", "--config", str(config_path), "--out", str(tmp_path / name)]) == EXIT_OK
    first = (tmp_path / "first" / "history.csv").read_text()
    assert first == (tmp_path / "second" / "history.csv").read_text()
    history = pd.read_csv(tmp_path / "first" / "history.csv")
    assert list(history["epoch"]) == [0, 1]


def test_seed_override_changes_the_run(tmp_path, config_path):
    main(["train", "--config", str(config_path), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(config_path), "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "history.csv").read_text() != (tmp_path / "b" / "history.csv").read_text()


def test_resume_matches_uninterrupted_run(tmp_path, run_config_file):
    path = run_config_file(run_config(epochs=3, augment=True))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "full")]) == EXIT_OK
    split = tmp_path / "split"
    assert main(["train", "--config", str(path), "--out", str(split), "--epochs", "1"]) == EXIT_OK
    assert main(["train", "--config", str(path), "--out", str(split), "--resume"]) == EXIT_OK
    assert (tmp_path / "full" / "history.csv").read_text() == (split / "history.csv").read_text()
    full, _, _ = restore_training_state(tmp_path / "full" / "checkpoint.sqcv")
    resumed, _, meta = restore_training_state(split / "checkpoint.sqcv")
    assert meta["epoch"] == 3
    for name, array in full.state_arrays().items():
        np.testing.assert_array_equal(resumed.state_arrays()[name], array)


def test_resume_with_another_network_is_refused(tmp_path, config_path, run_config_file, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(out), "--epochs", "0"])
    other = run_config()
    other["network"]["k"] = 8
    other_path = run_config_file(other, name="other.json")
    assert main(["train", "--config", str(other_path), "--out", str(out), "--resume"]) == EXIT_CONFIG
    assert "differs" in capsys.readouterr().err


def test_train_without_output_directory(config_path, capsys):
    assert main(["train", "--config", str(config_path)]) == EXIT_CONFIG
    assert "--out" in capsys.readouterr().err


def test_missing_data_exits_with_data_code(tmp_path, config_path):
    code = main(["train", "--config", str(config_path), "--out", str(tmp_path), "--data", str(tmp_path / "none")])
    assert code == EXIT_DATA


def test_class_count_mismatch_is_a_config_error(tmp_path, config_path):
    code = main(["train", "--config", str(config_path), "--out", str(tmp_path), "--data", "synthetic:4:40:8"])
    assert code == EXIT_CONFIG


def test_cifar_directory_training(tmp_path, run_config_file, cifar_dir):
    path = run_config_file({**run_config(epochs=1, batch_size=25), "data": {"train": str(cifar_dir), "validation": 20}})
    out = tmp_path / "cifar"
    assert main(["train", "--config", str(path), "--out", str(out)]) == EXIT_OK
    history = pd.read_csv(out / "history.csv")
    assert history["eval_err"].between(0, 1).all()


def test_eval_reports_errors(tmp_path, config_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(out)])
    capsys.readouterr()
    assert main(["eval", "--out", str(out)]) == EXIT_OK
    document = json.loads((out / "eval.json").read_text())
    assert document["samples"] == 10 and document["epoch"] == 2
    assert 0 <= document["top1_err"] <= 1
    assert document["top5_err"] <= document["top1_err"]


def test_eval_of_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "absent.sqcv")]) == EXIT_DATA


def test_corrupt_checkpoint_exits_with_data_code(tmp_path):
    path = tmp_path / "bad.sqcv"
    path.write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(path), "--data", DATA]) == EXIT_DATA


def test_export_heatmaps_for_each_stage(tmp_path, config_path):
    out = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(out), "--epochs", "0"])
    assert main(["export-heatmap", "--out", str(out)]) == EXIT_OK
    names = sorted(p.name for p in out.glob("*.csv") if p.name != "history.csv")
    assert names == ["stage0_block0_layer2.csv", "stage1_block0_layer2.csv", "stage2_block0_layer2.csv"]
    frame = pd.read_csv(out / "stage0_block0_layer2.csv", index_col=0)
    defined = frame.to_numpy() != -1.0
    assert (frame.to_numpy()[defined] == 0).all()


def test_export_heatmaps_after_training(tmp_path, config_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
    assert main(["export-heatmap", "--out", str(out)]) == EXIT_OK
    for stage in range(3):
        frame = pd.read_csv(out / f"stage{stage}_block0_layer2.csv", index_col=0)
        values = frame.to_numpy()
        groups, columns = values.shape
        in_groups = columns - groups + 1
        defined = values != -1.0
        assert defined.any(axis=1).all()
        assert ((values[defined] >= 0) & (values[defined] <= 1)).all()
        np.testing.assert_array_equal(values.max(axis=1), np.ones(groups))
        for i in range(1, groups + 1):
            expected = window_mask(i, in_groups, in_groups).astype(bool)
            np.testing.assert_array_equal(defined[i - 1, : len(expected)], expected)


def test_export_with_unmatched_selector(tmp_path, config_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(config_path), "--out", str(out), "--epochs", "0"])
    assert main(["export-heatmap", "--out", str(out), "--layers", "stage7/*"]) == EXIT_CONFIG
    assert "matches no layer" in capsys.readouterr().err


# --- gradcheck ---


def test_gradcheck_refuses_large_networks(run_config_file, capsys):
    path = run_config_file({"network": {"template": "cifar", "k": 8, "r": 2, "n": 1}})
    assert main(["gradcheck", "--config", str(path)]) == EXIT_CONFIG
    assert "refusing" in capsys.readouterr().err


def test_gradcheck_passes_on_a_micro_network(run_config_file, capsys):
    path = run_config_file({"network": {"spec": micro_spec().model_dump(mode="json")}})
    assert main(["gradcheck", "--config", str(path), "--size", "4", "--max-coords", "3"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_network_gradients_match_finite_differences():
    report = network_grad_check(micro_spec(), seed=1, batch=3, size=4)
    assert report.passed, report
    assert report.checked == init_weights(micro_spec()).parameter_count()


@pytest.mark.parametrize("windowed", [True, False], ids=["windowed", "dense"])
@pytest.mark.parametrize("variant", ["basic", "bottleneck"])
def test_tiny_templates_pass_the_network_gradient_check(variant, windowed):
    spec = build_cifar_template(k=4, r=1, n=1, variant=variant, windowed=windowed)
    names = [name for name, _ in init_weights(spec).named_parameters()]
    assert any(name.startswith("stage1/downsample/") for name in names)
    report = network_grad_check(spec, seed=0, batch=4, size=8, max_coords=1)
    assert report.passed, report
    assert report.checked == len(names)


def test_shipped_gradcheck_config_passes(capsys):
    path = Path(__file__).parent / "configs" / "gradcheck_k4r1.json"
    assert main(["gradcheck", "--config", str(path), "--max-coords", "1"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out


# --- pipeline ---


def test_pipeline_runs_each_step_in_order(mocker):
    run = mocker.patch.object(run_pipeline, "run_command", return_value="ok")
    assert run_pipeline.main(["--out", "runs/x", "--seed", "2"]) == EXIT_OK
    commands = [call.args[0][3] for call in run.call_args_list]
    assert commands == ["analyze", "train", "eval", "export-heatmap"]
    assert "--seed" in run.call_args_list[1].args[0]


def test_pipeline_stops_at_the_first_failure(mocker):
    failure = subprocess.CalledProcessError(EXIT_DATA, ["train"])
    run = mocker.patch.object(run_pipeline, "run_command", side_effect=["ok", failure])
    assert run_pipeline.main([]) == EXIT_DATA
    assert run.call_count == 2
