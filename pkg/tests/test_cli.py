"""End-to-end CLI tests plus checkpoint round trips.

Everything runs in-process through ``recattn.cli.main`` on a small dataset
so the whole module stays fast.
"""

import csv
import json
import os

import numpy as np
import pytest

from recattn.checkpoint import load_checkpoint, save_checkpoint
from recattn.cli import main
from recattn.config import RunConfig
from recattn.errors import CheckpointError
from recattn.model import init_model, named_params
from recattn.tensor_core import Rng
from recattn.train import build_model

SMALL = ["--set", "classes=2", "--set", "per_class_train=6",
         "--set", "per_class_test=4", "--set", "hidden=8",
         "--set", "time_steps=3", "--set", "patch_size=16",
         "--set", "batch_size=4", "--set", "epochs=2",
         "--set", "sweep_steps=2:3"]


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated small dataset plus one trained checkpoint."""
    root = tmp_path_factory.mktemp("ws")
    data = root / "data"
    out = root / "out"
    assert run(["gen", "--seed", 0, "--out", out,
                "--set", f"data_dir={data}", *SMALL]) == 0
    assert run(["train", "--seed", 0, "--out", out,
                "--set", f"data_dir={data}", *SMALL]) == 0
    return root


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def test_gen_manifest_row_count(workspace):
    rows = _read_csv(workspace / "data" / "train" / "manifest.csv")
    assert len(rows) == 2 * 6
    rows = _read_csv(workspace / "data" / "test" / "manifest.csv")
    assert len(rows) == 2 * 4


def test_gen_deterministic(tmp_path, workspace):
    data2 = tmp_path / "data2"
    assert run(["gen", "--seed", 0, "--out", tmp_path / "o",
                "--set", f"data_dir={data2}", *SMALL]) == 0
    a = (workspace / "data" / "train" / "manifest.csv").read_bytes()
    b = (data2 / "train" / "manifest.csv").read_bytes()
    assert a == b


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_outputs_exist(workspace):
    out = workspace / "out"
    assert (out / "metrics.csv").exists()
    assert (out / "timings.csv").exists()
    assert (out / "model.ckpt").exists()
    assert (out / "config.echo.json").exists()
    assert (out / "training_curves.png").exists()
    rows = _read_csv(out / "metrics.csv")
    assert rows[0] == ["epoch", "train_loss", "global_acc", "local_acc",
                       "fused_acc"]
    assert len(rows) == 1 + 2  # header + one row per epoch
    for row in rows[1:]:
        assert float(row[1]) >= 0.0
        for acc in row[2:]:
            assert 0.0 <= float(acc) <= 1.0


def test_train_same_seed_byte_identical(tmp_path, workspace):
    data = workspace / "data"
    outs = []
    for tag in ("r1", "r2"):
        out = tmp_path / tag
        assert run(["train", "--seed", 3, "--out", out,
                    "--set", f"data_dir={data}", *SMALL]) == 0
        outs.append(out)
    assert (outs[0] / "metrics.csv").read_bytes() == \
        (outs[1] / "metrics.csv").read_bytes()
    assert (outs[0] / "model.ckpt").read_bytes() == \
        (outs[1] / "model.ckpt").read_bytes()


def test_train_zero_epochs_checkpoint_is_init(tmp_path, workspace):
    data = workspace / "data"
    out = tmp_path / "init"
    args = ["train", "--seed", 7, "--out", out,
            "--set", f"data_dir={data}", *SMALL]
    args[args.index("epochs=2")] = "epochs=0"
    assert run(args) == 0
    cfg = RunConfig(seed=7, hidden=8, time_steps=3, classes=2)
    ref = build_model(cfg, 2, 1)
    ref_path = tmp_path / "ref.ckpt"
    save_checkpoint(ref_path, ref)
    assert (out / "model.ckpt").read_bytes() == ref_path.read_bytes()


def test_config_echo_contents(workspace):
    doc = json.loads((workspace / "out" / "config.echo.json").read_text())
    assert doc["classes"] == 2
    assert doc["time_steps"] == 3
    assert "lambda" in doc and "lam" not in doc


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _eval(workspace, out, extra=()):
    data = workspace / "data"
    ckpt = workspace / "out" / "model.ckpt"
    return run(["eval", "--seed", 0, "--out", out, "--checkpoint", ckpt,
                "--set", f"data_dir={data}", *SMALL, *extra])


def test_eval_outputs(tmp_path, workspace):
    out = tmp_path / "ev"
    assert _eval(workspace, out) == 0
    rows = _read_csv(out / "eval_metrics.csv")
    assert rows[0] == ["global_acc", "local_acc", "fused_acc"]
    arows = _read_csv(out / "alphas.csv")
    assert arows[0] == ["image_id", "alpha_1", "alpha_2", "alpha_3"]
    assert len(arows) == 1 + 2 * 4
    for row in arows[1:]:
        alphas = [float(v) for v in row[1:]]
        assert abs(sum(alphas) - 1.0) <= 1e-9


def test_eval_repeatable(tmp_path, workspace):
    outs = []
    for tag in ("e1", "e2"):
        out = tmp_path / tag
        assert _eval(workspace, out) == 0
        outs.append(out)
    assert (outs[0] / "eval_metrics.csv").read_bytes() == \
        (outs[1] / "eval_metrics.csv").read_bytes()
    assert (outs[0] / "alphas.csv").read_bytes() == \
        (outs[1] / "alphas.csv").read_bytes()


def test_eval_fused_equals_global_under_10_weights(tmp_path, workspace):
    out = tmp_path / "gw"
    assert _eval(workspace, out, ("--set", "fusion_local=0")) == 0
    (row,) = _read_csv(out / "eval_metrics.csv")[1:]
    assert float(row[0]) == float(row[2])


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def _ablate(workspace, out, mode):
    data = workspace / "data"
    args = ["ablate", "--mode", mode, "--seed", 0, "--out", out,
            "--set", f"data_dir={data}", *SMALL]
    args[args.index("epochs=2")] = "epochs=1"
    return run(args)


def test_ablate_components_rows(tmp_path, workspace):
    out = tmp_path / "ac"
    assert _ablate(workspace, out, "components") == 0
    rows = _read_csv(out / "ablation_components.csv")
    assert [r[0] for r in rows] == ["variant", "baseline", "cnn_only", "lstm",
                                    "lstm_attention"]
    assert (out / "ablation_components.png").exists()


def test_ablate_sum_vs_attn_rows(tmp_path, workspace):
    out = tmp_path / "as"
    assert _ablate(workspace, out, "sum_vs_attn") == 0
    rows = _read_csv(out / "ablation_sum_vs_attn.csv")
    # T+1 rows after the header: 1, 1~2, ..., 1~T, attention.
    assert [r[0] for r in rows] == ["aggregation", "1", "1~2", "1~3",
                                    "attention"]


def test_ablate_step_features_rows(tmp_path, workspace):
    out = tmp_path / "af"
    assert _ablate(workspace, out, "step_features") == 0
    rows = _read_csv(out / "ablation_step_features.csv")
    assert rows[0] == ["step", "local_acc", "fused_acc"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]


def test_ablate_step_sweep_rows(tmp_path, workspace):
    out = tmp_path / "aw"
    assert _ablate(workspace, out, "step_sweep") == 0
    rows = _read_csv(out / "ablation_step_sweep.csv")
    assert rows[0] == ["time_steps", "global_acc", "local_acc", "fused_acc"]
    assert [r[0] for r in rows[1:]] == ["2", "3"]


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------

def test_saliency_outputs(tmp_path, workspace):
    data = workspace / "data"
    ckpt = workspace / "out" / "model.ckpt"
    out = tmp_path / "sal"
    args = ["saliency", "--seed", 0, "--out", out, "--checkpoint", ckpt,
            "--image-id", "te_c0_0000", "--set", f"data_dir={data}", *SMALL]
    assert run(args) == 0
    pgms = sorted(out.glob("te_c0_0000_0_t*_c0.pgm"))
    assert len(pgms) == 3  # one per time step
    for pgm in pgms:
        raw = pgm.read_bytes()
        assert raw.startswith(b"P5\n")
        csv_path = pgm.with_suffix(".csv")
        vals = np.loadtxt(csv_path, delimiter=",", ndmin=2)
        assert vals.min() >= 0.0 and vals.max() <= 1.0
    # Rerun is byte-identical.
    out2 = tmp_path / "sal2"
    args[args.index(out)] = out2
    assert run(args) == 0
    for pgm in pgms:
        assert pgm.read_bytes() == (out2 / pgm.name).read_bytes()


# ---------------------------------------------------------------------------
# error handling
# ---------------------------------------------------------------------------

def test_no_command_is_usage_error(capsys):
    assert main([]) == 2
    assert "ERROR:USAGE" in capsys.readouterr().err


def test_unknown_config_key(capsys, tmp_path):
    assert run(["gen", "--out", tmp_path, "--set", "bogus_key=1"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("ERROR:CONFIG")
    assert "bogus_key" in err


def test_missing_config_file(capsys, tmp_path):
    assert run(["gen", "--config", tmp_path / "nope.json",
                "--out", tmp_path]) == 2
    assert capsys.readouterr().err.startswith("ERROR:CONFIG")


def test_bad_set_syntax(capsys, tmp_path):
    assert run(["gen", "--out", tmp_path, "--set", "novalue"]) == 2
    assert capsys.readouterr().err.startswith("ERROR:CONFIG")


def test_unknown_ablate_mode(capsys, tmp_path, workspace):
    data = workspace / "data"
    assert run(["ablate", "--mode", "bogus", "--out", tmp_path,
                "--set", f"data_dir={data}"]) == 2
    assert capsys.readouterr().err.startswith("ERROR:USAGE")


def test_missing_checkpoint_is_io_error(capsys, tmp_path, workspace):
    data = workspace / "data"
    assert run(["eval", "--out", tmp_path, "--checkpoint",
                tmp_path / "nope.ckpt", "--set", f"data_dir={data}",
                *SMALL]) == 2
    assert capsys.readouterr().err.startswith("ERROR:IO")


def test_checkpoint_config_mismatch(capsys, tmp_path, workspace):
    data = workspace / "data"
    ckpt = workspace / "out" / "model.ckpt"
    args = ["eval", "--out", tmp_path / "m", "--checkpoint", ckpt,
            "--set", f"data_dir={data}", *SMALL]
    args[args.index("time_steps=3")] = "time_steps=4"
    assert run(args) == 2
    assert capsys.readouterr().err.startswith("ERROR:CHECKPOINT")


def test_missing_dataset_is_format_error(capsys, tmp_path):
    assert run(["train", "--out", tmp_path,
                "--set", f"data_dir={tmp_path / 'none'}", *SMALL]) == 2
    assert capsys.readouterr().err.startswith("ERROR:FORMAT")


def test_config_json_loading(tmp_path, workspace):
    data = workspace / "data"
    doc = {"classes": 2, "per_class_train": 6, "per_class_test": 4,
           "hidden": 8, "time_steps": 3, "patch_size": 16, "batch_size": 4,
           "epochs": 0, "lambda": 0.5, "data_dir": str(data)}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert run(["train", "--config", cfg_path, "--out", out]) == 0
    echoed = json.loads((out / "config.echo.json").read_text())
    assert echoed["lambda"] == 0.5
    assert echoed["out_dir"] == str(out)


# ---------------------------------------------------------------------------
# checkpoint round trips
# ---------------------------------------------------------------------------

def _model(seed=0, time_steps=3):
    return init_model(Rng(seed), 3, c_in=1, channels=(3, 4, 6), hidden=6,
                      lstm_layers=2, time_steps=time_steps)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    src = _model(seed=21)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, src)
    dst = _model(seed=22)
    load_checkpoint(path, dst)
    for (na, pa), (nb, pb) in zip(named_params(src), named_params(dst)):
        assert na == nb
        assert np.array_equal(pa, pb)


def test_checkpoint_rejects_time_step_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _model(time_steps=3))
    with pytest.raises(CheckpointError, match="attention.w"):
        load_checkpoint(path, _model(time_steps=4))


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _model())
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path, _model())


def test_checkpoint_rejects_corrupt_manifest(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _model())
    raw = bytearray(path.read_bytes())
    raw[14] = ord("!")  # inside the JSON manifest
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path, _model())
