import shutil

import numpy as np
import pytest

from octoseg import train as train_mod
from octoseg.checkpoint import load_checkpoint
from octoseg.cli import main, read_config_file
from octoseg.errors import TrainingDiverged
from octoseg.evaluate import jaccard
from octoseg.models import build_model
from octoseg.scenegen.dataset import read_manifest, read_mask
from octoseg.train import TrainConfig, child_seed


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def lock(path):
    return read_config_file(path / "run.lock")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--task", "boundary", "--count", "8", "--size", "32", "--seed", "7",
                 "--threads", "2", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--train-manifest", str(dataset / "train.manifest"),
                 "--val-manifest", str(dataset / "test.manifest"), "--scale", "2", "--input-size", "32",
                 "--epochs", "1", "--quiet", "--out", str(out)]) == 0
    return out


def test_gen_data_count_zero_is_config_error(tmp_path, capsys):
    assert main(["gen-data", "--count", "0", "--out", str(tmp_path)]) == 2
    assert "count" in capsys.readouterr().err


def test_gen_data_default_split_is_75_25(tmp_path):
    assert main(["gen-data", "--count", "100", "--size", "32", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert len(read_manifest(tmp_path / "train.manifest")) == 75
    assert len(read_manifest(tmp_path / "test.manifest")) == 25


def test_gen_data_three_way_split(tmp_path):
    assert main(["gen-data", "--count", "10", "--size", "32", "--ratios", "0.6,0.2,0.2", "--out", str(tmp_path)]) == 0
    assert [len(read_manifest(tmp_path / f"{s}.manifest")) for s in ("train", "val", "test")] == [6, 2, 2]


def test_gen_data_is_byte_reproducible(tmp_path):
    args = ["gen-data", "--task", "text", "--count", "6", "--size", "32", "--seed", "3",
            "--augment", "flip", "noise", "--out", str(tmp_path / "d")]
    assert main(args) == 0
    shutil.move(tmp_path / "d", tmp_path / "first")
    assert main(args) == 0
    assert tree(tmp_path / "first") == tree(tmp_path / "d")


def test_unknown_augmentation_is_config_error(tmp_path):
    assert main(["gen-data", "--augment", "blur", "--out", str(tmp_path)]) == 2


def test_train_lock_echoes_defaults(trained):
    cfg = lock(trained)
    assert cfg["lr"] == "0.0001" and cfg["batch_size"] == "4"
    assert (trained / "metrics.csv").read_text().splitlines()[0] == "epoch,train_loss,val_jcs,seconds"
    assert load_checkpoint(trained / "best.ckpt").arch.scale == 2


def test_train_zero_epochs_writes_initialization(dataset, tmp_path):
    assert main(["train", "--train-manifest", str(dataset / "train.manifest"), "--scale", "2",
                 "--input-size", "32", "--epochs", "0", "--seed", "5", "--quiet", "--out", str(tmp_path)]) == 0
    stored = load_checkpoint(tmp_path / "last.ckpt")
    init = build_model(TrainConfig(scale=2, input_size=32).arch(), seed=child_seed(5, "init"))
    for k, t in init.parameters().items():
        assert np.array_equal(stored.parameters()[k].data, t.data)


def test_train_missing_manifest_is_io_error(tmp_path):
    assert main(["train", "--train-manifest", str(tmp_path / "nope.manifest"), "--out", str(tmp_path)]) == 3


def test_train_zero_lr_needs_explicit_flag(dataset, tmp_path):
    base = ["train", "--train-manifest", str(dataset / "train.manifest"), "--scale", "2", "--input-size", "32",
            "--epochs", "1", "--lr", "0", "--quiet", "--out", str(tmp_path)]
    assert main(base) == 2
    assert main(base + ["--allow-zero-lr"]) == 0


def test_train_divergence_exits_4(dataset, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise TrainingDiverged("loss became nan at epoch 1")

    monkeypatch.setattr(train_mod, "train", boom)
    assert main(["train", "--train-manifest", str(dataset / "train.manifest"), "--scale", "2",
                 "--input-size", "32", "--quiet", "--out", str(tmp_path)]) == 4
    assert "nan" in capsys.readouterr().err


def test_config_file_values_and_flag_override(dataset, tmp_path):
    conf = tmp_path / "train.conf"
    conf.write_text(f"# run settings\ntrain-manifest={dataset / 'train.manifest'}\nscale=2\ninput_size=32\n"
                    f"epochs=0\nlr=0.002\nquiet=true\n")
    assert main(["train", "--config", str(conf), "--lr", "0.003", "--out", str(tmp_path / "o")]) == 0
    cfg = lock(tmp_path / "o")
    assert cfg["lr"] == "0.003" and cfg["epochs"] == "0" and cfg["scale"] == "2"
    conf.write_text("bogus=1\n")
    assert main(["train", "--config", str(conf), "--out", str(tmp_path / "p")]) == 2


def test_run_lock_replays_identically(dataset, tmp_path):
    args = ["train", "--train-manifest", str(dataset / "train.manifest"), "--scale", "2", "--input-size", "32",
            "--epochs", "1", "--quiet", "--out", str(tmp_path / "a")]
    assert main(args) == 0
    assert main(["train", "--config", str(tmp_path / "a" / "run.lock"), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "b" / "last.ckpt").read_bytes()


def test_eval_writes_reports_and_is_reproducible(trained, dataset, tmp_path):
    args = ["eval", "--checkpoint", str(trained / "best.ckpt"), "--manifest", str(dataset / "test.manifest"),
            "--warmup", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "a" / "report.txt").read_text()
    assert "timing protocol" in text and "images: 2" in text
    assert (tmp_path / "a" / "per_image.csv").read_bytes() == (tmp_path / "b" / "per_image.csv").read_bytes()


def test_eval_bad_checkpoint_is_io_error(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(bad), "--manifest", str(dataset / "test.manifest"),
                 "--out", str(tmp_path)]) == 3
    assert "magic" in capsys.readouterr().err


def test_eval_kind_mismatch_is_io_error(trained, dataset, tmp_path):
    assert main(["eval", "--checkpoint", str(trained / "best.ckpt"), "--manifest", str(dataset / "test.manifest"),
                 "--expect-kind", "unet", "--out", str(tmp_path)]) == 3


def test_infer_then_eval_agree(trained, dataset, tmp_path):
    manifest = read_manifest(dataset / "test.manifest")
    img, gt = manifest.paths()[0]
    assert main(["infer", "--checkpoint", str(trained / "best.ckpt"), str(img), "--out", str(tmp_path / "i")]) == 0
    pred = read_mask(tmp_path / "i" / f"{img.stem}_mask.png")
    assert main(["eval", "--checkpoint", str(trained / "best.ckpt"), "--manifest", str(dataset / "test.manifest"),
                 "--warmup", "0", "--out", str(tmp_path / "e")]) == 0
    row = (tmp_path / "e" / "per_image.csv").read_text().splitlines()[1].split(",")
    assert row[1] == img.name
    assert abs(float(row[2]) - jaccard(pred, read_mask(gt))) < 1e-9


def parse_inspect(out):
    return {k.strip(): v.strip() for k, _, v in (l.partition(":") for l in out.splitlines()) if _ and not k.startswith("#")}


def test_inspect_octhu_total(capsys):
    assert main(["inspect", "--model", "octhu", "--scale", "16"]) == 0
    vals = parse_inspect(capsys.readouterr().out)
    assert abs(int(vals["total_params"]) / 1_963_794 - 1) <= 0.02
    assert int(vals["checkpoint_bytes"]) > 4 * int(vals["total_params"])


def test_inspect_unet_baseline(capsys):
    assert main(["inspect", "--model", "unet", "--scale", "64"]) == 0
    vals = parse_inspect(capsys.readouterr().out)
    assert abs(int(vals["total_params"]) / 30_299_233 - 1) <= 0.03


def test_inspect_compare_reduction(capsys, tmp_path):
    assert main(["inspect", "--compare", "octhu:16", "unet:64", "--out", str(tmp_path)]) == 0
    vals = parse_inspect(capsys.readouterr().out)
    assert abs(float(vals["parameter_reduction_pct"]) - 93.52) <= 1.0
    assert abs(float(vals["storage_reduction_pct"]) - 93.49) <= 2.0
    assert float(vals["MAC_ratio"]) < 1
    assert (tmp_path / "inspect.txt").is_file()


def test_inspect_checkpoint(trained, capsys):
    assert main(["inspect", "--checkpoint", str(trained / "last.ckpt")]) == 0
    assert "kind=octhu scale=2" in capsys.readouterr().out


def test_bench_small(tmp_path):
    assert main(["bench", "--models", "octhu:2", "unet:4", "--sizes", "32", "--images", "1", "--warmup", "1",
                 "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "bench.csv").read_text().splitlines()
    assert rows[0] == "model,size,images,mean_seconds" and len(rows) == 3


def test_bad_flag_and_bad_env(tmp_path, monkeypatch):
    assert main(["inspect", "--model", "resnet"]) == 2
    assert main(["bench", "--models", "vgg:3"]) == 2
    monkeypatch.setenv("OCTOSEG_THREADS", "zero")
    assert main(["inspect", "--scale", "2", "--input-size", "32"]) == 2
