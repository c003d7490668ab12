"""Command-line surface: config handling, run layout, exit codes, pipeline."""

import json

import pytest

from protomatch.cli import (
    RunConfig,
    build_run_config,
    config_lines,
    main,
    parse_config_file,
    run_directory,
)
from protomatch.errors import ConfigError


SMALL_CORPUS = [
    "num_videos = 8",
    "captions_per_video = 2",
    "tokens_per_video = 6",
    "token_dim = 10",
    "text_dim = 8",
]
SMALL_TRAIN = [
    "n_prototypes = 2",
    "embed_dim = 8",
    "batch_size = 4",
    "epochs = 2",
    "warmup_epochs = 1",
    "peak_lr = 0.001",
]


def write_config(tmp_path, lines, name="run.cfg"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def synth_small(tmp_path, seed=0):
    cfg = write_config(tmp_path, SMALL_CORPUS)
    out = tmp_path / "runs"
    assert main(["synth", "--config", str(cfg), "--seed", str(seed), "--out-dir", str(out)]) == 0
    manifests = list(out.glob("*/corpus/manifest.jsonl"))
    assert len(manifests) == 1
    return cfg, out, manifests[0]


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def test_config_file_parsing_with_comments(tmp_path):
    path = write_config(tmp_path, ["# a comment", "epochs = 7", "", "peak_lr = 0.002  # inline"])
    values = parse_config_file(path)
    assert values == {"epochs": "7", "peak_lr": "0.002"}


def test_unknown_key_rejected(tmp_path):
    path = write_config(tmp_path, ["learning_rate = 0.1"])
    code = main(["synth", "--config", str(path), "--out-dir", str(tmp_path / "r")])
    assert code == 1


def test_malformed_line_reports_location(tmp_path):
    path = write_config(tmp_path, ["epochs 7"])
    with pytest.raises(ConfigError) as exc:
        parse_config_file(path)
    assert "1" in str(exc.value)


def test_override_precedence_file_then_set_then_seed(tmp_path):
    import argparse

    cfg_path = write_config(tmp_path, ["epochs = 7", "seed = 3"])
    args = argparse.Namespace(
        config=str(cfg_path), set=["epochs=9"], seed=11, out_dir="unused"
    )
    cfg = build_run_config(args)
    assert cfg.epochs == 9  # --set beats the file
    assert cfg.seed == 11  # --seed beats both
    assert cfg.batch_size == RunConfig().batch_size  # defaults fill the rest


def test_bad_set_syntax_rejected():
    import argparse

    args = argparse.Namespace(config=None, set=["epochs:9"], seed=None, out_dir="x")
    with pytest.raises(ConfigError):
        build_run_config(args)


def test_type_coercion_errors_name_the_key():
    import argparse

    args = argparse.Namespace(config=None, set=["epochs=soon"], seed=None, out_dir="x")
    with pytest.raises(ConfigError) as exc:
        build_run_config(args)
    assert "epochs" in str(exc.value)


def test_run_directory_depends_on_config_and_seed(tmp_path):
    a = RunConfig()
    b = RunConfig(epochs=a.epochs + 1)
    assert run_directory(a, tmp_path) != run_directory(b, tmp_path)
    c = RunConfig(seed=a.seed + 1)
    dir_a, dir_c = run_directory(a, tmp_path), run_directory(c, tmp_path)
    assert dir_a != dir_c
    assert dir_a.name.endswith("-seed0") and dir_c.name.endswith("-seed1")


def test_config_echo_reproduces_effective_config(tmp_path):
    cfg_file, out, _ = synth_small(tmp_path)
    (run_dir,) = out.iterdir()
    echoed = (run_dir / "config.echo").read_text()
    args_cfg = build_run_config(
        __import__("argparse").Namespace(
            config=str(cfg_file), set=None, seed=0, out_dir=str(out)
        )
    )
    assert echoed == config_lines(args_cfg)


# ---------------------------------------------------------------------------
# end-to-end pipeline
# ---------------------------------------------------------------------------


def test_synth_train_eval_pipeline(tmp_path, capsys):
    _, out, manifest = synth_small(tmp_path)
    train_cfg = write_config(tmp_path, SMALL_CORPUS + SMALL_TRAIN, name="train.cfg")
    code = main(
        ["train", "--config", str(train_cfg), "--corpus", str(manifest),
         "--out-dir", str(out / "train")]
    )
    assert code == 0
    (train_dir,) = (out / "train").iterdir()
    assert (train_dir / "train_log.csv").exists()
    assert (train_dir / "report.json").exists()
    assert (train_dir / "report.txt").exists()
    checkpoints = sorted((train_dir / "checkpoints").iterdir())
    assert checkpoints, "training must leave at least the final checkpoint"

    code = main(
        ["eval", "--config", str(train_cfg), "--corpus", str(manifest),
         "--checkpoint", str(checkpoints[-1]), "--out-dir", str(out / "eval")]
    )
    assert code == 0
    (eval_dir,) = (out / "eval").iterdir()
    eval_report = json.loads((eval_dir / "report.json").read_text())
    train_report = json.loads((train_dir / "report.json").read_text())
    assert eval_report == train_report  # same parameters, same corpus
    assert "SumR" in capsys.readouterr().out


def test_rerun_with_same_config_is_byte_identical(tmp_path):
    _, out, manifest = synth_small(tmp_path)
    train_cfg = write_config(tmp_path, SMALL_CORPUS + SMALL_TRAIN, name="train.cfg")
    payloads = []
    for attempt in ("a", "b"):
        dest = out / f"train_{attempt}"
        assert main(["train", "--config", str(train_cfg), "--corpus", str(manifest),
                     "--out-dir", str(dest)]) == 0
        (run_dir,) = dest.iterdir()
        payloads.append(
            (
                (run_dir / "train_log.csv").read_bytes(),
                (run_dir / "report.json").read_bytes(),
                (run_dir / "report.txt").read_bytes(),
            )
        )
    assert payloads[0] == payloads[1]


def test_diagnose_and_heatmap_artifacts(tmp_path):
    _, out, manifest = synth_small(tmp_path)
    assert main(["diagnose", "--corpus", str(manifest), "--out-dir", str(out / "diag")]) == 0
    (diag_dir,) = (out / "diag").iterdir()
    for name in ("inter_hist.csv", "min_intra.csv", "summary.json"):
        assert (diag_dir / name).exists()
    summary = json.loads((diag_dir / "summary.json").read_text())
    assert 0.0 <= summary["fraction_below"] <= 1.0

    train_cfg = write_config(tmp_path, SMALL_CORPUS + SMALL_TRAIN, name="train.cfg")
    assert main(["train", "--config", str(train_cfg), "--corpus", str(manifest),
                 "--out-dir", str(out / "train")]) == 0
    (train_dir,) = (out / "train").iterdir()
    ckpt = sorted((train_dir / "checkpoints").iterdir())[-1]
    assert main(["heatmap", "--corpus", str(manifest), "--checkpoint", str(ckpt),
                 "--video-id", "v3", "--out-dir", str(out / "heat")]) == 0
    (heat_dir,) = (out / "heat").iterdir()
    assert (heat_dir / "heatmap_v3.csv").exists()
    assert (heat_dir / "heatmap_v3_normalized.csv").exists()


def test_gradcheck_command_passes(tmp_path, capsys):
    assert main(["gradcheck", "--out-dir", str(tmp_path)]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if "max rel err" in l]
    assert len(lines) >= 5
    assert all("PASS" in l for l in lines)


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_batch_size_beyond_corpus_exits_1_naming_both(tmp_path, capsys):
    _, out, manifest = synth_small(tmp_path)
    cfg = write_config(tmp_path, SMALL_CORPUS + ["batch_size = 12"], name="big.cfg")
    code = main(["train", "--config", str(cfg), "--corpus", str(manifest),
                 "--out-dir", str(out / "t")])
    assert code == 1
    err = capsys.readouterr().err
    assert "12" in err and "8" in err
    assert not (out / "t").exists()  # validation failed before any writes


def test_missing_corpus_exits_1_naming_path(tmp_path, capsys):
    code = main(["train", "--corpus", str(tmp_path / "nope.jsonl"),
                 "--out-dir", str(tmp_path / "r")])
    assert code == 1
    assert "nope.jsonl" in capsys.readouterr().err


def test_unwritable_out_dir_exits_3(tmp_path, capsys):
    blocked = tmp_path / "blocked"
    blocked.write_text("a file where a directory must go")
    code = main(["synth", "--out-dir", str(blocked)])
    assert code == 3
    assert "i/o error" in capsys.readouterr().err


def test_unknown_video_id_exits_1(tmp_path, capsys):
    _, out, manifest = synth_small(tmp_path)
    train_cfg = write_config(tmp_path, SMALL_CORPUS + SMALL_TRAIN, name="train.cfg")
    assert main(["train", "--config", str(train_cfg), "--corpus", str(manifest),
                 "--out-dir", str(out / "train")]) == 0
    (train_dir,) = (out / "train").iterdir()
    ckpt = sorted((train_dir / "checkpoints").iterdir())[-1]
    code = main(["heatmap", "--corpus", str(manifest), "--checkpoint", str(ckpt),
                 "--video-id", "v99", "--out-dir", str(out / "h")])
    assert code == 1
    assert "v99" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_blowup_exits_2(tmp_path, capsys):
    _, out, manifest = synth_small(tmp_path)
    cfg = write_config(
        tmp_path,
        SMALL_CORPUS + SMALL_TRAIN[:-1] + ["peak_lr = 1e280"],  # detonates the update
        name="blowup.cfg",
    )
    code = main(["train", "--config", str(cfg), "--corpus", str(manifest),
                 "--out-dir", str(out / "boom")])
    assert code == 2
    err = capsys.readouterr().err
    assert "step" in err


def test_bad_flag_exits_1(capsys):
    assert main(["train", "--no-such-flag"]) == 1
