"""Command-line compatibility: published flag spellings drive real runs."""

import csv
import json
import os
import re

import pytest

from arithseq.cli import bool_flag, build_parser, main, resolve_dump_dir
from arithseq.datagen import generate_file
from arithseq.errors import ConfigError
from arithseq.generators import TaskSpec, make_task

SMALL_MODEL = [
    "--enc_emb_dim", "32", "--dec_emb_dim", "32",
    "--n_enc_heads", "2", "--n_dec_heads", "2",
    "--max_positions", "32",
]
SMALL_RUN = SMALL_MODEL + [
    "--base", "10", "--maxint", "100",
    "--max_epoch", "1", "--epoch_size", "64", "--batch_size", "16",
    "--eval_size", "32", "--batch_size_eval", "16",
    "--max_output_len", "8", "--env_base_seed", "0",
    "--report_loss_every", "2",
]


def corpus_file(tmp_path, name, count, seed):
    task = make_task(TaskSpec("gcd", max_int=100, base=10))
    path = str(tmp_path / name)
    generate_file(task, path, count, base_seed=seed)
    return path


# ---------------------------------------------------------------------------
# published command lines (program name substituted)


def test_first_worked_example_command_parses(tmp_path):
    parser = build_parser()
    args = parser.parse_args([
        "train", "--dump_path", str(tmp_path), "--exp_name",
        "my_first_experiment", "--exp_id", "1", "--operation", "gcd"])
    assert args.command == "train"
    assert args.operation == "gcd"
    assert args.exp_name == "my_first_experiment"
    assert args.exp_id == "1"
    assert args.base == 1000  # documented default encoding base
    assert args.epoch_size == 300000
    assert args.max_epoch == 100000
    assert args.optimizer == "adam,lr=1e-4"
    # the documented no-GPU variant
    args = parser.parse_args([
        "train", "--dump_path", str(tmp_path), "--exp_name",
        "my_first_experiment", "--exp_id", "1", "--operation", "gcd",
        "--cpu", "true"])
    assert args.cpu is True


def test_file_training_command_parses(tmp_path):
    parser = build_parser()
    args = parser.parse_args([
        "train", "--operation", "data", "--dump_path", str(tmp_path),
        "--exp_name", "my_second_experiment", "--exp_id", "1",
        "--train_data", "/data/elliptic_rank.train",
        "--eval_data", "/data/elliptic_rank.test"])
    assert args.operation == "data"
    assert args.train_data == "/data/elliptic_rank.train"
    assert args.eval_data == "/data/elliptic_rank.test"


def test_first_worked_example_runs_small(tmp_path):
    rc = main([
        "train", "--dump_path", str(tmp_path), "--exp_name",
        "my_first_experiment", "--exp_id", "1", "--operation", "gcd",
    ] + SMALL_RUN)
    assert rc == 0
    exp_dir = tmp_path / "my_first_experiment" / "1"
    assert (exp_dir / "params.txt").exists()
    assert (exp_dir / "checkpoint").exists()
    log = (exp_dir / "train.log").read_text()
    assert "epoch 0 done" in log
    assert "__log__:" in log
    record = json.loads(log.split("__log__:", 1)[1].splitlines()[0])
    assert record["epoch"] == 0
    assert "valid_arithmetic_acc" in record
    assert " examples/s - " in log  # step lines reported


def test_file_training_command_runs_small(tmp_path):
    train = corpus_file(tmp_path, "rank.train", 200, seed=3)
    test = corpus_file(tmp_path, "rank.test", 40, seed=4)
    rc = main([
        "train", "--operation", "data", "--dump_path", str(tmp_path),
        "--exp_name", "my_second_experiment", "--exp_id", "1",
        "--train_data", train, "--eval_data", test,
    ] + SMALL_RUN)
    assert rc == 0
    log = (tmp_path / "my_second_experiment" / "1" / "train.log").read_text()
    assert "epoch 0 done" in log
    assert "valid_arithmetic_acc" in log


# ---------------------------------------------------------------------------
# flag spellings


def test_alias_spellings_land_in_same_destination():
    parser = build_parser()
    base = ["train", "--operation", "gcd"]
    for argv, attr, expected in [
        (["--modulo", "31"], "modulo", 31),
        (["--modulus", "31"], "modulo", 31),
        (["--max_epoch", "7"], "max_epoch", 7),
        (["--max_epochs", "7"], "max_epoch", 7),
        (["--env_base_seed", "9"], "env_base_seed", 9),
        (["--base_env_seed", "9"], "env_base_seed", 9),
        (["--n_enc_hidden_layer", "2"], "n_enc_hidden_layers", 2),
        (["--n_enc_hidden_layers", "2"], "n_enc_hidden_layers", 2),
        (["--n_dec_hidden_layer", "3"], "n_dec_hidden_layers", 3),
        (["--n_dec_hidden_layers", "3"], "n_dec_hidden_layers", 3),
    ]:
        args = parser.parse_args(base + argv)
        assert getattr(args, attr) == expected, argv


def test_bool_flag_spellings():
    for text, value in [("true", True), ("True", True), ("1", True),
                        ("yes", True), ("y", True), ("false", False),
                        ("0", False), ("no", False), ("n", False)]:
        assert bool_flag(text) is value
    with pytest.raises(Exception):
        bool_flag("maybe")


def test_compat_flags_accepted_and_noted(tmp_path):
    rc = main([
        "train", "--dump_path", str(tmp_path), "--exp_name", "compat",
        "--exp_id", "1", "--operation", "gcd", "--eval_only", "true",
        "--fp16", "true", "--local_rank", "0", "--amp", "1",
    ] + SMALL_RUN)
    assert rc == 0
    log = (tmp_path / "compat" / "1" / "train.log").read_text()
    assert "accepted for compatibility but have no effect" in log


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_flag_exits_1(tmp_path, capsys):
    rc = main(["train", "--operation", "gcd", "--use_gpu", "1"])
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err


def test_no_abbreviated_flags(tmp_path):
    assert main(["train", "--operation", "gcd", "--max_e", "5"]) == 1


def test_bad_bool_value_exits_1():
    assert main(["train", "--operation", "gcd", "--cpu", "maybe"]) == 1


def test_bad_operation_exits_1():
    assert main(["train", "--operation", "telepathy"]) == 1


def test_deterministic_needs_seed(tmp_path):
    rc = main(["train", "--operation", "gcd", "--dump_path", str(tmp_path),
               "--deterministic", "true"])
    assert rc == 1


def test_data_operation_needs_files(tmp_path):
    rc = main(["train", "--operation", "data", "--dump_path", str(tmp_path)])
    assert rc == 1


def test_missing_train_file_exits_2(tmp_path, capsys):
    rc = main([
        "train", "--operation", "data", "--dump_path", str(tmp_path),
        "--exp_name", "gone", "--exp_id", "1",
        "--train_data", str(tmp_path / "absent.train"),
        "--eval_data", str(tmp_path / "absent.test"),
    ] + SMALL_RUN)
    assert rc == 2
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# experiment directory


def test_random_exp_id_when_absent(tmp_path):
    parser = build_parser()
    args = parser.parse_args(["train", "--operation", "gcd",
                              "--dump_path", str(tmp_path),
                              "--exp_name", "auto"])
    path = resolve_dump_dir(args)
    assert re.fullmatch(r"[a-z0-9]{10}", args.exp_id)
    assert os.path.isdir(path)
    assert path == os.path.join(str(tmp_path), "auto", args.exp_id)


# ---------------------------------------------------------------------------
# other run modes


def test_export_data_mode(tmp_path):
    rc = main([
        "train", "--dump_path", str(tmp_path), "--exp_name", "gen",
        "--exp_id", "1", "--operation", "gcd", "--export_data", "true",
    ] + SMALL_RUN)
    assert rc == 0
    exp_dir = tmp_path / "gen" / "1"
    lines = (exp_dir / "data.prefix").read_text().splitlines()
    assert len(lines) == 64  # one epoch of generation, no training
    assert all("\t" in l for l in lines)
    assert not (exp_dir / "checkpoint").exists()


def test_eval_only_run(tmp_path):
    rc = main([
        "train", "--dump_path", str(tmp_path), "--exp_name", "evalonly",
        "--exp_id", "1", "--operation", "gcd", "--eval_only", "true",
    ] + SMALL_RUN)
    assert rc == 0
    exp_dir = tmp_path / "evalonly" / "1"
    log = (exp_dir / "train.log").read_text()
    assert "__log__:" in log
    assert not (exp_dir / "checkpoint").exists()  # nothing was trained


def test_eval_from_exp(tmp_path):
    argv = [
        "train", "--dump_path", str(tmp_path), "--exp_name", "source",
        "--exp_id", "1", "--operation", "gcd",
    ] + SMALL_RUN
    assert main(argv) == 0
    source_dir = str(tmp_path / "source" / "1")
    rc = main([
        "train", "--dump_path", str(tmp_path), "--exp_name", "reeval",
        "--exp_id", "1", "--operation", "gcd",
        "--eval_from_exp", source_dir,
    ] + SMALL_RUN)
    assert rc == 0
    log = (tmp_path / "reeval" / "1" / "train.log").read_text()
    assert "evaluating checkpoint" in log
    assert "__log__:" in log


# ---------------------------------------------------------------------------
# datagen subcommand


def test_datagen_pipeline_counts(tmp_path):
    rc = main([
        "datagen", "--operation", "gcd", "--base", "10", "--maxint", "200",
        "--count", "400", "--valid_size", "30", "--test_size", "30",
        "--dump_path", str(tmp_path), "--exp_name", "corpus",
        "--exp_id", "1", "--env_base_seed", "5"])
    assert rc == 0
    out_dir = tmp_path / "corpus" / "1"
    valid = (out_dir / "data.valid").read_text().splitlines()
    test = (out_dir / "data.test").read_text().splitlines()
    train = (out_dir / "data.train").read_text().splitlines()
    assert len(valid) == 30
    assert len(test) == 30
    combined = valid + test + train
    assert len(set(combined)) == len(combined)  # no duplicates anywhere
    assert len(combined) <= 400
    assert (out_dir / "datagen.log").exists()


def test_datagen_requires_count(tmp_path):
    assert main(["datagen", "--operation", "gcd",
                 "--dump_path", str(tmp_path)]) == 1


# ---------------------------------------------------------------------------
# logparse subcommand


def test_logparse_command(tmp_path, capsys):
    argv = [
        "train", "--dump_path", str(tmp_path), "--exp_name", "parsed",
        "--exp_id", "1", "--operation", "gcd",
    ] + SMALL_RUN
    assert main(argv) == 0
    capsys.readouterr()
    exp_dir = str(tmp_path / "parsed" / "1")
    out_csv = str(tmp_path / "table.csv")
    rc = main(["logparse", exp_dir, "--output", out_csv,
               "--plot", "-", "--plot_metric", "valid_arithmetic_acc"])
    assert rc == 0
    captured = capsys.readouterr()
    assert "valid_arithmetic_acc by epoch" in captured.out
    with open(out_csv) as f:
        table = list(csv.reader(f))
    assert table[0][:3] == ["exp", "epoch", "prefix"]
    assert len(table) >= 2
    acc_col = table[0].index("acc")
    # the table reproduces the logged value exactly
    log = open(os.path.join(exp_dir, "train.log")).read()
    record = json.loads(log.split("__log__:", 1)[1].splitlines()[0])
    assert float(table[1][acc_col]) == record["valid_arithmetic_acc"]


def test_logparse_missing_log_exits_2(tmp_path):
    assert main(["logparse", str(tmp_path / "nope.log")]) == 2
