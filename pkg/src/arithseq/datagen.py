"""Corpus generation pipeline: generate, concat, shuffle, dedupe, split.

Replicates the file-preparation recipe (several generator workers write
data.prefix files; the files are concatenated, shuffled, deduplicated,
and split into valid / test / train) as plain functions, so no shell
tools are needed and every step is seedable.
"""

import os

from .data import write_example
from .errors import FileError, InsufficientData, IoError
from .generators import generate
from .rng import RngStream

SHUFFLE_TAG = 6


def generate_file(task, path, count, base_seed, worker_id=0, rank=0, tag=0,
                  split="train", max_len=-1):
    """Write `count` generated examples to `path`; returns lines written."""
    rng = RngStream(base_seed, worker_id=worker_id, rank=rank, tag=tag)
    written = 0
    try:
        with open(path, "w", encoding="utf-8") as f:
            while written < count:
                problem, solution = generate(task, rng, split)
                inp = task.encode_input(problem)
                out = task.encode_output(solution)
                if max_len > 0 and (len(inp) > max_len or len(out) > max_len):
                    continue
                f.write(write_example(inp, out))
                written += 1
    except OSError as e:
        raise IoError("cannot write %s: %s" % (path, e))
    return written


def concat_files(paths, out_path):
    """Concatenate corpus files in order; returns total line count."""
    total = 0
    try:
        with open(out_path, "w", encoding="utf-8") as out:
            for path in paths:
                try:
                    with open(path, "r", encoding="utf-8") as f:
                        for line in f:
                            if not line.endswith("\n"):
                                line += "\n"
                            out.write(line)
                            total += 1
                except OSError as e:
                    raise FileError("cannot read %s: %s" % (path, e))
    except OSError as e:
        raise IoError("cannot write %s: %s" % (out_path, e))
    return total


def _read_lines(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise FileError("cannot read %s: %s" % (path, e))


def _write_lines(path, lines):
    try:
        with open(path, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")
    except OSError as e:
        raise IoError("cannot write %s: %s" % (path, e))


def shuffle_file(path, out_path, seed):
    """Apply a seeded permutation to the lines of a corpus file."""
    lines = _read_lines(path)
    rng = RngStream(seed, tag=SHUFFLE_TAG)
    order = rng.permutation(len(lines))
    _write_lines(out_path, [lines[i] for i in order])
    return len(lines)


def dedupe_file(path, out_path):
    """Exact-line dedupe keeping first occurrences; returns (kept, dropped)."""
    lines = _read_lines(path)
    kept = list(dict.fromkeys(lines))
    _write_lines(out_path, kept)
    return len(kept), len(lines) - len(kept)


def split_file(path, valid_path, test_path, train_path, valid_size=10000,
               test_size=10000):
    """First valid_size lines -> valid, last test_size -> test, rest -> train.

    Raises InsufficientData when the file has fewer lines than the two
    carve-outs combined.
    """
    lines = _read_lines(path)
    n = len(lines)
    if valid_size < 0 or test_size < 0:
        raise InsufficientData("split sizes must be nonnegative")
    if valid_size + test_size > n:
        raise InsufficientData(
            "cannot carve %d valid + %d test lines out of %d"
            % (valid_size, test_size, n))
    _write_lines(valid_path, lines[:valid_size])
    _write_lines(test_path, lines[n - test_size:] if test_size else [])
    _write_lines(train_path, lines[valid_size:n - test_size])
    return valid_size, test_size, n - valid_size - test_size


def run_pipeline(task, out_dir, count, base_seed, num_workers=1,
                 valid_size=10000, test_size=10000, dedupe=True, max_len=-1,
                 logger=None):
    """Full corpus build; returns a summary dict of paths and counts.

    Per-worker generator files (data.prefix.<w>) are concatenated into
    data.raw, shuffled into data.shuf, optionally deduplicated, and
    split into data.valid / data.test / data.train.
    """
    def log(msg):
        if logger is not None:
            logger.log(msg)

    os.makedirs(out_dir, exist_ok=True)
    worker_paths = []
    per_worker = [count // num_workers] * num_workers
    for w in range(count % num_workers):
        per_worker[w] += 1
    for w in range(num_workers):
        path = os.path.join(out_dir, "data.prefix.%d" % w)
        n = generate_file(task, path, per_worker[w], base_seed, worker_id=w,
                          max_len=max_len)
        log("worker %d wrote %d lines to %s" % (w, n, path))
        worker_paths.append(path)
    raw = os.path.join(out_dir, "data.raw")
    total = concat_files(worker_paths, raw)
    log("concatenated %d lines into %s" % (total, raw))
    shuf = os.path.join(out_dir, "data.shuf")
    shuffle_file(raw, shuf, base_seed)
    log("shuffled into %s" % shuf)
    kept = total
    dropped = 0
    if dedupe:
        kept, dropped = dedupe_file(shuf, shuf)
        log("dedupe kept %d lines (dropped %d duplicates)" % (kept, dropped))
    valid_path = os.path.join(out_dir, "data.valid")
    test_path = os.path.join(out_dir, "data.test")
    train_path = os.path.join(out_dir, "data.train")
    n_valid, n_test, n_train = split_file(shuf, valid_path, test_path,
                                          train_path, valid_size, test_size)
    log("split: %d valid / %d test / %d train" % (n_valid, n_test, n_train))
    return {
        "raw": raw, "shuffled": shuf, "valid": valid_path, "test": test_path,
        "train": train_path, "generated": total, "kept": kept,
        "duplicates": dropped, "n_valid": n_valid, "n_test": n_test,
        "n_train": n_train,
    }
