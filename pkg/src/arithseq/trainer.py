"""Training loop: epoch accounting, logging, checkpoints, stopping.

An epoch is a fixed number of training examples (epoch_size), not a
pass over a dataset.  Gradients of the summed token cross-entropy are
accumulated over accumulate_gradients batches, normalized by the token
count of the window, clipped, and applied; the step counter counts
optimizer updates.  Checkpoints are single-file containers holding the
run config, vocabulary, parameters, optimizer moments, counters, and
RNG states, so a resumed deterministic run continues bit-exactly.
"""

import hashlib
import json
import os
import struct
import time
from datetime import timedelta

import numpy as np

from .errors import ConfigError, IntegrityError, IoError, ParseError, \
    VersionMismatch
from .optim import Optimizer, clip_gradients

CHECKPOINT_MAGIC = b"ARSQCKPT"
CHECKPOINT_VERSION = 1


class RunLogger:
    """Timestamped log lines, to a file and optionally stdout.

    Line format (consumed verbatim by the log parser):
    INFO - MM/DD/YY HH:MM:SS - H:MM:SS - <message>
    where the second field is the wall-clock time elapsed since the
    logger was created.
    """

    def __init__(self, path=None, echo=False):
        self.path = path
        self.echo = echo
        self.start_time = time.time()
        self._fh = None
        if path is not None:
            try:
                self._fh = open(path, "a", encoding="utf-8")
            except OSError as e:
                raise IoError("cannot open log file %s: %s" % (path, e))

    def log(self, message):
        stamp = time.strftime("%m/%d/%y %H:%M:%S")
        elapsed = timedelta(seconds=int(time.time() - self.start_time))
        line = "INFO - %s - %s - %s" % (stamp, elapsed, message)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
        if self.echo:
            print(line, flush=True)

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def parse_stopping_criterion(spec):
    """Parse "metric,patience"; leading "_" on the metric = lower is better."""
    parts = spec.split(",")
    if len(parts) != 2:
        raise ParseError("stopping criterion must be 'metric,patience': %r"
                         % spec)
    name, patience = parts[0].strip(), parts[1].strip()
    try:
        patience = int(patience)
    except ValueError:
        raise ParseError("stopping patience must be an integer: %r" % spec)
    if patience < 1:
        raise ParseError("stopping patience must be >= 1: %r" % spec)
    name, lower_better = _parse_metric_name(name)
    return name, patience, lower_better


def _parse_metric_name(name):
    lower_better = name.startswith("_")
    if lower_better:
        name = name[1:]
    if not name or "_arithmetic_" not in name:
        raise ParseError("unknown metric name %r" % name)
    return name, lower_better


def parse_validation_metrics(spec):
    """Comma-separated metric names with optional "_" (lower-better) prefix."""
    out = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        out.append(_parse_metric_name(chunk))
    return out


# checkpoint container ---------------------------------------------------

def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True).encode("utf-8")


def save_checkpoint(path, arrays, header_extra):
    """Write a self-describing single-file checkpoint.

    Layout: magic, version (u32 LE), header length (u64 LE), key-sorted
    JSON header (config, vocabulary, counters, RNG states, array index),
    raw little-endian array payloads, SHA-256 of everything preceding.
    """
    index = []
    payloads = []
    offset = 0
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        data = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str,
                      "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)
    header = dict(header_extra)
    header["arrays"] = index
    header_bytes = _json_bytes(header)
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for data in payloads:
        blob += data
    digest = hashlib.sha256(bytes(blob)).digest()
    blob += digest
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(bytes(blob))
        os.replace(tmp, path)
    except OSError as e:
        raise IoError("cannot write checkpoint %s: %s" % (path, e))


def load_checkpoint(path):
    """Read a checkpoint; returns (header dict, {name: array})."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError("cannot read checkpoint %s: %s" % (path, e))
    magic_len = len(CHECKPOINT_MAGIC)
    if len(blob) < magic_len + 4 or blob[:magic_len] != CHECKPOINT_MAGIC:
        raise IoError("%s is not a checkpoint file" % path)
    version = struct.unpack_from("<I", blob, magic_len)[0]
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch("checkpoint %s has format version %d, "
                              "expected %d" % (path, version,
                                               CHECKPOINT_VERSION))
    if len(blob) < magic_len + 12 + 32:
        raise IntegrityError("checkpoint %s is truncated" % path)
    digest = blob[-32:]
    if hashlib.sha256(blob[:-32]).digest() != digest:
        raise IntegrityError("checkpoint %s fails its checksum" % path)
    header_len = struct.unpack_from("<Q", blob, magic_len + 4)[0]
    header_start = magic_len + 12
    payload_start = header_start + header_len
    if payload_start > len(blob) - 32:
        raise IntegrityError("checkpoint %s is truncated" % path)
    header = json.loads(blob[header_start:payload_start].decode("utf-8"))
    arrays = {}
    for entry in header["arrays"]:
        start = payload_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(blob) - 32:
            raise IntegrityError("checkpoint %s is truncated" % path)
        arr = np.frombuffer(blob[start:end], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, arrays


class Trainer:
    """Owns the model parameters and optimizer for one experiment.

    args is the parsed run configuration (attribute access); the data
    stream provides next_batch(batch_size, vocabulary) plus get_state /
    set_state for checkpointing.
    """

    def __init__(self, model, vocabulary, train_stream, optimizer_config,
                 args, logger, evaluator=None, dump_dir=None,
                 dropout_rng=None):
        self.model = model
        self.vocabulary = vocabulary
        self.train_stream = train_stream
        self.optimizer = Optimizer(optimizer_config)
        self.args = args
        self.logger = logger
        self.evaluator = evaluator
        self.dump_dir = dump_dir
        self.dropout_rng = dropout_rng

        self.epoch = 0
        self.step = 0
        self.n_examples = 0
        self.n_words = 0

        self.stopping_criteria = []
        if getattr(args, "stopping_criterion", ""):
            self.stopping_criteria.append(
                parse_stopping_criterion(args.stopping_criterion))
        self.validation_metrics = []
        if getattr(args, "validation_metrics", ""):
            self.validation_metrics = \
                parse_validation_metrics(args.validation_metrics)
        self.best_stopping = {}
        self.since_improvement = {}
        self.best_metrics = {}

        self._window = None
        self._reset_window()

    # ------------------------------------------------------------------
    def _log(self, message):
        if self.logger is not None:
            self.logger.log(message)

    def _reset_window(self):
        self._window = {"loss": 0.0, "tokens": 0.0, "examples": 0,
                        "words": 0, "t0": time.time()}

    def _print_stats(self, lr):
        w = self._window
        dt = max(time.time() - w["t0"], 1e-9)
        loss = w["loss"] / max(w["tokens"], 1.0)
        self._log("%7i - %7.2f examples/s - %8.2f words/s - "
                  "ARITHMETIC: %7.4f - LR: %.4e"
                  % (self.step, w["examples"] / dt, w["words"] / dt,
                     loss, lr))
        self._reset_window()

    # ------------------------------------------------------------------
    def train_epoch(self):
        """Run one epoch of epoch_size examples; returns mean token loss.

        In deterministic mode every example is pushed through forward and
        backward individually, so gradient sums are reduced in example
        order regardless of batch grouping — this is what makes
        accumulation (4 x 16 vs 1 x 64) and resume bit-exact.
        """
        args = self.args
        accumulate = max(getattr(args, "accumulate_gradients", 1), 1)
        clip = getattr(args, "clip_grad_norm", 0.0)
        report_every = getattr(args, "report_loss_every", 200)
        deterministic = getattr(args, "deterministic", False)
        epoch_loss = 0.0
        epoch_tokens = 0.0
        n_left = args.epoch_size
        acc_batches = 0
        acc_tokens = 0.0
        while n_left > 0:
            bsz = min(args.batch_size, n_left)
            if deterministic:
                parts = [self.train_stream.next_batch(1, self.vocabulary)
                         for _ in range(bsz)]
            else:
                parts = [self.train_stream.next_batch(bsz, self.vocabulary)]
            for batch in parts:
                sum_loss, n_tokens, trace = self.model.loss_forward(
                    batch.input_ids, batch.input_lengths, batch.output_ids,
                    batch.output_lengths, train=True, rng=self.dropout_rng)
                self.model.backward(trace, 1.0)
                acc_tokens += n_tokens
                epoch_loss += sum_loss
                epoch_tokens += n_tokens
                words = int(batch.input_lengths.sum()
                            + batch.output_lengths.sum())
                self.n_words += words
                w = self._window
                w["loss"] += sum_loss
                w["tokens"] += n_tokens
                w["examples"] += len(batch)
                w["words"] += words
            acc_batches += 1
            n_left -= bsz
            self.n_examples += bsz
            if acc_batches == accumulate or n_left == 0:
                # gradients hold d(sum of token losses); normalize to the
                # mean over the accumulation window before the update
                scale = 1.0 / max(acc_tokens, 1.0)
                for p in self.model.params:
                    p.grad *= scale
                if clip and clip > 0:
                    clip_gradients(self.model.params, clip)
                lr = self.optimizer.step(self.model.params)
                self.step += 1
                acc_batches = 0
                acc_tokens = 0.0
                if report_every > 0 and self.step % report_every == 0:
                    self._print_stats(lr)
        return epoch_loss / max(epoch_tokens, 1.0)

    # ------------------------------------------------------------------
    def log_metrics(self, metrics):
        record = {"epoch": self.epoch}
        record.update(metrics)
        self._log("__log__:%s" % json.dumps(record))

    def update_stopping(self, metrics):
        """Track stopping criteria; returns True when training must stop."""
        for name, patience, lower_better in self.stopping_criteria:
            if name not in metrics:
                raise ParseError("stopping criterion metric %r is not "
                                 "reported by evaluation" % name)
            value = metrics[name]
            best = self.best_stopping.get(name)
            improved = best is None or \
                (value < best if lower_better else value > best)
            if improved:
                self.best_stopping[name] = value
                self.since_improvement[name] = 0
            else:
                self.since_improvement[name] += 1
            if self.since_improvement[name] >= patience:
                self._log("stopping criterion %s ran out of patience (%d)"
                          % (name, patience))
                return True
        return False

    def save_best_models(self, metrics):
        for name, lower_better in self.validation_metrics:
            if name not in metrics:
                raise ParseError("validation metric %r is not reported "
                                 "by evaluation" % name)
            value = metrics[name]
            best = self.best_metrics.get(name)
            improved = best is None or \
                (value < best if lower_better else value > best)
            if improved:
                self.best_metrics[name] = value
                if self.dump_dir is not None:
                    path = os.path.join(self.dump_dir, "best-%s" % name)
                    self.save(path)
                    self._log("new best %s: %s (saved best-%s)"
                              % (name, repr(value), name))

    # ------------------------------------------------------------------
    def _state_dict(self):
        state = {
            "epoch": self.epoch,
            "step": self.step,
            "n_examples": self.n_examples,
            "n_words": self.n_words,
            "optimizer_t": self.optimizer.t,
            "best_stopping": self.best_stopping,
            "since_improvement": self.since_improvement,
            "best_metrics": self.best_metrics,
        }
        rng = {}
        if hasattr(self.train_stream, "get_state"):
            rng["train_stream"] = self.train_stream.get_state()
        if self.dropout_rng is not None:
            rng["dropout"] = self.dropout_rng.get_state()
        if self.evaluator is not None:
            rng["evaluator"] = self.evaluator.get_state()
        return state, rng

    def save(self, path):
        arrays = [("param/%s" % p.name, p.data)
                  for p in self.model.params]
        opt_state = self.optimizer.get_state()
        for pname, slots in opt_state["slots"].items():
            for key, arr in slots.items():
                arrays.append(("opt/%s/%s" % (pname, key), arr))
        state, rng = self._state_dict()
        header = {
            "config": _config_for_header(self.args),
            "model_config": self.model.config.to_dict(),
            "vocab": list(self.vocabulary.tokens),
            "trainer": state,
            "rng": rng,
        }
        save_checkpoint(path, arrays, header)

    def load(self, path, reload_model_only=False):
        header, arrays = load_checkpoint(path)
        if header["vocab"] != list(self.vocabulary.tokens):
            raise ConfigError("checkpoint vocabulary does not match the "
                              "current task configuration")
        for p in self.model.params:
            key = "param/%s" % p.name
            if key not in arrays:
                raise ConfigError("checkpoint is missing parameter %s"
                                  % p.name)
            if arrays[key].shape != p.data.shape:
                raise ConfigError("checkpoint parameter %s has shape %s, "
                                  "expected %s" % (p.name, arrays[key].shape,
                                                   p.data.shape))
            p.data[...] = arrays[key]
            p.grad[...] = 0.0
        if reload_model_only:
            return
        state = header["trainer"]
        self.epoch = state["epoch"]
        self.step = state["step"]
        self.n_examples = state["n_examples"]
        self.n_words = state["n_words"]
        self.best_stopping = dict(state["best_stopping"])
        self.since_improvement = dict(state["since_improvement"])
        self.best_metrics = dict(state["best_metrics"])
        slots = {}
        for name, arr in arrays.items():
            if name.startswith("opt/"):
                _, pname, key = name.split("/", 2)
                slots.setdefault(pname, {})[key] = arr
        self.optimizer.set_state({"t": state["optimizer_t"],
                                  "slots": slots})
        rng = header["rng"]
        if "train_stream" in rng and hasattr(self.train_stream, "set_state"):
            self.train_stream.set_state(rng["train_stream"])
        if "dropout" in rng and self.dropout_rng is not None:
            self.dropout_rng.set_state(rng["dropout"])
        if "evaluator" in rng and self.evaluator is not None:
            self.evaluator.set_state(rng["evaluator"])

    # ------------------------------------------------------------------
    def train(self):
        """Epochs until max_epoch or a stopping criterion fires."""
        args = self.args
        max_epoch = getattr(args, "max_epoch", 100000)
        save_periodic = getattr(args, "save_periodic", 0)
        while self.epoch < max_epoch:
            self._reset_window()
            mean_loss = self.train_epoch()
            self._log("epoch %d done - mean training loss %.6f"
                      % (self.epoch, mean_loss))
            metrics = {}
            if self.evaluator is not None:
                metrics = self.evaluator.run(self.model, epoch=self.epoch,
                                             export_dir=self.dump_dir)
                self.log_metrics(metrics)
                self.save_best_models(metrics)
            stop = self.update_stopping(metrics) if metrics else False
            self.epoch += 1
            if self.dump_dir is not None:
                self.save(os.path.join(self.dump_dir, "checkpoint"))
                if save_periodic > 0 and self.epoch % save_periodic == 0:
                    self.save(os.path.join(self.dump_dir,
                                           "checkpoint-%d" % self.epoch))
            if stop:
                break


def _config_for_header(args):
    out = {}
    for key, value in sorted(vars(args).items()):
        if isinstance(value, (str, int, float, bool)) or value is None:
            out[key] = value
        else:
            out[key] = repr(value)
    return out


def write_params_file(path, args):
    """Persist the full run configuration as sorted key=value JSON."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_config_for_header(args), f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError("cannot write %s: %s" % (path, e))
