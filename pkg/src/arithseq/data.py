"""Corpus file format, batch assembly and example sampling.

The on-disk format is one example per line: space-separated input
tokens, a single tab, space-separated output tokens.  Reading and
writing round-trip byte-exactly.

Batches are padded id arrays; outputs are framed with the sequence
marker on both ends, so a solution of k tokens occupies k + 2 output
positions.  Samplers draw one index per example (never vectorized), so
the random stream consumption depends only on how many examples were
drawn — not on how they were grouped into batches.
"""

import numpy as np

from .errors import ConfigError, FileError, MalformedLine
from .generators import generate
from .rng import RngStream
from .vocab import tokens_to_ids


class Example:
    """A tokenized (input, output) pair.

    problem/solution keep the original objects when the example was
    generated (file-loaded examples have None there); class_id feeds
    per-class accuracy reporting.
    """

    __slots__ = ("input", "output", "class_id", "problem", "solution")

    def __init__(self, input_tokens, output_tokens, class_id=None,
                 problem=None, solution=None):
        self.input = list(input_tokens)
        self.output = list(output_tokens)
        self.class_id = class_id
        self.problem = problem
        self.solution = solution


class ExampleSet:
    """An ordered list of examples plus bookkeeping about its source."""

    def __init__(self, examples, source, n_malformed=0, n_too_long=0):
        self.examples = list(examples)
        self.source = source
        self.n_malformed = n_malformed
        self.n_too_long = n_too_long

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, i):
        return self.examples[i]


def _split_line(line, line_number):
    line = line.rstrip("\n")
    tab = line.find("\t")
    if tab < 0:
        raise MalformedLine("no tab separator", line_number)
    inp, out = line[:tab], line[tab + 1:]
    if "\t" in out:
        raise MalformedLine("more than one tab separator", line_number)
    input_tokens = inp.split(" ")
    output_tokens = out.split(" ")
    if not inp or not out or "" in input_tokens or "" in output_tokens:
        raise MalformedLine("empty side or empty token", line_number)
    return input_tokens, output_tokens


def read_examples(path, limit=-1, max_len=-1):
    """Load a corpus file; skip and count malformed or over-long lines.

    limit >= 0 keeps only the first `limit` retained examples; max_len
    > 0 drops lines where either side exceeds that many tokens.
    """
    examples = []
    n_malformed = 0
    n_too_long = 0
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise FileError("cannot open %s: %s" % (path, e))
    with handle:
        for line_number, line in enumerate(handle, start=1):
            if limit >= 0 and len(examples) >= limit:
                break
            try:
                input_tokens, output_tokens = _split_line(line, line_number)
            except MalformedLine:
                n_malformed += 1
                continue
            if max_len > 0 and (len(input_tokens) > max_len
                                or len(output_tokens) > max_len):
                n_too_long += 1
                continue
            examples.append(Example(input_tokens, output_tokens))
    return ExampleSet(examples, source="file(%s)" % path,
                      n_malformed=n_malformed, n_too_long=n_too_long)


def write_example(input_tokens, output_tokens):
    """Render one example as its corpus line (newline-terminated)."""
    return " ".join(input_tokens) + "\t" + " ".join(output_tokens) + "\n"


class Batch:
    """Padded id arrays for a group of examples."""

    def __init__(self, input_ids, output_ids, input_lengths, output_lengths,
                 examples):
        self.input_ids = input_ids
        self.output_ids = output_ids
        self.input_lengths = input_lengths
        self.output_lengths = output_lengths
        self.examples = examples

    def __len__(self):
        return self.input_ids.shape[0]


def make_batch(examples, vocabulary):
    """Assemble examples into padded arrays; outputs get <s> framing."""
    if not examples:
        raise ConfigError("cannot build an empty batch")
    seq = vocabulary.seq_id
    pad = vocabulary.pad_id
    input_rows = [tokens_to_ids(e.input, vocabulary) for e in examples]
    output_rows = [[seq] + tokens_to_ids(e.output, vocabulary) + [seq]
                   for e in examples]
    n = len(examples)
    in_w = max(len(r) for r in input_rows)
    out_w = max(len(r) for r in output_rows)
    input_ids = np.full((n, in_w), pad, dtype=np.int64)
    output_ids = np.full((n, out_w), pad, dtype=np.int64)
    input_lengths = np.zeros(n, dtype=np.int64)
    output_lengths = np.zeros(n, dtype=np.int64)
    for i, (ir, orow) in enumerate(zip(input_rows, output_rows)):
        input_ids[i, :len(ir)] = ir
        output_ids[i, :len(orow)] = orow
        input_lengths[i] = len(ir)
        output_lengths[i] = len(orow)
    return Batch(input_ids, output_ids, input_lengths, output_lengths,
                 list(examples))


class SamplerConfig:
    """Example-selection strategy for training batches.

    uniform: every example equiprobable, with replacement.
    two_class: with probability first_class_prob pick uniformly among
    the first first_class_size examples, otherwise among the rest.
    sequential: file order with wraparound (batch-load style).
    """

    def __init__(self, mode="uniform", first_class_size=0,
                 first_class_prob=0.0):
        if mode not in ("uniform", "two_class", "sequential"):
            raise ConfigError("unknown sampler mode %r" % (mode,))
        self.mode = mode
        self.first_class_size = first_class_size
        self.first_class_prob = first_class_prob
        self.cursor = 0  # sequential mode position

    def validate(self, dataset_size):
        if self.mode == "two_class":
            if not 0 < self.first_class_size < dataset_size:
                raise ConfigError(
                    "two_class needs 0 < first_class_size < dataset size "
                    "(got %d of %d)" % (self.first_class_size, dataset_size))
            if not 0.0 < self.first_class_prob < 1.0:
                raise ConfigError("two_class needs 0 < first_class_prob < 1")


def _draw_index(sampler, n, rng):
    if sampler.mode == "uniform":
        return int(rng.integers(0, n))
    if sampler.mode == "two_class":
        k = sampler.first_class_size
        if rng.random() < sampler.first_class_prob:
            return int(rng.integers(0, k))
        return int(rng.integers(k, n))
    idx = sampler.cursor % n
    sampler.cursor = (sampler.cursor + 1) % n
    return idx


def next_training_batch(sampler, example_set, rng, batch_size, vocabulary):
    """Draw batch_size examples per the sampler and assemble a Batch."""
    n = len(example_set)
    if n == 0:
        raise ConfigError("cannot sample from an empty dataset")
    picked = [example_set[_draw_index(sampler, n, rng)]
              for _ in range(batch_size)]
    return make_batch(picked, vocabulary)


def _tokenize_pair(task, problem, solution):
    return Example(task.encode_input(problem), task.encode_output(solution),
                   class_id=task.code_class(problem, solution),
                   problem=problem, solution=solution)


def stream_generated(task, rng, count, split="train"):
    """Yield count freshly generated, tokenized examples."""
    for _ in range(count):
        problem, solution = generate(task, rng, split)
        yield _tokenize_pair(task, problem, solution)


class GeneratedStream:
    """Round-robin multi-worker example generation with one stream each.

    Worker w draws from RngStream(base_seed, worker_id=w, rank, tag), so
    the produced sequence is reproducible from the seed components and
    the number of workers alone.  State (per-worker generator states
    plus the round-robin cursor) can be checkpointed and restored for
    bit-exact resumption.
    """

    def __init__(self, task, base_seed, num_workers=1, rank=0, tag=0,
                 split="train", max_len=-1):
        if num_workers < 1:
            raise ConfigError("num_workers must be >= 1")
        self.task = task
        self.split = split
        self.max_len = max_len
        self.n_too_long = 0
        self.streams = [RngStream(base_seed, worker_id=w, rank=rank, tag=tag)
                        for w in range(num_workers)]
        self.cursor = 0

    def next_example(self):
        while True:
            stream = self.streams[self.cursor]
            self.cursor = (self.cursor + 1) % len(self.streams)
            problem, solution = generate(self.task, stream, self.split)
            example = _tokenize_pair(self.task, problem, solution)
            if self.max_len > 0 and (len(example.input) > self.max_len
                                     or len(example.output) > self.max_len):
                self.n_too_long += 1
                continue
            return example

    def next_batch(self, batch_size, vocabulary):
        return make_batch([self.next_example() for _ in range(batch_size)],
                          vocabulary)

    def get_state(self):
        return {"cursor": self.cursor, "n_too_long": self.n_too_long,
                "streams": [s.get_state() for s in self.streams]}

    def set_state(self, state):
        if len(state["streams"]) != len(self.streams):
            raise ConfigError("worker count differs from checkpointed state")
        self.cursor = state["cursor"]
        self.n_too_long = state.get("n_too_long", 0)
        for stream, st in zip(self.streams, state["streams"]):
            stream.set_state(st)


class FileStream:
    """Training examples from an in-memory ExampleSet via a sampler."""

    def __init__(self, example_set, sampler, rng):
        sampler.validate(len(example_set))
        self.example_set = example_set
        self.sampler = sampler
        self.rng = rng

    def next_batch(self, batch_size, vocabulary):
        return next_training_batch(self.sampler, self.example_set, self.rng,
                                   batch_size, vocabulary)

    def get_state(self):
        return {"cursor": self.sampler.cursor, "rng": self.rng.get_state()}

    def set_state(self, state):
        self.sampler.cursor = state["cursor"]
        self.rng.set_state(state["rng"])


class ChunkedFileStream:
    """Sequential streaming reader: chunks of reload_size, wrap at EOF."""

    def __init__(self, path, reload_size, max_len=-1):
        if reload_size < 1:
            raise ConfigError("reload_size must be >= 1 for batch loading")
        self.path = path
        self.reload_size = reload_size
        self.max_len = max_len
        self.handle = None
        self.chunk = []
        self.chunk_pos = 0
        self.chunk_offset = 0
        self.chunk_line_number = 0
        self._open()

    def _open(self):
        try:
            self.handle = open(self.path, "r", encoding="utf-8")
        except OSError as e:
            raise FileError("cannot open %s: %s" % (self.path, e))
        self.line_number = 0

    def _load_chunk(self):
        # remember where this chunk starts so a resumed run can replay it
        self.chunk_offset = self.handle.tell()
        self.chunk_line_number = self.line_number
        examples = []
        reopens = 0
        while len(examples) < self.reload_size:
            line = self.handle.readline()
            if not line:
                self.handle.close()
                reopens += 1
                if not examples and reopens >= 2:
                    raise FileError("no usable lines in %s" % self.path)
                self._open()
                if examples:
                    break
                continue
            self.line_number += 1
            try:
                inp, out = _split_line(line, self.line_number)
            except MalformedLine:
                continue
            if self.max_len > 0 and (len(inp) > self.max_len
                                     or len(out) > self.max_len):
                continue
            examples.append(Example(inp, out))
        self.chunk = examples
        self.chunk_pos = 0

    def next_example(self):
        if self.chunk_pos >= len(self.chunk):
            self._load_chunk()
        example = self.chunk[self.chunk_pos]
        self.chunk_pos += 1
        return example

    def next_batch(self, batch_size, vocabulary):
        return make_batch([self.next_example() for _ in range(batch_size)],
                          vocabulary)

    def get_state(self):
        return {"chunk_offset": self.chunk_offset,
                "chunk_line_number": self.chunk_line_number,
                "chunk_pos": self.chunk_pos}

    def set_state(self, state):
        self.handle.close()
        self._open()
        self.handle.seek(state["chunk_offset"])
        self.line_number = state["chunk_line_number"]
        self._load_chunk()
        self.chunk_pos = state["chunk_pos"]
