"""End-of-epoch evaluation: decoding, verification, per-class metrics.

For each evaluation set the model is scored four ways: teacher-forced
cross-entropy, perfect sequence matches, well-formed predictions, and
verified-correct answers.  acc counts perfect plus verified-correct.
Per-class accuracies use the task's class coding; optional eval/error
metric lists ride along.  Evaluation never mutates model parameters.
"""

import os

import numpy as np

from .data import make_batch, read_examples, stream_generated
from .errors import ConfigError, IoError, MalformedSequence
from .rng import RngStream
from .vocab import ids_to_tokens

PERFECT = "perfect"
CORRECT_AND_VALID = "correct_and_valid"
WELL_FORMED_BUT_WRONG = "well_formed_but_wrong"
MALFORMED = "malformed"


def _cut_at_end_marker(ids, seq_id):
    """Token ids after the start marker, cut at the first end marker.

    Returns (ids, terminated); unterminated sequences ran into the
    length cap before emitting the end marker.
    """
    out = []
    for t in ids:
        if t == seq_id:
            return out, True
        out.append(int(t))
    return out, False


def greedy_decode(model, input_ids, input_lengths, max_output_len,
                  vocabulary):
    """Batched argmax decoding; returns (token id lists, terminated flags).

    max_output_len caps the full output width including both sequence
    markers, so at most max_output_len - 2 solution tokens are produced.
    """
    if max_output_len < 3:
        raise ConfigError("max_output_len must be >= 3")
    n = input_ids.shape[0]
    seq_id = vocabulary.seq_id
    if model.config.architecture == "encoder_only":
        width = min(int(np.max(input_lengths)), max_output_len - 1)
        logits = model.encoder_only_logits(input_ids, input_lengths, width)
        pred = np.argmax(logits, axis=-1)
        results, flags = [], []
        for i in range(n):
            ids, terminated = _cut_at_end_marker(
                pred[i, :min(width, int(input_lengths[i]))], seq_id)
            results.append(ids)
            flags.append(terminated)
        return results, flags
    memory, cross_mask = model.encode(input_ids, input_lengths)
    prefix = np.full((n, 1), seq_id, dtype=np.int64)
    finished = np.zeros(n, dtype=bool)
    while prefix.shape[1] < max_output_len and not finished.all():
        lengths = np.full(n, prefix.shape[1], dtype=np.int64)
        logits = model.decoder_logits(prefix, lengths, memory, cross_mask)
        nxt = np.argmax(logits[:, -1, :], axis=-1)
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        finished |= nxt == seq_id
    results, flags = [], []
    for i in range(n):
        ids, terminated = _cut_at_end_marker(prefix[i, 1:], seq_id)
        results.append(ids)
        flags.append(terminated)
    return results, flags


def beam_search(model, input_ids, input_lengths, beam_size, max_output_len,
                vocabulary):
    """Length-normalized beam search for one batch.

    Returns, per example, a ranked list of (token ids, normalized
    log-probability, terminated) tuples; ranking divides the cumulative
    log-probability by the number of generated tokens.  beam_size = 1
    reproduces greedy decoding exactly.
    """
    if beam_size < 1:
        raise ConfigError("beam_size must be >= 1")
    if model.config.architecture != "encoder_decoder":
        raise ConfigError("beam search requires the encoder-decoder model")
    seq_id = vocabulary.seq_id
    memory, cross_mask = model.encode(input_ids, input_lengths)
    results = []
    for i in range(input_ids.shape[0]):
        mem_i = memory[i:i + 1]
        mask_i = cross_mask[i:i + 1]
        live = [(0.0, [seq_id])]
        done = []
        while live and len(live[0][1]) < max_output_len:
            width = len(live[0][1])
            prefixes = np.array([h[1] for h in live], dtype=np.int64)
            k = prefixes.shape[0]
            logits = model.decoder_logits(
                prefixes, np.full(k, width, dtype=np.int64),
                np.repeat(mem_i, k, axis=0), np.repeat(mask_i, k, axis=0))
            last = logits[:, -1, :]
            m = last.max(axis=-1, keepdims=True)
            z = last - m
            logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
            candidates = []
            for h, (score, toks) in enumerate(live):
                order = np.argsort(-logp[h])[:beam_size]
                for tok in order:
                    candidates.append((score + float(logp[h, tok]),
                                       toks + [int(tok)]))
            candidates.sort(key=lambda c: -c[0])
            live = []
            for score, toks in candidates:
                if toks[-1] == seq_id:
                    if len(done) < beam_size:
                        done.append((score, toks))
                elif len(live) < beam_size:
                    live.append((score, toks))
                if len(live) >= beam_size and len(done) >= beam_size:
                    break
        hyps = []
        for score, toks in done:
            ids = toks[1:-1]
            hyps.append((ids, score / max(len(toks) - 1, 1), True))
        for score, toks in live:
            ids = toks[1:]
            hyps.append((ids, score / max(len(toks) - 1, 1), False))
        hyps.sort(key=lambda h: -h[1])
        results.append(hyps[:beam_size])
    return results


def check_prediction(predicted_tokens, reference_tokens, example, task):
    """Classify one prediction; returns (verdict, parsed object or None)."""
    if list(predicted_tokens) == list(reference_tokens):
        return PERFECT, example.solution
    try:
        predicted = task.parse_output(list(predicted_tokens))
    except MalformedSequence:
        return MALFORMED, None
    solution = example.solution
    if solution is None:
        try:
            solution = task.parse_output(list(reference_tokens))
        except MalformedSequence:
            return WELL_FORMED_BUT_WRONG, predicted
    base, _, _ = task.evaluate(example.problem, solution, predicted)
    if base == 1:
        return CORRECT_AND_VALID, predicted
    return WELL_FORMED_BUT_WRONG, predicted


def _example_class(example, task):
    if example.class_id is not None:
        return example.class_id
    solution = example.solution
    if solution is None:
        try:
            solution = task.parse_output(list(example.output))
        except MalformedSequence:
            return None
    return task.code_class(example.problem, solution)


class EvalSetResult:
    """Raw counts for one evaluation set, turned into metrics at the end."""

    def __init__(self, prefix, n_eval_metrics, n_error_metrics):
        self.prefix = prefix
        self.n = 0
        self.n_perfect = 0
        self.n_correct_valid = 0
        self.n_well_formed_wrong = 0
        self.n_malformed = 0
        self.xe_sum = 0.0
        self.xe_tokens = 0.0
        self.class_total = {}
        self.class_correct = {}
        self.eval_sums = [0.0] * n_eval_metrics
        self.error_sums = [0.0] * n_error_metrics
        self.histogram = {}

    def add(self, verdict, class_id):
        self.n += 1
        if verdict == PERFECT:
            self.n_perfect += 1
        elif verdict == CORRECT_AND_VALID:
            self.n_correct_valid += 1
        elif verdict == WELL_FORMED_BUT_WRONG:
            self.n_well_formed_wrong += 1
        else:
            self.n_malformed += 1
        if class_id is not None:
            self.class_total[class_id] = self.class_total.get(class_id, 0) + 1
            if verdict in (PERFECT, CORRECT_AND_VALID):
                self.class_correct[class_id] = \
                    self.class_correct.get(class_id, 0) + 1

    def add_histogram(self, ref_class, pred_class):
        row = self.histogram.setdefault(ref_class, {})
        row[pred_class] = row.get(pred_class, 0) + 1

    def metrics(self):
        out = {}
        p = self.prefix + "_arithmetic_"
        n = max(self.n, 1)
        out[p + "xe_loss"] = self.xe_sum / max(self.xe_tokens, 1.0)
        out[p + "acc"] = (self.n_perfect + self.n_correct_valid) / n
        out[p + "perfect"] = self.n_perfect / n
        out[p + "correct"] = \
            (self.n_correct_valid + self.n_well_formed_wrong) / n
        for cls in sorted(self.class_total):
            out["%sacc_%s" % (p, cls)] = \
                self.class_correct.get(cls, 0) / self.class_total[cls]
        for i, s in enumerate(self.eval_sums):
            out["%sacc_eval%d" % (p, i + 1)] = \
                (s + self.n_perfect) / n
        for i, s in enumerate(self.error_sums):
            out["%sacc_error%d" % (p, i + 1)] = s / n
        return out


class Evaluator:
    """Runs all evaluation sets against a frozen model.

    Sets come either from files (--eval_data, fixed across epochs,
    prefixed valid/test/test2/...) or from the generator (one "valid"
    set of eval_size examples, redrawn from a dedicated stream at every
    epoch).  The stream state is exposed for checkpointing so resumed
    runs evaluate on the same redrawn sets.
    """

    def __init__(self, task, vocabulary, logger, eval_data="",
                 eval_size=10000, eval_data_size=-1, batch_size_eval=128,
                 max_output_len=100, beam_search_on=False, beam_size=1,
                 eval_verbose=0, eval_verbose_print=False, export_pred=False,
                 max_class=100, base_seed=0, rank=0, max_len=-1):
        self.task = task
        self.vocabulary = vocabulary
        self.logger = logger
        self.eval_size = eval_size
        self.batch_size_eval = batch_size_eval
        self.max_output_len = max_output_len
        self.beam_search_on = beam_search_on
        self.beam_size = beam_size if beam_search_on else 1
        self.eval_verbose = eval_verbose
        self.eval_verbose_print = eval_verbose_print
        self.export_pred = export_pred
        self.max_class = max_class
        self.file_sets = []
        if eval_data:
            for k, path in enumerate(p for p in eval_data.split(",") if p):
                prefix = "valid" if k == 0 else \
                    ("test" if k == 1 else "test%d" % k)
                examples = read_examples(path, limit=eval_data_size,
                                         max_len=max_len)
                if len(examples) == 0:
                    raise ConfigError("evaluation file %s has no usable "
                                      "examples" % path)
                self.file_sets.append((prefix, examples))
        self.eval_rng = RngStream(base_seed, worker_id=0, rank=rank, tag=1)

    # checkpointing support -------------------------------------------
    def get_state(self):
        return {"eval_rng": self.eval_rng.get_state()}

    def set_state(self, state):
        self.eval_rng.set_state(state["eval_rng"])

    # ------------------------------------------------------------------
    def _log(self, message):
        if self.logger is not None:
            self.logger.log(message)

    def _sets(self):
        if self.file_sets:
            for prefix, examples in self.file_sets:
                yield prefix, list(examples.examples)
        else:
            examples = list(stream_generated(self.task, self.eval_rng,
                                             self.eval_size, split="valid"))
            yield "valid", examples

    def run(self, model, epoch=0, export_dir=None):
        """Evaluate every set; returns the combined metrics record."""
        metrics = {}
        for prefix, examples in self._sets():
            result = self._run_set(model, prefix, examples, epoch, export_dir)
            metrics.update(result.metrics())
        return metrics

    def _run_set(self, model, prefix, examples, epoch, export_dir):
        task = self.task
        result = EvalSetResult(prefix, task.spec.n_eval_metrics,
                               task.spec.n_error_metrics)
        export_file = None
        if self.eval_verbose > 0 and export_dir is not None:
            path = os.path.join(export_dir, "eval.%s.%d" % (prefix, epoch))
            try:
                export_file = open(path, "w", encoding="utf-8")
            except OSError as e:
                raise IoError("cannot write predictions to %s: %s" % (path, e))
        total = len(examples)
        done = 0
        try:
            for start in range(0, total, self.batch_size_eval):
                chunk = examples[start:start + self.batch_size_eval]
                n_valid, n_beam = self._run_batch(model, chunk, result,
                                                  export_file)
                done += len(chunk)
                self._log("(%d/%d) Found %d/%d valid top-1 predictions. "
                          "Generating solutions ..."
                          % (done, total, n_valid, len(chunk)))
                self._log("    Found %d/%d solutions in beam hypotheses."
                          % (n_beam, len(chunk)))
        finally:
            if export_file is not None:
                export_file.close()
        acc_num = result.n_perfect + result.n_correct_valid
        self._log("%d/%d (%.2f%%) examples were evaluated correctly."
                  % (acc_num, result.n, 100.0 * acc_num / max(result.n, 1)))
        for cls in sorted(result.class_total):
            correct = result.class_correct.get(cls, 0)
            tot = result.class_total[cls]
            self._log("%s: %d / %d (%.2f%%)"
                      % (cls, correct, tot, 100.0 * correct / tot))
        if self.export_pred and export_dir is not None:
            self._write_histogram(result, prefix, epoch, export_dir)
        return result

    def _run_batch(self, model, chunk, result, export_file):
        batch = make_batch(chunk, self.vocabulary)
        sum_loss, n_tokens, _ = model.loss_forward(
            batch.input_ids, batch.input_lengths, batch.output_ids,
            batch.output_lengths, train=False)
        result.xe_sum += sum_loss
        result.xe_tokens += n_tokens
        if self.beam_search_on:
            beams = beam_search(model, batch.input_ids, batch.input_lengths,
                                self.beam_size, self.max_output_len,
                                self.vocabulary)
            top_ids = [b[0][0] if b else [] for b in beams]
            top_terminated = [b[0][2] if b else False for b in beams]
        else:
            top_ids, top_terminated = greedy_decode(
                model, batch.input_ids, batch.input_lengths,
                self.max_output_len, self.vocabulary)
            beams = [[(ids, 0.0, term)]
                     for ids, term in zip(top_ids, top_terminated)]
        n_valid = 0
        n_beam = 0
        for i, example in enumerate(chunk):
            predicted_tokens = ids_to_tokens(top_ids[i], self.vocabulary)
            if top_terminated[i]:
                verdict, predicted = check_prediction(
                    predicted_tokens, example.output, example, self.task)
            else:
                verdict, predicted = MALFORMED, None
            class_id = _example_class(example, self.task)
            result.add(verdict, class_id)
            if verdict in (PERFECT, CORRECT_AND_VALID):
                n_valid += 1
            hyp_tokens = [ids_to_tokens(h[0], self.vocabulary)
                          for h in beams[i]]
            if any(self._hyp_solves(t, example) for h, t
                   in zip(beams[i], hyp_tokens) if h[2]):
                n_beam += 1
            self._add_extra_metrics(result, example, verdict, predicted,
                                    beams[i], hyp_tokens)
            if self.export_pred:
                self._add_to_histogram(result, example, verdict, predicted,
                                       class_id)
            if export_file is not None or self.eval_verbose_print:
                record = self._format_record(example, predicted_tokens,
                                             verdict, beams[i], hyp_tokens)
                if export_file is not None:
                    export_file.write(record + "\n")
                if self.eval_verbose_print:
                    self._log(record)
        return n_valid, n_beam

    def _hyp_solves(self, hyp_tokens, example):
        verdict, _ = check_prediction(hyp_tokens, example.output, example,
                                      self.task)
        return verdict in (PERFECT, CORRECT_AND_VALID)

    def _add_extra_metrics(self, result, example, verdict, predicted,
                           hyps, hyp_tokens):
        task = self.task
        n_eval = task.spec.n_eval_metrics
        n_err = task.spec.n_error_metrics
        if n_eval == 0 and n_err == 0:
            return
        solution = example.solution
        if solution is None:
            try:
                solution = task.parse_output(list(example.output))
            except MalformedSequence:
                return
        if verdict != PERFECT and predicted is not None:
            _, evals, errors = task.evaluate(example.problem, solution,
                                             predicted)
            for i in range(n_err):
                result.error_sums[i] += errors[i]
        else:
            evals = [0.0] * n_eval
        if n_eval and verdict != PERFECT:
            # with beam search the best hypothesis value is reported
            best = list(evals)
            for (ids, score, terminated), tokens in zip(hyps, hyp_tokens):
                if not terminated:
                    continue
                try:
                    obj = task.parse_output(list(tokens))
                except MalformedSequence:
                    continue
                _, ev, _ = task.evaluate(example.problem, solution, obj)
                best = [max(b, v) for b, v in zip(best, ev)]
            for i in range(n_eval):
                result.eval_sums[i] += best[i]

    def _add_to_histogram(self, result, example, verdict, predicted,
                          class_id):
        if class_id is None or class_id > self.max_class:
            return
        if verdict in (PERFECT, CORRECT_AND_VALID):
            pred_class = class_id
        elif predicted is None:
            pred_class = "other"
        else:
            pred_class = self.task.code_class(example.problem, predicted)
            if pred_class is None or pred_class > self.max_class:
                pred_class = "other"
        result.add_histogram(class_id, pred_class)

    def _write_histogram(self, result, prefix, epoch, export_dir):
        path = os.path.join(export_dir, "pred.%s.%d" % (prefix, epoch))
        classes = sorted(result.histogram)
        columns = sorted({c for row in result.histogram.values()
                          for c in row if c != "other"})
        try:
            with open(path, "w", encoding="utf-8") as f:
                header = ["class", "total"] + [str(c) for c in columns] \
                    + ["other"]
                f.write("\t".join(header) + "\n")
                for cls in classes:
                    row = result.histogram[cls]
                    total = sum(row.values())
                    cells = [str(cls), str(total)] \
                        + [str(row.get(c, 0)) for c in columns] \
                        + [str(row.get("other", 0))]
                    f.write("\t".join(cells) + "\n")
        except OSError as e:
            raise IoError("cannot write histogram to %s: %s" % (path, e))

    def _format_record(self, example, predicted_tokens, verdict, hyps,
                       hyp_tokens):
        fields = [" ".join(example.input), " ".join(example.output),
                  " ".join(predicted_tokens), verdict]
        include_beam = self.eval_verbose == 2 or verdict != PERFECT
        if self.eval_verbose > 0 and include_beam and self.beam_search_on:
            for (ids, score, terminated), tokens in zip(hyps, hyp_tokens):
                fields.append("%.6f|%s" % (score, " ".join(tokens)))
        return "\t".join(fields)
