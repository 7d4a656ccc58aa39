"""Shared fixtures: tiny models, synthetic batches, and the FD oracle."""

import numpy as np
import pytest

from arithseq.model import ModelConfig, TransformerModel
from arithseq.rng import RngStream

TINY_VOCAB = 12


def tiny_config(**overrides):
    """2+2 layers, dim 16, 2 heads — small enough for exhaustive FD."""
    base = dict(
        n_enc_layers=2, n_dec_layers=2,
        enc_emb_dim=16, dec_emb_dim=16,
        n_enc_heads=2, n_dec_heads=2,
        activation="gelu",
        share_inout_emb=False,
        max_positions=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(seed=0, vocab_size=TINY_VOCAB, **overrides):
    return TransformerModel(tiny_config(**overrides), vocab_size,
                            RngStream(seed, tag=2))


def tiny_batch(seed=0, vocab_size=TINY_VOCAB, batch=3, in_len=5, out_len=4,
               fit_encoder_only=False):
    """Random padded id arrays with ragged lengths (ids 2.. are content).

    Output rows follow the collator convention: framed by token id 1 at
    both ends, so output_lengths include the two markers.  With
    fit_encoder_only, every row satisfies output length + 1 <= input
    length so the positions-as-classifier path accepts the batch.
    """
    rng = np.random.default_rng(seed)
    input_ids = np.zeros((batch, in_len), dtype=np.int64)
    output_ids = np.zeros((batch, out_len), dtype=np.int64)
    input_lengths = np.zeros(batch, dtype=np.int64)
    output_lengths = np.zeros(batch, dtype=np.int64)
    for i in range(batch):
        li = in_len if i == 0 else int(rng.integers(2, in_len + 1))
        lo = out_len if i == 0 else int(rng.integers(3, out_len + 1))
        if fit_encoder_only:
            li = max(li, min(lo - 1, in_len))
            lo = min(lo, li + 1)
        input_ids[i, :li] = rng.integers(2, vocab_size, size=li)
        output_ids[i, 0] = 1
        output_ids[i, 1:lo - 1] = rng.integers(2, vocab_size, size=lo - 2)
        output_ids[i, lo - 1] = 1
        input_lengths[i] = li
        output_lengths[i] = lo
    return input_ids, input_lengths, output_ids, output_lengths


def fd_max_rel_err(model, batch, h=1e-5, params=None, floor=1e-5):
    """Max relative error of analytic vs central-difference gradients.

    Per element: |ana - fd| / max(|ana|, |fd|, floor).  The floor keeps
    elements whose true gradient sits below the FD resolution limit
    (rounding noise ~ eps*|loss|/h) from registering spurious relative
    error; a genuinely wrong tiny gradient still fails by orders of
    magnitude.
    """
    input_ids, input_lengths, output_ids, output_lengths = batch

    def loss():
        s, n, _ = model.loss_forward(input_ids, input_lengths,
                                     output_ids, output_lengths, train=False)
        return s

    for p in model.params:
        p.zero_grad()
    s, n, trace = model.loss_forward(input_ids, input_lengths,
                                     output_ids, output_lengths, train=False)
    model.backward(trace, 1.0)

    worst = 0.0
    check = list(model.params) if params is None else [
        p for p in model.params if p.name in params]
    assert check, "no parameters selected"
    for p in check:
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss()
            flat[i] = orig - h
            lm = loss()
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            err = abs(gflat[i] - fd)
            rel = err / max(abs(gflat[i]), abs(fd), floor)
            worst = max(worst, rel)
    return worst
