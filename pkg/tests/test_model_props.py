"""Structural model properties: masking, causality, sharing, init."""

import numpy as np
import pytest

from arithseq.errors import ConfigError, PositionOverflow
from arithseq.model import ModelConfig, TransformerModel
from arithseq.model.layers import (
    dropout_backward,
    dropout_forward,
    sinusoidal_table,
    softmax_forward,
)
from arithseq.model.transformer import cross_entropy_loss, cross_entropy_sum
from arithseq.rng import RngStream

from conftest import TINY_VOCAB, tiny_batch, tiny_config, tiny_model


# ---------------------------------------------------------------------------
# positional tables


def test_sinusoidal_position_zero_alternates():
    table = sinusoidal_table(4, 8, np.float64)
    assert np.array_equal(table[0], np.array([0, 1, 0, 1, 0, 1, 0, 1.0]))


def test_sinusoidal_bounded_and_distinct():
    table = sinusoidal_table(10_000, 16, np.float64)
    assert np.abs(table).max() <= 1.0
    # all positions pairwise distinct: sort rows lexicographically
    view = {tuple(row) for row in table}
    assert len(view) == 10_000


def test_sinusoidal_rejects_odd_dim():
    with pytest.raises(ConfigError):
        sinusoidal_table(4, 7, np.float64)


def test_position_overflow():
    model = tiny_model(seed=0)  # max_positions 8
    ids = np.ones((1, 9), dtype=np.int64)
    with pytest.raises(PositionOverflow):
        model.encoder_forward(ids, np.array([9]), train=False)


# ---------------------------------------------------------------------------
# masking


def test_padding_token_identity_is_invisible():
    model = tiny_model(seed=1)
    input_ids, input_lengths, output_ids, output_lengths = tiny_batch(seed=2)
    base, _, _ = model.loss_forward(input_ids, input_lengths,
                                    output_ids, output_lengths, train=False)
    memory0, _, _ = model.encoder_forward(input_ids, input_lengths,
                                          train=False)
    changed = input_ids.copy()
    for i in range(changed.shape[0]):
        changed[i, input_lengths[i]:] = 7  # overwrite pad positions
    memory1, _, _ = model.encoder_forward(changed, input_lengths,
                                          train=False)
    for i in range(changed.shape[0]):
        li = input_lengths[i]
        assert np.array_equal(memory0[i, :li], memory1[i, :li])
    after, _, _ = model.loss_forward(changed, input_lengths,
                                     output_ids, output_lengths, train=False)
    assert after == base


def test_decoder_causality():
    model = tiny_model(seed=3)
    input_ids, input_lengths, output_ids, output_lengths = tiny_batch(
        seed=4, batch=2, out_len=6)
    memory, cross_mask = model.encode(input_ids, input_lengths)
    prefix = output_ids[:, :-1]
    plens = output_lengths - 1
    logits0 = model.decoder_logits(prefix, plens, memory, cross_mask)
    for t in range(1, prefix.shape[1]):
        changed = prefix.copy()
        changed[:, t:] = (changed[:, t:] + 3) % TINY_VOCAB
        logits1 = model.decoder_logits(changed, plens, memory, cross_mask)
        assert np.array_equal(logits0[:, :t], logits1[:, :t]), t


def test_encoder_permutation_equivariance_without_positions():
    model = tiny_model(seed=5, enc_positional="none")
    rng = np.random.default_rng(6)
    ids = rng.integers(2, TINY_VOCAB, size=(1, 6))
    lengths = np.array([6])
    memory, _, _ = model.encoder_forward(ids, lengths, train=False)
    perm = rng.permutation(6)
    memory_p, _, _ = model.encoder_forward(ids[:, perm], lengths,
                                           train=False)
    assert np.allclose(memory[0, perm], memory_p[0], rtol=1e-12, atol=1e-12)


def test_learned_positions_break_equivariance():
    model = tiny_model(seed=7)  # learned positional embeddings
    ids = np.full((1, 4), 5, dtype=np.int64)  # same token everywhere
    memory, _, _ = model.encoder_forward(ids, np.array([4]), train=False)
    assert not np.allclose(memory[0, 0], memory[0, 1])


# ---------------------------------------------------------------------------
# softmax / loss


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(8)
    scores = rng.normal(size=(5, 2, 7, 7)) * 30.0
    scores[0, 0, 0, 1:] = -1e30  # near-fully-masked row
    probs = softmax_forward(scores)
    assert np.abs(probs.sum(axis=-1) - 1.0).max() <= 1e-12


def test_cross_entropy_uniform_logits_is_log_vocab():
    v = 28
    logits = np.zeros((3, 4, v))
    targets = np.ones((3, 4), dtype=np.int64)
    mask = np.ones((3, 4))
    loss, _ = cross_entropy_loss(logits, targets, mask)
    assert abs(loss - np.log(v)) <= 1e-12


def test_cross_entropy_confident_limit_and_padding():
    v = 10
    targets = np.array([[3, 5]])
    logits = np.full((1, 2, v), -1e4)
    logits[0, 0, 3] = 1e4
    logits[0, 1, 5] = 1e4
    loss, dlogits = cross_entropy_loss(logits, targets, np.ones((1, 2)))
    assert loss <= 1e-12
    # padded positions contribute exactly zero loss and gradient
    mask = np.array([[1.0, 0.0]])
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(1, 2, v))
    loss, dlogits = cross_entropy_loss(logits, targets, mask)
    assert np.array_equal(dlogits[0, 1], np.zeros(v))


def test_cross_entropy_gradient_finite_differences():
    rng = np.random.default_rng(10)
    logits = rng.normal(size=(2, 3, 6))
    targets = rng.integers(0, 6, size=(2, 3))
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    _, dlogits = cross_entropy_loss(logits, targets, mask)
    h = 1e-5
    worst = 0.0
    flat = logits.reshape(-1)
    dflat = dlogits.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp, _ = cross_entropy_loss(logits, targets, mask)
        flat[i] = orig - h
        lm, _ = cross_entropy_loss(logits, targets, mask)
        flat[i] = orig
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - dflat[i]) / max(abs(fd), abs(dflat[i]),
                                                    1e-4))
    assert worst <= 1e-6, worst


# ---------------------------------------------------------------------------
# backward structure


def test_zero_scale_backward_leaves_zero_grads():
    model = tiny_model(seed=11)
    batch = tiny_batch(seed=12)
    _, _, trace = model.loss_forward(*batch, train=False)
    for p in model.params:
        p.zero_grad()
    model.backward(trace, 0.0)
    for p in model.params:
        assert not p.grad.any(), p.name


def test_duplicated_batch_same_averaged_gradient():
    model = tiny_model(seed=13)
    input_ids, input_lengths, output_ids, output_lengths = tiny_batch(seed=14)
    for p in model.params:
        p.zero_grad()
    _, n1, trace = model.loss_forward(input_ids, input_lengths,
                                      output_ids, output_lengths, train=False)
    model.backward(trace, 1.0)
    grads1 = {p.name: p.grad / n1 for p in model.params}
    for p in model.params:
        p.zero_grad()
    dup = (np.concatenate([input_ids] * 2), np.concatenate([input_lengths] * 2),
           np.concatenate([output_ids] * 2),
           np.concatenate([output_lengths] * 2))
    _, n2, trace = model.loss_forward(*dup, train=False)
    assert n2 == 2 * n1
    model.backward(trace, 1.0)
    for p in model.params:
        assert np.allclose(p.grad / n2, grads1[p.name],
                           rtol=1e-12, atol=1e-14), p.name


# ---------------------------------------------------------------------------
# sharing and init


def test_loop_of_one_matches_plain_stack():
    a = tiny_model(seed=15)
    b = tiny_model(seed=15, enc_loop_idx=-2, dec_loop_idx=-2,
                   enc_loops=1, dec_loops=1)
    batch = tiny_batch(seed=16)
    la, _, _ = a.loss_forward(*batch, train=False)
    lb, _, _ = b.loss_forward(*batch, train=False)
    assert la == lb


def test_shared_inout_embedding_is_same_storage():
    model = tiny_model(seed=17, share_inout_emb=True)
    names = {p.name: p for p in model.params}
    emb = model.dec_tok_emb.w
    proj = model.out_proj.w
    assert emb is proj
    # count drops by exactly vocab x dim versus the untied model
    untied = tiny_model(seed=18, share_inout_emb=False)
    assert (untied.parameter_count() - model.parameter_count()
            == TINY_VOCAB * 16)


def test_same_seed_bitwise_identical_init():
    a = tiny_model(seed=19)
    b = tiny_model(seed=19)
    for pa, pb in zip(a.params, b.params):
        assert pa.name == pb.name
        assert np.array_equal(pa.data, pb.data)


def test_parameter_count_quadratic_in_dim():
    def count(dim):
        cfg = ModelConfig(enc_emb_dim=dim, dec_emb_dim=dim,
                          n_enc_heads=2, n_dec_heads=2)
        return TransformerModel(cfg, TINY_VOCAB, RngStream(0)).parameter_count()

    small = count(128) / count(64)
    large = count(512) / count(256)
    assert abs(large - 4.0) < abs(small - 4.0)
    assert 3.8 < large < 4.05


def test_encoder_only_rejects_long_outputs():
    model = tiny_model(seed=20, architecture="encoder_only")
    input_ids = np.ones((1, 3), dtype=np.int64)
    output_ids = np.ones((1, 5), dtype=np.int64)
    with pytest.raises(ConfigError):
        model.loss_forward(input_ids, np.array([3]), output_ids,
                           np.array([5]), train=False)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(enc_emb_dim=15, n_enc_heads=2).validate()
    with pytest.raises(ConfigError):
        ModelConfig(enc_loop_idx=5, n_enc_layers=2)
    with pytest.raises(ConfigError):
        ModelConfig(enc_loop_idx=-2, enc_loops=0)
    with pytest.raises(ConfigError):
        ModelConfig(activation="tanh")


# ---------------------------------------------------------------------------
# dropout


def test_dropout_train_eval_and_backward_mask():
    rng = RngStream(21, tag=3)
    x = np.ones((4, 5))
    y, mask = dropout_forward(x, 0.5, True, rng)
    kept = y != 0
    assert np.array_equal(y[kept], np.full(kept.sum(), 2.0))  # 1/(1-p)
    dy = np.ones_like(y)
    dx = dropout_backward(dy, mask)
    assert np.array_equal(dx != 0, kept)
    # eval mode and p = 0 are identity
    y_eval, _ = dropout_forward(x, 0.5, False, rng)
    assert np.array_equal(y_eval, x)
    y0, _ = dropout_forward(x, 0.0, True, rng)
    assert np.array_equal(y0, x)


def test_dropout_changes_training_loss_only():
    model = tiny_model(seed=22, dropout=0.3)
    batch = tiny_batch(seed=23)
    eval_loss, _, _ = model.loss_forward(*batch, train=False)
    eval_loss2, _, _ = model.loss_forward(*batch, train=False)
    assert eval_loss == eval_loss2
    rng = RngStream(24, tag=3)
    train_loss, _, _ = model.loss_forward(*batch, train=True, rng=rng)
    assert train_loss != eval_loss
