"""Encoder-decoder and encoder-only transformers with exact gradients.

The forward pass records a trace of per-layer caches; backward() walks
it in reverse and accumulates the analytic gradient of (scale * summed
token cross-entropy) into every Param.  Gradient averaging over a batch
or an accumulation window is the caller's job: it divides by the token
count it actually processed, which keeps "4 batches of 16" and "1 batch
of 64" numerically equivalent.

There is no numerical differentiation anywhere in this module; finite
differences appear only in the test suite as an oracle.
"""

import numpy as np

from ..errors import ConfigError, PositionOverflow
from .config import ModelConfig  # noqa: F401  (re-exported)
from .layers import (
    Embedding,
    FeedForward,
    Linear,
    LayerNorm,
    MultiHeadAttention,
    dropout_backward,
    dropout_forward,
    sinusoidal_table,
)
from .params import Parameters


def layer_plan(n_layers, loop_idx, loops):
    """Execution order of layer indices under the sharing options."""
    if loop_idx == -1:
        return list(range(n_layers))
    if loop_idx == -2:
        return list(range(n_layers)) * loops
    return (list(range(loop_idx)) + [loop_idx] * loops
            + list(range(loop_idx + 1, n_layers)))


def length_mask(lengths, width, dtype):
    """Additive key mask (batch, 1, 1, width): 0 if key < length, else -inf."""
    allowed = np.arange(width)[None, :] < np.asarray(lengths)[:, None]
    mask = np.where(allowed, 0.0, -np.inf).astype(dtype)
    return mask[:, None, None, :]


def causal_mask(width, dtype):
    """Additive causal mask (1, 1, width, width): queries attend keys <= t."""
    allowed = np.tril(np.ones((width, width), dtype=bool))
    mask = np.where(allowed, 0.0, -np.inf).astype(dtype)
    return mask[None, None, :, :]


def cross_entropy_sum(logits, targets, mask):
    """Summed token cross-entropy and its exact logit gradient.

    mask is 1.0 at real target positions and 0.0 at padding; padded
    positions contribute exactly zero to both the loss and the gradient.
    Returns (sum_loss, n_tokens, dlogits_of_sum).
    """
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    ez = np.exp(z)
    sez = ez.sum(axis=-1, keepdims=True)
    logp = z - np.log(sez)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    sum_loss = float(-(picked * mask).sum())
    n_tokens = float(mask.sum())
    dlogits = ez / sez
    rows = np.arange(targets.shape[0])[:, None]
    cols = np.arange(targets.shape[1])[None, :]
    dlogits[rows, cols, targets] -= 1.0
    dlogits *= mask[..., None]
    return sum_loss, n_tokens, dlogits


def cross_entropy_loss(logits, target_ids, pad_mask):
    """Mean cross-entropy over non-pad targets and its logit gradient."""
    sum_loss, n_tokens, dlogits = cross_entropy_sum(logits, target_ids,
                                                    pad_mask)
    if n_tokens == 0:
        return 0.0, np.zeros_like(dlogits)
    return sum_loss / n_tokens, dlogits / n_tokens


class EncoderLayer:
    """Post-norm transformer layer: self-attention then feed-forward."""

    def __init__(self, params, name, dim, n_heads, n_hidden_layers,
                 activation, dropout, attention_dropout, scheme, rng, dtype):
        self.dropout = dropout
        self.attn = MultiHeadAttention(params, name + "_attn", dim, dim,
                                       n_heads, scheme, rng, dtype,
                                       attention_dropout)
        self.ln1 = LayerNorm(params, name + "_ln1", dim, dtype)
        self.ff = FeedForward(params, name + "_ff", dim, n_hidden_layers,
                              activation, scheme, rng, dtype)
        self.ln2 = LayerNorm(params, name + "_ln2", dim, dtype)

    def forward(self, x, mask, train=False, rng=None):
        a, c_attn = self.attn.forward(x, x, mask, train, rng)
        a, m_attn = dropout_forward(a, self.dropout, train, rng)
        h, c_ln1 = self.ln1.forward(x + a)
        f, c_ff = self.ff.forward(h)
        f, m_ff = dropout_forward(f, self.dropout, train, rng)
        y, c_ln2 = self.ln2.forward(h + f)
        return y, (c_attn, m_attn, c_ln1, c_ff, m_ff, c_ln2)

    def backward(self, dy, cache):
        c_attn, m_attn, c_ln1, c_ff, m_ff, c_ln2 = cache
        dhf = self.ln2.backward(dy, c_ln2)
        df = dropout_backward(dhf, m_ff)
        dh = self.ff.backward(df, c_ff) + dhf
        dxa = self.ln1.backward(dh, c_ln1)
        da = dropout_backward(dxa, m_attn)
        dq, dkv = self.attn.backward(da, c_attn)
        return dxa + dq + dkv


class DecoderLayer:
    """Post-norm decoder layer: causal self-attention, cross-attention, FF."""

    def __init__(self, params, name, dim, memory_dim, n_heads,
                 n_hidden_layers, activation, dropout, attention_dropout,
                 scheme, rng, dtype):
        self.dropout = dropout
        self.self_attn = MultiHeadAttention(params, name + "_self", dim, dim,
                                            n_heads, scheme, rng, dtype,
                                            attention_dropout)
        self.ln1 = LayerNorm(params, name + "_ln1", dim, dtype)
        self.cross_attn = MultiHeadAttention(params, name + "_cross", dim,
                                             memory_dim, n_heads, scheme, rng,
                                             dtype, attention_dropout)
        self.ln2 = LayerNorm(params, name + "_ln2", dim, dtype)
        self.ff = FeedForward(params, name + "_ff", dim, n_hidden_layers,
                              activation, scheme, rng, dtype)
        self.ln3 = LayerNorm(params, name + "_ln3", dim, dtype)

    def forward(self, x, self_mask, memory, cross_mask, train=False, rng=None):
        a, c_self = self.self_attn.forward(x, x, self_mask, train, rng)
        a, m_self = dropout_forward(a, self.dropout, train, rng)
        h1, c_ln1 = self.ln1.forward(x + a)
        c, c_cross = self.cross_attn.forward(h1, memory, cross_mask, train, rng)
        c, m_cross = dropout_forward(c, self.dropout, train, rng)
        h2, c_ln2 = self.ln2.forward(h1 + c)
        f, c_ff = self.ff.forward(h2)
        f, m_ff = dropout_forward(f, self.dropout, train, rng)
        y, c_ln3 = self.ln3.forward(h2 + f)
        cache = (c_self, m_self, c_ln1, c_cross, m_cross, c_ln2,
                 c_ff, m_ff, c_ln3)
        return y, cache

    def backward(self, dy, cache):
        (c_self, m_self, c_ln1, c_cross, m_cross, c_ln2,
         c_ff, m_ff, c_ln3) = cache
        dh2f = self.ln3.backward(dy, c_ln3)
        df = dropout_backward(dh2f, m_ff)
        dh2 = self.ff.backward(df, c_ff) + dh2f
        dh1c = self.ln2.backward(dh2, c_ln2)
        dc = dropout_backward(dh1c, m_cross)
        dq_cross, dmemory = self.cross_attn.backward(dc, c_cross)
        dh1 = dh1c + dq_cross
        dxa = self.ln1.backward(dh1, c_ln1)
        da = dropout_backward(dxa, m_self)
        dq_self, dkv_self = self.self_attn.backward(da, c_self)
        return dxa + dq_self + dkv_self, dmemory


class TransformerModel:
    """The trainable model: embeddings, transformer stacks, output head."""

    def __init__(self, config, vocab_size, rng):
        self.config = config
        self.vocab_size = vocab_size
        self.dtype = np.dtype(config.dtype)
        self.params = Parameters()
        scheme = config.init

        # Construction order is fixed so a seeded rng reproduces weights.
        self.enc_tok_emb = Embedding(self.params, "enc_tok_emb", vocab_size,
                                     config.enc_emb_dim, rng, self.dtype)
        self.enc_pos_emb = None
        self.enc_pos_table = None
        if config.enc_positional == "learned":
            self.enc_pos_emb = Embedding(self.params, "enc_pos_emb",
                                         config.max_positions,
                                         config.enc_emb_dim, rng, self.dtype)
        elif config.enc_positional == "sinusoidal":
            self.enc_pos_table = sinusoidal_table(config.max_positions,
                                                  config.enc_emb_dim,
                                                  self.dtype)
        self.enc_layers = [
            EncoderLayer(self.params, "enc_l%d" % i, config.enc_emb_dim,
                         config.n_enc_heads, config.n_enc_hidden_layers,
                         config.activation, config.dropout,
                         config.attention_dropout, scheme, rng, self.dtype)
            for i in range(config.n_enc_layers)
        ]
        self.enc_plan = layer_plan(config.n_enc_layers, config.enc_loop_idx,
                                   config.enc_loops)

        self.dec_tok_emb = None
        self.dec_pos_emb = None
        self.dec_pos_table = None
        self.dec_layers = []
        self.dec_plan = []
        if config.architecture == "encoder_decoder":
            self.dec_tok_emb = Embedding(self.params, "dec_tok_emb",
                                         vocab_size, config.dec_emb_dim, rng,
                                         self.dtype)
            if config.dec_positional == "learned":
                self.dec_pos_emb = Embedding(self.params, "dec_pos_emb",
                                             config.max_positions,
                                             config.dec_emb_dim, rng,
                                             self.dtype)
            elif config.dec_positional == "sinusoidal":
                self.dec_pos_table = sinusoidal_table(config.max_positions,
                                                      config.dec_emb_dim,
                                                      self.dtype)
            self.dec_layers = [
                DecoderLayer(self.params, "dec_l%d" % i, config.dec_emb_dim,
                             config.enc_emb_dim, config.n_dec_heads,
                             config.n_dec_hidden_layers, config.activation,
                             config.dropout, config.attention_dropout,
                             scheme, rng, self.dtype)
                for i in range(config.n_dec_layers)
            ]
            self.dec_plan = layer_plan(config.n_dec_layers,
                                       config.dec_loop_idx, config.dec_loops)
            head_dim = config.dec_emb_dim
            tied = self.dec_tok_emb.w if config.share_inout_emb else None
        else:
            head_dim = config.enc_emb_dim
            tied = self.enc_tok_emb.w if config.share_inout_emb else None
        self.out_proj = Linear(self.params, "out_proj", head_dim, vocab_size,
                               scheme, rng, self.dtype, weight=tied)

    # ------------------------------------------------------------------
    # embeddings

    def _embed(self, ids, tok_emb, positional, pos_emb, pos_table):
        width = ids.shape[1]
        if positional != "none" and width > self.config.max_positions:
            raise PositionOverflow(
                "sequence width %d exceeds max_positions %d"
                % (width, self.config.max_positions))
        x, tok_cache = tok_emb.forward(ids)
        if positional == "learned":
            x = x + pos_emb.w.data[None, :width]
        elif positional == "sinusoidal":
            x = x + pos_table[None, :width]
        return x, (tok_cache, width)

    def _embed_backward(self, dy, cache, tok_emb, positional, pos_emb):
        tok_cache, width = cache
        tok_emb.backward(dy, tok_cache)
        if positional == "learned":
            pos_emb.w.grad[:width] += dy.sum(axis=0)

    # ------------------------------------------------------------------
    # stacks

    def encoder_forward(self, input_ids, input_lengths, train=False, rng=None):
        mask = length_mask(input_lengths, input_ids.shape[1], self.dtype)
        x, emb_cache = self._embed(input_ids, self.enc_tok_emb,
                                   self.config.enc_positional,
                                   self.enc_pos_emb, self.enc_pos_table)
        layer_caches = []
        for li in self.enc_plan:
            x, c = self.enc_layers[li].forward(x, mask, train, rng)
            layer_caches.append((li, c))
        return x, mask, (emb_cache, layer_caches)

    def encoder_backward(self, dx, trace):
        emb_cache, layer_caches = trace
        for li, c in reversed(layer_caches):
            dx = self.enc_layers[li].backward(dx, c)
        self._embed_backward(dx, emb_cache, self.enc_tok_emb,
                             self.config.enc_positional, self.enc_pos_emb)

    def decoder_forward(self, prefix_ids, prefix_lengths, memory, cross_mask,
                        train=False, rng=None):
        width = prefix_ids.shape[1]
        self_mask = (causal_mask(width, self.dtype)
                     + length_mask(prefix_lengths, width, self.dtype))
        x, emb_cache = self._embed(prefix_ids, self.dec_tok_emb,
                                   self.config.dec_positional,
                                   self.dec_pos_emb, self.dec_pos_table)
        layer_caches = []
        for li in self.dec_plan:
            x, c = self.dec_layers[li].forward(x, self_mask, memory,
                                               cross_mask, train, rng)
            layer_caches.append((li, c))
        return x, (emb_cache, layer_caches)

    def decoder_backward(self, dx, trace):
        emb_cache, layer_caches = trace
        dmemory = None
        for li, c in reversed(layer_caches):
            dx, dm = self.dec_layers[li].backward(dx, c)
            dmemory = dm if dmemory is None else dmemory + dm
        self._embed_backward(dx, emb_cache, self.dec_tok_emb,
                             self.config.dec_positional, self.dec_pos_emb)
        return dmemory

    # ------------------------------------------------------------------
    # training loss

    def loss_forward(self, input_ids, input_lengths, output_ids,
                     output_lengths, train=True, rng=None):
        """Teacher-forced forward pass.

        Returns (sum_loss, n_tokens, trace): the summed cross-entropy
        over real target tokens, the number of such tokens, and the
        trace that backward() consumes.
        """
        input_lengths = np.asarray(input_lengths)
        output_lengths = np.asarray(output_lengths)
        targets = output_ids[:, 1:]
        target_width = targets.shape[1]
        tmask = (np.arange(target_width)[None, :]
                 < (output_lengths - 1)[:, None]).astype(self.dtype)
        if self.config.architecture == "encoder_decoder":
            memory, cross_mask, enc_trace = self.encoder_forward(
                input_ids, input_lengths, train, rng)
            prefix = output_ids[:, :-1]
            hidden, dec_trace = self.decoder_forward(
                prefix, output_lengths - 1, memory, cross_mask, train, rng)
        else:
            if np.any(output_lengths - 1 > input_lengths):
                raise ConfigError(
                    "encoder-only model requires output length + 1 <= "
                    "input length for every example")
            memory, _, enc_trace = self.encoder_forward(
                input_ids, input_lengths, train, rng)
            hidden = memory[:, :target_width]
            dec_trace = None
        logits, proj_cache = self.out_proj.forward(hidden)
        sum_loss, n_tokens, dlogits = cross_entropy_sum(logits, targets, tmask)
        trace = {
            "dlogits": dlogits,
            "proj_cache": proj_cache,
            "enc_trace": enc_trace,
            "dec_trace": dec_trace,
            "memory_shape": memory.shape,
            "target_width": target_width,
        }
        return sum_loss, n_tokens, trace

    def backward(self, trace, scale=1.0):
        """Accumulate gradients of (scale * summed loss) into Param.grad."""
        dlogits = trace["dlogits"] * scale
        dhidden = self.out_proj.backward(dlogits, trace["proj_cache"])
        if self.config.architecture == "encoder_decoder":
            dmemory = self.decoder_backward(dhidden, trace["dec_trace"])
            self.encoder_backward(dmemory, trace["enc_trace"])
        else:
            dmemory = np.zeros(trace["memory_shape"], dtype=self.dtype)
            dmemory[:, :trace["target_width"]] = dhidden
            self.encoder_backward(dmemory, trace["enc_trace"])

    # ------------------------------------------------------------------
    # inference

    def encode(self, input_ids, input_lengths):
        memory, cross_mask, _ = self.encoder_forward(input_ids, input_lengths,
                                                     train=False)
        return memory, cross_mask

    def decoder_logits(self, prefix_ids, prefix_lengths, memory, cross_mask):
        """Vocabulary logits at every prefix position (no trace kept)."""
        hidden, _ = self.decoder_forward(prefix_ids, prefix_lengths, memory,
                                         cross_mask, train=False)
        logits, _ = self.out_proj.forward(hidden)
        return logits

    def encoder_only_logits(self, input_ids, input_lengths, width):
        """Per-position logits of the first `width` encoder positions."""
        memory, _ = self.encode(input_ids, input_lengths)
        logits, _ = self.out_proj.forward(memory[:, :width])
        return logits

    # ------------------------------------------------------------------

    def parameter_count(self):
        return self.params.total_count()
