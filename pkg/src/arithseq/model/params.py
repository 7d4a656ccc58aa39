"""Trainable parameter storage and weight initialization."""

import numpy as np

from ..errors import ConfigError

EMBEDDING_STD = 0.02  # embedding tables are drawn N(0, 0.02^2)


class Param:
    """One named weight array with a same-shape gradient accumulator."""

    def __init__(self, name, data):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return "Param(%r, shape=%r)" % (self.name, self.data.shape)


class Parameters:
    """Insertion-ordered registry of Params.

    Shared weights (looped layers, tied input/output embeddings) are a
    single Param registered once; everything that iterates over the
    registry — the optimizer, clipping, checkpointing — therefore sees
    each storage exactly once and summed gradients fall out naturally.
    """

    def __init__(self):
        self._params = {}

    def new(self, name, data):
        if name in self._params:
            raise ConfigError("duplicate parameter name %r" % (name,))
        p = Param(name, data)
        self._params[name] = p
        return p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params.keys())

    def total_count(self):
        return sum(p.data.size for p in self)

    def zero_grads(self):
        for p in self:
            p.zero_grad()

    def state_arrays(self):
        """name -> array mapping for checkpoint serialization."""
        return {p.name: p.data for p in self}

    def load_state_arrays(self, arrays):
        for p in self:
            if p.name not in arrays:
                raise ConfigError("checkpoint missing parameter %r" % p.name)
            a = arrays[p.name]
            if a.shape != p.data.shape:
                raise ConfigError(
                    "checkpoint shape %r for %r, expected %r"
                    % (a.shape, p.name, p.data.shape))
            p.data[...] = a.astype(p.data.dtype)


def init_linear_weight(shape, fan_in, fan_out, scheme, rng, dtype):
    """Weight init for linear layers: uniform Kaiming or Xavier bounds."""
    if scheme == "kaiming_uniform":
        bound = 1.0 / np.sqrt(fan_in)
    elif scheme == "xavier":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        raise ConfigError("unknown init scheme %r" % (scheme,))
    return rng.uniform(-bound, bound, shape).astype(dtype)


def init_embedding_weight(shape, rng, dtype):
    return (rng.normal(0.0, EMBEDDING_STD, shape)).astype(dtype)
