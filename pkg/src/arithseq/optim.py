"""Optimizers, learning-rate warmup/scheduling and gradient clipping.

The optimizer spec is a single string: the optimizer name, then
comma-separated key=value pairs, e.g. "adam,lr=1e-4" or
"adagrad,lr=0.1,lr_decay=0.05".  Warmup and scheduling ride along in
the same string: "adam,lr=1e-4,warmup=4000,schedule=inverse_sqrt"
(cosine additionally needs total_steps=N).
"""

import numpy as np

from .errors import ParseError

SCHEDULES = ("none", "inverse_sqrt", "cosine")

_DEFAULTS = {
    "sgd": {"lr": 0.01, "momentum": 0.0, "weight_decay": 0.0},
    "adam": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
             "weight_decay": 0.0},
    "adamw": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
              "weight_decay": 0.01},
    "adagrad": {"lr": 0.01, "lr_decay": 0.0, "eps": 1e-10,
                "weight_decay": 0.0},
}
_SHARED_KEYS = {"warmup": 0, "schedule": "none", "total_steps": 0}


class OptimizerConfig:
    """Parsed optimizer settings: name, hyperparameters, lr schedule."""

    def __init__(self, name, options, warmup_steps, schedule, total_steps):
        self.name = name
        self.options = options
        self.warmup_steps = warmup_steps
        self.schedule = schedule
        self.total_steps = total_steps

    @property
    def lr(self):
        return self.options["lr"]


def parse_optimizer(spec):
    """Parse an optimizer spec string into an OptimizerConfig."""
    parts = [p.strip() for p in spec.split(",")]
    name = parts[0]
    if name not in _DEFAULTS:
        raise ParseError("unknown optimizer %r (choose from %s)"
                         % (name, ", ".join(sorted(_DEFAULTS))))
    options = dict(_DEFAULTS[name])
    shared = dict(_SHARED_KEYS)
    for pair in parts[1:]:
        if not pair:
            raise ParseError("empty option in optimizer spec %r" % (spec,))
        if "=" not in pair:
            raise ParseError("malformed optimizer option %r" % (pair,))
        key, value = pair.split("=", 1)
        key = key.strip()
        value = value.strip()
        if key == "schedule":
            if value not in SCHEDULES:
                raise ParseError("unknown schedule %r" % (value,))
            shared["schedule"] = value
            continue
        if key in ("warmup", "warmup_steps", "total_steps"):
            try:
                shared["warmup" if key != "total_steps" else "total_steps"] = \
                    int(value)
            except ValueError:
                raise ParseError("non-integer value for %r: %r" % (key, value))
            continue
        if key not in options:
            raise ParseError("unknown option %r for optimizer %r" % (key, name))
        try:
            options[key] = float(value)
        except ValueError:
            raise ParseError("non-numeric value for %r: %r" % (key, value))
    if options["lr"] <= 0:
        raise ParseError("learning rate must be positive")
    if shared["warmup"] < 0:
        raise ParseError("warmup must be >= 0")
    if shared["schedule"] == "cosine" and shared["total_steps"] <= 0:
        raise ParseError("cosine schedule requires total_steps=N")
    return OptimizerConfig(name, options, shared["warmup"],
                           shared["schedule"], shared["total_steps"])


def effective_lr(step, config):
    """Learning rate at optimizer update `step` (1-based).

    Linear warmup to the base lr over warmup_steps, then the schedule:
    constant, inverse square root (lr * sqrt(warmup/step)), or a half
    cosine decaying to zero at total_steps.  All schedules are
    continuous at step = warmup_steps.
    """
    lr = config.lr
    warmup = config.warmup_steps
    if warmup > 0 and step <= warmup:
        return lr * step / warmup
    if config.schedule == "none":
        return lr
    if config.schedule == "inverse_sqrt":
        return lr * np.sqrt(max(warmup, 1) / step)
    total = config.total_steps
    if step >= total:
        return 0.0
    progress = (step - warmup) / (total - warmup)
    return lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def clip_gradients(parameters, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the scaling factor applied (1.0 when no clipping happened).
    """
    if max_norm is None or max_norm <= 0:
        return 1.0
    total = 0.0
    for p in parameters:
        g = p.grad
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in parameters:
        p.grad *= scale
    return scale


class Optimizer:
    """Parameter update rules with per-parameter moment state.

    step() consumes the populated gradient accumulators, applies one
    update with the scheduled learning rate, and zeroes the gradients.
    The update counter t equals the number of optimizer steps performed,
    which under gradient accumulation is smaller than the batch count.
    """

    def __init__(self, config):
        self.config = config
        self.t = 0
        self.state = {}

    def _slot(self, param, key):
        slots = self.state.setdefault(param.name, {})
        if key not in slots:
            slots[key] = np.zeros_like(param.data)
        return slots[key]

    def step(self, parameters):
        self.t += 1
        lr = effective_lr(self.t, self.config)
        o = self.config.options
        name = self.config.name
        for p in parameters:
            g = p.grad
            if name == "sgd":
                if o["weight_decay"] > 0:
                    g = g + o["weight_decay"] * p.data
                if o["momentum"] > 0:
                    v = self._slot(p, "v")
                    v *= o["momentum"]
                    v += g
                    g = v
                p.data -= lr * g
            elif name in ("adam", "adamw"):
                if name == "adamw":
                    p.data *= 1.0 - lr * o["weight_decay"]
                elif o["weight_decay"] > 0:
                    g = g + o["weight_decay"] * p.data
                m = self._slot(p, "m")
                v = self._slot(p, "v")
                m *= o["beta1"]
                m += (1.0 - o["beta1"]) * g
                v *= o["beta2"]
                v += (1.0 - o["beta2"]) * (g * g)
                mhat = m / (1.0 - o["beta1"] ** self.t)
                vhat = v / (1.0 - o["beta2"] ** self.t)
                p.data -= lr * mhat / (np.sqrt(vhat) + o["eps"])
            elif name == "adagrad":
                if o["weight_decay"] > 0:
                    g = g + o["weight_decay"] * p.data
                acc = self._slot(p, "acc")
                acc += g * g
                lr_t = lr / (1.0 + (self.t - 1) * o["lr_decay"])
                p.data -= lr_t * g / (np.sqrt(acc) + o["eps"])
        parameters.zero_grads()
        return lr

    def get_state(self):
        # copies: moments are updated in place, so handing out live
        # arrays would let a later step() mutate a saved snapshot
        return {
            "t": self.t,
            "slots": {name: {k: v.copy() for k, v in slots.items()}
                      for name, slots in self.state.items()},
        }

    def set_state(self, state):
        self.t = state["t"]
        self.state = {name: {k: np.array(v, dtype=np.float64)
                             for k, v in slots.items()}
                      for name, slots in state["slots"].items()}
