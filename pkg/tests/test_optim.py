"""Optimizer spec parsing, schedules, clipping, and update rules."""

import numpy as np
import pytest

from arithseq.errors import ParseError
from arithseq.model.params import Parameters
from arithseq.optim import (
    Optimizer,
    clip_gradients,
    effective_lr,
    parse_optimizer,
)


def make_params(values):
    params = Parameters()
    for i, v in enumerate(values):
        params.new("p%d" % i, np.array(v, dtype=np.float64))
    return params


# ---------------------------------------------------------------------------
# parsing


def test_parse_name_and_options():
    cfg = parse_optimizer("adam,lr=1e-4,beta1=0.8")
    assert cfg.name == "adam"
    assert cfg.lr == 1e-4
    assert cfg.options["beta1"] == 0.8
    assert cfg.options["beta2"] == 0.999  # untouched default
    assert cfg.warmup_steps == 0
    assert cfg.schedule == "none"


def test_parse_warmup_and_schedules():
    cfg = parse_optimizer("adam,lr=1e-3,warmup=4000,schedule=inverse_sqrt")
    assert cfg.warmup_steps == 4000
    assert cfg.schedule == "inverse_sqrt"
    cfg = parse_optimizer("sgd,lr=0.1,schedule=cosine,total_steps=100")
    assert cfg.schedule == "cosine" and cfg.total_steps == 100
    # warmup_steps is accepted as an alias for warmup
    assert parse_optimizer("adam,warmup_steps=7").warmup_steps == 7


@pytest.mark.parametrize("bad", [
    "rmsprop,lr=0.1",          # unknown optimizer
    "adam,lr",                 # missing value
    "adam,lr=abc",             # non-numeric
    "adam,bogus=1",            # unknown option
    "adam,lr=0",               # non-positive lr
    "adam,lr=1e-4,,",          # empty option
    "adam,schedule=linear",    # unknown schedule
    "adam,warmup=x",           # non-integer warmup
    "adam,schedule=cosine",    # cosine without total_steps
])
def test_parse_rejects(bad):
    with pytest.raises(ParseError):
        parse_optimizer(bad)


# ---------------------------------------------------------------------------
# schedules


def test_warmup_is_linear_then_flat():
    cfg = parse_optimizer("adam,lr=1e-2,warmup=10")
    for step in range(1, 11):
        assert effective_lr(step, cfg) == pytest.approx(1e-2 * step / 10)
    assert effective_lr(11, cfg) == 1e-2
    assert effective_lr(1000, cfg) == 1e-2


def test_inverse_sqrt_continuous_at_warmup_boundary():
    cfg = parse_optimizer("adam,lr=1e-3,warmup=100,schedule=inverse_sqrt")
    assert effective_lr(100, cfg) == pytest.approx(1e-3)
    assert effective_lr(101, cfg) == pytest.approx(1e-3 * np.sqrt(100 / 101))
    assert effective_lr(400, cfg) == pytest.approx(1e-3 / 2)


def test_cosine_decays_to_zero():
    cfg = parse_optimizer("adam,lr=1e-3,warmup=10,schedule=cosine,"
                          "total_steps=110")
    assert effective_lr(10, cfg) == pytest.approx(1e-3)
    assert effective_lr(60, cfg) == pytest.approx(1e-3 / 2)  # halfway
    assert effective_lr(110, cfg) == 0.0
    assert effective_lr(200, cfg) == 0.0


# ---------------------------------------------------------------------------
# clipping


def test_clip_noop_below_threshold():
    params = make_params([[3.0], [4.0]])
    for p in params:
        p.grad[:] = p.data  # global norm 5
    assert clip_gradients(params, 10.0) == 1.0
    assert params["p0"].grad[0] == 3.0


def test_clip_scales_to_max_norm():
    params = make_params([[3.0], [4.0]])
    for p in params:
        p.grad[:] = p.data
    scale = clip_gradients(params, 1.0)
    assert scale == pytest.approx(1 / 5)
    total = sum(float((p.grad ** 2).sum()) for p in params)
    assert np.sqrt(total) == pytest.approx(1.0)
    # disabled clipping
    assert clip_gradients(params, 0.0) == 1.0
    assert clip_gradients(params, None) == 1.0


# ---------------------------------------------------------------------------
# update rules


def test_sgd_first_step():
    params = make_params([[1.0, 2.0]])
    params["p0"].grad[:] = np.array([0.5, -0.5])
    opt = Optimizer(parse_optimizer("sgd,lr=0.1"))
    opt.step(params)
    assert np.allclose(params["p0"].data, [0.95, 2.05])
    # gradients are consumed
    assert not params["p0"].grad.any()


def test_adam_first_step_is_lr_sized():
    # with bias correction the first Adam step is almost exactly lr
    params = make_params([[1.0, -1.0, 3.0]])
    params["p0"].grad[:] = np.array([0.3, -2.0, 1e-3])
    opt = Optimizer(parse_optimizer("adam,lr=0.01"))
    opt.step(params)
    moved = np.array([1.0, -1.0, 3.0]) - params["p0"].data
    assert np.allclose(np.abs(moved), 0.01, rtol=1e-4)
    assert np.sign(moved[1]) == -1.0  # against the gradient


def test_adam_matches_reference_two_steps():
    # hand-rolled reference for two updates on a scalar
    g1, g2 = 0.4, -0.2
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    m = v = 0.0
    x = 1.0
    for t, g in ((1, g1), (2, g2)):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x -= lr * mhat / (np.sqrt(vhat) + eps)
    params = make_params([[1.0]])
    opt = Optimizer(parse_optimizer("adam,lr=0.05"))
    params["p0"].grad[:] = g1
    opt.step(params)
    params["p0"].grad[:] = g2
    opt.step(params)
    assert params["p0"].data[0] == pytest.approx(x, rel=1e-12)


def test_adamw_decouples_weight_decay():
    params = make_params([[2.0]])
    params["p0"].grad[:] = 0.0
    opt = Optimizer(parse_optimizer("adamw,lr=0.1,weight_decay=0.5"))
    opt.step(params)
    # zero gradient: only the multiplicative decay applies
    assert params["p0"].data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_adagrad_accumulates():
    params = make_params([[1.0]])
    opt = Optimizer(parse_optimizer("adagrad,lr=0.1,eps=0"))
    params["p0"].grad[:] = 3.0
    opt.step(params)
    # first step: x -= lr * g / sqrt(g^2) = lr
    assert params["p0"].data[0] == pytest.approx(0.9)
    params["p0"].grad[:] = 3.0
    opt.step(params)
    assert params["p0"].data[0] == pytest.approx(0.9 - 0.1 * 3 / np.sqrt(18))


def test_optimizer_state_round_trip():
    params = make_params([[1.0, 2.0]])
    opt = Optimizer(parse_optimizer("adam,lr=0.01"))
    params["p0"].grad[:] = np.array([0.1, -0.1])
    opt.step(params)
    state = opt.get_state()
    params["p0"].grad[:] = np.array([0.2, 0.3])
    opt.step(params)
    after_two = params["p0"].data.copy()

    params2 = make_params([[1.0, 2.0]])
    opt2 = Optimizer(parse_optimizer("adam,lr=0.01"))
    params2["p0"].grad[:] = np.array([0.1, -0.1])
    opt2.step(params2)
    opt3 = Optimizer(parse_optimizer("adam,lr=0.01"))
    opt3.set_state(state)
    assert opt3.t == 1
    params2["p0"].grad[:] = np.array([0.2, 0.3])
    opt3.step(params2)
    assert np.array_equal(params2["p0"].data, after_two)
