"""Finite-difference checks for every differentiable op and composed chains.

Every analytic backward pass is held against a central-difference probe; the
tolerances here are the contract the training code relies on.
"""

import numpy as np
import pytest

from fusemod import autograd as ag

TOL = 1e-4


def _t(shape, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return ag.tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def test_conv_plain():
    x = _t((1, 2, 4, 4), 0)
    w = _t((3, 2, 3, 3), 1)
    b = _t((3,), 2)
    assert ag.grad_check(lambda v: ag.conv2d(v[0], v[1], v[2], pad=1), [x, w, b]) < TOL


def test_conv_strided_grouped():
    x = _t((2, 4, 8, 8), 3)
    w = _t((6, 2, 3, 3), 4)
    fn = lambda v: ag.conv2d(v[0], v[1], stride=2, pad=1, groups=2)
    assert ag.grad_check(fn, [x, w]) < TOL


def test_conv_depthwise():
    x = _t((2, 3, 6, 6), 5)
    w = _t((3, 1, 3, 3), 6)
    assert ag.grad_check(lambda v: ag.conv2d(v[0], v[1], stride=2, pad=1, groups=3), [x, w]) < TOL


def test_conv_1x1():
    x = _t((2, 4, 5, 5), 7)
    w = _t((8, 4, 1, 1), 8)
    assert ag.grad_check(lambda v: ag.conv2d(v[0], v[1]), [x, w]) < TOL


def test_tconv_k4s2():
    x = _t((1, 3, 4, 5), 9)
    w = _t((3, 2, 4, 4), 10)
    assert ag.grad_check(lambda v: ag.transposed_conv2d(v[0], v[1], stride=2, pad=1), [x, w]) < TOL


def test_tconv_k2s2():
    x = _t((2, 2, 3, 3), 11)
    w = _t((2, 2, 2, 2), 12)
    assert ag.grad_check(lambda v: ag.transposed_conv2d(v[0], v[1], stride=2), [x, w]) < TOL


def test_batch_norm_training_mode():
    x = _t((2, 3, 4, 4), 13)
    gamma = _t((3,), 14)
    beta = _t((3,), 15)
    state = ag.BNState.fresh(3)

    def fn(v):
        return ag.batch_norm(v[0], v[1], v[2], state, training=True, update_running=False)

    assert ag.grad_check(fn, [x, gamma, beta]) < TOL


def test_batch_norm_eval_mode():
    x = _t((2, 3, 4, 4), 16)
    gamma = _t((3,), 17)
    beta = _t((3,), 18)
    state = ag.BNState(np.array([0.1, -0.2, 0.3]), np.array([1.5, 0.7, 2.0]))
    fn = lambda v: ag.batch_norm(v[0], v[1], v[2], state, training=False)
    assert ag.grad_check(fn, [x, gamma, beta]) < TOL


def test_relu_away_from_kink():
    rng = np.random.default_rng(19)
    data = rng.normal(size=(2, 3, 5, 5))
    data += np.sign(data) * 0.5  # keep coordinates clear of the h=1e-5 stencil
    x = ag.tensor(data, requires_grad=True)
    assert ag.grad_check(lambda v: ag.relu(v[0]), [x]) < 1e-7


def test_maxpool():
    x = _t((2, 2, 6, 7), 20)
    assert ag.grad_check(lambda v: ag.maxpool(v[0]), [x]) < TOL


def test_avgpool():
    x = _t((2, 2, 6, 7), 21)
    assert ag.grad_check(lambda v: ag.avgpool(v[0]), [x]) < TOL


def test_channel_shuffle():
    x = _t((2, 6, 4, 4), 22)
    assert ag.grad_check(lambda v: ag.channel_shuffle(v[0], 3), [x]) < TOL


def test_concat_and_add():
    a = _t((1, 2, 4, 4), 23)
    b = _t((1, 3, 4, 4), 24)
    c = _t((1, 5, 4, 4), 25)
    fn = lambda v: ag.add(ag.concat_channels([v[0], v[1]]), v[2])
    assert ag.grad_check(fn, [a, b, c]) < TOL


def test_crop():
    x = _t((2, 2, 5, 6), 39)
    assert ag.grad_check(lambda v: ag.crop_hw(v[0], 3, 5), [x]) < TOL


def test_weighted_cross_entropy():
    logits = _t((2, 2, 4, 4), 26)
    rng = np.random.default_rng(27)
    target = rng.integers(0, 2, size=(2, 4, 4))
    weights = np.array([1.0, 7.3])
    fn = lambda v: ag.weighted_cross_entropy(v[0], target, weights)
    assert ag.grad_check(fn, [logits]) < TOL


def test_encoder_decoder_chain():
    # conv -> bn -> relu -> tconv, the smallest end-to-end shape the decoder uses
    x = _t((1, 2, 6, 6), 28)
    w1 = _t((4, 2, 3, 3), 29, scale=0.5)
    gamma = _t((4,), 30)
    beta = _t((4,), 31)
    w2 = _t((4, 2, 4, 4), 32, scale=0.5)
    state = ag.BNState.fresh(4)

    def fn(v):
        h = ag.conv2d(v[0], v[1], stride=2, pad=1)
        h = ag.batch_norm(h, v[2], v[3], state, training=True, update_running=False)
        h = ag.relu(h)
        return ag.transposed_conv2d(h, v[4], stride=2, pad=1)

    assert ag.grad_check(fn, [x, w1, gamma, beta, w2]) < TOL


def test_shuffle_unit_shaped_chain():
    # grouped 1x1 -> shuffle -> depthwise stride 2 -> concat with pooled shortcut
    x = _t((1, 4, 8, 8), 33)
    w1 = _t((8, 2, 1, 1), 34, scale=0.5)
    w2 = _t((8, 1, 3, 3), 35, scale=0.5)

    def fn(v):
        h = ag.relu(ag.conv2d(v[0], v[1], groups=2))
        h = ag.channel_shuffle(h, 2)
        h = ag.conv2d(h, v[2], stride=2, pad=1, groups=8)
        return ag.concat_channels([ag.avgpool(v[0]), h])

    assert ag.grad_check(fn, [x, w1, w2]) < TOL


def test_grad_check_catches_broken_backward():
    # sanity check on the checker itself: a wrong backward must not pass
    x = _t((2, 3, 4, 4), 36)

    def broken_scale(v):
        inp = v[0]
        out_data = inp.data * 2.0
        return ag.result(out_data, (inp,), lambda go: (go * 3.0,))

    assert ag.grad_check(broken_scale, [x]) > 0.1


def test_grad_check_subsamples_large_inputs():
    # 2*8*8*8 = 1024 coordinates, above the 200-sample cap; still accurate
    x = _t((2, 8, 8, 8), 37)
    w = _t((8, 8, 1, 1), 38, scale=0.3)
    assert ag.grad_check(lambda v: ag.conv2d(v[0], v[1]), [x, w]) < TOL
