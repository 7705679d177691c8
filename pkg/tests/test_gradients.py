"""Finite-difference verification of every backward pass.

Each test runs in the double-precision context and compares the graph's
accumulated gradients against central differences of a random projection of
the op output (see ``helpers.gradcheck``).  Shapes are small on purpose:
the point is coverage of every code path (strides, paddings, broadcasts),
not throughput.
"""

import numpy as np
import pytest

from frpose import ops
from frpose.layers import BatchNorm2d, ChannelLayerNorm, Conv2d, Deconv2d
from frpose.blocks import BasicBlock, DecoderBlock, GlobalContextBlock
from frpose.tensor import Tensor, precision

from helpers import gradcheck, make_tensor


@pytest.fixture(autouse=True)
def _double_precision():
    with precision("double"):
        yield


rng = np.random.default_rng


class TestPrimitiveGradients:
    @pytest.mark.parametrize("stride,padding,kernel", [
        (1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 3, 7), (1, 0, 1), (3, 1, 2),
    ])
    def test_conv2d(self, stride, padding, kernel):
        r = rng(10 * stride + padding + kernel)
        x = make_tensor(r, 2, 3, 7, 6)
        w = make_tensor(r, 4, 3, kernel, kernel)
        b = make_tensor(r, 1, 4, 1, 1)
        gradcheck(lambda x_, w_, b_: ops.conv2d(x_, w_, b_, stride=stride,
                                                padding=padding),
                  [x, w, b], r)

    @pytest.mark.parametrize("stride,padding,extra", [
        (2, 1, 0), (2, 1, 1), (1, 0, 0), (3, 2, 2),
    ])
    def test_deconv2d(self, stride, padding, extra):
        r = rng(20 + stride + padding + extra)
        x = make_tensor(r, 2, 3, 4, 5)
        w = make_tensor(r, 3, 2, 4, 4)
        gradcheck(lambda x_, w_: ops.deconv2d(x_, w_, stride=stride,
                                              padding=padding,
                                              output_padding=extra),
                  [x, w], r)

    def test_batch_norm_train_mode(self):
        r = rng(30)
        x = make_tensor(r, 3, 4, 5, 5, scale=2.0, offset=0.5)
        gamma = make_tensor(r, 1, 4, 1, 1, offset=1.0, scale=0.2)
        beta = make_tensor(r, 1, 4, 1, 1)
        rm, rv = np.zeros(4), np.ones(4)
        gradcheck(lambda x_, g_, b_: ops.batch_norm(x_, g_, b_, rm, rv,
                                                    training=True),
                  [x, gamma, beta], r)

    def test_batch_norm_eval_mode(self):
        r = rng(31)
        x = make_tensor(r, 2, 3, 4, 4)
        gamma = make_tensor(r, 1, 3, 1, 1, offset=1.0, scale=0.2)
        beta = make_tensor(r, 1, 3, 1, 1)
        rm = r.standard_normal(3)
        rv = r.uniform(0.5, 2.0, 3)
        gradcheck(lambda x_, g_, b_: ops.batch_norm(x_, g_, b_, rm, rv,
                                                    training=False),
                  [x, gamma, beta], r)

    def test_layer_norm_channels(self):
        r = rng(32)
        x = make_tensor(r, 3, 8, 1, 1, scale=2.0)
        gamma = make_tensor(r, 1, 8, 1, 1, offset=1.0, scale=0.2)
        beta = make_tensor(r, 1, 8, 1, 1)
        gradcheck(ops.layer_norm_channels, [x, gamma, beta], r)

    def test_relu(self):
        r = rng(33)
        # keep samples away from the kink, where the subgradient convention
        # and the finite difference legitimately disagree
        x = make_tensor(r, 2, 3, 5, 5)
        x.data[np.abs(x.data) < 1e-3] += 0.1
        gradcheck(ops.relu, [x], r)

    def test_sigmoid(self):
        r = rng(34)
        gradcheck(ops.sigmoid, [make_tensor(r, 2, 2, 3, 3, scale=3.0)], r)

    def test_softmax_spatial(self):
        r = rng(35)
        gradcheck(ops.softmax_spatial, [make_tensor(r, 2, 1, 4, 5, scale=2.0)], r)

    @pytest.mark.parametrize("out_h,out_w", [(8, 10), (3, 2), (5, 6), (12, 3)])
    def test_bilinear_resize(self, out_h, out_w):
        r = rng(36 + out_h)
        x = make_tensor(r, 2, 2, 5, 6)
        gradcheck(lambda x_: ops.bilinear_resize(x_, out_h, out_w), [x], r)

    def test_concat_channels(self):
        r = rng(37)
        a, b, c = (make_tensor(r, 2, k, 3, 3) for k in (1, 2, 3))
        gradcheck(lambda *ts: ops.concat_channels(ts), [a, b, c], r)

    @pytest.mark.parametrize("op", ["add", "mul"])
    @pytest.mark.parametrize("b_shape", [(2, 3, 4, 4), (2, 3, 1, 1),
                                         (1, 3, 1, 1), (1, 1, 4, 4)])
    def test_elementwise_broadcasts(self, op, b_shape):
        r = rng(38)
        a = make_tensor(r, 2, 3, 4, 4)
        b = make_tensor(r, *b_shape)
        gradcheck(lambda a_, b_: ops.elementwise(a_, b_, op), [a, b], r)

    def test_sum_spatial(self):
        r = rng(39)
        gradcheck(ops.sum_spatial, [make_tensor(r, 2, 3, 4, 5)], r)

    def test_max_pool2d(self):
        r = rng(40)
        x = make_tensor(r, 2, 2, 6, 6)
        gradcheck(lambda x_: ops.max_pool2d(x_, kernel=3, stride=2, padding=1),
                  [x], r)

    def test_weighted_mse(self):
        r = rng(41)
        pred = make_tensor(r, 2, 3, 4, 4)
        target = make_tensor(r, 2, 3, 4, 4)
        w = r.uniform(0.0, 2.0, (2, 3))
        for reduction in ("mean", "sum"):
            gradcheck(lambda p, t: ops.weighted_mse(p, t, w, reduction=reduction),
                      [pred, target], r)


class TestCompositeGradients:
    """End-to-end chains exercising accumulation across shared tensors."""

    def test_conv_bn_relu_chain(self):
        r = rng(50)
        conv = Conv2d(3, 4, 3, r, stride=2, padding=1, bias=False)
        bn = BatchNorm2d(4)
        x = make_tensor(r, 2, 3, 6, 6)
        params = [conv.weight, bn.gamma, bn.beta]
        gradcheck(lambda x_, *_: ops.relu(bn(conv(x_))), [x] + params, r)

    def test_deconv_bn_relu_chain(self):
        r = rng(51)
        deconv = Deconv2d(3, 2, 4, r, stride=2, padding=1)
        bn = BatchNorm2d(2)
        x = make_tensor(r, 2, 3, 3, 3)
        gradcheck(lambda x_, *_: ops.relu(bn(deconv(x_))),
                  [x, deconv.weight, bn.gamma, bn.beta], r)

    def test_residual_block(self):
        r = rng(52)
        block = BasicBlock(3, 4, stride=2, rng=r)
        x = make_tensor(r, 2, 3, 6, 6)
        params = [p for _, p in block.named_parameters()]
        gradcheck(lambda x_, *_: block(x_), [x] + params, r)

    def test_global_context_block(self):
        r = rng(53)
        gcb = GlobalContextBlock(6, ratio=2, rng=r)
        # randomize the zero-initialized projection so every parameter is live
        gcb.expand.weight.data = r.standard_normal(gcb.expand.weight.shape) * 0.3
        x = make_tensor(r, 2, 6, 3, 4)
        params = [p for _, p in gcb.named_parameters()]
        gradcheck(lambda x_, *_: gcb(x_).enhanced, [x] + params, r)

    def test_decoder_block_with_lateral_fusion(self):
        r = rng(54)
        dec = DecoderBlock(4, 3, r, skip_channels=2)
        x = make_tensor(r, 2, 4, 3, 3)
        skip = make_tensor(r, 2, 2, 6, 6)
        params = [p for _, p in dec.named_parameters()]
        gradcheck(lambda x_, s_, *_: dec(x_, s_), [x, skip] + params, r)

    def test_loss_through_resize_and_softmax(self):
        r = rng(55)
        x = make_tensor(r, 1, 1, 4, 4, scale=2.0)
        target = Tensor(r.standard_normal((1, 1, 8, 8)))
        w = np.ones((1, 1))

        def fn(x_):
            up = ops.bilinear_resize(ops.softmax_spatial(x_), 8, 8)
            return ops.weighted_mse(up, target, w)

        gradcheck(fn, [x], r)
