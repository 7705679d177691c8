import numpy as np
import numpy.testing as npt
import pytest

from frpose import ops
from frpose.blocks import (BasicBlock, BottleneckBlock, DecoderBlock,
                           EncoderStem, GlobalContextBlock, ResStage)
from frpose.fusion import MultiScaleFusion
from frpose.tensor import Graph, ShapeError, Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


class TestEncoderBlocks:
    def test_stem_reduces_by_4(self):
        stem = EncoderStem(16, rng()).eval()
        y = stem(Tensor(np.zeros((2, 3, 64, 48), np.float32)))
        assert y.shape == (2, 16, 16, 12)

    def test_basic_block_identity_shortcut_geometry(self):
        blk = BasicBlock(8, 8, stride=1, rng=rng()).eval()
        assert blk.proj_conv is None
        y = blk(Tensor(np.zeros((1, 8, 10, 10), np.float32)))
        assert y.shape == (1, 8, 10, 10)

    def test_basic_block_downsamples_with_projection(self):
        blk = BasicBlock(8, 16, stride=2, rng=rng()).eval()
        assert blk.proj_conv is not None
        y = blk(Tensor(np.zeros((1, 8, 10, 10), np.float32)))
        assert y.shape == (1, 16, 5, 5)

    def test_bottleneck_expands_by_4(self):
        blk = BottleneckBlock(16, 8, stride=2, rng=rng()).eval()
        y = blk(Tensor(np.zeros((1, 16, 8, 8), np.float32)))
        assert y.shape == (1, 32, 4, 4)

    def test_stage_stacks_blocks(self):
        stage = ResStage(8, 16, num_blocks=3, stride=2, block="basic",
                         rng=rng()).eval()
        assert len(stage.blocks) == 3
        assert stage.out_channels == 16
        y = stage(Tensor(np.zeros((1, 8, 16, 16), np.float32)))
        assert y.shape == (1, 16, 8, 8)

    def test_unknown_block_type_rejected(self):
        with pytest.raises(ValueError):
            ResStage(8, 16, 1, 1, "dense", rng())


class TestGlobalContextBlock:
    def test_identity_at_build_time(self):
        gcb = GlobalContextBlock(12, ratio=4, rng=rng(1)).eval()
        x = Tensor(rng(2).standard_normal((3, 12, 5, 7)).astype(np.float32))
        out = gcb(x)
        npt.assert_allclose(out.enhanced.data, x.data, atol=1e-7)

    def test_attention_logits_shape_and_rawness(self):
        gcb = GlobalContextBlock(6, ratio=2, rng=rng(3)).eval()
        x = Tensor(rng(4).standard_normal((2, 6, 4, 4)).astype(np.float32))
        out = gcb(x)
        assert out.attention_logits.shape == (2, 1, 4, 4)
        # raw scores, not a distribution: spatial sums differ from 1
        sums = out.attention_logits.data.sum(axis=(2, 3))
        assert not np.allclose(sums, 1.0)

    def test_pooling_matches_explicit_position_loop(self):
        # independent route: per-sample softmax + weighted sum, all in loops
        g = GlobalContextBlock(5, ratio=1, rng=rng(5)).eval()
        g.expand.weight.data = rng(6).standard_normal(
            g.expand.weight.shape).astype(np.float32) * 0.1
        x = rng(7).standard_normal((2, 5, 3, 4)).astype(np.float32)
        got = g(Tensor(x)).enhanced.data

        sw = g.score.weight.data[0, :, 0, 0]
        expected = np.empty_like(x)
        for n in range(2):
            scores = np.zeros((3, 4))
            for i in range(3):
                for j in range(4):
                    scores[i, j] = (x[n, :, i, j] * sw).sum()
            w = np.exp(scores - scores.max())
            w /= w.sum()
            ctx = np.zeros(5)
            for i in range(3):
                for j in range(4):
                    ctx += w[i, j] * x[n, :, i, j]
            # bottleneck transform on the pooled vector
            sq = g.squeeze.weight.data[:, :, 0, 0] @ ctx + \
                g.squeeze.bias.data[0, :, 0, 0]
            mu, var = sq.mean(), sq.var()
            ln = g.norm.gamma.data[0, :, 0, 0] * (sq - mu) / np.sqrt(var + 1e-5) \
                + g.norm.beta.data[0, :, 0, 0]
            ln = np.maximum(ln, 0.0)
            t = g.expand.weight.data[:, :, 0, 0] @ ln + \
                g.expand.bias.data[0, :, 0, 0]
            expected[n] = x[n] + t[:, None, None]
        npt.assert_allclose(got, expected, rtol=1e-4, atol=1e-5)

    def test_constant_input_context_equals_channel_values(self):
        gcb = GlobalContextBlock(4, ratio=2, rng=rng(8)).eval()
        x_vals = np.array([1.0, -2.0, 0.5, 3.0], dtype=np.float32)
        x = Tensor(np.broadcast_to(x_vals.reshape(1, 4, 1, 1),
                                   (1, 4, 6, 6)).copy())
        weights = ops.softmax_spatial(gcb.score(x))
        ctx = ops.sum_spatial(ops.mul(x, weights))
        npt.assert_allclose(ctx.data.ravel(), x_vals, rtol=1e-5)


class TestDecoderBlock:
    def test_doubles_resolution(self):
        dec = DecoderBlock(8, 4, rng(9)).eval()
        y = dec(Tensor(np.zeros((1, 8, 5, 6), np.float32)))
        assert y.shape == (1, 4, 10, 12)

    def test_lateral_fusion_keeps_out_channels(self):
        dec = DecoderBlock(8, 4, rng(10), skip_channels=3).eval()
        y = dec(Tensor(np.zeros((1, 8, 5, 5), np.float32)),
                Tensor(np.zeros((1, 3, 10, 10), np.float32)))
        assert y.shape == (1, 4, 10, 10)

    def test_skip_without_fusion_path_rejected(self):
        dec = DecoderBlock(8, 4, rng(11)).eval()
        with pytest.raises(ValueError):
            dec(Tensor(np.zeros((1, 8, 5, 5), np.float32)),
                Tensor(np.zeros((1, 3, 10, 10), np.float32)))


class TestMultiScaleFusion:
    def _feature_ladder(self, seed=12, n=2, h=8, w=8):
        r = rng(seed)
        chans = (4, 6, 8)
        feats = [Tensor(r.standard_normal((n, c, h >> i, w >> i))
                        .astype(np.float32)) for i, c in enumerate(chans)]
        atts = [Tensor(r.standard_normal((n, 1, h >> i, w >> i))
                       .astype(np.float32)) for i in range(3)]
        return chans, feats, atts

    def test_collect_produces_finest_resolution(self):
        chans, feats, atts = self._feature_ladder()
        fusion = MultiScaleFusion(chans, 5, rng(13)).eval()
        out = fusion.collect(feats, atts)
        assert out.shape == (2, 5, 8, 8)

    def test_sigmoid_gate_bounds_the_output(self):
        chans, feats, atts = self._feature_ladder(14)
        fusion = MultiScaleFusion(chans, 5, rng(15), gate="sigmoid").eval()
        out = fusion.collect(feats, atts)
        # |gated| can never exceed |fused|, and the fused map is ReLU-ed
        assert out.data.min() >= 0.0

    def test_broken_ladder_rejected(self):
        chans, feats, atts = self._feature_ladder(16)
        feats[2] = Tensor(np.zeros((2, 8, 3, 3), np.float32))
        fusion = MultiScaleFusion(chans, 5, rng(17))
        with pytest.raises(ShapeError, match="ladder"):
            fusion.collect(feats, atts)

    def test_distribute_identity_at_stride_4(self):
        fusion = MultiScaleFusion((4, 6, 8), 5, rng(18))
        refined = Tensor(np.ones((1, 5, 8, 8), np.float32))
        assert fusion.distribute(refined, 4) is refined

    def test_distribute_resamples_to_each_decoder_stride(self):
        fusion = MultiScaleFusion((4, 6, 8), 5, rng(19))
        refined = Tensor(np.ones((1, 5, 8, 6), np.float32))
        assert fusion.distribute(refined, 8).shape == (1, 5, 4, 3)
        assert fusion.distribute(refined, 2).shape == (1, 5, 16, 12)
        with pytest.raises(ShapeError):
            fusion.distribute(refined, 16)

    def test_gate_gradients_flow_to_attention_inputs(self):
        chans, feats, atts = self._feature_ladder(20)
        for t in feats + atts:
            t.requires_grad = True
        fusion = MultiScaleFusion(chans, 5, rng(21)).train()
        with Graph() as g:
            out = fusion.collect(feats, atts)
            g.backward(out, seed=np.ones(out.shape, np.float32))
        for t in feats + atts:
            assert t.grad is not None and np.any(t.grad != 0)
