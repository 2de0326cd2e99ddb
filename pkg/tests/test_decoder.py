import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from vos3d.core import VideoTensor
from vos3d.decoder import (
    RF3D,
    Bridge,
    DecoderConfig,
    GC3D,
    GC3DConfig,
    LayerSpec,
    bridge_forward,
    decode,
    dense_spatial_param_count,
    effective_receptive_field,
    gc3d_forward,
    gc3d_param_count,
    rf3d_forward,
    upsample_to,
)
from vos3d.encoder import CSNBottleneck, BottleneckSpec, build_encoder, csn_bottleneck_forward, encode
from vos3d.errors import ConfigError, ShapeError
from vos3d.network import build_model, tiny_model_config
from vos3d.verify import finite_difference_gradcheck, footprint_extent, jacobian_footprint

CONV3 = LayerSpec((3, 3, 3))


def gc3d_weights(cin, cout, k, gen=None, dtype=torch.float32):
    def w(shape):
        return torch.randn(shape, generator=gen, dtype=dtype)

    return {
        "a_row": w((cout, cin, 1, k, 1)), "a_col": w((cout, cout, 1, 1, k)),
        "b_col": w((cout, cin, 1, 1, k)), "b_row": w((cout, cout, 1, k, 1)),
    }


def rf3d_weights(c, skip_c, gen=None, dtype=torch.float64, scale=0.3):
    def w(*shape):
        return scale * torch.randn(shape, generator=gen, dtype=dtype)

    return {
        "r1a": w(c, c, 3, 3, 3), "r1b": w(c, c, 3, 3, 3), "r2a": w(c, c, 3, 3, 3), "r2b": w(c, c, 3, 3, 3),
        "adapt": w(c, skip_c, 1, 1, 1),
    }


class TestGC3D:
    def test_param_count_example(self):
        cfg = GC3DConfig(256, 256, 7)
        assert gc3d_param_count(cfg) == 4 * 7 * 256 * 256 == 1_835_008
        assert dense_spatial_param_count(cfg) == 3_211_264
        assert gc3d_param_count(cfg) / dense_spatial_param_count(cfg) == pytest.approx(4 / 7)

    @pytest.mark.parametrize("cin, cout", [(8, 8), (16, 4), (3, 10)])
    def test_param_count_matches_module(self, cin, cout):
        cfg = GC3DConfig(cin, cout, 7)
        assert sum(p.numel() for p in GC3D(cfg).parameters()) == gc3d_param_count(cfg)

    @pytest.mark.parametrize("k, fewer", [(3, False), (5, True), (7, True), (9, True)])
    def test_fewer_than_dense_for_k_above_4(self, k, fewer):
        cfg = GC3DConfig(16, 16, k)
        assert (gc3d_param_count(cfg) < dense_spatial_param_count(cfg)) == fewer

    def test_zero_weights_zero_output(self):
        cfg = GC3DConfig(4, 6, 7)
        w = {n: torch.zeros_like(t) for n, t in gc3d_weights(4, 6, 7).items()}
        out = gc3d_forward(torch.randn(1, 4, 3, 9, 9), cfg, w)
        assert out.shape == (1, 6, 3, 9, 9) and not out.any()

    def test_even_k_rejected(self):
        with pytest.raises(ConfigError):
            GC3DConfig(4, 4, 6)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            gc3d_forward(torch.randn(1, 3, 1, 8, 8), GC3DConfig(4, 4), gc3d_weights(4, 4, 7))

    def test_footprint(self):
        gen = torch.Generator().manual_seed(0)
        cfg = GC3DConfig(3, 3, 7)
        w = gc3d_weights(3, 3, 7, gen, torch.float64)
        x = torch.randn(1, 3, 4, 16, 16, generator=gen, dtype=torch.float64)
        hit = jacobian_footprint(lambda t: gc3d_forward(t, cfg, w), x, (2, 8, 8))
        assert footprint_extent(hit) == (1, 7, 7)
        assert hit[2].sum() == 49 and hit[[0, 1, 3]].sum() == 0

    def test_gradcheck(self):
        gen = torch.Generator().manual_seed(1)
        cfg = GC3DConfig(4, 4, 7)
        w = gc3d_weights(4, 4, 7, gen, torch.float64)
        x = torch.randn(1, 4, 2, 6, 6, generator=gen, dtype=torch.float64)
        assert finite_difference_gradcheck(lambda t: gc3d_forward(t, cfg, w), x, eps=1e-5) <= 1e-4


class TestBridge:
    def test_c3d_delta_kernel_is_identity(self):
        w = torch.zeros(5, 5, 3, 3, 3)
        w[range(5), range(5), 1, 1, 1] = 1
        x = torch.randn(1, 5, 3, 6, 6)
        assert torch.equal(bridge_forward(x, DecoderConfig(bridge="C3D"), {"conv": w}), x)

    def test_gc3d_dispatch_identical(self):
        gen = torch.Generator().manual_seed(0)
        w = gc3d_weights(4, 6, 7, gen)
        x = torch.randn(1, 4, 2, 8, 8, generator=gen)
        out = bridge_forward(x, DecoderConfig(), w)
        assert torch.equal(out, gc3d_forward(x, GC3DConfig(4, 6, 7), w))

    @pytest.mark.parametrize("variant, extent", [("C3D", (3, 3, 3)), ("GC3D", (1, 7, 7))])
    def test_footprints(self, variant, extent):
        torch.manual_seed(0)
        cfg = DecoderConfig(bridge=variant, channels=(4, 4, 4, 4))
        bridge = Bridge(cfg, 3).double()
        x = torch.randn(1, 3, 5, 12, 12, dtype=torch.float64)
        w = bridge.weights()
        hit = jacobian_footprint(lambda t: bridge_forward(t, cfg, w), x, (2, 6, 6))
        assert footprint_extent(hit) == extent
        assert effective_receptive_field(bridge.layer_chain()) == extent

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            DecoderConfig(bridge="ASPP")


class TestRF3D:
    def test_zero_weights_reduce_to_upsample(self):
        w = {n: torch.zeros_like(t) for n, t in rf3d_weights(4, 6, dtype=torch.float32).items()}
        x, skip = torch.randn(1, 4, 1, 7, 7), torch.randn(1, 6, 2, 14, 14)
        up = F.interpolate(x, size=(2, 14, 14), mode="trilinear", align_corners=False)
        assert torch.equal(rf3d_forward(x, skip, w, (2, 2, 2)), up)

    def test_zero_convs_add_adapted_skip(self):
        w = {n: torch.zeros_like(t) for n, t in rf3d_weights(4, 6, dtype=torch.float32).items()}
        w["adapt"] = torch.randn(4, 6, 1, 1, 1)
        x, skip = torch.randn(1, 4, 1, 7, 7), torch.randn(1, 6, 2, 14, 14)
        want = upsample_to(x, (2, 14, 14)) + F.conv3d(skip, w["adapt"])
        torch.testing.assert_close(rf3d_forward(x, skip, w), want)

    def test_shape(self):
        block = RF3D(8, 12, 8).eval()
        out = block(torch.randn(1, 8, 1, 7, 7), torch.randn(1, 12, 2, 14, 14), (2, 2, 2))
        assert out.shape == (1, 8, 2, 14, 14)

    def test_width_change_uses_reduce(self):
        block = RF3D(16, 12, 8).eval()
        assert "reduce" in block.convs
        assert block(torch.randn(1, 16, 2, 4, 4), torch.randn(1, 12, 2, 8, 8)).shape == (1, 8, 2, 8, 8)

    def test_bad_ratio(self):
        with pytest.raises(ShapeError):
            rf3d_forward(torch.randn(1, 4, 1, 7, 7), torch.randn(1, 6, 2, 15, 14), rf3d_weights(4, 6, dtype=torch.float32))

    def test_gradcheck_both_inputs(self):
        gen = torch.Generator().manual_seed(2)
        w = rf3d_weights(3, 2, gen)
        x = torch.randn(1, 3, 1, 4, 4, generator=gen, dtype=torch.float64)
        skip = torch.randn(1, 2, 2, 8, 8, generator=gen, dtype=torch.float64)
        assert finite_difference_gradcheck(lambda t: rf3d_forward(t, skip, w), x, eps=1e-5) <= 1e-4
        assert finite_difference_gradcheck(lambda s: rf3d_forward(x, s, w), skip, eps=1e-5) <= 1e-4

    def test_receptive_field_contains_footprint(self):
        gen = torch.Generator().manual_seed(3)
        w = rf3d_weights(2, 2, gen)
        x = torch.randn(1, 2, 6, 8, 8, generator=gen, dtype=torch.float64)
        skip = torch.zeros(1, 2, 12, 16, 16, dtype=torch.float64)
        chain = [CONV3, CONV3, LayerSpec(upsample=(2, 2, 2)), CONV3, CONV3]
        erf = effective_receptive_field(chain)
        assert erf == (8, 8, 8)
        hit = jacobian_footprint(lambda t: rf3d_forward(t, skip, w), x, (6, 8, 8))
        ext = footprint_extent(hit)
        assert all(e <= r for e, r in zip(ext, erf))
        assert ext[1] >= erf[1] - 1  # relu may hide at most the outermost ring


@pytest.mark.parametrize("value", [0.0, -1.5, 3.25])
def test_upsample_constant(value):
    x = torch.full((1, 2, 2, 3, 5), value)
    out = upsample_to(x, (4, 12, 20), (2, 4, 4))
    assert torch.equal(out, torch.full_like(out, value))


class TestReceptiveField:
    @pytest.mark.parametrize(
        "chain, want",
        [
            ([CONV3], (3, 3, 3)),
            ([LayerSpec((1, 7, 1)), LayerSpec((1, 1, 7))], (1, 7, 7)),
            ([CONV3, CONV3], (5, 5, 5)),
            ([LayerSpec((3, 3, 3), stride=(1, 2, 2)), CONV3], (5, 7, 7)),
        ],
    )
    def test_examples(self, chain, want):
        assert effective_receptive_field(chain) == want

    def test_stacked_convs_match_probe(self):
        torch.manual_seed(0)
        w1, w2 = torch.randn(2, 2, 3, 3, 3, dtype=torch.float64), torch.randn(2, 2, 3, 3, 3, dtype=torch.float64)

        def fn(t):
            return F.conv3d(F.conv3d(t, w1, padding=1), w2, padding=1)

        hit = jacobian_footprint(fn, torch.randn(1, 2, 9, 9, 9, dtype=torch.float64), (4, 4, 4))
        assert footprint_extent(hit) == effective_receptive_field([CONV3, CONV3])

    @pytest.mark.parametrize("stride", [1, 2])
    def test_bottleneck_chain_matches_probe(self, stride):
        torch.manual_seed(0)
        block = CSNBottleneck(BottleneckSpec(4, 4, 8, spatial_stride=stride)).double().eval()
        x = torch.randn(1, 4, 5, 12, 12, dtype=torch.float64)
        w = block.weights()

        def linear(t):
            return csn_bottleneck_forward(t, block.spec, w, activation=lambda v: v)

        c = 6 // stride
        hit = jacobian_footprint(linear, x, (2, c, c))
        assert footprint_extent(hit) == effective_receptive_field(block.layer_chain())


class TestDecode:
    def test_tiny_shape(self, tiny_model):
        clip = VideoTensor(np.random.default_rng(0).normal(size=(8, 64, 64, 3)).astype(np.float32))
        with torch.no_grad():
            pyr = encode(tiny_model.encoder, clip)
            out = decode(pyr, tiny_model.decoder)
        assert out.shape == (8, 64, 64)

    @settings(max_examples=12, deadline=None)
    @given(T=st.integers(1, 10), H=st.integers(16, 90), W=st.integers(16, 90), refine=st.sampled_from(["RF3D", "UPSAMPLE"]))
    def test_shape_sweep(self, T, H, W, refine):
        torch.manual_seed(0)
        model = build_model(tiny_model_config(refine=refine)).eval()
        with torch.no_grad():
            assert model(torch.randn(1, 3, T, H, W)).shape == (1, T, H, W)

    @pytest.mark.parametrize("bridge", ["GC3D", "C3D"])
    def test_variants_and_softmax_head(self, bridge):
        model = build_model(tiny_model_config(bridge=bridge, head="softmax", boundary_refine=True)).eval()
        with torch.no_grad():
            assert model(torch.randn(2, 3, 4, 32, 48)).shape == (2, 4, 32, 48)

    def test_stride_mismatch(self, tiny_model):
        other = build_encoder(tiny_model.config.encoder.__class__(stage_depths=(1, 1, 1, 1), base_width=8,
                                                                   temporal_strides=(1, 1, 1, 1))).eval()
        with torch.no_grad():
            pyr = encode(other, np.zeros((4, 32, 32, 3), dtype=np.float32))
        with pytest.raises(ShapeError):
            decode(pyr, tiny_model.decoder)


def network_chain(model):
    """Layer chain along the deepest path: stem, all stages, bridge, refinements, head."""
    enc, dec = model.encoder, model.decoder
    st = enc.config.stem_temporal_stride
    chain = [LayerSpec((3, 7, 7), (st, 2, 2)), LayerSpec((1, 3, 3), (1, 2, 2))]
    for stage in enc.stages:
        for block in stage:
            chain += block.layer_chain()
    chain += dec.bridge.layer_chain()
    for level in (3, 2, 1):
        chain += [CONV3, CONV3, LayerSpec(upsample=dec.step_factor(level)), CONV3, CONV3]
    chain += [CONV3, LayerSpec(upsample=dec.final_factor())]
    return chain


def test_end_to_end_footprint_within_receptive_field():
    torch.manual_seed(0)
    model = build_model(tiny_model_config()).double().eval()
    erf = effective_receptive_field(network_chain(model))
    x = torch.randn(1, 3, 2, 24, 24, dtype=torch.float64)
    hit = jacobian_footprint(model_logits(model), x, (1, 12, 12))
    ext = footprint_extent(hit)
    assert all(e <= min(r, n) for e, r, n in zip(ext, erf, x.shape[2:]))
    # the deepest level sees far beyond a 24 px input, so the whole frame matters
    assert erf[1] > 24 and ext[1:] == (24, 24)


def model_logits(model):
    return lambda t: model(t)[:, None]
