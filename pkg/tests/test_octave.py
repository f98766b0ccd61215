import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octoseg import tensor as T
from octoseg.errors import ConfigError, ShapeError
from octoseg.octave import (
    OctConv2d,
    OctConvSpec,
    OctFeature,
    oct_concat,
    octconv_forward,
    octconv_macs,
    octconv_params,
    split_channels,
)
from octoseg.tensor import Tensor

from conftest import fd_check


@pytest.mark.parametrize("c,alpha,expected", [(16, 0.5, (8, 8)), (1, 0.5, (0, 1)), (3, 0.5, (1, 2)),
                                              (7, 0.0, (7, 0)), (7, 1.0, (0, 7)), (10, 0.25, (7, 3))])
def test_split_channels(c, alpha, expected):
    assert split_channels(c, alpha) == expected


def test_split_channels_rejects_alpha_outside_unit_interval():
    with pytest.raises(ConfigError):
        split_channels(4, 1.5)


def test_partitions_cover_all_paths_at_half():
    spec = OctConvSpec(8, 16, 3, 0.5, 0.5)
    assert spec.partitions() == {"hh": (8, 4), "hl": (8, 4), "lh": (8, 4), "ll": (8, 4)}


def test_partitions_drop_empty_paths():
    assert set(OctConvSpec(1, 8, 3, 0.0, 0.5).partitions()) == {"hh", "hl"}
    assert set(OctConvSpec(8, 1, 1, 0.5, 0.0).partitions()) == {"hh", "lh"}
    assert OctConvSpec(4, 4, 3, 0.0, 0.0).is_plain


@settings(max_examples=100, deadline=None)
@given(c_in=st.integers(1, 4), c_out=st.integers(1, 4), k=st.integers(1, 3), n=st.integers(1, 2),
       h=st.integers(2, 5).map(lambda v: 2 * v), seed=st.integers(0, 2**16))
def test_alpha_zero_matches_conv2d(c_in, c_out, k, n, h, seed):
    r = np.random.default_rng(seed)
    layer = OctConv2d(OctConvSpec(c_in, c_out, k, 0.0, 0.0), r, np.float64)
    layer.weights["b_h"].data = r.standard_normal(c_out)
    x = Tensor(r.standard_normal((n, c_in, h, h)))
    y = layer(OctFeature.from_tensor(x))
    ref = T.conv2d(x, layer.weights["w_hh"], layer.weights["b_h"])
    assert y.low is None
    assert np.max(np.abs(y.high.data - ref.data)) < 1e-12


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 0.75])
def test_params_do_not_depend_on_alpha(alpha):
    spec = OctConvSpec(12, 20, 3, alpha, alpha)
    layer = OctConv2d(spec, np.random.default_rng(0))
    assert layer.num_params() == octconv_params(spec) == 9 * 12 * 20 + 20


def test_half_alpha_mac_ratio_is_seven_sixteenths():
    octave = octconv_macs(OctConvSpec(16, 16, 3, 0.5, 0.5), 64, 64)
    plain = octconv_macs(OctConvSpec(16, 16, 3, 0.0, 0.0), 64, 64)
    assert octave / plain == 0.4375


@pytest.mark.parametrize("spec", [OctConvSpec(4, 6, 3, 0.5, 0.5), OctConvSpec(1, 4, 3, 0.0, 0.5),
                                  OctConvSpec(6, 1, 1, 0.5, 0.0), OctConvSpec(5, 3, 2, 0.25, 0.75)])
def test_mac_counter_matches_formula(spec):
    rng = np.random.default_rng(0)
    layer = OctConv2d(spec, rng)
    ih, il = spec.in_split
    x = OctFeature(Tensor(rng.standard_normal((1, ih, 8, 8))) if ih else None,
                   Tensor(rng.standard_normal((1, il, 4, 4))) if il else None, spec.alpha_in)
    with T.count_macs() as macs:
        layer(x)
    assert macs[0] == octconv_macs(spec, 8, 8)


def test_octconv_gradcheck(rng):
    spec = OctConvSpec(4, 6, 3, 0.5, 0.5)
    layer = OctConv2d(spec, rng, np.float64)
    for b in ("b_h", "b_l"):
        layer.weights[b].data = rng.standard_normal(layer.weights[b].shape)
    hi = Tensor(rng.standard_normal((2, 2, 6, 6)))
    lo = Tensor(rng.standard_normal((2, 2, 3, 3)))
    names = list(layer.weights)

    def f(h, l, *ws):
        y = octconv_forward(OctFeature(h, l, 0.5), spec, dict(zip(names, ws)))
        return T.concat_channels(y.high, T.upsample_nearest2(y.low))

    assert fd_check(f, [hi, lo, *layer.weights.values()], rng) < 1e-6


def test_alpha_mismatch_is_config_error(rng):
    layer = OctConv2d(OctConvSpec(4, 4, 3, 0.5, 0.5), rng)
    with pytest.raises(ConfigError):
        layer(OctFeature.from_tensor(Tensor(rng.standard_normal((1, 4, 8, 8)))))


def test_odd_high_dims_cannot_feed_low_output(rng):
    layer = OctConv2d(OctConvSpec(1, 4, 3, 0.0, 0.5), rng)
    with pytest.raises(ShapeError):
        layer(OctFeature.from_tensor(Tensor(rng.standard_normal((1, 1, 7, 8)))))


def test_octfeature_validation():
    with pytest.raises(ShapeError):
        OctFeature(Tensor(np.zeros((1, 2, 8, 8))), Tensor(np.zeros((1, 2, 8, 8))), 0.5)
    with pytest.raises(ConfigError):
        OctFeature(Tensor(np.zeros((1, 2, 8, 8))), None, 0.5)
    with pytest.raises(ConfigError):
        OctFeature(None, None, 0.0)
    f = OctFeature(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((1, 5, 4, 4))), 0.5)
    assert f.shape() == (8, 8, 8)


def test_oct_concat_recomputes_alpha():
    a = OctFeature(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 2))), 0.5)
    b = OctFeature(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 3, 2, 2))), 0.75)
    c = oct_concat(a, b)
    assert c.high.shape == (1, 3, 4, 4) and c.low.shape == (1, 5, 2, 2)
    assert math.isclose(c.alpha, 5 / 8)
    with pytest.raises(ConfigError):
        oct_concat(a, OctFeature.from_tensor(Tensor(np.zeros((1, 1, 4, 4)))))
