import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tsekit.aggregation import LayerWeights, export_weights, weighted_sum
from tsekit.features import FeatureMap


def _const_tap(value, frames=6, channels=3, stride=320):
    return FeatureMap(torch.full((1, frames, channels), float(value)), stride=stride)


def test_one_hot_selects_single_tap():
    taps = [_const_tap(v) for v in (1.0, 2.0, 3.0)]
    w = LayerWeights(3)
    with torch.no_grad():
        w.logits.copy_(torch.tensor([0.0, 50.0, 0.0]))
    out = weighted_sum(taps, w)
    torch.testing.assert_close(out.data, taps[1].data)


def test_identical_taps_are_fixed_point(rng):
    x = torch.from_numpy(rng.standard_normal((1, 5, 4)).astype("float32"))
    taps = [FeatureMap(x.clone(), stride=20), FeatureMap(x.clone(), stride=20)]
    out = weighted_sum(taps, LayerWeights(2))
    torch.testing.assert_close(out.data, x)


def test_hand_computed_combination():
    # softmax(ln 2, 0, 0) = (0.5, 0.25, 0.25); 0.5*1 + 0.25*2 + 0.25*4 = 2.0
    taps = [_const_tap(v) for v in (1.0, 2.0, 4.0)]
    w = LayerWeights(3)
    with torch.no_grad():
        w.logits.copy_(torch.tensor([math.log(2.0), 0.0, 0.0]))
    out = weighted_sum(taps, w)
    torch.testing.assert_close(out.data, torch.full_like(out.data, 2.0))


def test_shape_mismatch_rejected():
    taps = [_const_tap(1.0, frames=6), _const_tap(1.0, frames=7)]
    with pytest.raises(ValueError, match="disagree"):
        weighted_sum(taps, LayerWeights(2))


def test_stride_metadata_preserved():
    out = weighted_sum([_const_tap(1.0, stride=320)] * 2, LayerWeights(2))
    assert out.stride == 320


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=13))
def test_normalization_for_any_logits(logits):
    w = LayerWeights(len(logits))
    with torch.no_grad():
        w.logits.copy_(torch.tensor(logits, dtype=torch.float32))
    normalized = w.normalized().detach()
    assert abs(float(normalized.sum()) - 1.0) < 1e-6
    assert (normalized >= 0).all()


def test_gradient_reaches_logits():
    taps = [_const_tap(1.0), _const_tap(2.0)]
    w = LayerWeights(2)
    out = weighted_sum(taps, w)
    out.data.sum().backward()
    assert w.logits.grad is not None
    assert float(w.logits.grad.abs().max()) > 0


def test_permutation_equivariance(rng):
    data = [
        torch.from_numpy(rng.standard_normal((1, 4, 2)).astype("float32")) for _ in range(3)
    ]
    logits = torch.tensor([0.3, -1.2, 0.8])
    perm = [2, 0, 1]

    w = LayerWeights(3)
    with torch.no_grad():
        w.logits.copy_(logits)
    out = weighted_sum([FeatureMap(d, stride=20) for d in data], w)

    w_perm = LayerWeights(3)
    with torch.no_grad():
        w_perm.logits.copy_(logits[perm])
    out_perm = weighted_sum([FeatureMap(data[i], stride=20) for i in perm], w_perm)
    torch.testing.assert_close(out.data, out_perm.data)


def test_export_uniform_row():
    assert export_weights(LayerWeights(3), "spk") == "spk,0.3333,0.3333,0.3333"


def test_export_softmax_arithmetic():
    w = LayerWeights(3)
    with torch.no_grad():
        w.logits.copy_(torch.tensor([math.log(2.0), 0.0, 0.0]))
    assert export_weights(w, "aie") == "aie,0.5000,0.2500,0.2500"
