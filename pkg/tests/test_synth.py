import numpy as np
import pytest
from hypothesis import given, strategies as st

from kfnet.errors import ValidationError
from kfnet.synth import SynthSpec, generate, mean_layers, planted_blocks, to_tensors, true_states


def test_true_states():
    assert true_states(6, (3, 5)).tolist() == [0, 0, 1, 1, 2, 2]
    assert true_states(4, ()).tolist() == [0, 0, 0, 0]
    assert true_states(24, (13,)).tolist() == [0] * 12 + [1] * 12


def test_noise_free_layers_equal_means():
    spec = SynthSpec(N=6, T=5, breakpoints=(3,), noise_sd=0.0, within=2.0, between=-1.0)
    layers, S = generate(spec)
    assert np.array_equal(layers, mean_layers(spec))
    assert np.array_equal(layers[0], layers[1]) and not np.array_equal(layers[1], layers[2])
    assert S.tolist() == [0, 0, 1, 1, 1]


def test_hand_block_means():
    spec = SynthSpec(N=3, T=1, blocks=((1, 1, 2),), within=5.0, between=1.0, noise_sd=0.0)
    assert generate(spec)[0][0].tolist() == [[0, 5, 1], [5, 0, 1], [1, 1, 0]]


@given(st.integers(2, 9), st.integers(2, 8), st.integers(0, 10_000), st.sampled_from(["real", "counts"]))
def test_symmetric_zero_diagonal(N, T, seed, mode):
    layers, _ = generate(SynthSpec(N=N, T=T, breakpoints=(2,), seed=seed, mode=mode))
    assert np.array_equal(layers, layers.transpose(0, 2, 1))
    assert np.all(np.diagonal(layers, axis1=1, axis2=2) == 0)
    if mode == "counts":
        assert layers.dtype == np.int64 and layers.min() >= 0


def test_seed_determinism():
    spec = SynthSpec(N=5, T=4, seed=3)
    assert np.array_equal(generate(spec)[0], generate(spec)[0])
    assert not np.array_equal(generate(spec)[0], generate(SynthSpec(N=5, T=4, seed=4))[0])


def test_planted_blocks_distinct_and_balanced():
    labels = planted_blocks(20, 3, 3, seed=1)
    assert labels.shape == (3, 20)
    for row in labels:
        assert sorted(np.bincount(row)[1:].tolist()) == [6, 7, 7]
    # Distinct partitions even after relabelling blocks by first appearance.
    partitions = {frozenset(frozenset(np.flatnonzero(row == b)) for b in (1, 2, 3)) for row in labels}
    assert len(partitions) == 3


@pytest.mark.parametrize("kw", [
    dict(breakpoints=(1,)), dict(breakpoints=(5, 3)), dict(breakpoints=(9,)), dict(noise_sd=-1.0),
    dict(mode="binary"), dict(blocks=((1, 2, 1, 2),)), dict(blocks=((1, 2, 3, 1, 2),), R=2),
    dict(mode="counts", between=-1.0),
])
def test_validation(kw):
    base = dict(N=5, T=8)
    base.update(kw)
    with pytest.raises(ValidationError):
        generate(SynthSpec(**base))


@pytest.mark.filterwarnings("ignore:repeated principal eigenvalue")
def test_to_tensors_modes():
    spec = SynthSpec(N=4, T=3, mode="counts", seed=2)
    layers, _ = generate(spec)
    counts, corrected = to_tensors(spec, layers)
    assert counts is not None and corrected.B.shape == (3, 4, 4)
    spec_r = SynthSpec(N=4, T=3)
    layers_r, _ = generate(spec_r)
    none, corr = to_tensors(spec_r, layers_r)
    assert none is None and np.array_equal(corr.B, layers_r) and len(corr.figures.names) == 4
