import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from tsbsmamba.core.exceptions import ShapeMismatchError
from tsbsmamba.models.config_models import BandScheme, StftConfig
from tsbsmamba.services.bands import (
    DEFAULT_WIDTHS,
    BandMerge,
    BandMergeHead,
    BandSplit,
    band_merge_head,
    band_split,
    default_band_scheme,
    deinterleave_bins,
    interleave_bins,
)
from tsbsmamba.services.spectral import stft


def _non_decreasing(widths):
    return all(a <= b for a, b in zip(widths, widths[1:]))


def test_default_scheme_has_57_bands_over_1025_bins():
    scheme = default_band_scheme(1025)
    assert scheme.n_bands == 57
    assert scheme.n_bins == 1025
    assert scheme.widths == DEFAULT_WIDTHS
    assert _non_decreasing(scheme.widths)


@settings(max_examples=50, deadline=None)
@given(n_bins=st.integers(min_value=57, max_value=4097))
def test_rescaled_scheme_partitions_any_bin_count(n_bins):
    scheme = default_band_scheme(n_bins)
    assert scheme.n_bands == 57
    assert scheme.n_bins == n_bins
    assert min(scheme.widths) >= 1
    assert _non_decreasing(scheme.widths)


def test_uniform_scheme_degenerates_to_single_bins():
    scheme = BandScheme.uniform(57, 57)
    assert scheme.widths == [1] * 57


@settings(max_examples=30, deadline=None)
@given(widths=st.lists(st.integers(min_value=1, max_value=20), min_size=1, max_size=12))
def test_offsets_are_exclusive_prefix_sums(widths):
    scheme = BandScheme(widths=widths)
    assert scheme.offsets == [sum(widths[:k]) for k in range(len(widths))]


def test_too_few_bins_rejected():
    with pytest.raises(ValueError):
        default_band_scheme(40)


def test_interleave_layout():
    band = torch.tensor([[1 + 2j], [3 + 4j]])  # G=2, T=1
    values = interleave_bins(band)
    assert values.tolist() == [[1.0, 2.0, 3.0, 4.0]]
    assert torch.equal(deinterleave_bins(values), band)


def test_band_split_shape_on_default_stft():
    cfg = StftConfig()
    spec = stft(torch.randn(2, 44100), cfg)
    split = BandSplit(default_band_scheme(cfg.n_bins), 128)
    z = band_split(spec, split.scheme, split)
    assert tuple(z.shape) == (2, 57, 87, 128)


def test_band_split_zero_affine_gives_zero():
    scheme = BandScheme(widths=[2, 3, 4, 7])
    split = BandSplit(scheme, 8)
    with torch.no_grad():
        for fc in split.fcs:
            fc.weight.zero_()
            fc.bias.zero_()
    spec = torch.randn(2, 16, 5, dtype=torch.complex64)
    assert torch.count_nonzero(split(spec)) == 0


def test_band_split_is_scale_invariant(f64, generator):
    # Invariance is exact only up to the norm eps, so keep band variances large.
    scheme = BandScheme(widths=[2, 3, 4, 7])
    split = BandSplit(scheme, 8)
    spec = 100.0 * torch.randn(2, 16, 6, dtype=torch.complex128, generator=generator)
    assert torch.allclose(split(spec), split(3.0 * spec), rtol=1e-6, atol=1e-6)


def test_band_split_has_no_cross_band_leakage(f64, generator):
    scheme = BandScheme(widths=[2, 3, 4, 7])
    split = BandSplit(scheme, 8)
    spec = torch.randn(2, 16, 6, dtype=torch.complex128, generator=generator)
    start, stop = scheme.offsets[2], scheme.offsets[2] + scheme.widths[2]
    perturbed = spec.clone()
    perturbed[:, start:stop] += torch.randn(2, stop - start, 6, dtype=torch.complex128, generator=generator)

    before, after = split(spec), split(perturbed)
    changed = (before - after).abs().amax(dim=(0, 2, 3))
    assert changed[2] > 0
    assert torch.count_nonzero(changed[[0, 1, 3]]) == 0


def test_band_split_rejects_wrong_bin_count():
    split = BandSplit(BandScheme(widths=[2, 3, 4, 7]), 8)
    with pytest.raises(ShapeMismatchError):
        split(torch.randn(2, 15, 4, dtype=torch.complex64))


def test_merge_head_shape():
    scheme = default_band_scheme(1025)
    head = BandMergeHead(scheme, n_features=16, hidden=16)
    out = head(torch.randn(2, 57, 7, 16))
    assert out.shape == (2, 1025, 7)
    assert out.is_complex()


def test_glu_unit():
    assert F.glu(torch.tensor([1.0, 0.0]), dim=-1).item() == 0.5


def test_zero_output_layer_silences_head():
    scheme = BandScheme(widths=[2, 3, 4, 7])
    merge = BandMerge(scheme, n_sources=2, n_features=8, hidden=8)
    with torch.no_grad():
        for layer in merge.heads[1].output_layers:
            layer.weight.zero_()
            layer.bias.zero_()
    features = torch.randn(2, 4, 5, 8)
    assert torch.count_nonzero(band_merge_head(features, merge, 1)) == 0
    assert torch.count_nonzero(band_merge_head(features, merge, 0)) > 0
    assert merge(features).shape == (2, 2, 16, 5)


def test_merge_head_depth_follows_hidden_layers():
    scheme = BandScheme(widths=[3, 5])
    head = BandMergeHead(scheme, n_features=4, hidden=6, hidden_layers=3)
    linears = [m for m in head.mlps[0] if isinstance(m, torch.nn.Linear)]
    assert len(linears) == 4
    assert linears[-1].out_features == 4 * 3
