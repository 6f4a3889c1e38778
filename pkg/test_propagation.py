"""
Tests for geometry-guided propagation.
"""

import numpy as np
import pytest
import torch

from core.errors import DimensionError, EmptyVisibleSet, InvalidTemperature
from core.geometry import build_knn_graph
from shapeflow.services.attention import randomize_parameters_
from shapeflow.services.propagation import (
    GeoEncoder,
    affinity,
    encode_geometry,
    posenc_dim,
    positional_encoding,
    propagate_features,
    propagation_weights,
    scatter_visible,
)


@pytest.fixture
def encoder():
    enc = GeoEncoder(8, layers=2).double()
    return randomize_parameters_(enc, torch.Generator().manual_seed(0))


class TestPositionalEncoding:
    def test_layout(self):
        x = torch.tensor([[0.25, -0.5, 1.0]], dtype=torch.float64)
        pe = positional_encoding(x, octaves=2)
        assert pe.shape == (1, posenc_dim(2)) == (1, 15)
        assert torch.equal(pe[:, :3], x)
        torch.testing.assert_close(pe[:, 3:6], torch.sin(torch.pi * x))
        torch.testing.assert_close(pe[:, 12:15], torch.cos(2.0 * torch.pi * x))


class TestEncodeGeometry:
    def test_shape(self, random_cloud, encoder):
        cloud = random_cloud(20)
        emb = encode_geometry(cloud, build_knn_graph(cloud, 4), encoder)
        assert emb.shape == (20, encoder.embedding_dim)
        assert emb.dtype == torch.float64

    def test_translation_invariant(self, random_cloud, encoder):
        cloud = random_cloud(20)
        graph = build_knn_graph(cloud, 4)
        moved = cloud.with_points(cloud.points + np.array([0.3, -1.0, 2.0]))
        torch.testing.assert_close(
            encode_geometry(cloud, graph, encoder),
            encode_geometry(moved, graph, encoder),
            atol=1e-10, rtol=1e-10,
        )

    def test_graph_size_mismatch(self, random_cloud, encoder):
        with pytest.raises(DimensionError):
            encode_geometry(random_cloud(20), build_knn_graph(random_cloud(10), 3), encoder)


class TestAffinityAndWeights:
    def test_affinity_is_cosine(self):
        emb = torch.tensor([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0], [0.0, 0.0]], dtype=torch.float64)
        aff = affinity(emb, [0, 1])
        expected = torch.tensor(
            [[1.0, 0.0], [0.0, 1.0], [np.sqrt(0.5), np.sqrt(0.5)], [0.0, 0.0]], dtype=torch.float64
        )
        torch.testing.assert_close(aff, expected)

    def test_empty_visible_set(self):
        with pytest.raises(EmptyVisibleSet):
            affinity(torch.ones(3, 2), [])

    def test_weights_are_row_stochastic(self):
        aff = torch.rand(6, 4, generator=torch.Generator().manual_seed(1), dtype=torch.float64) * 2 - 1
        w = propagation_weights(aff, 0.07)
        torch.testing.assert_close(w.sum(dim=1), torch.ones(6, dtype=torch.float64))
        assert torch.all(w >= 0)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_temperature_must_be_positive(self, tau):
        with pytest.raises(InvalidTemperature):
            propagation_weights(torch.zeros(2, 2), tau)

    def test_extreme_logits_stay_finite(self):
        aff = torch.tensor([[1.0, -1.0]], dtype=torch.float64)
        w = propagation_weights(aff, 1e-6)
        assert torch.all(torch.isfinite(w))
        torch.testing.assert_close(w, torch.tensor([[1.0, 0.0]], dtype=torch.float64))


class TestPropagate:
    def test_constant_features_propagate_unchanged(self):
        aff = torch.rand(5, 3, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
        feats = torch.tensor([[1.0, -2.0]] * 3, dtype=torch.float64)
        out = propagate_features(aff, feats, 0.1)
        torch.testing.assert_close(out, torch.tensor([[1.0, -2.0]] * 5, dtype=torch.float64))

    def test_low_temperature_copies_most_similar(self):
        emb = torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.9, 0.1]], dtype=torch.float64)
        feats = torch.tensor([[10.0], [20.0]], dtype=torch.float64)
        out = propagate_features(affinity(emb, [0, 1]), feats, 1e-3)
        torch.testing.assert_close(out[:, 0], torch.tensor([10.0, 20.0, 10.0], dtype=torch.float64))

    def test_column_count_must_match(self):
        with pytest.raises(DimensionError):
            propagate_features(torch.zeros(4, 3), torch.zeros(2, 5), 0.07)

    def test_scatter_visible(self):
        feats = torch.tensor([[1.0], [3.0]], dtype=torch.float64)
        out = scatter_visible(4, feats, np.array([2, 0]))
        assert out[:, 0].tolist() == [3.0, 2.0, 1.0, 2.0]
