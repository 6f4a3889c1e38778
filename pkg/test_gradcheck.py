"""
Gradient checks: autograd against central finite differences at float64.
"""

import numpy as np
import pytest
import torch

from core.geometry import CameraIntrinsics, build_knn_graph, hemisphere_ring_poses
from shapeflow.models.config import LossWeights
from shapeflow.services.attention import MultiHeadAttention, randomize_parameters_
from shapeflow.services.gradcheck import _element_indices, gradient_check, relative_error, tiny_pair
from shapeflow.services.losses import arap_loss, chamfer_loss, laplacian_loss, reg_loss, silhouette_loss
from shapeflow.services.network import PARAMETER_BLOCKS
from shapeflow.services.propagation import affinity, propagate_features
from shapeflow.services.renderer import render_silhouette

FD = dict(eps=1e-5, atol=1e-7, rtol=1e-4)


def double(rng, *shape, scale=0.5):
    return torch.tensor(rng.uniform(-scale, scale, size=shape), dtype=torch.float64, requires_grad=True)


class TestHelpers:
    def test_relative_error(self):
        assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
        assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 1.5])) == pytest.approx(0.25)
        assert relative_error(np.zeros(0), np.zeros(0)) == 0.0
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0

    def test_element_indices(self):
        assert _element_indices(5, None).tolist() == [0, 1, 2, 3, 4]
        assert _element_indices(5, 10).tolist() == [0, 1, 2, 3, 4]
        assert _element_indices(101, 3).tolist() == [0, 50, 100]


class TestModelBlocks:
    def test_flow_matching_only(self, tiny_config):
        report = gradient_check(tiny_config, weights=LossWeights.only(fm=1.0), max_elements=16)
        assert [b.name for b in report.blocks] == list(PARAMETER_BLOCKS)
        assert report.passed, report.failed_blocks

    def test_full_objective(self, tiny_config):
        report = gradient_check(tiny_config, tolerance=1e-4)
        assert report.passed, report.failed_blocks
        assert all(b.n_params > 0 for b in report.blocks)

    def test_corrupted_block_fails(self, tiny_config):
        pair = tiny_pair(tiny_config)
        report = gradient_check(tiny_config, pair=pair, max_elements=8, corrupt="velocity")
        assert not report.passed
        assert report.failed_blocks == ["velocity"]
        assert report.block("velocity").max_rel_error > 1e-2

    def test_block_subset(self, tiny_config):
        report = gradient_check(tiny_config, blocks=["pose_embedding"], max_elements=4)
        assert [b.name for b in report.blocks] == ["pose_embedding"]
        with pytest.raises(KeyError):
            report.block("velocity")


class TestPieces:
    def test_propagation(self, rng):
        emb = double(rng, 8, 6)
        feats = double(rng, 4, 4)
        visible = [1, 3, 4, 6]

        def run(e, f):
            return propagate_features(affinity(e, visible), f, 0.2)

        assert torch.autograd.gradcheck(run, (emb, feats), **FD)

    def test_attention_inputs(self, rng):
        mha = MultiHeadAttention(6, 5, 8, 2).to(torch.float64)
        randomize_parameters_(mha, torch.Generator().manual_seed(2))
        assert torch.autograd.gradcheck(mha, (double(rng, 4, 6), double(rng, 3, 5)), **FD)

    def test_geometric_losses(self, rng):
        src = rng.uniform(-0.5, 0.5, size=(6, 3))
        gt = rng.uniform(-0.5, 0.5, size=(5, 3))
        graph = build_knn_graph(src, 3)
        pred = torch.tensor(src + rng.normal(scale=0.05, size=src.shape), requires_grad=True)

        assert torch.autograd.gradcheck(lambda p: chamfer_loss(p, gt), (pred,), **FD)
        assert torch.autograd.gradcheck(lambda p: laplacian_loss(p, src, graph), (pred,), **FD)
        assert torch.autograd.gradcheck(lambda p: arap_loss(p, src, graph), (pred,), **FD)
        assert torch.autograd.gradcheck(reg_loss, (pred,), **FD)

    def test_silhouette(self, rng):
        src = rng.uniform(-0.4, 0.4, size=(6, 3))
        intr = CameraIntrinsics.centered(16, 16.0)
        masks = [(render_silhouette(src, pose, intr, 1.5), pose, intr) for pose in hemisphere_ring_poses(2)]
        pred = torch.tensor(src + 0.05, requires_grad=True)
        assert torch.autograd.gradcheck(lambda p: silhouette_loss(p, masks, 1.5), (pred,), **FD)
