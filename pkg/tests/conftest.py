import math

import numpy as np
import pytest

from rotvo.core.metrics import GroundTruth
from rotvo.core.relrot import CorrSet
from rotvo.core.so3 import Rot3
from rotvo.core.synth import SynthSpec, gen_correspondences
from rotvo.core.viewgraph import ViewGraph


def _make_pair(
    rng: np.random.Generator,
    R_jk: Rot3,
    n: int = 200,
    translation=(0.0, 0.0, 0.0),
    noise: float = 0.0,
    outlier_frac: float = 0.0,
    half_fov: float = 0.5,
):
    """Correspondences for a camera pair with edge rotation R_jk.

    Frame j sits at the origin; frame k at ``translation`` (frame-j coordinates).
    Returns the correspondence set and the true inlier mask.
    """
    T = R_jk.inverse().matrix()
    t = np.asarray(translation, dtype=np.float64)
    f, fp = [], []
    while len(f) < n:
        xy = rng.uniform(-math.tan(half_fov), math.tan(half_fov), size=2)
        ray = np.array([xy[0], xy[1], 1.0])
        ray /= np.linalg.norm(ray)
        X = rng.uniform(5.0, 50.0) * ray
        Xk = T @ (X - t)
        if Xk[2] <= 0.1:
            continue
        f.append(ray)
        fp.append(Xk / np.linalg.norm(Xk))
    f, fp = np.array(f), np.array(fp)

    if noise > 0.0:
        for arr in (f, fp):
            axis = np.cross(arr, rng.standard_normal(arr.shape))
            axis /= np.linalg.norm(axis, axis=1, keepdims=True)
            angle = np.abs(rng.normal(0.0, noise, size=(n, 1)))
            arr[:] = arr * np.cos(angle) + np.cross(axis, arr) * np.sin(angle)

    mask = np.ones(n, dtype=bool)
    n_out = int(round(outlier_frac * n))
    if n_out:
        idx = rng.permutation(n)[:n_out]
        xy = rng.uniform(-0.6, 0.6, size=(n_out, 2))
        rays = np.column_stack([xy, np.ones(n_out)])
        fp[idx] = rays / np.linalg.norm(rays, axis=1, keepdims=True)
        mask[idx] = False
    return CorrSet(f, fp), mask


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_pair():
    return _make_pair


@pytest.fixture
def chain_graph():
    """15 nodes with edges (k-1, k) and (k-2, k) built from random true orientations."""

    def build(n: int = 15, seed: int = 3) -> tuple[ViewGraph, list[Rot3]]:
        gen = np.random.default_rng(seed)
        truth = [Rot3.identity()]
        for _ in range(1, n):
            truth.append(truth[-1] @ Rot3.exp(gen.normal(0.0, 0.05, size=3)))
        g = ViewGraph()
        for i, R in enumerate(truth):
            g.add_node(i, R)
        for k in range(1, n):
            for j in range(max(0, k - 2), k):
                g.add_edge(j, k, truth[j].relative(truth[k]), 150)
        return g, truth

    return build


@pytest.fixture(scope="session")
def drive_dataset():
    """Noise-free 100-frame drive loop with correspondences for every pair."""
    spec = SynthSpec(n_frames=100, n_points=150, seed=7)
    return gen_correspondences(spec)


@pytest.fixture
def gt_from():
    def build(rotations, positions=None) -> GroundTruth:
        return GroundTruth(tuple(range(len(rotations))), tuple(rotations), positions)

    return build
