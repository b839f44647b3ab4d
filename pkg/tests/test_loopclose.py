import math

import numpy as np
import pytest

from rotvo.core.config import PipelineConfig
from rotvo.core.exceptions import InvalidArgumentError
from rotvo.core.loopclose import LoopCandidate, LoopEdge, close_loop, validate_loop
from rotvo.core.relrot import CorrSet
from rotvo.core.so3 import Rot3, exp, geodesic_angle
from rotvo.core.viewgraph import ViewGraph

R_REVISIT = exp([0.01, math.radians(-12.0), 0.02])


def _graph_with(n: int, last: Rot3) -> ViewGraph:
    g = ViewGraph()
    for i in range(n - 1):
        g.add_node(i)
    g.add_node(n - 1, last)
    for k in range(1, n):
        g.add_edge(k - 1, k, g.nodes[k - 1].relative(g.nodes[k]), 150)
    return g


def test_candidate_requires_increasing_ids(rng, make_pair):
    c, _ = make_pair(rng, R_REVISIT, n=10)
    with pytest.raises(InvalidArgumentError):
        LoopCandidate(5, 5, c)
    with pytest.raises(InvalidArgumentError):
        LoopCandidate(-1, 5, c)


def test_valid_revisit_is_accepted(rng, make_pair):
    c, _ = make_pair(rng, R_REVISIT, n=300, translation=(1.0, 0.0, 0.5))
    g = _graph_with(12, R_REVISIT @ exp([0.0, 0.02, 0.0]))
    edge = validate_loop(LoopCandidate(0, 11, c), g, PipelineConfig())
    assert edge is not None
    assert edge.is_loop
    assert (edge.j, edge.k) == (0, 11)
    assert edge.inlier_count == 300
    assert geodesic_angle(edge.R_jk, R_REVISIT) < 1e-4


def test_weak_candidate_is_rejected(rng, make_pair):
    c, _ = make_pair(rng, R_REVISIT, n=80)
    g = _graph_with(12, R_REVISIT)
    assert validate_loop(LoopCandidate(0, 11, c), g, PipelineConfig(theta_matches=100)) is None


def test_candidate_inside_matching_window_is_rejected(rng, make_pair):
    c, _ = make_pair(rng, R_REVISIT, n=300)
    g = _graph_with(12, R_REVISIT)
    assert validate_loop(LoopCandidate(7, 11, c), g, PipelineConfig(f_window=4)) is None


def test_candidate_with_missing_frame_is_rejected(rng, make_pair):
    c, _ = make_pair(rng, R_REVISIT, n=300)
    g = _graph_with(12, R_REVISIT)
    assert validate_loop(LoopCandidate(0, 20, c), g, PipelineConfig()) is None


def test_validation_is_seeded(rng, make_pair):
    c, _ = make_pair(rng, R_REVISIT, n=200, noise=math.radians(0.1), outlier_frac=0.2)
    g = _graph_with(12, R_REVISIT)
    cfg = PipelineConfig(seed=4)
    a = validate_loop(LoopCandidate(0, 11, c), g, cfg)
    b = validate_loop(LoopCandidate(0, 11, c), g, cfg)
    assert a is not None and b is not None
    assert a.R_jk == b.R_jk
    assert np.array_equal(a.inliers, b.inliers)


def test_close_loop_removes_drift(rng):
    n = 100
    truth = [Rot3.identity()]
    for _ in range(1, n):
        truth.append(truth[-1] @ exp(rng.normal(0.0, 0.05, size=3)))

    g = ViewGraph()
    g.add_node(0)
    measured = []
    for k in range(1, n):
        noisy = truth[k - 1].relative(truth[k]) @ exp(rng.normal(0.0, math.radians(0.3), size=3))
        measured.append(noisy)
        g.add_node(k, g.nodes[k - 1] @ noisy)
        g.add_edge(k - 1, k, noisy, 150)
    drift_before = geodesic_angle(g.nodes[n - 1], truth[n - 1])

    exact = LoopEdge(0, n - 1, truth[0].relative(truth[n - 1]), np.arange(150))
    result = close_loop(g, [exact])
    assert result is not None
    assert g.edges[(0, n - 1)].is_loop
    drift_after = geodesic_angle(g.nodes[n - 1], truth[n - 1])
    assert drift_after < 0.25 * drift_before
    assert g.nodes[0] == Rot3.identity()


def test_close_loop_without_new_edges_returns_none(chain_graph):
    g, truth = chain_graph(n=8)
    before = dict(g.nodes)
    stale = LoopEdge(0, 2, truth[0].relative(truth[2]), np.arange(100))
    assert close_loop(g, [stale]) is None
    assert close_loop(g, []) is None
    assert g.nodes == before


def test_consistent_loop_edge_leaves_orientations_alone(chain_graph):
    g, truth = chain_graph(n=15)
    before = dict(g.nodes)
    edge = LoopEdge(0, 14, truth[0].relative(truth[14]), np.arange(150))
    assert close_loop(g, [edge]) is not None
    assert max(geodesic_angle(g.nodes[i], before[i]) for i in g.nodes) < 1e-8
    assert len(g.edges) == 2 * 14 - 1 + 1
    # Same edge again: the duplicate-edge policy keeps the stored one
    assert close_loop(g, [edge]) is None


@pytest.mark.slow
def test_random_candidates_are_rejected(rng):
    g = _graph_with(12, R_REVISIT)
    rejected = 0
    for seed in range(20):
        f = rng.normal(size=(200, 3)) * [0.3, 0.3, 0.0] + [0.0, 0.0, 1.0]
        fp = rng.normal(size=(200, 3)) * [0.3, 0.3, 0.0] + [0.0, 0.0, 1.0]
        c = CorrSet(f / np.linalg.norm(f, axis=1, keepdims=True), fp / np.linalg.norm(fp, axis=1, keepdims=True))
        if validate_loop(LoopCandidate(0, 11, c), g, PipelineConfig(seed=seed)) is None:
            rejected += 1
    assert rejected == 20
