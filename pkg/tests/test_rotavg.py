import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from rotvo.core.config import IrlsConfig
from rotvo.core.exceptions import InvalidArgumentError, NumericalError
from rotvo.core.rotavg import (
    average_rotations,
    build_system,
    edge_residual,
    solve_global,
    solve_incremental,
)
from rotvo.core.so3 import Rot3, exp, geodesic_angle, log
from rotvo.core.viewgraph import Edge, ViewGraph, local_subgraph

DEG = math.radians(1.0)


def _perturb(g: ViewGraph, ids, rng, sigma=DEG):
    for i in ids:
        g.nodes[i] = g.nodes[i] @ exp(rng.normal(0.0, sigma, size=3))


def _max_error(rotations, truth, ids):
    return max(geodesic_angle(rotations[i], truth[i]) for i in ids)


def test_edge_residual_is_zero_for_consistent_edges(chain_graph):
    g, _ = chain_graph(n=5)
    for key, edge in g.edges.items():
        assert np.linalg.norm(edge_residual(g.nodes, key, edge)) < 1e-12


def test_jacobian_matches_finite_differences():
    Rj, Rk = exp([0.3, -0.2, 0.1]), exp([-0.5, 0.4, 0.9])
    rotations = {0: Rj, 1: Rk}
    edges = {(0, 1): Edge(Rj.relative(Rk), 100)}
    A = build_system(rotations, edges, free=[0, 1]).A.toarray()

    h = 1e-6
    for col in range(6):
        step = np.zeros(6)
        step[col] = h
        moved = {0: Rj @ exp(step[:3]), 1: Rk @ exp(step[3:])}
        numeric = edge_residual(moved, (0, 1), edges[(0, 1)]) / h
        assert np.allclose(A[:, col], numeric, atol=1e-5)


def test_solve_global_recovers_exact_graph(chain_graph, rng):
    g, truth = chain_graph(n=15)
    _perturb(g, range(1, 15), rng)
    result = solve_global(g)
    assert 0 not in result.rotations
    assert _max_error(result.rotations, truth, range(1, 15)) < 1e-8
    assert all(w == pytest.approx(1.0) for w in result.weights.values())


def test_cost_history_is_monotone(chain_graph, rng):
    g, _ = chain_graph(n=15)
    _perturb(g, range(1, 15), rng, sigma=3 * DEG)
    result = solve_global(g)
    assert set(result.cost_history) == {"l1", "robust", "refine"}
    for phase in result.cost_history.values():
        for before, after in phase:
            assert after <= before * (1.0 + 1e-12)


def test_solve_global_preconditions():
    g = ViewGraph()
    g.add_node(0)
    with pytest.raises(InvalidArgumentError):
        solve_global(g)
    g.add_node(1)
    g.add_node(2)
    g.add_edge(0, 1, Rot3.identity(), 100)
    with pytest.raises(InvalidArgumentError):
        solve_global(g)


def test_solve_incremental_moves_only_the_window(chain_graph, rng):
    g, truth = chain_graph(n=15)
    _perturb(g, range(10, 15), rng)
    sub = local_subgraph(g, 5)
    result = solve_incremental(sub)
    assert set(result.rotations) == set(sub.window)
    assert _max_error(result.rotations, truth, sub.window) < 1e-8


def test_solve_incremental_cold_start(chain_graph, rng):
    g, truth = chain_graph(n=4)
    _perturb(g, range(1, 4), rng)
    sub = local_subgraph(g, 10)
    result = solve_incremental(sub)
    assert set(result.rotations) == {1, 2, 3}
    assert _max_error(result.rotations, truth, range(1, 4)) < 1e-8


def test_solve_incremental_rejects_stranded_window_nodes(chain_graph):
    g, _ = chain_graph(n=6)
    g.add_node(6)
    sub = local_subgraph(g, 3)
    with pytest.raises(InvalidArgumentError):
        solve_incremental(sub)


def test_huber_splits_two_conflicting_edges():
    g = ViewGraph()
    for i in range(3):
        g.add_node(i)
    g.add_edge(0, 2, Rot3.identity(), 100)
    g.add_edge(1, 2, exp([0.0, 0.0, 2 * DEG]), 100)
    sub = local_subgraph(g, 1)
    assert sub.window == (2,) and sub.anchors == (0, 1)
    result = solve_incremental(sub)

    def huber(r):
        return 0.5 * r * r if r <= DEG else DEG * (r - 0.5 * DEG)

    def cost(theta):
        return huber(abs(theta)) + huber(abs(2 * DEG - theta))

    oracle = minimize_scalar(cost, bounds=(0.0, 2 * DEG), method="bounded", options={"xatol": 1e-12})
    z = log(result.rotations[2])
    assert np.allclose(z[:2], 0.0, atol=1e-12)
    assert z[2] == pytest.approx(oracle.x, abs=1e-6)
    assert z[2] == pytest.approx(DEG, abs=1e-6)


def test_geman_mcclure_matches_scalar_minimiser():
    rotations = {0: Rot3.identity(), 1: Rot3.identity(), 2: Rot3.identity()}
    edges = {
        (0, 2): Edge(Rot3.identity(), 100),
        (1, 2): Edge(exp([0.0, 0.0, 2 * DEG]), 100),
    }
    cfg = IrlsConfig(loss="geman_mcclure", loss_scale=DEG, irls_iters=300, step_tol=1e-13)
    result = average_rotations(rotations, edges, free=[2], cfg=cfg)

    def cost(theta):
        return sum(r * r / (DEG**2 + r * r) for r in (theta, 2 * DEG - theta))

    oracle = minimize_scalar(cost, bounds=(0.0, DEG), method="bounded", options={"xatol": 1e-14})
    assert log(result.rotations[2])[2] == pytest.approx(oracle.x, abs=1e-8)


def test_geman_mcclure_suppresses_a_corrupted_edge(chain_graph, rng):
    g, truth = chain_graph(n=20)
    g.add_edge(0, 19, truth[0].relative(truth[19]), 150, is_loop=True)
    g.edges[(5, 7)] = Edge(truth[5].relative(truth[7]) @ exp([0.0, math.radians(30.0), 0.0]), 150)
    _perturb(g, range(1, 20), rng)
    cfg = IrlsConfig(loss="geman_mcclure", irls_iters=50)
    result = solve_global(g, cfg)
    assert _max_error(result.rotations, truth, range(1, 20)) < 1e-4
    assert result.weights[(5, 7)] < 0.1
    assert result.weights[(4, 5)] > 0.9


def _ring_with_chords(seed: int, n: int = 20, chord_frac: float = 0.3):
    """Random true orientations, ring edges plus a fraction of random chords."""
    gen = np.random.default_rng(seed)
    truth = [Rot3.identity()] + [Rot3.exp(gen.normal(0.0, 0.5, size=3)) for _ in range(1, n)]
    keys = {(k - 1, k) for k in range(1, n)} | {(0, n - 1)}
    target = len(keys) + round(chord_frac * len(keys))
    while len(keys) < target:
        j, k = sorted(int(i) for i in gen.choice(n, size=2, replace=False))
        keys.add((j, k))
    start = [truth[0]]
    for R in truth[1:]:
        axis = gen.normal(size=3)
        start.append(R @ exp(axis / np.linalg.norm(axis) * gen.uniform(0.0, 5 * DEG)))
    measured = {(j, k): truth[j].relative(truth[k]) for j, k in sorted(keys)}
    return truth, start, measured


def _graph(start, measured) -> ViewGraph:
    g = ViewGraph()
    for i, R in enumerate(start):
        g.add_node(i, R)
    for (j, k), R_jk in measured.items():
        g.add_edge(j, k, R_jk, 150)
    return g


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_solve_global_recovers_a_perturbed_ring(seed):
    truth, start, measured = _ring_with_chords(seed)
    result = solve_global(_graph(start, measured))
    assert _max_error(result.rotations, truth, range(1, 20)) < 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_solve_global_ignores_random_outlier(seed):
    truth, start, measured = _ring_with_chords(seed)
    gen = np.random.default_rng(100 + seed)
    axis = gen.normal(size=3)
    corrupted = dict(measured)
    angle = gen.uniform(math.pi / 4, 3 * math.pi / 4)
    corrupted[(3, 4)] = measured[(3, 4)] @ exp(axis / np.linalg.norm(axis) * angle)
    without = {key: R for key, R in measured.items() if key != (3, 4)}

    result = solve_global(_graph(start, corrupted))
    reference = solve_global(_graph(start, without))
    assert _max_error(result.rotations, reference.rotations, range(1, 20)) < 1e-4
    assert _max_error(result.rotations, truth, range(1, 20)) < 1e-4
    assert result.weights[(3, 4)] < 0.1
    assert "refine" in result.cost_history


def test_refinement_can_be_disabled(chain_graph, rng):
    g, _ = chain_graph(n=10)
    _perturb(g, range(1, 10), rng)
    result = solve_global(g, IrlsConfig(refine_iters=0))
    assert set(result.cost_history) == {"l1", "robust"}


def test_singular_system_raises_numerical_error():
    rotations = {0: Rot3.identity(), 1: Rot3.identity(), 2: Rot3.identity()}
    edges = {(0, 1): Edge(exp([0.1, 0.0, 0.0]), 100)}
    with pytest.raises(NumericalError) as info:
        average_rotations(rotations, edges, free=[1, 2])
    assert info.value.iteration == 1
    assert info.value.phase == "l1"


def test_no_free_nodes_returns_empty_result():
    rotations = {0: Rot3.identity(), 1: Rot3.identity()}
    edges = {(0, 1): Edge(Rot3.identity(), 100)}
    result = average_rotations(rotations, edges, free=[])
    assert result.rotations == {}
    assert result.converged


@pytest.mark.slow
def test_sparse_path_on_a_large_graph(chain_graph, rng):
    # More than 600 unknowns switches the factorisation to sparse LU
    g, truth = chain_graph(n=260)
    _perturb(g, range(1, 260), rng, sigma=0.5 * DEG)
    result = solve_global(g)
    assert _max_error(result.rotations, truth, range(1, 260)) < 1e-8
