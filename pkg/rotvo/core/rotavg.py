"""
Robust rotation averaging by L1-IRLS on the SO(3) tangent space.

Each sweep linearises the edge residuals r_e = log(R_jk^T R_j^T R_k) around the
current orientations, solves the weighted normal equations of

    || sqrt(Phi) A dOmega_V + sqrt(Phi) dOmega_E ||^2

by a positive-definite factorisation and retracts every free node with
R <- R exp(dw). Under that retraction the residual of edge (j, k) moves by
dw_k - (R_k^T R_j) dw_j to first order, so the k-block of A is +I and the
j-block is -R_k^T R_j (which is -I for small relative rotations).

A first phase of IRLS-l1 sweeps gives a robust start, a second phase uses the
configured robust loss. Whole-graph solves add a redescending refinement phase
so that gross outlier edges end with negligible weight. Within each sweep the
step is halved until the weighted cost does not increase.

``solve_global`` frees every node except the gauge node. ``solve_incremental``
frees only the window of a :class:`LocalSubgraph`; anchors enter as constants.
"""

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import NDArray
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import splu

from .config import IrlsConfig
from .exceptions import InvalidArgumentError, NumericalError
from .logging import get_logger
from .so3 import Rot3, TangentVec, exp_matrices, from_matrices, log, log_matrices, stack_matrices
from .viewgraph import Edge, EdgeKey, LocalSubgraph, ViewGraph

logger = get_logger()

DENSE_LIMIT = 600  # unknowns; above this the sparse LU path is used
MONOTONE_RTOL = 1e-12

WeightFn = Callable[[NDArray[np.float64], IrlsConfig], NDArray[np.float64]]


def _l1_weights(norms: NDArray[np.float64], cfg: IrlsConfig) -> NDArray[np.float64]:
    eps = max(cfg.weight_floor * cfg.loss_scale, 1e-15)
    return eps / np.maximum(norms, eps)


def _huber_weights(norms: NDArray[np.float64], cfg: IrlsConfig) -> NDArray[np.float64]:
    delta = cfg.loss_scale
    return np.where(norms <= delta, 1.0, delta / np.maximum(norms, delta))


def _geman_mcclure_weights(norms: NDArray[np.float64], cfg: IrlsConfig) -> NDArray[np.float64]:
    d2 = cfg.loss_scale**2
    return (d2 / (d2 + norms**2)) ** 2


LOSS_WEIGHTS: dict[str, WeightFn] = {
    "huber": _huber_weights,
    "geman_mcclure": _geman_mcclure_weights,
}


@dataclass
class IrlsSystem:
    """One linearised sweep: incidence-style Jacobian, weights and stacked residuals."""

    A: csr_matrix
    phi: NDArray[np.float64]
    b: NDArray[np.float64]
    free_index: dict[int, int]


@dataclass
class IrlsResult:
    """Updated free-node orientations and the final per-edge robust weights."""

    rotations: dict[int, Rot3]
    weights: dict[EdgeKey, float]
    cost_history: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    sweeps: int = 0
    converged: bool = False


def edge_residual(orientations: Mapping[int, Rot3], key: EdgeKey, edge: Edge) -> TangentVec:
    """Tangent discrepancy log(R_jk^T R_j^T R_k) of one edge."""
    j, k = key
    return log(edge.R_jk.inverse() @ orientations[j].inverse() @ orientations[k])


class _Problem:
    """Array view of the nodes and edges taking part in one solve."""

    def __init__(
        self,
        rotations: Mapping[int, Rot3],
        edge_data: Mapping[EdgeKey, Edge],
        free: Sequence[int],
    ):
        self.node_ids = list(rotations)
        self.index = {frame_id: i for i, frame_id in enumerate(self.node_ids)}
        self.free_ids = list(free)
        self.free_index = {frame_id: i for i, frame_id in enumerate(self.free_ids)}
        free_set = set(self.free_ids)

        # Rows whose endpoints are both held fixed carry no information
        self.keys = [key for key in edge_data if key[0] in free_set or key[1] in free_set]
        self.ej = np.array([self.index[j] for j, _ in self.keys], dtype=np.intp)
        self.ek = np.array([self.index[k] for _, k in self.keys], dtype=np.intp)
        self.fj = np.array([self.free_index.get(j, -1) for j, _ in self.keys], dtype=np.intp)
        self.fk = np.array([self.free_index.get(k, -1) for _, k in self.keys], dtype=np.intp)
        self.R_edges = stack_matrices(edge_data[key].R_jk for key in self.keys)
        self.free_rows = np.array([self.index[i] for i in self.free_ids], dtype=np.intp)
        self.mats = stack_matrices(rotations.values())

    def residuals(self, mats: NDArray[np.float64]) -> NDArray[np.float64]:
        if not self.keys:
            return np.zeros((0, 3))
        Rj, Rk = mats[self.ej], mats[self.ek]
        E = np.swapaxes(self.R_edges, 1, 2) @ np.swapaxes(Rj, 1, 2) @ Rk
        return log_matrices(E)

    def system(self, mats: NDArray[np.float64], res: NDArray[np.float64], phi) -> IrlsSystem:
        m, n = len(self.keys), len(self.free_ids)
        rows, cols, data = [], [], []
        offsets = np.arange(3)

        k_free = np.flatnonzero(self.fk >= 0)
        rows.append((3 * k_free[:, None] + offsets).ravel())
        cols.append((3 * self.fk[k_free][:, None] + offsets).ravel())
        data.append(np.ones(3 * len(k_free)))

        j_free = np.flatnonzero(self.fj >= 0)
        if len(j_free):
            Rj, Rk = mats[self.ej[j_free]], mats[self.ek[j_free]]
            blocks = -(np.swapaxes(Rk, 1, 2) @ Rj)
            r_idx = 3 * j_free[:, None, None] + offsets[None, :, None]
            c_idx = 3 * self.fj[j_free][:, None, None] + offsets[None, None, :]
            rows.append(np.broadcast_to(r_idx, blocks.shape).ravel())
            cols.append(np.broadcast_to(c_idx, blocks.shape).ravel())
            data.append(blocks.ravel())

        A = coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * m, 3 * n),
        ).tocsr()
        return IrlsSystem(A=A, phi=phi, b=res.ravel(), free_index=self.free_index)

    def retract(self, mats: NDArray[np.float64], delta: NDArray[np.float64]) -> NDArray[np.float64]:
        out = mats.copy()
        out[self.free_rows] = mats[self.free_rows] @ exp_matrices(delta.reshape(-1, 3))
        return out


def build_system(
    rotations: Mapping[int, Rot3],
    edge_data: Mapping[EdgeKey, Edge],
    free: Sequence[int],
    weights: NDArray[np.float64] | None = None,
) -> IrlsSystem:
    """Linearised system at the given orientations (unit weights by default)."""
    problem = _Problem(rotations, edge_data, free)
    res = problem.residuals(problem.mats)
    phi = np.ones(len(problem.keys)) if weights is None else np.asarray(weights, dtype=np.float64)
    return problem.system(problem.mats, res, phi)


def _solve_normal_equations(system: IrlsSystem, iteration: int, phase: str) -> NDArray[np.float64]:
    W = diags(np.repeat(system.phi, 3))
    H = (system.A.T @ W @ system.A).tocsc()
    rhs = -(system.A.T @ (W @ system.b))
    try:
        if H.shape[0] <= DENSE_LIMIT:
            factor = scipy.linalg.cho_factor(H.toarray(), lower=True)
            return scipy.linalg.cho_solve(factor, rhs)
        return splu(H).solve(rhs)
    except (np.linalg.LinAlgError, RuntimeError) as e:
        raise NumericalError(f"Factorisation of the normal equations failed: {e}", iteration, phase) from e


def _run_phase(
    problem: _Problem,
    mats: NDArray[np.float64],
    weight_fn: WeightFn,
    iters: int,
    cfg: IrlsConfig,
    phase: str,
    history: list[tuple[float, float]],
) -> tuple[NDArray[np.float64], int, bool]:
    for sweep in range(1, iters + 1):
        res = problem.residuals(mats)
        norms = np.linalg.norm(res, axis=1)
        phi = weight_fn(norms, cfg)
        cost_before = float(np.sum(phi * norms**2))

        delta = _solve_normal_equations(problem.system(mats, res, phi), sweep, phase)

        scale = 1.0
        for _ in range(cfg.max_halvings + 1):
            candidate = problem.retract(mats, scale * delta)
            res_c = problem.residuals(candidate)
            cost_after = float(np.sum(phi * np.sum(res_c**2, axis=1)))
            if cost_after <= cost_before * (1.0 + MONOTONE_RTOL):
                break
            scale *= 0.5
        else:
            logger.debug(f"{phase} sweep {sweep}: no descent after halving, stopping phase")
            return mats, sweep, True

        history.append((cost_before, cost_after))
        mats = candidate
        step = float(np.max(np.linalg.norm((scale * delta).reshape(-1, 3), axis=1), initial=0.0))
        logger.trace(f"{phase} sweep {sweep}: cost {cost_before:.3e} -> {cost_after:.3e}, step {step:.2e}")
        if step < cfg.step_tol:
            return mats, sweep, True
    return mats, iters, False


def average_rotations(
    rotations: Mapping[int, Rot3],
    edge_data: Mapping[EdgeKey, Edge],
    free: Sequence[int],
    cfg: IrlsConfig | None = None,
    refine: bool = False,
) -> IrlsResult:
    """L1-IRLS over ``free`` nodes; every other node in ``rotations`` is constant.

    With ``refine`` a third phase runs ``cfg.refine_loss`` from the robust
    solution, and the returned weights come from that loss.
    """
    cfg = cfg or IrlsConfig()
    problem = _Problem(rotations, edge_data, free)
    if not problem.free_ids:
        return IrlsResult(rotations={}, weights={key: 1.0 for key in problem.keys}, converged=True)

    history: dict[str, list[tuple[float, float]]] = {"l1": [], "robust": []}
    mats, l1_sweeps, _ = _run_phase(
        problem, problem.mats, _l1_weights, cfg.l1_iters, cfg, "l1", history["l1"]
    )
    mats, robust_sweeps, converged = _run_phase(
        problem, mats, LOSS_WEIGHTS[cfg.loss], cfg.irls_iters, cfg, "robust", history["robust"]
    )
    sweeps = l1_sweeps + robust_sweeps
    final_loss = cfg.loss
    if refine and cfg.refine_iters:
        history["refine"] = []
        mats, refine_sweeps, converged = _run_phase(
            problem,
            mats,
            LOSS_WEIGHTS[cfg.refine_loss],
            cfg.refine_iters,
            cfg,
            "refine",
            history["refine"],
        )
        sweeps += refine_sweeps
        final_loss = cfg.refine_loss

    final_norms = np.linalg.norm(problem.residuals(mats), axis=1)
    final_phi = LOSS_WEIGHTS[final_loss](final_norms, cfg)
    updated = from_matrices(mats[problem.free_rows])
    return IrlsResult(
        rotations=dict(zip(problem.free_ids, updated)),
        weights={key: float(w) for key, w in zip(problem.keys, final_phi)},
        cost_history=history,
        sweeps=sweeps,
        converged=converged,
    )


def solve_global(g: ViewGraph, cfg: IrlsConfig | None = None) -> IrlsResult:
    """Rotation averaging over the whole graph, warm-started at the current
    orientations, with the gauge node held at identity."""
    if len(g) < 2:
        raise InvalidArgumentError(f"solve_global needs at least 2 nodes, got {len(g)}")
    if not g.is_connected():
        raise InvalidArgumentError("solve_global needs a connected view-graph")
    free = [frame_id for frame_id in g.nodes if frame_id != g.gauge_id]
    result = average_rotations(g.nodes, g.edges, free, cfg, refine=True)
    logger.debug(f"solve_global: {len(free)} nodes, {len(g.edges)} edges, {result.sweeps} sweeps")
    return result


def solve_incremental(sub: LocalSubgraph, cfg: IrlsConfig | None = None) -> IrlsResult:
    """Anchored rotation averaging over the window of ``sub``.

    Anchors (or the pinned earliest node at cold start) are constants; edges
    between two fixed nodes are dropped. Anchor orientations are never returned.
    """
    if not sub.window:
        raise InvalidArgumentError("solve_incremental needs a nonempty window")
    stranded = sub.stranded()
    if stranded:
        raise InvalidArgumentError(
            f"solve_incremental: nodes {stranded[:10]} are not connected to a fixed node"
        )
    return average_rotations(sub.rotations, sub.edge_data, sub.free, cfg)
