"""
Loop closure: geometric validation of externally supplied candidates and global
re-averaging once validated loop edges are in the graph.

Candidate detection (appearance retrieval) happens upstream; candidates arrive
with their correspondences through ``loops.txt`` or the API.
"""

import dataclasses
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .config import IrlsConfig, PipelineConfig
from .exceptions import InvalidArgumentError, RelRotError
from .logging import get_logger
from .relrot import CorrSet, ransac_relrot
from .rotavg import IrlsResult, solve_global
from .seeds import derive_seed
from .so3 import Rot3
from .viewgraph import ViewGraph

logger = get_logger()


@dataclass(frozen=True)
class LoopCandidate:
    """A revisit hypothesis between an old frame ``j`` and the current frame ``k``."""

    j: int
    k: int
    corr: CorrSet

    def __post_init__(self):
        if self.j < 0 or self.j >= self.k:
            raise InvalidArgumentError(f"Loop candidate ({self.j}, {self.k}) must satisfy 0 <= j < k")


@dataclass(frozen=True)
class LoopEdge:
    j: int
    k: int
    R_jk: Rot3
    inliers: NDArray[np.intp]
    is_loop: bool = True

    @property
    def inlier_count(self) -> int:
        return len(self.inliers)


def validate_loop(cand: LoopCandidate, g: ViewGraph, cfg: PipelineConfig) -> LoopEdge | None:
    """Verify a candidate geometrically; ``None`` means rejected.

    RANSAC is warm-started at the relative orientation of the current graph
    estimates. A candidate is accepted when its inlier count exceeds
    ``cfg.theta_matches``. Candidates spanning no more than ``f_window``
    frames duplicate a sequential edge and are rejected.
    """
    if cand.k - cand.j <= cfg.f_window:
        logger.warning(
            f"Loop candidate ({cand.j}, {cand.k}) rejected: inside the matching window ({cfg.f_window})"
        )
        return None
    for node in (cand.j, cand.k):
        if node not in g:
            logger.warning(f"Loop candidate ({cand.j}, {cand.k}) rejected: frame {node} not in graph")
            return None

    R_init = g.nodes[cand.j].relative(g.nodes[cand.k])
    relrot_cfg = dataclasses.replace(cfg.relrot, seed=derive_seed(cfg.seed, cand.j, cand.k))
    try:
        result = ransac_relrot(cand.corr, R_init, relrot_cfg)
    except RelRotError as e:
        logger.warning(f"Loop candidate ({cand.j}, {cand.k}) rejected: {e}")
        return None

    if result.inlier_count <= cfg.theta_matches:
        logger.warning(
            f"Loop candidate ({cand.j}, {cand.k}) rejected: "
            f"{result.inlier_count} inliers <= {cfg.theta_matches}"
        )
        return None

    logger.info(f"Loop ({cand.j}, {cand.k}) validated with {result.inlier_count} inliers")
    return LoopEdge(cand.j, cand.k, result.R_jk, result.inliers)


def close_loop(
    g: ViewGraph, edges: Iterable[LoopEdge], cfg: IrlsConfig | None = None
) -> IrlsResult | None:
    """Insert validated loop edges and re-average the whole graph once.

    Edges the graph already holds with at least as much support are rejected by
    the duplicate-edge policy; if none is stored nothing is re-solved and
    ``None`` is returned.
    """
    stored = [
        edge
        for edge in edges
        if g.add_edge(edge.j, edge.k, edge.R_jk, edge.inlier_count, is_loop=True)
    ]
    if not stored:
        return None

    result = solve_global(g, cfg)
    g.set_orientations(result.rotations)
    logger.info(
        f"Closed {len(stored)} loop(s) at frame {max(e.k for e in stored)}: "
        f"{result.sweeps} sweeps over {len(g)} nodes"
    )
    return result
