"""
The view-graph: frames with absolute orientations as nodes, validated relative
orientations as edges, and extraction of the local sub-graph optimised at each
frame step.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, TextIO

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import DatasetError, InvalidArgumentError
from .logging import get_logger
from .so3 import Rot3

logger = get_logger()

EdgeKey = tuple[int, int]


@dataclass(frozen=True, slots=True)
class Edge:
    """Relative orientation R_jk = R_j^T R_k with its inlier support."""

    R_jk: Rot3
    inlier_count: int
    is_loop: bool = False


class ViewGraph:
    """Single-writer view-graph. The first node carries the gauge (identity)."""

    def __init__(self):
        self.nodes: dict[int, Rot3] = {}
        self.edges: dict[EdgeKey, Edge] = {}
        self._adjacency: dict[int, set[int]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, frame_id: int) -> bool:
        return frame_id in self.nodes

    @property
    def gauge_id(self) -> int | None:
        return next(iter(self.nodes), None)

    @property
    def last_id(self) -> int | None:
        return next(reversed(self.nodes), None)

    def add_node(self, frame_id: int, R_init: Rot3 | None = None) -> None:
        """Insert a frame; ids must arrive in increasing order."""
        if frame_id in self.nodes:
            raise InvalidArgumentError(f"Node {frame_id} already exists")
        if self.nodes and frame_id < self.last_id:
            raise InvalidArgumentError(
                f"Node {frame_id} inserted out of order (last node is {self.last_id})"
            )
        if not self.nodes or R_init is None:
            R_init = Rot3.identity()
        self.nodes[frame_id] = R_init
        self._adjacency[frame_id] = set()

    def add_edge(
        self, j: int, k: int, R_jk: Rot3, inlier_count: int, is_loop: bool = False
    ) -> bool:
        """Store edge (j, k). A duplicate replaces the stored edge only when it
        has strictly more inliers. Returns whether the edge was stored."""
        if j == k:
            raise InvalidArgumentError(f"Self-edge ({j}, {k}) is not allowed")
        if j > k:
            raise InvalidArgumentError(f"Edge ({j}, {k}) must satisfy j < k")
        for node in (j, k):
            if node not in self.nodes:
                raise InvalidArgumentError(f"Edge ({j}, {k}) has missing endpoint {node}")

        existing = self.edges.get((j, k))
        if existing is not None and inlier_count <= existing.inlier_count:
            logger.debug(
                f"Kept edge ({j}, {k}) with {existing.inlier_count} inliers over {inlier_count}"
            )
            return False
        self.edges[(j, k)] = Edge(R_jk, int(inlier_count), bool(is_loop))
        self._adjacency[j].add(k)
        self._adjacency[k].add(j)
        return True

    def neighbors(self, frame_id: int) -> set[int]:
        return self._adjacency[frame_id]

    def set_orientations(self, rotations: Mapping[int, Rot3]) -> None:
        """Write solver output back; the gauge node is never moved."""
        for frame_id, R in rotations.items():
            if frame_id == self.gauge_id:
                continue
            if frame_id not in self.nodes:
                raise InvalidArgumentError(f"Unknown node {frame_id}")
            self.nodes[frame_id] = R

    def is_connected(self) -> bool:
        if len(self.nodes) <= 1:
            return True
        index = {frame_id: i for i, frame_id in enumerate(self.nodes)}
        rows = [index[j] for j, _ in self.edges]
        cols = [index[k] for _, k in self.edges]
        adjacency = coo_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(index), len(index))
        )
        n_components, _ = connected_components(adjacency, directed=False)
        return n_components == 1

    def copy(self) -> "ViewGraph":
        clone = ViewGraph()
        clone.nodes = dict(self.nodes)
        clone.edges = dict(self.edges)
        clone._adjacency = {k: set(v) for k, v in self._adjacency.items()}
        return clone

    def dump(self, stream: TextIO) -> None:
        """Write the debug dump: ``NODE id q...`` then ``EDGE j k q... inliers loop``."""
        for frame_id, R in self.nodes.items():
            stream.write(f"NODE {frame_id} {R.format()}\n")
        for (j, k), edge in sorted(self.edges.items()):
            stream.write(
                f"EDGE {j} {k} {edge.R_jk.format()} {edge.inlier_count} {int(edge.is_loop)}\n"
            )

    @classmethod
    def load(cls, path: str | Path) -> "ViewGraph":
        """Read a graph dump written by :meth:`dump`."""
        path = Path(path)
        graph = cls()
        pending: list[tuple[int, list[str]]] = []
        try:
            lines = path.read_text().splitlines()
        except OSError as e:
            raise DatasetError(f"Cannot read graph dump: {e}", path) from e

        for lineno, raw in enumerate(lines, start=1):
            tokens = raw.split("#", 1)[0].split()
            if not tokens:
                continue
            try:
                if tokens[0] == "NODE" and len(tokens) == 6:
                    graph.add_node(int(tokens[1]), Rot3.parse(tokens[2:6]))
                elif tokens[0] == "EDGE" and len(tokens) == 9:
                    pending.append((lineno, tokens))
                else:
                    raise DatasetError(f"Unrecognised record {tokens[0]!r}", path, lineno)
            except (ValueError, InvalidArgumentError) as e:
                raise DatasetError(str(e), path, lineno) from e

        for lineno, tokens in pending:
            if tokens[8] not in ("0", "1"):
                raise DatasetError(f"Loop flag must be 0 or 1, got {tokens[8]!r}", path, lineno)
            try:
                graph.add_edge(
                    int(tokens[1]),
                    int(tokens[2]),
                    Rot3.parse(tokens[3:7]),
                    int(tokens[7]),
                    tokens[8] == "1",
                )
            except (ValueError, InvalidArgumentError) as e:
                raise DatasetError(str(e), path, lineno) from e
        return graph


@dataclass(frozen=True)
class LocalSubgraph:
    """Optimisation window, its frozen anchors and every edge touching the window.

    ``rotations`` snapshots the orientations of window and anchor nodes.
    ``pinned`` is the earliest window node when there are no anchors (cold start).
    """

    window: tuple[int, ...]
    anchors: tuple[int, ...]
    edges: tuple[EdgeKey, ...]
    edge_data: Mapping[EdgeKey, Edge]
    rotations: Mapping[int, Rot3]
    pinned: int | None = None

    @property
    def fixed(self) -> tuple[int, ...]:
        return self.anchors if self.pinned is None else (self.pinned,)

    @property
    def free(self) -> tuple[int, ...]:
        return tuple(i for i in self.window if i != self.pinned)

    def stranded(self) -> list[int]:
        """Nodes with no path along ``edges`` to a fixed node."""
        nodes = list(self.rotations)
        index = {frame_id: i for i, frame_id in enumerate(nodes)}
        rows = [index[j] for j, _ in self.edges]
        cols = [index[k] for _, k in self.edges]
        adjacency = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(nodes), len(nodes)))
        _, labels = connected_components(adjacency, directed=False)
        anchored = {labels[index[f]] for f in self.fixed}
        return [frame_id for frame_id in nodes if labels[index[frame_id]] not in anchored]


def local_subgraph(g: ViewGraph, window_size: int) -> LocalSubgraph:
    """The last ``window_size`` nodes, their outside neighbours and incident edges."""
    if not g.nodes:
        raise InvalidArgumentError("local_subgraph needs a nonempty graph")
    if window_size < 1:
        raise InvalidArgumentError(f"window_size must be >= 1, got {window_size}")

    ids = list(g.nodes)
    window = tuple(ids[-min(window_size, len(ids)) :])
    in_window = set(window)

    anchors: set[int] = set()
    edge_keys: set[EdgeKey] = set()
    for node in window:
        for other in g.neighbors(node):
            key = (node, other) if node < other else (other, node)
            edge_keys.add(key)
            if other not in in_window:
                anchors.add(other)

    pinned = window[0] if not anchors else None
    involved = in_window | anchors
    edges = tuple(sorted(edge_keys))
    return LocalSubgraph(
        window=window,
        anchors=tuple(sorted(anchors)),
        edges=edges,
        edge_data={key: g.edges[key] for key in edges},
        rotations={i: g.nodes[i] for i in sorted(involved)},
        pinned=pinned,
    )
