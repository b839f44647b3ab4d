"""
Frame-by-frame rotation-only odometry.

Each incoming frame is matched against the last ``f_window`` accepted frames;
pairs whose RANSAC support exceeds ``theta_matches`` become view-graph edges,
the frame joins the graph with a chained initial orientation, and the active
strategy refines orientations (windowed averaging by default). Validated loop
candidates trigger one global re-averaging.
"""

import dataclasses
import time
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .config import PipelineConfig
from .exceptions import InvalidArgumentError, RelRotError
from .logging import get_logger
from .loopclose import LoopCandidate, close_loop, validate_loop
from .relrot import CorrSet, RelRotResult, ransac_relrot
from .rotavg import solve_global, solve_incremental
from .seeds import derive_seed
from .so3 import Rot3
from .strategy_registry import BaseOrientationStrategy, register_strategy, strategy_registry
from .viewgraph import ViewGraph, local_subgraph

logger = get_logger()

STAGES = ("relrot", "graph", "rotavg", "loop")

Trajectory = list[tuple[int, Rot3]]


@register_strategy("incremental")
class IncrementalStrategy(BaseOrientationStrategy):
    """Average the last ``r_window`` orientations against their frozen anchors."""

    def update(self, graph: ViewGraph, frame_id: int) -> dict[int, Rot3]:
        sub = local_subgraph(graph, self.config.r_window)
        return solve_incremental(sub, self.config.irls).rotations


@register_strategy("chaining")
class ChainingStrategy(BaseOrientationStrategy):
    """Keep the chained initial orientation; no averaging, no loop correction."""

    runs_loop_closure = False

    def update(self, graph: ViewGraph, frame_id: int) -> dict[int, Rot3]:
        return {}


@register_strategy("global_each_frame")
class GlobalEachFrameStrategy(BaseOrientationStrategy):
    """Re-average the full graph at every frame."""

    def update(self, graph: ViewGraph, frame_id: int) -> dict[int, Rot3]:
        if len(graph) < 2:
            return {}
        return solve_global(graph, self.config.irls).rotations


@register_strategy("single_anchor")
class SingleAnchorStrategy(BaseOrientationStrategy):
    """Average the window and its neighbours with only the earliest node held fixed."""

    def update(self, graph: ViewGraph, frame_id: int) -> dict[int, Rot3]:
        sub = local_subgraph(graph, self.config.r_window)
        nodes = sorted(sub.rotations)
        edges = _edges_among(graph, set(nodes))
        sub = dataclasses.replace(
            sub,
            window=tuple(nodes),
            anchors=(),
            edges=tuple(edges),
            edge_data={key: graph.edges[key] for key in edges},
            pinned=nodes[0],
        )
        return solve_incremental(sub, self.config.irls).rotations


def _edges_among(graph: ViewGraph, nodes: set[int]) -> list[tuple[int, int]]:
    keys = {
        (min(a, b), max(a, b)) for a in nodes for b in graph.neighbors(a) if b in nodes
    }
    return sorted(keys)


@dataclass(frozen=True)
class FrameRecord:
    """Correspondences of one frame against earlier frames, plus loop candidates."""

    frame_id: int
    pairs: dict[int, CorrSet] = field(default_factory=dict)
    loops: tuple[LoopCandidate, ...] = ()

    def __post_init__(self):
        for j in self.pairs:
            if not 0 <= j < self.frame_id:
                raise InvalidArgumentError(
                    f"Frame {self.frame_id}: pair partner {j} must precede it"
                )
        for cand in self.loops:
            if cand.k != self.frame_id:
                raise InvalidArgumentError(
                    f"Frame {self.frame_id}: loop candidate ({cand.j}, {cand.k}) "
                    f"does not end at the current frame"
                )


@dataclass
class StepReport:
    frame_id: int
    skipped: bool
    edges_tried: int = 0
    edges_accepted: int = 0
    inlier_counts: dict[int, int] = field(default_factory=dict)
    loops_tried: int = 0
    loops_accepted: int = 0
    # Every node of the averaging window reaches an anchor (or the pinned node)
    connected: bool = True
    timings_us: dict[str, int] = field(default_factory=lambda: dict.fromkeys(STAGES, 0))


@dataclass
class PipelineState:
    """Mutable odometry state; one writer at a time."""

    config: PipelineConfig
    strategy: BaseOrientationStrategy
    graph: ViewGraph = field(default_factory=ViewGraph)
    accepted: list[int] = field(default_factory=list)
    last_frame_id: int | None = None
    reports: list[StepReport] = field(default_factory=list)

    @classmethod
    def create(cls, config: PipelineConfig | None = None) -> "PipelineState":
        config = config or PipelineConfig()
        return cls(config=config, strategy=strategy_registry.create(config.mode, config))

    def trajectory(self) -> Trajectory:
        return list(self.graph.nodes.items())


@dataclass
class SequenceResult:
    trajectory: Trajectory
    reports: list[StepReport]
    wall_us: dict[str, int]
    graph: ViewGraph

    @property
    def skipped(self) -> list[int]:
        return [r.frame_id for r in self.reports if r.skipped]


class _Stopwatch:
    def __init__(self, timings: dict[str, int], stage: str):
        self.timings = timings
        self.stage = stage

    def __enter__(self):
        self.start = time.perf_counter_ns()
        return self

    def __exit__(self, *_):
        self.timings[self.stage] += (time.perf_counter_ns() - self.start) // 1000
        return False


def _warm_start(state: PipelineState, j: int) -> Rot3:
    """Initial edge for pair (j, k) with k the incoming frame.

    Prefer the stored edge between the predecessors of j and k; otherwise
    chain a guess for R_k from the newest accepted frame, else identity.
    """
    graph, accepted = state.graph, state.accepted
    prev_k = accepted[-1]
    pos_j = accepted.index(j)
    if pos_j > 0:
        edge = graph.edges.get((accepted[pos_j - 1], prev_k))
        if edge is not None:
            return edge.R_jk

    guess = graph.nodes[prev_k]
    if len(accepted) >= 2:
        last_edge = graph.edges.get((accepted[-2], prev_k))
        if last_edge is not None:
            guess = guess @ last_edge.R_jk
    return graph.nodes[j].relative(guess)


def _estimate_pair(
    state: PipelineState, j: int, k: int, corr: CorrSet, R_init: Rot3
) -> RelRotResult | None:
    cfg = state.config
    relrot_cfg = dataclasses.replace(cfg.relrot, seed=derive_seed(cfg.seed, j, k))
    try:
        return ransac_relrot(corr, R_init, relrot_cfg)
    except RelRotError as e:
        logger.debug(f"Pair ({j}, {k}) rejected: {e}")
        return None


def process_frame(state: PipelineState, rec: FrameRecord) -> StepReport:
    """Advance the odometry by one frame.

    Raises:
        InvalidArgumentError: If the record is not newer than the previous one.
    """
    k = rec.frame_id
    if state.last_frame_id is not None and k <= state.last_frame_id:
        raise InvalidArgumentError(
            f"Frame {k} arrived after frame {state.last_frame_id}; records must be in order"
        )
    state.last_frame_id = k
    cfg = state.config
    report = StepReport(frame_id=k, skipped=False)

    if not state.graph.nodes:
        state.graph.add_node(k)
        state.accepted.append(k)
        state.reports.append(report)
        logger.debug(f"Frame {k} fixes the gauge")
        return report

    # Relative orientations against the matching window
    with _Stopwatch(report.timings_us, "relrot"):
        window = [j for j in state.accepted[-cfg.f_window :] if j in rec.pairs]
        inits = [_warm_start(state, j) for j in window]
        report.edges_tried = len(window)
        if cfg.workers > 1 and len(window) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(
                    pool.map(
                        lambda args: _estimate_pair(state, args[0], k, rec.pairs[args[0]], args[1]),
                        zip(window, inits),
                    )
                )
        else:
            results = [_estimate_pair(state, j, k, rec.pairs[j], R) for j, R in zip(window, inits)]

        accepted: list[tuple[int, RelRotResult]] = []
        for j, result in zip(window, results):
            if result is None:
                continue
            report.inlier_counts[j] = result.inlier_count
            if result.inlier_count > cfg.theta_matches:
                accepted.append((j, result))

    if not accepted:
        report.skipped = True
        # Graph unchanged
        report.connected = state.reports[-1].connected if state.reports else True
        state.reports.append(report)
        logger.warning(
            f"Frame {k} skipped: no pair above {cfg.theta_matches} inliers "
            f"(counts {report.inlier_counts})"
        )
        for cand in rec.loops:
            logger.warning(f"Loop candidate ({cand.j}, {cand.k}) rejected: frame {k} was skipped")
        return report

    with _Stopwatch(report.timings_us, "graph"):
        j_newest, newest = accepted[-1]
        state.graph.add_node(k, state.graph.nodes[j_newest] @ newest.R_jk)
        for j, result in accepted:
            state.graph.add_edge(j, k, result.R_jk, result.inlier_count)
        state.accepted.append(k)
        report.edges_accepted = len(accepted)
        report.connected = not local_subgraph(state.graph, cfg.r_window).stranded()

    with _Stopwatch(report.timings_us, "rotavg"):
        state.graph.set_orientations(state.strategy.update(state.graph, k))

    if rec.loops and cfg.loops and state.strategy.runs_loop_closure:
        with _Stopwatch(report.timings_us, "loop"):
            report.loops_tried = len(rec.loops)
            edges = [e for e in (validate_loop(c, state.graph, cfg) for c in rec.loops) if e]
            if edges and close_loop(state.graph, edges, cfg.irls) is not None:
                report.loops_accepted = len(edges)

    state.reports.append(report)
    logger.debug(
        f"Frame {k}: {report.edges_accepted}/{report.edges_tried} edges, "
        f"timings {report.timings_us}"
    )
    return report


def run_sequence(dataset: Iterable[FrameRecord], cfg: PipelineConfig | None = None) -> SequenceResult:
    """Run the odometry over every record of ``dataset`` in order.

    The trajectory lists the final orientation of each non-skipped frame.
    """
    state = PipelineState.create(cfg)
    start = time.perf_counter_ns()
    for rec in dataset:
        process_frame(state, rec)
    wall = dict.fromkeys(STAGES, 0)
    for report in state.reports:
        for stage, us in report.timings_us.items():
            wall[stage] += us
    wall["total"] = (time.perf_counter_ns() - start) // 1000

    result = SequenceResult(
        trajectory=state.trajectory(), reports=state.reports, wall_us=wall, graph=state.graph
    )
    logger.info(
        f"Processed {len(state.reports)} frames with mode={state.config.mode}: "
        f"{len(result.trajectory)} estimated, {len(result.skipped)} skipped"
    )
    return result
