"""
Strategy registry for orientation-update modes.

Every mode of the odometry loop (incremental averaging, chaining, global
averaging at each frame, single-anchor windowed averaging) is a strategy class
registered under a name. Extra strategies can be loaded from a Python file.
"""

import importlib.util
from abc import ABC, abstractmethod
from pathlib import Path

from .config import PipelineConfig
from .exceptions import InvalidArgumentError
from .logging import get_logger
from .so3 import Rot3
from .viewgraph import ViewGraph

logger = get_logger()


class BaseOrientationStrategy(ABC):
    """Base class for the step that refines orientations after a frame is added.

    Strategies run inside the pipeline's single writer and must not mutate the
    graph themselves: they return the orientations to write back.
    """

    #: whether accepted loop candidates trigger global re-averaging in this mode
    runs_loop_closure: bool = True

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.logger = get_logger()

    @abstractmethod
    def update(self, graph: ViewGraph, frame_id: int) -> dict[int, Rot3]:
        """Return refined orientations after ``frame_id`` joined ``graph``.

        Args:
            graph: The view-graph, already holding the new node and its edges
            frame_id: Id of the node that was just added

        Returns:
            Mapping frame id -> orientation for every node to overwrite.
        """
        pass


class StrategyRegistry:
    """Registry for managing orientation strategy implementations."""

    def __init__(self):
        self._strategies: dict[str, type[BaseOrientationStrategy]] = {}

    def register(self, name: str, strategy_class: type[BaseOrientationStrategy]) -> None:
        """Register a strategy implementation under ``name``."""
        self._strategies[name] = strategy_class
        logger.debug(f"Registered strategy: {name}")

    def register_decorator(self, name: str | list[str]):
        """Decorator for registering strategy classes.

        Usage:
            @register_strategy("incremental")
            class IncrementalStrategy(BaseOrientationStrategy):
                def update(self, graph, frame_id):
                    ...
        """

        def decorator(
            strategy_class: type[BaseOrientationStrategy],
        ) -> type[BaseOrientationStrategy]:
            if isinstance(name, str):
                self.register(name, strategy_class)
            elif isinstance(name, list):
                for alias in name:
                    self.register(alias, strategy_class)
            else:
                raise ValueError("name must be a string or list of strings")
            return strategy_class

        return decorator

    def create(self, name: str, config: PipelineConfig) -> BaseOrientationStrategy:
        """Instantiate the strategy registered as ``name``.

        Raises:
            InvalidArgumentError: If no strategy has that name.
        """
        if name not in self._strategies:
            available = sorted(self._strategies)
            raise InvalidArgumentError(f"Strategy '{name}' not found. Available: {available}")
        return self._strategies[name](config)

    def get_strategy_class(self, name: str) -> type[BaseOrientationStrategy] | None:
        return self._strategies.get(name)

    def list_strategies(self) -> list[str]:
        return list(self._strategies)

    def unregister(self, name: str) -> None:
        self._strategies.pop(name, None)

    def load_from_file(self, strategy_file_path: str | Path) -> int:
        """Execute a Python file that registers strategies; returns how many it added."""
        strategy_path = Path(strategy_file_path)
        if not strategy_path.exists():
            raise FileNotFoundError(f"Strategy file not found: {strategy_file_path}")

        initial = set(self._strategies)
        spec = importlib.util.spec_from_file_location(
            f"rotvo_strategies_{strategy_path.stem}", strategy_path
        )
        if not spec or not spec.loader:
            raise InvalidArgumentError(f"Failed to create module spec for: {strategy_path}")

        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)

        loaded = len(set(self._strategies) - initial)
        logger.info(f"Loaded {loaded} strategies from {strategy_path}")
        return loaded


# Global registry instance
strategy_registry = StrategyRegistry()

# Convenience decorator for strategy registration
register_strategy = strategy_registry.register_decorator
