"""Shared fixtures and oracles for the test suite."""

from collections import deque

import numpy as np
import pytest

from subgoal_hrl.memory import Transition
from subgoal_hrl.rooms_env import ACTION_DELTAS, FourRoomsEnv, GridState, RoomsLayout


@pytest.fixture
def layout() -> RoomsLayout:
    return RoomsLayout.default()


@pytest.fixture
def env(layout) -> FourRoomsEnv:
    return FourRoomsEnv(layout)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_distance(layout: RoomsLayout, src: tuple[int, int], dst: tuple[int, int]) -> int:
    """BFS shortest-path length between playable cells."""
    if src == dst:
        return 0
    seen = {src}
    frontier = deque([(src, 0)])
    while frontier:
        (x, y), d = frontier.popleft()
        for dx, dy in ACTION_DELTAS.values():
            nxt = (x + dx, y + dy)
            if nxt == dst:
                return d + 1
            if nxt in layout.playable and nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, d + 1))
    raise ValueError(f"{dst} unreachable from {src}")


def arrival_source(layout: RoomsLayout, cell: tuple[int, int]):
    """A playable neighbor (never the key cell) plus the action entering `cell`."""
    for action, (dx, dy) in ACTION_DELTAS.items():
        src = (cell[0] - dx, cell[1] - dy)
        if src in layout.playable and src != layout.key_cell:
            return src, action
    raise ValueError(f"no playable neighbor for {cell}")


def build_full_coverage_memory(
    env: FourRoomsEnv | None = None, arrivals_per_cell: int = 5
) -> list[Transition]:
    """Transitions arriving at every playable cell, built by real env steps.

    Visitation is near-uniform (arrivals_per_cell arrivals per cell). The
    key-cell arrivals each pay +10; exactly one box arrival carries the
    key and pays +40 terminally, so the memory holds both reward
    anomalies and >= 95% zero-reward transitions.
    """
    env = env or FourRoomsEnv()
    layout = env.layout
    transitions = []
    for cell in sorted(layout.playable):
        src, action = arrival_source(layout, cell)
        for i in range(arrivals_per_cell):
            has_key = cell == layout.box_cell and i == arrivals_per_cell - 1
            state = GridState(src[0], src[1], has_key)
            out = env.step(state, action)
            assert out.next_state.cell == cell
            transitions.append(
                Transition(state, action, out.reward, out.next_state, out.terminal)
            )
    return transitions


@pytest.fixture
def full_coverage_memory(env) -> list[Transition]:
    return build_full_coverage_memory(env)
