"""Bounded FIFO experience memories and discounted returns.

Three memories drive training: the raw environment memory feeding
subgoal discovery, the controller memory of intrinsic-reward
transitions, and the meta-controller memory of completed subgoal
attempts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Generic, Iterator, Sequence, TypeVar

import numpy as np

from .rooms_env import Action, GridState

T = TypeVar("T")

_RETURN_CHECK_TOL = 1e-9


def accumulate_return(rewards: Sequence[float], gamma: float) -> float:
    """Discounted return sum_k gamma^k * rewards[k].

    Args:
        rewards: Non-empty reward sequence, first reward undiscounted.
        gamma: Discount factor in (0, 1].
    """
    if len(rewards) == 0:
        raise ValueError("rewards must be non-empty")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    total = 0.0
    factor = 1.0
    for r in rewards:
        total += factor * r
        factor *= gamma
    return total


@dataclass(frozen=True)
class Transition:
    """One raw environment step."""

    s: GridState
    a: Action
    r: float
    s_next: GridState
    terminal: bool


@dataclass(frozen=True)
class ControllerTransition:
    """One controller step taken while pursuing a subgoal.

    `attained_or_terminal` marks the end of the value bootstrap chain:
    either the subgoal was attained on this step or the environment
    episode ended.
    """

    s: GridState
    goal_id: int
    a: Action
    r_intrinsic: float
    s_next: GridState
    attained_or_terminal: bool


@dataclass(frozen=True)
class MetaTransition:
    """One completed subgoal attempt, as seen by the meta-controller.

    The per-step task rewards and the discount are kept alongside the
    return so consistency can be checked at construction and re-audited
    later.
    """

    s0: GridState
    goal_id: int
    return_g: float
    s_end: GridState
    duration: int
    rewards: tuple[float, ...]
    gamma: float
    terminal: bool

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.duration != len(self.rewards):
            raise ValueError("duration must equal the number of rewards")
        expected = accumulate_return(self.rewards, self.gamma)
        if not math.isclose(
            self.return_g, expected, rel_tol=0.0, abs_tol=_RETURN_CHECK_TOL
        ):
            raise ValueError(
                f"return {self.return_g} inconsistent with rewards "
                f"(expected {expected})"
            )

    @classmethod
    def from_rewards(
        cls,
        s0: GridState,
        goal_id: int,
        rewards: Sequence[float],
        gamma: float,
        s_end: GridState,
        terminal: bool,
    ) -> "MetaTransition":
        return cls(
            s0=s0,
            goal_id=goal_id,
            return_g=accumulate_return(rewards, gamma),
            s_end=s_end,
            duration=len(rewards),
            rewards=tuple(rewards),
            gamma=gamma,
            terminal=terminal,
        )


class BoundedMemory(Generic[T]):
    """Ring buffer with strictly oldest-first eviction."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[T] = []
        self._head = 0

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> T:
        if not 0 <= i < len(self._items):
            raise IndexError(i)
        return self._items[(self._head + i) % self.capacity]

    def __iter__(self) -> Iterator[T]:
        for i in range(len(self._items)):
            yield self[i]

    def push(self, item: T) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._head] = item
            self._head = (self._head + 1) % self.capacity

    def snapshot(self) -> tuple[T, ...]:
        """Immutable copy in insertion order, oldest first."""
        return tuple(self)

    def sample(self, n: int, rng: np.random.Generator) -> list[T]:
        """Draw n items uniformly with replacement."""
        size = len(self._items)
        if size == 0:
            raise ValueError("cannot sample from an empty memory")
        items = self._items
        head = self._head
        cap = self.capacity
        return [items[(head + i) % cap] for i in rng.integers(0, size, size=n)]


def transition_to_dict(t: Transition) -> dict:
    return {
        "x": t.s.x,
        "y": t.s.y,
        "has_key": t.s.has_key,
        "action": t.a.name,
        "reward": t.r,
        "x_next": t.s_next.x,
        "y_next": t.s_next.y,
        "has_key_next": t.s_next.has_key,
        "terminal": t.terminal,
    }


def transition_from_dict(d: dict) -> Transition:
    return Transition(
        s=GridState(int(d["x"]), int(d["y"]), bool(d["has_key"])),
        a=Action[d["action"]],
        r=float(d["reward"]),
        s_next=GridState(
            int(d["x_next"]), int(d["y_next"]), bool(d["has_key_next"])
        ),
        terminal=bool(d["terminal"]),
    )


def save_transitions_jsonl(path: str | Path, transitions: Sequence[Transition]) -> None:
    """Write one JSON object per line; round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in transitions:
            fh.write(json.dumps(transition_to_dict(t)) + "\n")


def load_transitions_jsonl(path: str | Path) -> list[Transition]:
    transitions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                transitions.append(transition_from_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"bad transition on line {line_no}: {exc}") from exc
    return transitions
