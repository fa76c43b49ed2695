"""Four-rooms gridworld with a key and a locked box.

Coordinates are (x, y) cell indices with (0, 0) in the top-left corner:
x grows eastward, y grows southward. The default layout is a 13x13 grid
split into four 5x5 rooms by internal walls along x=6 and y=6, connected
through four doorway cells. Entering the key cell without the key pays
+10 and sets the key flag; entering the box cell while carrying the key
pays +40 and ends the episode.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np

KEY_REWARD = 10.0
BOX_REWARD = 40.0


class Action(IntEnum):
    """The four movement directions."""

    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3


ACTION_DELTAS: dict[Action, tuple[int, int]] = {
    Action.NORTH: (0, -1),
    Action.SOUTH: (0, 1),
    Action.EAST: (1, 0),
    Action.WEST: (-1, 0),
}

N_ACTIONS = len(Action)


@dataclass(frozen=True)
class GridState:
    """Agent position plus the key-possession flag."""

    x: int
    y: int
    has_key: bool = False

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True)
class StepOutcome:
    """Result of one environment step."""

    next_state: GridState
    reward: float
    terminal: bool


class LayoutError(ValueError):
    """Raised for malformed or unreachable layouts."""


@dataclass(frozen=True)
class RoomsLayout:
    """Static grid geometry: walls, key cell, box cell, start cell.

    Attributes:
        width: Grid width in cells, walls included.
        height: Grid height in cells, walls included.
        walls: Set of (x, y) wall cells. The outer border must be wall.
        key_cell: Cell holding the key.
        box_cell: Cell holding the locked box.
        start_cell: Episode start cell.
    """

    width: int
    height: int
    walls: frozenset[tuple[int, int]]
    key_cell: tuple[int, int]
    box_cell: tuple[int, int]
    start_cell: tuple[int, int]

    def __post_init__(self) -> None:
        for x in range(self.width):
            if (x, 0) not in self.walls or (x, self.height - 1) not in self.walls:
                raise LayoutError("outer border must be wall")
        for y in range(self.height):
            if (0, y) not in self.walls or (self.width - 1, y) not in self.walls:
                raise LayoutError("outer border must be wall")
        for name, cell in (
            ("key", self.key_cell),
            ("box", self.box_cell),
            ("start", self.start_cell),
        ):
            if cell in self.walls or not self._in_bounds(cell):
                raise LayoutError(f"{name} cell {cell} is not playable")
        if len({self.key_cell, self.box_cell, self.start_cell}) != 3:
            raise LayoutError("key, box and start cells must be distinct")
        if self._reachable_from_start() != self.playable:
            raise LayoutError("not every playable cell is reachable from start")

    @classmethod
    def default(cls) -> "RoomsLayout":
        """The canonical 13x13 four-rooms grid with 104 playable cells."""
        width = height = 13
        doorways = {(6, 3), (6, 9), (3, 6), (9, 6)}
        walls = set()
        for x in range(width):
            for y in range(height):
                border = x in (0, width - 1) or y in (0, height - 1)
                internal = (x == 6 or y == 6) and (x, y) not in doorways
                if border or internal:
                    walls.add((x, y))
        return cls(
            width=width,
            height=height,
            walls=frozenset(walls),
            key_cell=(10, 2),
            box_cell=(2, 10),
            start_cell=(1, 1),
        )

    def _in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    @cached_property
    def playable(self) -> frozenset[tuple[int, int]]:
        """All non-wall cells."""
        return frozenset(
            (x, y)
            for x in range(self.width)
            for y in range(self.height)
            if (x, y) not in self.walls
        )

    def _reachable_from_start(self) -> frozenset[tuple[int, int]]:
        seen = {self.start_cell}
        frontier = deque([self.start_cell])
        while frontier:
            x, y = frontier.popleft()
            for dx, dy in ACTION_DELTAS.values():
                nxt = (x + dx, y + dy)
                if nxt in self.playable and nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return frozenset(seen)

    @cached_property
    def _splits(self) -> tuple[int, int] | None:
        """Interior wall column/row that partition the grid into rooms.

        Detected as the unique interior column (and row) where at least
        half of the interior cells are wall. None when the layout does
        not have the classic single-split structure.
        """
        interior = self.height - 2
        cols = [
            x
            for x in range(1, self.width - 1)
            if sum((x, y) in self.walls for y in range(1, self.height - 1))
            > interior // 2
        ]
        rows = [
            y
            for y in range(1, self.height - 1)
            if sum((x, y) in self.walls for x in range(1, self.width - 1))
            > (self.width - 2) // 2
        ]
        if len(cols) == 1 and len(rows) == 1:
            return cols[0], rows[0]
        return None

    @cached_property
    def doorways(self) -> frozenset[tuple[int, int]]:
        """Playable cells sitting on the internal wall lines."""
        if self._splits is None:
            return frozenset()
        sx, sy = self._splits
        return frozenset(
            (x, y) for (x, y) in self.playable if x == sx or y == sy
        )

    def room_of(self, cell: tuple[int, int]) -> str:
        """Room id (NW/NE/SW/SE) or doorway id for a playable cell."""
        if cell not in self.playable:
            raise ValueError(f"cell {cell} is not playable")
        if self._splits is None:
            raise LayoutError("layout has no four-room partition")
        sx, sy = self._splits
        x, y = cell
        if x == sx:
            return f"doorway-west-east-{'north' if y < sy else 'south'}"
        if y == sy:
            return f"doorway-north-south-{'west' if x < sx else 'east'}"
        return ("N" if y < sy else "S") + ("W" if x < sx else "E")

    def room_interior_centers(self) -> dict[str, tuple[float, float]]:
        """Exact geometric center of each room interior."""
        if self._splits is None:
            raise LayoutError("layout has no four-room partition")
        centers: dict[str, list[tuple[int, int]]] = {}
        for cell in self.playable:
            room = self.room_of(cell)
            if not room.startswith("doorway"):
                centers.setdefault(room, []).append(cell)
        return {
            room: (
                sum(c[0] for c in cells) / len(cells),
                sum(c[1] for c in cells) / len(cells),
            )
            for room, cells in centers.items()
        }

    def to_text(self) -> str:
        """Serialize to a plain-text grid (# wall, . floor, K/B/S markers)."""
        rows = []
        for y in range(self.height):
            chars = []
            for x in range(self.width):
                if (x, y) in self.walls:
                    chars.append("#")
                elif (x, y) == self.key_cell:
                    chars.append("K")
                elif (x, y) == self.box_cell:
                    chars.append("B")
                elif (x, y) == self.start_cell:
                    chars.append("S")
                else:
                    chars.append(".")
            rows.append("".join(chars))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RoomsLayout":
        """Parse a plain-text grid produced by :meth:`to_text`."""
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise LayoutError("empty layout text")
        width = len(lines[0])
        if any(len(line) != width for line in lines):
            raise LayoutError("layout rows must have equal length")
        walls = set()
        markers: dict[str, tuple[int, int]] = {}
        for y, line in enumerate(lines):
            for x, ch in enumerate(line):
                if ch == "#":
                    walls.add((x, y))
                elif ch in "KBS":
                    if ch in markers:
                        raise LayoutError(f"duplicate marker {ch!r}")
                    markers[ch] = (x, y)
                elif ch != ".":
                    raise LayoutError(f"unknown cell character {ch!r}")
        missing = {"K", "B", "S"} - markers.keys()
        if missing:
            raise LayoutError(f"missing markers: {sorted(missing)}")
        return cls(
            width=width,
            height=len(lines),
            walls=frozenset(walls),
            key_cell=markers["K"],
            box_cell=markers["B"],
            start_cell=markers["S"],
        )


class FourRoomsEnv:
    """Deterministic four-rooms environment.

    `step` is a pure function of (state, action) when `slip_prob` is 0
    (the default); with slip enabled the chosen action is replaced by a
    uniformly random one with probability `slip_prob`, drawn from `rng`.
    """

    def __init__(
        self,
        layout: RoomsLayout | None = None,
        slip_prob: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> None:
        if not 0.0 <= slip_prob < 1.0:
            raise ValueError("slip_prob must be in [0, 1)")
        if slip_prob > 0.0 and rng is None:
            raise ValueError("slip_prob > 0 requires an rng")
        self.layout = layout if layout is not None else RoomsLayout.default()
        self.slip_prob = slip_prob
        self._rng = rng
        self._episode_steps = 0

    @property
    def episode_steps(self) -> int:
        """Steps taken since the last reset."""
        return self._episode_steps

    def reset(self) -> GridState:
        self._episode_steps = 0
        x, y = self.layout.start_cell
        return GridState(x, y, has_key=False)

    def is_terminal(self, state: GridState) -> bool:
        return state.cell == self.layout.box_cell and state.has_key

    def playable_cells(self) -> frozenset[tuple[int, int]]:
        return self.layout.playable

    def room_of(self, cell: tuple[int, int]) -> str:
        return self.layout.room_of(cell)

    def step(self, state: GridState, action: Action) -> StepOutcome:
        """Move one cell, handing out key/box rewards.

        Raises:
            ValueError: when stepping from a non-playable or terminal state.
        """
        if state.cell not in self.layout.playable:
            raise ValueError(f"state {state} is not playable")
        if self.is_terminal(state):
            raise ValueError("cannot step from a terminal state")
        if self.slip_prob > 0.0 and self._rng.random() < self.slip_prob:
            action = Action(int(self._rng.integers(N_ACTIONS)))
        dx, dy = ACTION_DELTAS[Action(action)]
        target = (state.x + dx, state.y + dy)
        if target in self.layout.walls:
            target = state.cell
        has_key = state.has_key
        reward = 0.0
        if target == self.layout.key_cell and not has_key:
            reward = KEY_REWARD
            has_key = True
        terminal = False
        if target == self.layout.box_cell and has_key:
            reward = BOX_REWARD
            terminal = True
        self._episode_steps += 1
        return StepOutcome(
            next_state=GridState(target[0], target[1], has_key),
            reward=reward,
            terminal=terminal,
        )
