"""Single-phase training loop tying environment, memories, discovery and
agents together, plus the baseline regimes used for comparison.

Modes:
    random_walk     uniform random actions; fills the experience memory only
    flat_q          non-hierarchical Q-learning with replay
    random_meta_hrl discovered subgoals picked uniformly; controller learns
    unified_hrl     full loop: discovery, controller and meta-controller
                    all training together
"""

from __future__ import annotations

import time
from collections import defaultdict, deque
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from .agent import (
    ControllerTable,
    EpsilonSchedule,
    FlatTable,
    MetaTable,
    StateIndex,
    epsilon_greedy_index,
    flat_q_update,
    intrinsic_critic,
    select_action,
    select_subgoal,
    update_controller,
    update_meta,
)
from .discovery import InsufficientMemoryError, SubgoalSet, discover, merge
from .memory import (
    BoundedMemory,
    ControllerTransition,
    MetaTransition,
    Transition,
)
from .rooms_env import Action, FourRoomsEnv, GridState, N_ACTIONS, RoomsLayout

MODES = ("random_walk", "flat_q", "random_meta_hrl", "unified_hrl")

METRICS_HEADER = "episode,steps,return,coverage,success_rate,num_subgoals"


class ConfigError(ValueError):
    """Raised before any stepping when a run configuration is invalid."""


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a training run, with desk-scale defaults.

    Attributes:
        mode: One of MODES.
        seed: Root seed for the run's single random stream.
        total_steps: Environment steps to execute.
        k: Number of K-means centroids discovered.
        theta_anom: Reward z-score threshold for anomaly subgoals.
        warmup_steps: Random-walk steps before the first discovery.
        discovery_period: Steps between rediscoveries.
        subgoal_timeout: Max controller steps per subgoal attempt.
        episode_cap: Max environment steps per episode.
        slip_prob: Chance a chosen action is replaced by a random one.
        memory_capacity: Raw experience memory size (discovery input).
        controller_memory_capacity: Controller replay memory size.
        meta_memory_capacity: Meta-controller replay memory size.
        alpha: TD step size for all tables.
        gamma: Discount factor for all returns.
        batch_size: Replay minibatch size per update.
        table_init: Initial table value (0 default; optimistic if > 0).
        controller_eps_start / controller_eps_end: Per-subgoal exploration
            range; annealed by the subgoal's moving success rate.
        success_window: Attempts in the moving success-rate window.
        meta_eps_start / meta_eps_end: Meta exploration range, annealed
            linearly over the first half of training.
        flat_eps: Fixed exploration rate of the flat baseline.
        discovery_min_samples: Memory size required before discovery runs.
        use_dissimilarity: Also flag state-dissimilarity outliers.
        layout_text: Optional custom grid (text format); default four-rooms.
    """

    mode: str
    seed: int = 0
    total_steps: int = 200_000
    k: int = 4
    theta_anom: float = 3.0
    warmup_steps: int = 5_000
    discovery_period: int = 10_000
    subgoal_timeout: int = 50
    episode_cap: int = 200
    slip_prob: float = 0.0
    memory_capacity: int = 50_000
    controller_memory_capacity: int = 50_000
    meta_memory_capacity: int = 10_000
    alpha: float = 0.1
    gamma: float = 0.99
    batch_size: int = 32
    table_init: float = 0.0
    controller_eps_start: float = 1.0
    controller_eps_end: float = 0.1
    success_window: int = 100
    meta_eps_start: float = 1.0
    meta_eps_end: float = 0.1
    flat_eps: float = 0.4
    discovery_min_samples: int = 100
    use_dissimilarity: bool = False
    layout_text: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.total_steps > self.warmup_steps > 0:
            raise ConfigError("need total_steps > warmup_steps > 0")
        if self.subgoal_timeout < 1:
            raise ConfigError("subgoal_timeout must be >= 1")
        if self.episode_cap < 1:
            raise ConfigError("episode_cap must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.theta_anom <= 0:
            raise ConfigError("theta_anom must be > 0")
        if self.discovery_period < 1:
            raise ConfigError("discovery_period must be >= 1")
        if self.discovery_min_samples < 2:
            raise ConfigError("discovery_min_samples must be >= 2")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must be in (0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must be in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("memory_capacity", "controller_memory_capacity",
                     "meta_memory_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.controller_eps_end <= self.controller_eps_start <= 1.0:
            raise ConfigError("controller epsilon range out of order")
        if not 0.0 <= self.meta_eps_end <= self.meta_eps_start <= 1.0:
            raise ConfigError("meta epsilon range out of order")
        if not 0.0 <= self.flat_eps <= 1.0:
            raise ConfigError("flat_eps must be in [0, 1]")
        if self.success_window < 1:
            raise ConfigError("success_window must be >= 1")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ConfigError("slip_prob must be in [0, 1)")

    def layout(self) -> RoomsLayout:
        if self.layout_text is None:
            return RoomsLayout.default()
        return RoomsLayout.from_text(self.layout_text)

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class MetricsRecord:
    """Per-episode training metrics; wall_clock stays out of the CSV."""

    episode: int
    steps: int
    ep_return: float
    coverage: float
    success_rate: float
    num_subgoals: int
    wall_clock: float = 0.0

    def csv_row(self) -> str:
        return (
            f"{self.episode},{self.steps},{self.ep_return!r},"
            f"{self.coverage!r},{self.success_rate!r},{self.num_subgoals}"
        )


def metrics_to_csv(records: Sequence[MetricsRecord]) -> str:
    lines = [METRICS_HEADER]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


def metrics_from_csv(text: str) -> list[MetricsRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError("unrecognized metrics CSV header")
    records = []
    for ln in lines[1:]:
        ep, steps, ret, cov, sr, ng = ln.split(",")
        records.append(
            MetricsRecord(
                episode=int(ep),
                steps=int(steps),
                ep_return=float(ret),
                coverage=float(cov),
                success_rate=float(sr),
                num_subgoals=int(ng),
            )
        )
    return records


def coverage(
    visited: set[tuple[int, int]] | frozenset[tuple[int, int]],
    playable: frozenset[tuple[int, int]],
) -> float:
    """Fraction of playable cells visited at least once."""
    return len(visited & playable) / len(playable)


def moving_average(series: Sequence[float], window: int) -> list[float]:
    """Trailing mean over the last `window` points (fewer at the start)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    acc = 0.0
    for i, v in enumerate(series):
        acc += v
        if i >= window:
            acc -= series[i - window]
        out.append(acc / min(i + 1, window))
    return out


@dataclass
class RunResult:
    """Everything a finished run produced."""

    config: RunConfig
    metrics: list[MetricsRecord]
    visited: frozenset[tuple[int, int]]
    subgoals: SubgoalSet | None
    controller: ControllerTable | None
    meta: MetaTable | None
    flat: FlatTable | None
    memory: tuple[Transition, ...]
    discovery_steps: tuple[int, ...]
    warmup_steps_used: int
    attempt_steps_total: int
    steps: int
    elapsed_seconds: float

    @property
    def final_coverage(self) -> float:
        return self.metrics[-1].coverage if self.metrics else 0.0


class Runner:
    """Executes one run. Internal machinery behind :func:`run`."""

    def __init__(self, config: RunConfig) -> None:
        config.validate()
        self.cfg = config
        self.rng = np.random.default_rng(config.seed)
        layout = config.layout()
        self.env = FourRoomsEnv(layout, slip_prob=config.slip_prob, rng=self.rng)
        self.index = StateIndex(layout)
        self.playable = layout.playable

        self.memory: BoundedMemory[Transition] = BoundedMemory(
            config.memory_capacity
        )
        self.ctrl_memory: BoundedMemory[ControllerTransition] = BoundedMemory(
            config.controller_memory_capacity
        )
        self.meta_memory: BoundedMemory[MetaTransition] = BoundedMemory(
            config.meta_memory_capacity
        )

        self.subgoals: SubgoalSet | None = None
        self.controller: ControllerTable | None = None
        self.meta: MetaTable | None = None
        self.flat: FlatTable | None = None

        self.visited: set[tuple[int, int]] = set()
        self.metrics: list[MetricsRecord] = []
        self.steps = 0
        self.episode_index = 0
        self.ep_steps = 0
        self.ep_return = 0.0
        self.state = self.env.reset()
        self._mark_visit(self.state)

        self.warmup_steps_used = 0
        self.attempt_steps_total = 0
        self.discovery_steps: list[int] = []
        hrl = config.mode in ("random_meta_hrl", "unified_hrl")
        self._next_discovery: int | None = config.warmup_steps if hrl else None

        self._goal_outcomes: dict[int, deque[bool]] = defaultdict(
            lambda: deque(maxlen=config.success_window)
        )
        self._recent_attempts: deque[bool] = deque(maxlen=config.success_window)
        self._meta_schedule = EpsilonSchedule(
            config.meta_eps_start,
            config.meta_eps_end,
            max(1, config.total_steps // 2),
        )
        self._t0 = time.perf_counter()

    # -- shared plumbing ---------------------------------------------------

    def _mark_visit(self, state: GridState) -> None:
        self.visited.add(state.cell)

    def _env_step(self, action: Action, record: bool = True):
        s = self.state
        out = self.env.step(s, action)
        self.steps += 1
        self.ep_steps += 1
        self.ep_return += out.reward
        if record:
            self.memory.push(Transition(s, action, out.reward, out.next_state,
                                        out.terminal))
        self._mark_visit(out.next_state)
        self.state = out.next_state
        self._maybe_discover()
        return out

    def _maybe_discover(self) -> None:
        if self._next_discovery is None or self.steps < self._next_discovery:
            return
        self._next_discovery += self.cfg.discovery_period
        try:
            fresh = discover(
                self.memory.snapshot(),
                self.cfg.k,
                self.cfg.theta_anom,
                self.rng,
                min_samples=self.cfg.discovery_min_samples,
                use_dissimilarity=self.cfg.use_dissimilarity,
            )
        except InsufficientMemoryError:
            return
        if self.subgoals is None:
            self.subgoals = fresh
            self.controller = ControllerTable(
                self.index, fresh.size, init=self.cfg.table_init
            )
            self.meta = MetaTable(self.index, fresh.size, init=self.cfg.table_init)
        else:
            merged, id_map = merge(self.subgoals, fresh)
            self.subgoals = merged
            self.controller = self.controller.remapped(id_map, merged.size)
            self.meta = self.meta.remapped(id_map, merged.size)
        self.discovery_steps.append(self.steps)

    def _episode_over(self, terminal: bool) -> bool:
        return terminal or self.ep_steps >= self.cfg.episode_cap

    def _end_episode(self) -> None:
        self.metrics.append(
            MetricsRecord(
                episode=self.episode_index,
                steps=self.steps,
                ep_return=self.ep_return,
                coverage=coverage(self.visited, self.playable),
                success_rate=self._success_rate(),
                num_subgoals=self.subgoals.size if self.subgoals else 0,
                wall_clock=time.perf_counter() - self._t0,
            )
        )
        self.episode_index += 1
        self.state = self.env.reset()
        self._mark_visit(self.state)
        self.ep_steps = 0
        self.ep_return = 0.0

    def _success_rate(self) -> float:
        if not self._recent_attempts:
            return 0.0
        return sum(self._recent_attempts) / len(self._recent_attempts)

    def _goal_epsilon(self, goal_id: int) -> float:
        cfg = self.cfg
        outcomes = self._goal_outcomes[goal_id]
        rate = (sum(outcomes) / len(outcomes)) if outcomes else 0.0
        return cfg.controller_eps_start - (
            cfg.controller_eps_start - cfg.controller_eps_end
        ) * rate

    # -- mode loops ----------------------------------------------------------

    def run(self) -> RunResult:
        mode = self.cfg.mode
        if mode == "random_walk":
            self._run_random_walk()
        elif mode == "flat_q":
            self._run_flat()
        else:
            self._run_hrl(unified=mode == "unified_hrl")
        if self.ep_steps > 0:
            self._end_episode()
        return RunResult(
            config=self.cfg,
            metrics=self.metrics,
            visited=frozenset(self.visited),
            subgoals=self.subgoals,
            controller=self.controller,
            meta=self.meta,
            flat=self.flat,
            memory=self.memory.snapshot(),
            discovery_steps=tuple(self.discovery_steps),
            warmup_steps_used=self.warmup_steps_used,
            attempt_steps_total=self.attempt_steps_total,
            steps=self.steps,
            elapsed_seconds=time.perf_counter() - self._t0,
        )

    def _run_random_walk(self) -> None:
        while self.steps < self.cfg.total_steps:
            action = Action(int(self.rng.integers(N_ACTIONS)))
            out = self._env_step(action)
            if self._episode_over(out.terminal):
                self._end_episode()

    def _run_flat(self) -> None:
        cfg = self.cfg
        self.flat = FlatTable(self.index, init=cfg.table_init)
        while self.steps < cfg.total_steps:
            # Classic argmax baseline: deterministic first-index tie
            # breaking, so untrained regions do not turn into a uniform
            # random walk.
            action = Action(
                epsilon_greedy_index(
                    self.flat.action_values(self.state),
                    cfg.flat_eps,
                    self.rng,
                    tie_break="first",
                )
            )
            out = self._env_step(action)
            flat_q_update(
                self.flat,
                self.memory.sample(cfg.batch_size, self.rng),
                cfg.alpha,
                cfg.gamma,
            )
            if self._episode_over(out.terminal):
                self._end_episode()

    def _warmup_step(self) -> None:
        action = Action(int(self.rng.integers(N_ACTIONS)))
        out = self._env_step(action)
        self.warmup_steps_used += 1
        if self._episode_over(out.terminal):
            self._end_episode()

    def _choose_subgoal(self, unified: bool) -> int:
        if unified:
            return select_subgoal(
                self.meta,
                self.state,
                self._meta_schedule.value(self.steps),
                self.rng,
            )
        return int(self.rng.integers(self.subgoals.size))

    def _attempt(self, goal_id: int) -> tuple[bool, bool, int]:
        """Pursue one subgoal until attained, episode end, or timeout.

        Returns (attained, terminal, duration).
        """
        cfg = self.cfg
        s0 = self.state
        rewards: list[float] = []
        attained = False
        terminal = False
        t_in = 0
        while True:
            action = select_action(
                self.controller,
                self.state,
                goal_id,
                self._goal_epsilon(goal_id),
                self.rng,
            )
            s_prev = self.state
            out = self._env_step(action)
            t_in += 1
            attained, r_int = intrinsic_critic(
                out.next_state, goal_id, self.subgoals
            )
            self.ctrl_memory.push(
                ControllerTransition(
                    s_prev,
                    goal_id,
                    action,
                    r_int,
                    out.next_state,
                    attained or out.terminal,
                )
            )
            update_controller(
                self.controller,
                self.ctrl_memory.sample(cfg.batch_size, self.rng),
                cfg.alpha,
                cfg.gamma,
            )
            rewards.append(out.reward)
            terminal = out.terminal
            if (
                attained
                or terminal
                or self.ep_steps >= cfg.episode_cap
                or t_in >= cfg.subgoal_timeout
                or self.steps >= cfg.total_steps
            ):
                break
        duration = len(rewards)
        self.attempt_steps_total += duration
        meta_tr = MetaTransition.from_rewards(
            s0, goal_id, rewards, cfg.gamma, self.state, terminal
        )
        self.meta_memory.push(meta_tr)
        self._goal_outcomes[goal_id].append(attained)
        self._recent_attempts.append(attained)
        return attained, terminal, duration

    def _run_hrl(self, unified: bool) -> None:
        cfg = self.cfg
        while self.steps < cfg.total_steps:
            if self.subgoals is None:
                self._warmup_step()
                continue
            goal_id = self._choose_subgoal(unified)
            _, terminal, _ = self._attempt(goal_id)
            if unified:
                update_meta(
                    self.meta,
                    self.meta_memory.sample(cfg.batch_size, self.rng),
                    cfg.alpha,
                    cfg.gamma,
                )
            if self._episode_over(terminal):
                self._end_episode()


def run(config: RunConfig) -> RunResult:
    """Execute a full training run; deterministic given config.seed."""
    return Runner(config).run()


def greedy_rollout(
    config: RunConfig,
    *,
    controller: ControllerTable | None = None,
    meta: MetaTable | None = None,
    subgoals: SubgoalSet | None = None,
    flat: FlatTable | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """One greedy episode from saved tables; reports return and subgoal path."""
    if rng is None:
        rng = np.random.default_rng(0)
    layout = config.layout()
    env = FourRoomsEnv(layout)
    state = env.reset()
    ep_return = 0.0
    steps = 0
    terminal = False
    subgoal_path: list[dict] = []

    if flat is not None:
        while not terminal and steps < config.episode_cap:
            action = Action(
                epsilon_greedy_index(
                    flat.action_values(state), 0.0, rng, tie_break="first"
                )
            )
            out = env.step(state, action)
            ep_return += out.reward
            terminal = out.terminal
            state = out.next_state
            steps += 1
    else:
        if controller is None or meta is None or subgoals is None:
            raise ValueError("hierarchical rollout needs controller, meta and subgoals")
        while not terminal and steps < config.episode_cap:
            goal_id = select_subgoal(meta, state, 0.0, rng)
            attained = False
            t_in = 0
            while True:
                action = select_action(controller, state, goal_id, 0.0, rng)
                out = env.step(state, action)
                ep_return += out.reward
                terminal = out.terminal
                state = out.next_state
                steps += 1
                t_in += 1
                attained, _ = intrinsic_critic(state, goal_id, subgoals)
                if (
                    attained
                    or terminal
                    or t_in >= config.subgoal_timeout
                    or steps >= config.episode_cap
                ):
                    break
            subgoal_path.append(
                {
                    "goal_id": goal_id,
                    "kind": "anomaly" if subgoals.is_anomaly(goal_id) else "centroid",
                    "attained": attained,
                    "steps": t_in,
                }
            )
    return {
        "return": ep_return,
        "steps": steps,
        "terminal": terminal,
        "subgoal_path": subgoal_path,
    }
