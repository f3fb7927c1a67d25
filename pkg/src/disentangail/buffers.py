"""Observation stores for expert, agent and prior trajectories."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .envlab import WINDOW, Trajectory, TrajectorySet, get_realm
from .errors import ConfigurationError, ContractError, UsageError

logger = logging.getLogger(__name__)

KINDS = ("expert", "agent", "prior_expert", "prior_agent")
EXPERT_DOMAIN_KINDS = ("expert", "prior_expert")


@dataclass
class WindowBatch:
    windows: np.ndarray  # (n, 4, h, w, c), newest first
    labels: np.ndarray  # (n,) domain labels
    traj: np.ndarray
    t: np.ndarray


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    windows: np.ndarray
    r_true: np.ndarray


class TrajectoryBuffer:
    """Fixed-horizon trajectory store.

    Only the ``agent`` buffer accepts ``push``; it evicts its oldest whole
    trajectories once the observation count exceeds ``capacity``. The other
    kinds are filled once through ``load``.
    """

    def __init__(self, kind: str, capacity: int):
        if kind not in KINDS:
            raise ConfigurationError(f"unknown buffer kind {kind!r}")
        self.kind = kind
        self.capacity = capacity
        self.domain = 1 if kind in EXPERT_DOMAIN_KINDS else 0
        self._trajs: list[Trajectory] = []
        self._stack: dict[str, np.ndarray] | None = None
        self._loaded = False

    def __len__(self) -> int:
        return len(self._trajs)

    @property
    def n_observations(self) -> int:
        return sum(len(t) for t in self._trajs)

    @property
    def trajectories(self) -> list[Trajectory]:
        return list(self._trajs)

    def _check_len(self, traj: Trajectory) -> None:
        if self._trajs and len(traj) != len(self._trajs[0]):
            raise ContractError(f"trajectory length {len(traj)} differs from buffer horizon {len(self._trajs[0])}")

    def load(self, trajectories: TrajectorySet | list[Trajectory]) -> "TrajectoryBuffer":
        if self.kind == "agent":
            raise UsageError("the agent buffer is filled by push()")
        if self._loaded:
            raise UsageError(f"{self.kind} buffer is immutable after load")
        for traj in trajectories:
            if len(traj) == 0:
                continue
            self._check_len(traj)
            self._trajs.append(traj)
        if self.n_observations > self.capacity:
            logger.warning("%s buffer holds %d observations, above capacity %d", self.kind, self.n_observations, self.capacity)
        self._loaded = True
        self._stack = None
        return self

    def push(self, traj: Trajectory) -> None:
        if self.kind != "agent":
            raise UsageError(f"cannot push to the immutable {self.kind} buffer")
        if len(traj) == 0:
            logger.warning("ignoring empty trajectory")
            return
        self._check_len(traj)
        self._trajs.append(traj)
        while self.n_observations > self.capacity and len(self._trajs) > 1:
            self._trajs.pop(0)
        self._stack = None

    def _arrays(self) -> dict[str, np.ndarray]:
        if self._stack is None:
            fields = ("obs", "states", "actions", "next_states", "r_true")
            self._stack = {f: np.stack([getattr(t, f) for t in self._trajs]) for f in fields}
        return self._stack

    def _draw(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if not self._trajs:
            raise ContractError(f"cannot sample from the empty {self.kind} buffer")
        horizon = len(self._trajs[0])
        flat = rng.integers(0, len(self._trajs) * horizon, size=n)
        return flat // horizon, flat % horizon

    def _windows(self, traj: np.ndarray, t: np.ndarray) -> np.ndarray:
        obs = self._arrays()["obs"]
        idx = np.maximum(t[:, None] - np.arange(WINDOW), 0)
        return obs[traj[:, None], idx]

    def sample_windows(self, n: int, rng: np.random.Generator) -> WindowBatch:
        """``n`` uniform draws of newest-first 4-windows with this buffer's label."""
        traj, t = self._draw(n, rng)
        return WindowBatch(self._windows(traj, t), np.full(n, self.domain, dtype=np.float32), traj, t)

    def sample_observations(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        traj, t = self._draw(n, rng)
        return self._arrays()["obs"][traj, t], np.full(n, self.domain, dtype=np.float32)

    def sample_transitions(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        traj, t = self._draw(n, rng)
        a = self._arrays()
        return TransitionBatch(
            a["states"][traj, t],
            a["actions"][traj, t],
            a["next_states"][traj, t],
            self._windows(traj, t),
            a["r_true"][traj, t],
        )

    def all_windows(self) -> tuple[np.ndarray, np.ndarray]:
        """Every window in storage (ordered by trajectory, then time) and its r_true."""
        a = self._arrays()
        n, horizon = a["r_true"].shape
        traj = np.repeat(np.arange(n), horizon)
        t = np.tile(np.arange(horizon), n)
        return self._windows(traj, t), a["r_true"].reshape(-1)


# Reference capacities in observations: (|B_E|, |B_P.x|, |B_pi|, |tau|).
REFERENCE_SIZES = {
    "inverted_pendulum": (10000, 10000, 10000, 50),
    "reacher": (10000, 10000, 10000, 50),
    "hopper": (20000, 20000, 100000, 200),
    "half_cheetah": (20000, 20000, 100000, 200),
    "pusher": (10000, 10000, 100000, 200),
    "striker": (10000, 10000, 100000, 200),
}
_DESK_ANALOG = {"pointreach": "reacher", "cartbalance": "inverted_pendulum"}


@dataclass(frozen=True)
class Capacities:
    expert: int
    prior: int
    agent: int
    horizon: int


def load_reference_sizes(realm: str, scale: float = 0.1) -> Capacities:
    """Buffer capacities for ``realm``: reference sizes times ``scale``.

    Desk realms map onto their closest reference (pointreach -> reacher,
    cartbalance -> inverted_pendulum) and keep their own horizon. binaryworld
    is already tiny and ignores ``scale``: four 3-step demonstrations, and
    100 episodes for the agent and prior stores.
    """
    if realm == "binaryworld":
        return Capacities(12, 300, 300, 3)
    key = _DESK_ANALOG.get(realm, realm)
    if key not in REFERENCE_SIZES:
        raise ConfigurationError(f"no reference sizes for realm {realm!r}")
    e, p, a, tau = REFERENCE_SIZES[key]
    if realm in _DESK_ANALOG:
        tau = get_realm(realm).horizon
    return Capacities(int(round(e * scale)), int(round(p * scale)), int(round(a * scale)), tau)
