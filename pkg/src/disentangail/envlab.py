"""Desk-scale cross-domain environment realms.

A realm is a family of small POMDPs sharing one semantic goal. Variants of a
realm differ in appearance (how states are rasterized) and embodiment (how
actions move the state). Episodes always run exactly ``horizon`` steps.

Trajectory convention: a trajectory of horizon ``H`` stores the ``H``
observations ``o_0 .. o_{H-1}`` rendered from the states *before* each action,
together with ``s_t, a_t, s_{t+1}`` and ``r_true(s_t)``. The reward attached to
step ``t`` (true or pseudo) is therefore a function of ``o_t`` and its history.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, UsageError

logger = logging.getLogger(__name__)

REALMS = ("binaryworld", "pointreach", "cartbalance")
WINDOW = 4


@dataclass(frozen=True)
class Appearance:
    palette: str = "standard"
    tilt_deg: float = 0.0
    marker: int = 0  # binaryworld domain bit x


@dataclass(frozen=True)
class Embodiment:
    action_dim: int
    gain: float = 1.0
    pole_length: float = 0.5
    pole_mass: float = 0.1


@dataclass(frozen=True)
class EnvVariant:
    name: str
    appearance: Appearance
    embodiment: Embodiment


@dataclass(frozen=True)
class EnvRealm:
    realm_id: str
    variants: tuple[EnvVariant, ...]
    horizon: int
    obs_shape: tuple[int, int, int]
    state_dim: int


# ---------------------------------------------------------------- dynamics


class _BinaryWorld:
    """Two-bit toy: reach and remain in a target state.

    State ``[y]``; any positive action moves to (or keeps) the target state,
    any non-positive action leaves it. Observation is ``(x, y)`` with ``x``
    the domain marker.
    """

    horizon = 3
    obs_shape = (1, 1, 2)
    state_dim = 1

    def reset(self, rng: np.random.Generator, variant: EnvVariant) -> np.ndarray:
        return np.zeros(1)

    def step(self, s: np.ndarray, a: np.ndarray, variant: EnvVariant) -> np.ndarray:
        return np.array([1.0 if a[0] > 0 else 0.0])

    def reward(self, s: np.ndarray) -> float:
        return float(s[0] >= 0.5)

    def render(self, s: np.ndarray, variant: EnvVariant) -> np.ndarray:
        return np.array([[[float(variant.appearance.marker), float(s[0])]]], dtype=np.float32)


_PALETTES = {
    # background, target/cart, agent/pole
    "standard": ((0.05, 0.05, 0.10), (0.90, 0.20, 0.20), (0.20, 0.90, 0.30)),
    "sand": ((0.65, 0.60, 0.25), (0.90, 0.20, 0.20), (0.20, 0.90, 0.30)),
    "recolor": ((0.05, 0.05, 0.10), (0.90, 0.20, 0.20), (0.25, 0.35, 0.95)),
}


def _palette(name: str):
    base = "standard" if name == "inverted" else name
    bg, c1, c2 = (np.asarray(c, dtype=np.float32) for c in _PALETTES[base])
    return bg, c1, c2


def _blob(img: np.ndarray, row: float, col: float, color: np.ndarray, sigma: float) -> None:
    h, w, _ = img.shape
    rr, cc = np.mgrid[0:h, 0:w]
    weight = np.exp(-((rr - row) ** 2 + (cc - col) ** 2) / (2.0 * sigma**2)).astype(np.float32)
    img *= 1.0 - weight[..., None]
    img += weight[..., None] * color


def _finish(img: np.ndarray, palette: str) -> np.ndarray:
    if palette == "inverted":
        img = 1.0 - img
    return np.clip(img, 0.0, 1.0)


class _PointReach:
    """2D point mass driven towards a fixed target.

    State: position in ``[-1, 1]^2``. Episodes start uniformly in the
    lower-left quadrant, away from the target, so random behaviour rarely
    looks like goal-holding. A 2-dim embodiment commands velocity directly;
    the 3-dim embodiment mixes a redundant third actuator into both axes.
    Per-axis velocity is clipped to the same maximum in both cases.
    r_true is the negative distance to the target.
    """

    horizon = 50
    obs_shape = (16, 16, 3)
    state_dim = 2
    target = np.array([0.5, 0.5])
    step_size = 0.15
    start_box = (-1.0, 0.0)
    _mix3 = np.array([[1.0, 0.0, 0.7071], [0.0, 1.0, -0.7071]])

    def reset(self, rng, variant):
        return rng.uniform(*self.start_box, size=2)

    def step(self, s, a, variant):
        emb = variant.embodiment
        v = a if emb.action_dim == 2 else self._mix3 @ a
        v = np.clip(emb.gain * v, -1.0, 1.0)
        return np.clip(s + self.step_size * v, -1.0, 1.0)

    def reward(self, s):
        return -float(np.linalg.norm(s - self.target))

    def _to_pixels(self, p, variant):
        th = np.deg2rad(variant.appearance.tilt_deg)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        q = 0.85 * rot @ p
        h, w, _ = self.obs_shape
        col = (q[0] + 1.0) / 2.0 * (w - 1)
        row = (1.0 - q[1]) / 2.0 * (h - 1)
        return row, col

    def render(self, s, variant):
        bg, c_target, c_agent = _palette(variant.appearance.palette)
        img = np.empty(self.obs_shape, dtype=np.float32)
        img[...] = bg
        _blob(img, *self._to_pixels(self.target, variant), c_target, 1.0)
        _blob(img, *self._to_pixels(s, variant), c_agent, 1.0)
        return _finish(img, variant.appearance.palette)


class _CartBalance:
    """Cart-pole with continuous force and no terminal states.

    State ``(x, x_dot, theta, theta_dot)`` with ``theta = 0`` upright. The cart
    is held inside ``|x| <= 2.4`` (velocity zeroed at the rails), ``theta`` is
    wrapped to ``[-pi, pi]``. r_true is the upright bonus ``(1 + cos theta)/2``.
    """

    horizon = 50
    obs_shape = (16, 16, 3)
    state_dim = 4
    gravity = 9.8
    cart_mass = 1.0
    force_mag = 10.0
    dt = 0.04

    def reset(self, rng, variant):
        return rng.uniform(-0.05, 0.05, size=4)

    def step(self, s, a, variant):
        emb = variant.embodiment
        x, x_dot, th, th_dot = s
        force = self.force_mag * emb.gain * float(np.clip(a[0], -1.0, 1.0))
        m, half = emb.pole_mass, emb.pole_length
        total = self.cart_mass + m
        cos, sin = np.cos(th), np.sin(th)
        tmp = (force + m * half * th_dot**2 * sin) / total
        th_acc = (self.gravity * sin - cos * tmp) / (half * (4.0 / 3.0 - m * cos**2 / total))
        x_acc = tmp - m * half * th_acc * cos / total
        x_dot = np.clip(x_dot + self.dt * x_acc, -5.0, 5.0)
        th_dot = np.clip(th_dot + self.dt * th_acc, -10.0, 10.0)
        x = x + self.dt * x_dot
        if abs(x) > 2.4:
            x, x_dot = np.sign(x) * 2.4, 0.0
        th = (th + self.dt * th_dot + np.pi) % (2 * np.pi) - np.pi
        return np.array([x, x_dot, th, th_dot])

    def reward(self, s):
        return 0.5 * (1.0 + float(np.cos(s[2])))

    def render(self, s, variant):
        bg, c_cart, c_pole = _palette(variant.appearance.palette)
        img = np.empty(self.obs_shape, dtype=np.float32)
        img[...] = bg
        h, w, _ = self.obs_shape
        col = (s[0] / 2.4 + 1.0) / 2.0 * (w - 1)
        row = 0.7 * (h - 1)
        _blob(img, row, col, c_cart, 1.0)
        length_px = 12.0 * variant.embodiment.pole_length
        for frac in np.linspace(0.2, 1.0, 5):
            _blob(
                img,
                row - frac * length_px * np.cos(s[2]),
                col + frac * length_px * np.sin(s[2]),
                c_pole,
                0.6,
            )
        return _finish(img, variant.appearance.palette)


_DYNAMICS = {"binaryworld": _BinaryWorld(), "pointreach": _PointReach(), "cartbalance": _CartBalance()}


def _variants(realm_id: str) -> tuple[EnvVariant, ...]:
    if realm_id == "binaryworld":
        return (
            EnvVariant("expert-domain", Appearance(marker=1), Embodiment(1)),
            EnvVariant("agent-domain", Appearance(marker=0), Embodiment(1)),
        )
    if realm_id == "pointreach":
        out = []
        for pal, tilt in (("standard", 0.0), ("inverted", 0.0), ("standard", 14.1)):
            tag = {"standard": "tilted" if tilt else "standard", "inverted": "inverted"}[pal]
            for adim in (2, 3):
                out.append(EnvVariant(f"{tag}-{adim}d", Appearance(pal, tilt), Embodiment(adim)))
        out.append(EnvVariant("sand-3d", Appearance("sand"), Embodiment(3)))
        return tuple(out)
    if realm_id == "cartbalance":
        short, long_ = Embodiment(1), Embodiment(1, pole_length=0.8, pole_mass=0.2)
        return (
            EnvVariant("standard-short", Appearance("standard"), short),
            EnvVariant("standard-long", Appearance("standard"), long_),
            EnvVariant("recolor-short", Appearance("recolor"), short),
            EnvVariant("recolor-long", Appearance("recolor"), long_),
        )
    raise ConfigurationError(f"unknown realm {realm_id!r}; expected one of {REALMS}")


def get_realm(realm_id: str) -> EnvRealm:
    variants = _variants(realm_id)
    dyn = _DYNAMICS[realm_id]
    return EnvRealm(realm_id, variants, dyn.horizon, dyn.obs_shape, dyn.state_dim)


def variant_index(realm_id: str, name: str) -> int:
    names = [v.name for v in get_realm(realm_id).variants]
    if name not in names:
        raise ConfigurationError(f"unknown variant {name!r} for realm {realm_id}; expected one of {names}")
    return names.index(name)


# ---------------------------------------------------------------- instances


class EnvInstance:
    """One seeded environment. ``reset`` draws a new initial state from the
    instance's own generator, so successive episodes differ but the whole
    sequence is determined by the seed."""

    def __init__(self, realm: EnvRealm, variant_index: int, seed: int):
        self.realm = realm
        self.variant_index = variant_index
        self.variant = realm.variants[variant_index]
        self.horizon = realm.horizon
        self.rng_seed = seed
        self._dyn = _DYNAMICS[realm.realm_id]
        self._rng = np.random.default_rng(seed)
        self.state = np.zeros(realm.state_dim)
        self.t = 0
        self.reset()

    @property
    def action_dim(self) -> int:
        return self.variant.embodiment.action_dim

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return self.realm.obs_shape

    def reset(self) -> np.ndarray:
        self.state = self._dyn.reset(self._rng, self.variant)
        self.t = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        return self._dyn.render(self.state, self.variant)

    def render_state(self, state: np.ndarray) -> np.ndarray:
        return self._dyn.render(np.asarray(state, dtype=float), self.variant)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.t >= self.horizon:
            raise UsageError("episode finished; call reset()")
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape[0] != self.action_dim:
            raise ContractError(f"action has dimension {a.shape[0]}, variant expects {self.action_dim}")
        r_true = self._dyn.reward(self.state)
        self.state = self._dyn.step(self.state, np.clip(a, -1.0, 1.0), self.variant)
        self.t += 1
        return self.observe(), r_true, self.t == self.horizon


def make_env(realm_id: str, variant_index: int, seed: int) -> EnvInstance:
    realm = get_realm(realm_id)
    if not 0 <= variant_index < len(realm.variants):
        raise ConfigurationError(f"realm {realm_id} has {len(realm.variants)} variants, got index {variant_index}")
    return EnvInstance(realm, variant_index, seed)


# ---------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    obs: np.ndarray  # (H, h, w, c)
    states: np.ndarray  # (H, state_dim)
    actions: np.ndarray  # (H, action_dim)
    next_states: np.ndarray  # (H, state_dim)
    r_true: np.ndarray  # (H,)

    def __len__(self) -> int:
        return self.obs.shape[0]

    @property
    def true_return(self) -> float:
        return float(self.r_true.sum())


@dataclass
class TrajectorySet:
    realm_id: str
    variant_index: int
    horizon: int
    obs_shape: tuple[int, int, int]
    state_dim: int
    action_dim: int
    domain: int
    trajectories: list[Trajectory] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def n_observations(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def mean_return(self) -> float:
        return float(np.mean([t.true_return for t in self.trajectories])) if self.trajectories else float("nan")


def _empty_set(env: EnvInstance, domain: int) -> TrajectorySet:
    return TrajectorySet(
        env.realm.realm_id,
        env.variant_index,
        env.horizon,
        env.obs_shape,
        env.realm.state_dim,
        env.action_dim,
        domain,
    )


Policy = Callable[[np.ndarray], np.ndarray]


def rollout(env: EnvInstance, policy: Policy) -> Trajectory:
    """Run one full episode from a fresh reset."""
    obs = env.reset()
    h = env.horizon
    o = np.empty((h, *env.obs_shape), dtype=np.float32)
    s = np.empty((h, env.realm.state_dim))
    a = np.empty((h, env.action_dim))
    s2 = np.empty_like(s)
    r = np.empty(h)
    for t in range(h):
        o[t] = obs
        s[t] = env.state
        a[t] = policy(env.state)
        obs, r[t], _ = env.step(a[t])
        s2[t] = env.state
    return Trajectory(o, s.astype(np.float32), a.astype(np.float32), s2.astype(np.float32), r.astype(np.float32))


class RandomPolicy:
    """Uniform actions in ``[-1, 1]^action_dim``."""

    def __init__(self, action_dim: int, seed: int = 0):
        self.action_dim = action_dim
        self._rng = np.random.default_rng(seed)

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return self._rng.uniform(-1.0, 1.0, size=self.action_dim)


def collect_policy(env: EnvInstance, policy: Policy, n_episodes: int, domain: int = 0) -> TrajectorySet:
    """``domain`` is 1 when ``env`` is the expert's (source) environment."""
    out = _empty_set(env, domain)
    for _ in range(n_episodes):
        out.trajectories.append(rollout(env, policy))
    return out


def collect_random(env: EnvInstance, n_steps: int, domain: int = 0, seed: int | None = None) -> TrajectorySet:
    if n_steps % env.horizon:
        raise ContractError(f"n_steps={n_steps} is not a multiple of the horizon {env.horizon}")
    seed = env.rng_seed + 7919 if seed is None else seed
    return collect_policy(env, RandomPolicy(env.action_dim, seed), n_steps // env.horizon, domain)


def binaryworld_reference() -> tuple[TrajectorySet, TrajectorySet]:
    """The eight length-3 visual trajectories of the toy example: four expert
    demonstrations ``{10, 11, 11}`` and four poor agent trajectories."""
    expert_y = [(0, 1, 1)] * 4
    agent_y = [(0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
    realm = get_realm("binaryworld")
    sets = []
    for vidx, rows in ((0, expert_y), (1, agent_y)):
        variant = realm.variants[vidx]
        ts = TrajectorySet("binaryworld", vidx, 3, realm.obs_shape, 1, 1, 1 if vidx == 0 else 0)
        for ys in rows:
            y = np.asarray(ys, dtype=np.float32)
            # next state after the last step repeats the final state
            y_next = np.append(y[1:], y[-1])
            obs = np.stack([_DYNAMICS["binaryworld"].render(np.array([v]), variant) for v in y])
            actions = np.where(y_next > 0.5, 1.0, -1.0).astype(np.float32)
            ts.trajectories.append(Trajectory(obs, y[:, None], actions[:, None], y_next[:, None], y.copy()))
        sets.append(ts)
    return sets[0], sets[1]


def observation_windows(obs: np.ndarray, t) -> np.ndarray:
    """Newest-first 4-windows ``o_t, o_{t-1}, o_{t-2}, o_{t-3}`` of one
    trajectory ``obs`` of shape ``(H, ...)``. Indices before the episode start
    repeat the first frame."""
    idx = np.maximum(np.asarray(t)[..., None] - np.arange(WINDOW), 0)
    return obs[idx]


# ---------------------------------------------------------------- persistence

_MAGIC = b"DGTRAJ01"
_HEADER = struct.Struct("<9I")


def save_trajectories(ts: TrajectorySet, path: str | Path) -> Path:
    """Write ``path`` (binary) and ``path.csv`` (manifest).

    Layout, all little-endian: 8-byte magic ``DGTRAJ01``; nine uint32 fields
    (realm index, variant, horizon, n_traj, obs h, obs w, obs c, state_dim,
    action_dim); one uint32 domain label; then float32 blocks in row-major
    order: observations ``(n, H, h, w, c)``, states ``(n, H, sd)``, actions
    ``(n, H, ad)``, next states ``(n, H, sd)``, r_true ``(n, H)``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(ts)
    h, w, c = ts.obs_shape
    blocks = [
        np.stack([t.obs for t in ts]) if n else np.zeros((0, ts.horizon, h, w, c)),
        np.stack([t.states for t in ts]) if n else np.zeros((0, ts.horizon, ts.state_dim)),
        np.stack([t.actions for t in ts]) if n else np.zeros((0, ts.horizon, ts.action_dim)),
        np.stack([t.next_states for t in ts]) if n else np.zeros((0, ts.horizon, ts.state_dim)),
        np.stack([t.r_true for t in ts]) if n else np.zeros((0, ts.horizon)),
    ]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            _HEADER.pack(REALMS.index(ts.realm_id), ts.variant_index, ts.horizon, n, h, w, c, ts.state_dim, ts.action_dim)
        )
        fh.write(struct.pack("<I", ts.domain))
        for b in blocks:
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    obs_bytes = ts.horizon * h * w * c * 4
    header_bytes = len(_MAGIC) + _HEADER.size + 4
    with open(path.with_suffix(path.suffix + ".csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["traj_index", "realm", "variant", "domain", "horizon", "true_return", "obs_offset_bytes"])
        for i, t in enumerate(ts):
            wr.writerow([i, ts.realm_id, ts.variant_index, ts.domain, ts.horizon, f"{t.true_return:.6f}", header_bytes + i * obs_bytes])
    return path


def load_trajectories(path: str | Path) -> TrajectorySet:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ContractError(f"{path}: not a trajectory file")
    realm_i, variant, horizon, n, h, w, c, sd, ad = _HEADER.unpack_from(raw, 8)
    (domain,) = struct.unpack_from("<I", raw, 8 + _HEADER.size)
    offset = 8 + _HEADER.size + 4
    shapes = [(n, horizon, h, w, c), (n, horizon, sd), (n, horizon, ad), (n, horizon, sd), (n, horizon)]
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32))
        offset += 4 * count
    ts = TrajectorySet(REALMS[realm_i], variant, horizon, (h, w, c), sd, ad, domain)
    for i in range(n):
        ts.trajectories.append(Trajectory(*(a[i].copy() for a in arrays)))
    return ts


def bit_marginals(sets: Sequence[TrajectorySet]) -> dict[str, float]:
    """Conditional frequencies of the binaryworld marker ``x`` given ``y``."""
    obs = np.concatenate([t.obs.reshape(-1, 2) for s in sets for t in s])
    x, y = obs[:, 0] > 0.5, obs[:, 1] > 0.5
    return {
        "p(x=1|y=1)": float(x[y].mean()) if y.any() else float("nan"),
        "p(x=1|y=0)": float(x[~y].mean()) if (~y).any() else float("nan"),
        "p(x=1)": float(x.mean()),
    }
