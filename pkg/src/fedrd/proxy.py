"""Proxy replay memories: state clustering, per-cluster policy averaging,
global merging, mixup augmentation and the 12-byte wire codec.

A cluster index linearises the four per-component section numbers as
``((i0*S + i1)*S + i2)*S + i3`` (position, velocity, angle, angular
velocity).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .env import EnvConfig

ENTRY_BYTES = 12
COUNTED_ENTRY_BYTES = 16

_WIRE = np.dtype([("index", "<i4"), ("policy", "<f4", (2,))])
_WIRE_COUNTED = np.dtype([("index", "<i4"), ("policy", "<f4", (2,)), ("count", "<u4")])
assert _WIRE.itemsize == ENTRY_BYTES and _WIRE_COUNTED.itemsize == COUNTED_ENTRY_BYTES

ANGLE = 2  # component used for mixup ordering


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterSpec:
    sections: int
    ranges: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.sections < 1:
            raise ValueError("need at least one section per component")
        if len(self.ranges) != 4:
            raise ValueError("cart-pole states have four components")
        for lo, hi in self.ranges:
            if not lo < hi:
                raise ValueError(f"bad range [{lo}, {hi}]")
        if self.size > 2**31:
            raise ValueError(f"S={self.sections} overflows a signed 32-bit cluster index")

    @classmethod
    def default(cls, sections: int, env: EnvConfig | None = None) -> "ClusterSpec":
        env = env or EnvConfig()
        return cls(sections, (
            (-env.position_limit, env.position_limit),
            (-3.0, 3.0),
            (-env.angle_limit, env.angle_limit),
            (-3.0, 3.0),
        ))

    @property
    def size(self) -> int:
        return self.sections ** 4

    @property
    def lows(self) -> np.ndarray:
        return np.array([r[0] for r in self.ranges])

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / self.sections for lo, hi in self.ranges])


def section_indices(spec: ClusterSpec, states) -> np.ndarray:
    """Per-component section numbers, clamped into ``[0, S-1]``."""
    x = np.asarray(states, dtype=np.float64)
    sec = np.floor((x - spec.lows) / spec.widths)
    return np.clip(sec, 0, spec.sections - 1).astype(np.int64)


def cluster_index_of(spec: ClusterSpec, state):
    """Cluster index of one state (int) or of a ``(N, 4)`` array (int64 array)."""
    sec = section_indices(spec, state)
    s = spec.sections
    idx = ((sec[..., 0] * s + sec[..., 1]) * s + sec[..., 2]) * s + sec[..., 3]
    return int(idx) if np.ndim(idx) == 0 else idx


def proxy_state_of(spec: ClusterSpec, cluster_index):
    """Midpoint of the cluster(s); ``(4,)`` for a scalar index, ``(N, 4)`` for an array."""
    idx = np.asarray(cluster_index, dtype=np.int64)
    if (idx < 0).any() or (idx >= spec.size).any():
        raise IndexError(f"cluster index out of range [0, {spec.size})")
    s = spec.sections
    sec = np.stack([idx // s**3, (idx // s**2) % s, (idx // s) % s, idx % s], axis=-1)
    return spec.lows + (sec + 0.5) * spec.widths


class ProxyEntry(NamedTuple):
    cluster_index: int
    avg_policy: tuple[float, float]
    visit_count: int


class Samples(NamedTuple):
    """Distillation training set: state vectors and target policies."""
    states: np.ndarray
    policies: np.ndarray

    def __len__(self):
        return len(self.states)


@dataclass
class ProxyReplayMemory:
    spec: ClusterSpec
    entries: dict[int, ProxyEntry] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def sorted_entries(self) -> list[ProxyEntry]:
        return [self.entries[k] for k in sorted(self.entries)]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ents = self.sorted_entries()
        idx = np.array([e.cluster_index for e in ents], dtype=np.int64)
        pol = np.array([e.avg_policy for e in ents], dtype=np.float64).reshape(-1, 2)
        cnt = np.array([e.visit_count for e in ents], dtype=np.int64)
        return idx, pol, cnt

    def samples(self) -> Samples:
        idx, pol, _ = self.arrays()
        return Samples(proxy_state_of(self.spec, idx).reshape(-1, 4), pol)

    def to_json(self) -> str:
        """Debug dump; not what goes on the wire."""
        return json.dumps({
            "sections": self.spec.sections,
            "ranges": [list(r) for r in self.spec.ranges],
            "entries": [[e.cluster_index, list(e.avg_policy), e.visit_count]
                        for e in self.sorted_entries()],
        })


def _from_arrays(spec, idx, pol, cnt) -> ProxyReplayMemory:
    return ProxyReplayMemory(spec, {
        int(i): ProxyEntry(int(i), (float(p[0]), float(p[1])), int(c))
        for i, p, c in zip(idx, pol, cnt)
    })


def _group_mean(spec, idx, pol, weights) -> ProxyReplayMemory:
    if len(idx) == 0:
        return ProxyReplayMemory(spec)
    keys, inverse = np.unique(idx, return_inverse=True)
    wsum = np.bincount(inverse, weights=weights)
    mean = np.stack([np.bincount(inverse, weights=weights * pol[:, k]) for k in range(2)], axis=1)
    mean /= wsum[:, None]
    counts = np.bincount(inverse, weights=weights).round().astype(np.int64)
    return _from_arrays(spec, keys, mean, counts)


def build_proxrm(spec: ClusterSpec, rm) -> ProxyReplayMemory:
    """Average the policies of a replay memory within each visited cluster.

    ``rm`` is anything with ``states()`` and ``policies()`` arrays (a
    :class:`~fedrd.agent.ReplayMemory`), or a ``(states, policies)`` pair.
    """
    if hasattr(rm, "states"):
        states, policies = rm.states(), rm.policies()
    else:
        states, policies = rm
    states = np.asarray(states, dtype=np.float64).reshape(-1, 4)
    policies = np.asarray(policies, dtype=np.float64).reshape(-1, 2)
    idx = cluster_index_of(spec, states) if len(states) else np.zeros(0, dtype=np.int64)
    return _group_mean(spec, idx, policies, np.ones(len(idx)))


def merge_global(proxrms: Sequence[ProxyReplayMemory]) -> ProxyReplayMemory:
    """Visit-count-weighted merge of per-agent memories.

    Memories decoded from the 12-byte wire format carry a count of 1 per
    entry, so merging those weights every contributing agent equally.
    """
    if not proxrms:
        raise ValueError("nothing to merge")
    spec = proxrms[0].spec
    for p in proxrms[1:]:
        if p.spec != spec:
            raise ValueError("cannot merge memories built on different cluster specs")
    parts = [p.arrays() for p in proxrms]
    idx = np.concatenate([a[0] for a in parts])
    pol = np.concatenate([a[1] for a in parts]).reshape(-1, 2)
    cnt = np.concatenate([a[2] for a in parts]).astype(np.float64)
    return _group_mean(spec, idx, pol, cnt)


def mixup_augment(
    proxrm: ProxyReplayMemory,
    portion: float = 0.5,
    beta_alpha: float | None = None,
    rng: np.random.Generator | None = None,
) -> Samples:
    """Interpolate angle-adjacent entries into extra training samples.

    Entries are ordered by the pole angle of their proxy state (ties by
    cluster index). Each adjacent pair ``(a, b)`` yields
    ``lam * a + (1 - lam) * b`` for both proxy state and policy. ``lam`` is
    ``portion`` unless ``beta_alpha`` is given, in which case it is drawn
    from ``Beta(beta_alpha, beta_alpha)`` per pair.

    Returns the original proxy samples followed by ``len(proxrm) - 1``
    synthetic ones.
    """
    if not 0.0 < portion < 1.0:
        raise ValueError("portion must lie in (0, 1)")
    idx, pol, _ = proxrm.arrays()
    states = proxy_state_of(proxrm.spec, idx).reshape(-1, 4)
    if len(idx) < 2:
        return Samples(states, pol)

    order = np.lexsort((idx, states[:, ANGLE]))
    s, p = states[order], pol[order]
    if beta_alpha is not None:
        rng = rng if rng is not None else np.random.default_rng()
        lam = rng.beta(beta_alpha, beta_alpha, size=len(s) - 1)[:, None]
    else:
        lam = np.full((len(s) - 1, 1), portion)
    mix_s = lam * s[:-1] + (1 - lam) * s[1:]
    mix_p = lam * p[:-1] + (1 - lam) * p[1:]
    mix_p /= mix_p.sum(axis=1, keepdims=True)
    return Samples(np.concatenate([states, mix_s]), np.concatenate([pol, mix_p]))


def serialize(proxrm: ProxyReplayMemory, with_counts: bool = False) -> bytes:
    """12 bytes per entry: ``<i4`` cluster index, two ``<f4`` policy values.

    ``with_counts`` appends a ``<u4`` visit count (16 bytes per entry).
    """
    idx, pol, cnt = proxrm.arrays()
    buf = np.zeros(len(idx), dtype=_WIRE_COUNTED if with_counts else _WIRE)
    buf["index"] = idx
    buf["policy"] = pol
    if with_counts:
        buf["count"] = cnt
    return buf.tobytes()


def deserialize(data: bytes, spec: ClusterSpec, with_counts: bool = False) -> ProxyReplayMemory:
    """Inverse of :func:`serialize`. Without counts, every entry gets count 1."""
    dt = _WIRE_COUNTED if with_counts else _WIRE
    if len(data) % dt.itemsize:
        raise DecodeError(f"buffer of {len(data)} bytes is not a multiple of {dt.itemsize}")
    buf = np.frombuffer(data, dtype=dt)
    idx = buf["index"].astype(np.int64)
    if len(idx) and ((idx < 0).any() or (idx >= spec.size).any()):
        raise DecodeError("cluster index outside the cluster space")
    if len(np.unique(idx)) != len(idx):
        raise DecodeError("duplicate cluster index")
    cnt = buf["count"].astype(np.int64) if with_counts else np.ones(len(idx), dtype=np.int64)
    # keep the exact float32 values
    pol = buf["policy"].astype(np.float32)
    return ProxyReplayMemory(spec, {
        int(i): ProxyEntry(int(i), (p[0].item(), p[1].item()), int(c))
        for i, p, c in zip(idx, pol, cnt)
    })


def clamp_rate(spec: ClusterSpec, states: Iterable) -> float:
    """Fraction of states with at least one component outside its range."""
    x = np.asarray(list(states), dtype=np.float64).reshape(-1, 4)
    if not len(x):
        return 0.0
    lo = spec.lows
    hi = lo + spec.widths * spec.sections
    return float(((x < lo) | (x > hi)).any(axis=1).mean())


def size_bound(n_states: int, spec: ClusterSpec) -> int:
    """Upper bound on the proxy memory size for ``n_states`` observations."""
    return min(n_states, spec.size)

