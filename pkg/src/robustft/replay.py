"""Transitions, the FIFO replay buffer and offline datasets.

Dataset file format (``save_dataset`` / ``load_dataset``), UTF-8 text:

    line 1      JSON object: {"format": "robustft-dataset/1", "env": ..., "policy": ...,
                "seed": ..., "count": N, "obs_dim": ..., "action_dim": ..., ...}
    lines 2..N+1  one JSON array per transition:
                [s, a, r, s_next, done, truncated]
                with s, a, s_next as lists of floats and done/truncated as 0/1.

Floats are written with Python's shortest round-trip repr, so a save/load
cycle is bit-exact. ``done`` marks failure termination (no bootstrapping);
``truncated`` marks horizon exhaustion (bootstrapped as usual).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from robustft.errors import ConfigError, ParseError, StateError

FORMAT_TAG = "robustft-dataset/1"


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    truncated: bool = False


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], bool(self.done[i]))
            for i in range(len(self))
        ]

    @classmethod
    def from_transitions(cls, items) -> "Batch":
        items = list(items)
        return cls(
            s=np.array([t.s for t in items], dtype=np.float64),
            a=np.array([t.a for t in items], dtype=np.float64),
            r=np.array([t.r for t in items], dtype=np.float64),
            s_next=np.array([t.s_next for t in items], dtype=np.float64),
            done=np.array([t.done for t in items], dtype=bool),
        )


class ReplayBuffer:
    """Bounded FIFO of transitions stored in ring arrays."""

    def __init__(self, obs_dim: int, action_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def push(self, t: Transition) -> "ReplayBuffer":
        i = self.inserted % self.capacity
        self.s[i] = t.s
        self.a[i] = t.a
        self.r[i] = t.r
        self.s_next[i] = t.s_next
        self.done[i] = t.done
        self.inserted += 1
        return self

    def extend(self, batch: Batch) -> "ReplayBuffer":
        for i in range(len(batch)):
            j = self.inserted % self.capacity
            self.s[j], self.a[j], self.r[j] = batch.s[i], batch.a[i], batch.r[i]
            self.s_next[j], self.done[j] = batch.s_next[i], batch.done[i]
            self.inserted += 1
        return self

    def ordered(self) -> Batch:
        """Contents from oldest to newest."""
        n = len(self)
        start = self.inserted % self.capacity if self.inserted > self.capacity else 0
        idx = (start + np.arange(n)) % self.capacity
        return self._gather(idx)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample with replacement."""
        if len(self) == 0:
            raise StateError("cannot sample from an empty replay buffer")
        return self._gather(rng.integers(0, len(self), size=batch_size))

    def _gather(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])


@dataclass
class OfflineDataset:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    truncated: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.meta = dict(self.meta)
        self.meta["count"] = len(self.r)
        self.meta["obs_dim"] = int(self.s.shape[1])
        self.meta["action_dim"] = int(self.a.shape[1])

    def __len__(self):
        return len(self.r)

    def __getitem__(self, i) -> Transition:
        return Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], bool(self.done[i]), bool(self.truncated[i]))

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        arrays = ("s", "a", "r", "s_next", "done", "truncated")
        return self.meta == other.meta and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in arrays)

    @property
    def env(self) -> str | None:
        return self.meta.get("env")

    def as_batch(self, idx=None) -> Batch:
        idx = slice(None) if idx is None else idx
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if len(self) == 0:
            raise StateError("cannot sample from an empty dataset")
        return self.as_batch(rng.integers(0, len(self), size=batch_size))

    def check_env(self, env_name: str) -> None:
        if self.env != env_name:
            raise ConfigError(f"dataset was collected on {self.env!r}, run is configured for {env_name!r}")

    @classmethod
    def from_transitions(cls, items, meta=None) -> "OfflineDataset":
        items = list(items)
        b = Batch.from_transitions(items)
        truncated = np.array([t.truncated for t in items], dtype=bool)
        return cls(b.s, b.a, b.r, b.s_next, b.done, truncated, dict(meta or {}))


def offline_count(r_off: float, n: int) -> int:
    """floor(r_off * n), robust to representation error in r_off."""
    if not 0.0 <= r_off <= 1.0:
        raise ConfigError(f"r_off must lie in [0, 1], got {r_off}")
    return math.floor(round(r_off * n, 9))


def init_with_offline(buffer: ReplayBuffer, dataset: OfflineDataset, r_off: float, rng: np.random.Generator) -> ReplayBuffer:
    """Insert floor(r_off * |dataset|) distinct dataset transitions, drawn uniformly."""
    k = offline_count(r_off, len(dataset))
    if k:
        idx = rng.choice(len(dataset), size=k, replace=False)
        buffer.extend(dataset.as_batch(idx))
    return buffer


def _vec(x) -> list[float]:
    return [float(v) for v in x]


def save_dataset(dataset: OfflineDataset, path) -> None:
    meta = dict(dataset.meta)
    meta["format"] = FORMAT_TAG
    lines = [json.dumps(meta, sort_keys=True)]
    for i in range(len(dataset)):
        rec = [
            _vec(dataset.s[i]),
            _vec(dataset.a[i]),
            float(dataset.r[i]),
            _vec(dataset.s_next[i]),
            int(dataset.done[i]),
            int(dataset.truncated[i]),
        ]
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> OfflineDataset:
    text = Path(path).read_text(encoding="utf-8")
    if not text.endswith("\n"):
        raise ParseError("file does not end with a newline (truncated?)", path=path, offset=len(text))
    lines = text[:-1].split("\n")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad metadata header: {exc}", path=path, line=1) from exc
    if not isinstance(meta, dict) or meta.get("format") != FORMAT_TAG:
        raise ParseError(f"missing or unknown format tag (want {FORMAT_TAG})", path=path, line=1)
    del meta["format"]
    count = meta.get("count")
    if not isinstance(count, int) or len(lines) - 1 != count:
        raise ParseError(f"header declares {count} records, found {len(lines) - 1}", path=path, line=len(lines))
    obs_dim, action_dim = meta.get("obs_dim"), meta.get("action_dim")
    if not isinstance(obs_dim, int) or not isinstance(action_dim, int):
        raise ParseError("header lacks integer obs_dim/action_dim", path=path, line=1)
    s = np.zeros((count, obs_dim))
    a = np.zeros((count, action_dim))
    r = np.zeros(count)
    s_next = np.zeros_like(s)
    done = np.zeros(count, dtype=bool)
    truncated = np.zeros(count, dtype=bool)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        try:
            rec = json.loads(line)
            si, ai, ri, sn, di, ti = rec
            s[i], a[i], r[i], s_next[i] = si, ai, ri, sn
            done[i], truncated[i] = bool(di), bool(ti)
        except (json.JSONDecodeError, ValueError, TypeError) as exc:
            raise ParseError(f"bad record: {exc}", path=path, line=lineno) from exc
    return OfflineDataset(s, a, r, s_next, done, truncated, meta)
