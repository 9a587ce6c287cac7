"""Trajectory data model, text serialization and transition extraction.

A dataset holds ``N`` equal-length trajectories of ``(state, action, reward)``
triples.  Each state pairs a low-frequency vector ``x`` with the concatenation
``z`` of ``J`` high-frequency blocks.  Internally everything is stored as dense
arrays; :class:`MixedState` and :class:`Transition` are thin views used at API
boundaries and in tests.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BoundViolationError,
    DimensionError,
    RaggedTrajectoryError,
    SchemaError,
)

_FLOAT_FMT = "{:.16e}"


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MixedState:
    x: np.ndarray
    z: np.ndarray
    block_lengths: tuple[int, ...]

    def __post_init__(self):
        x = _frozen(np.reshape(np.asarray(self.x, dtype=float), (-1,)))
        z = _frozen(np.reshape(self.z, (-1,)))
        blocks = tuple(int(b) for b in self.block_lengths)
        if not blocks or any(b < 1 for b in blocks):
            raise DimensionError(f"block_lengths must be positive, got {blocks}")
        if z.size != sum(blocks):
            raise DimensionError(f"len(z)={z.size} but block_lengths sum to {sum(blocks)}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "block_lengths", blocks)

    @property
    def m0(self) -> int:
        return self.x.size

    @property
    def m(self) -> int:
        return self.z.size

    def blocks(self) -> list[np.ndarray]:
        return np.split(self.z, np.cumsum(self.block_lengths)[:-1])

    def __eq__(self, other):
        if not isinstance(other, MixedState):
            return NotImplemented
        return (self.block_lengths == other.block_lengths
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.z, other.z))


@dataclass(frozen=True)
class Transition:
    state: MixedState
    action: int
    reward: float
    next_state: MixedState


@dataclass(frozen=True)
class TransitionArrays:
    """Column-oriented transitions, row ``k`` is one ``(s, a, y, s')`` tuple."""

    x: np.ndarray
    z: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_x: np.ndarray
    next_z: np.ndarray

    def __len__(self) -> int:
        return self.actions.size

    def subset(self, idx) -> "TransitionArrays":
        return TransitionArrays(self.x[idx], self.z[idx], self.actions[idx],
                                self.rewards[idx], self.next_x[idx], self.next_z[idx])


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """``N`` trajectories of length ``T``.

    Arrays: ``x`` is (N, T, m0), ``z`` is (N, T, m), ``actions`` and
    ``rewards`` are (N, T).  The reward at ``t`` is the one observed after
    taking ``actions[:, t]`` in state ``t``.
    """

    x: np.ndarray
    z: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    block_lengths: tuple[int, ...]
    action_count: int
    r_max: float
    ids: tuple = field(default=())

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 3:
            raise DimensionError("z must have shape (N, T, m)")
        n, t, m = z.shape
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.zeros((n, t, 0))
        if x.ndim != 3 or x.shape[:2] != (n, t):
            raise DimensionError(f"x has shape {x.shape}, expected ({n}, {t}, m0)")
        actions = np.asarray(self.actions)
        rewards = np.asarray(self.rewards, dtype=float)
        if actions.shape != (n, t) or rewards.shape != (n, t):
            raise DimensionError("actions and rewards must have shape (N, T)")
        if not np.all(np.equal(np.mod(actions, 1), 0)):
            raise DimensionError("actions must be integer indices")
        actions = actions.astype(np.int64)
        blocks = tuple(int(b) for b in self.block_lengths)
        if not blocks or any(b < 1 for b in blocks) or sum(blocks) != m:
            raise DimensionError(f"block_lengths {blocks} do not partition m={m}")
        if n < 1 or t < 2:
            raise RaggedTrajectoryError(f"need N >= 1 trajectories of length T >= 2, got N={n}, T={t}")
        action_count = int(self.action_count)
        if action_count < 1:
            raise SchemaError("action_count must be positive")
        if actions.size and (actions.min() < 0 or actions.max() >= action_count):
            raise BoundViolationError(f"actions must lie in 0..{action_count - 1}")
        r_max = float(self.r_max)
        if not np.all(np.isfinite(rewards)) or not np.all(np.isfinite(z)) or not np.all(np.isfinite(x)):
            raise BoundViolationError("non-finite values in dataset")
        worst = np.abs(rewards).max()
        if worst > r_max:
            raise BoundViolationError(f"|reward| = {worst!r} exceeds declared r_max = {r_max!r}")
        ids = tuple(self.ids) if self.ids else tuple(range(n))
        if len(ids) != n:
            raise DimensionError("one id per trajectory required")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "actions", _frozen(actions, np.int64))
        object.__setattr__(self, "rewards", _frozen(rewards))
        object.__setattr__(self, "block_lengths", blocks)
        object.__setattr__(self, "action_count", action_count)
        object.__setattr__(self, "r_max", r_max)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Sequence[tuple]], action_count: int,
                          r_max: float) -> "TrajectoryDataset":
        """Build from nested ``[[(MixedState, action, reward), ...], ...]``."""
        if not trajectories:
            raise RaggedTrajectoryError("no trajectories")
        lengths = {len(tr) for tr in trajectories}
        if len(lengths) != 1:
            raise RaggedTrajectoryError(f"trajectory lengths differ: {sorted(lengths)}")
        first = trajectories[0][0][0]
        for tr in trajectories:
            for s, _, _ in tr:
                if s.block_lengths != first.block_lengths or s.m0 != first.m0:
                    raise DimensionError("states disagree on m0 or block_lengths")
        x = [[s.x for s, _, _ in tr] for tr in trajectories]
        z = [[s.z for s, _, _ in tr] for tr in trajectories]
        a = [[act for _, act, _ in tr] for tr in trajectories]
        r = [[rew for _, _, rew in tr] for tr in trajectories]
        n, t = len(trajectories), lengths.pop()
        return cls(np.reshape(np.array(x, dtype=float), (n, t, first.m0)), np.array(z, dtype=float),
                   np.array(a), np.array(r, dtype=float), first.block_lengths, action_count, r_max)

    @property
    def n_traj(self) -> int:
        return self.z.shape[0]

    @property
    def horizon(self) -> int:
        return self.z.shape[1]

    @property
    def m0(self) -> int:
        return self.x.shape[2]

    @property
    def m(self) -> int:
        return self.z.shape[2]

    @property
    def n_transitions(self) -> int:
        return self.n_traj * (self.horizon - 1)

    def state(self, i: int, t: int) -> MixedState:
        return MixedState(self.x[i, t], self.z[i, t], self.block_lengths)

    @property
    def trajectories(self) -> list[list[tuple[MixedState, int, float]]]:
        return [[(self.state(i, t), int(self.actions[i, t]), float(self.rewards[i, t]))
                 for t in range(self.horizon)] for i in range(self.n_traj)]

    def pooled_z(self) -> np.ndarray:
        """All ``N*T`` high-frequency vectors stacked as rows."""
        return self.z.reshape(-1, self.m)

    def initial_states(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[:, 0, :], self.z[:, 0, :]

    def select(self, idx: Iterable[int]) -> "TrajectoryDataset":
        """Sub-dataset made of the trajectories at positions ``idx``."""
        idx = list(idx)
        return TrajectoryDataset(self.x[idx], self.z[idx], self.actions[idx], self.rewards[idx],
                                 self.block_lengths, self.action_count, self.r_max,
                                 tuple(self.ids[i] for i in idx))

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (self.block_lengths == other.block_lengths
                and self.action_count == other.action_count
                and self.r_max == other.r_max
                and self.x.shape == other.x.shape
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.z, other.z)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.rewards, other.rewards))


def to_transitions(ds: TrajectoryDataset) -> list[Transition]:
    """One transition per ``(i, t)`` with ``t < T - 1``, ordered by trajectory then time."""
    out = []
    for i in range(ds.n_traj):
        for t in range(ds.horizon - 1):
            out.append(Transition(ds.state(i, t), int(ds.actions[i, t]),
                                  float(ds.rewards[i, t]), ds.state(i, t + 1)))
    return out


def transition_arrays(ds: TrajectoryDataset) -> TransitionArrays:
    """Vectorized counterpart of :func:`to_transitions` (same row order)."""
    n, t = ds.n_traj, ds.horizon
    k = n * (t - 1)
    return TransitionArrays(
        x=ds.x[:, :-1].reshape(k, ds.m0),
        z=ds.z[:, :-1].reshape(k, ds.m),
        actions=ds.actions[:, :-1].reshape(k),
        rewards=ds.rewards[:, :-1].reshape(k),
        next_x=ds.x[:, 1:].reshape(k, ds.m0),
        next_z=ds.z[:, 1:].reshape(k, ds.m),
    )


# --------------------------------------------------------------------------- I/O

_MANIFEST_KEYS = ("N", "T", "m0", "block_lengths", "action_count", "r_max")


def save_trajectories(ds: TrajectoryDataset, path) -> Path:
    """Write ``ds`` in the native manifest + records format.

    Reals are written with 17 significant digits so reading back is bit-exact.
    """
    path = Path(path)
    manifest = " ".join([
        f"N={ds.n_traj}", f"T={ds.horizon}", f"m0={ds.m0}",
        "block_lengths=" + ",".join(str(b) for b in ds.block_lengths),
        f"action_count={ds.action_count}", "r_max=" + _FLOAT_FMT.format(ds.r_max),
    ])
    lines = [manifest]
    for i in range(ds.n_traj):
        for t in range(ds.horizon):
            vals = [str(i), str(t)]
            vals += [_FLOAT_FMT.format(v) for v in ds.x[i, t]]
            vals += [_FLOAT_FMT.format(v) for v in ds.z[i, t]]
            vals += [str(int(ds.actions[i, t])), _FLOAT_FMT.format(ds.rewards[i, t])]
            lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass(frozen=True)
class TrajectorySchema:
    """Column mapping for ingesting a headed CSV file (e.g. preprocessed clinical data).

    ``r_max`` and ``action_count`` must be declared since a headed CSV carries
    no manifest.
    """

    traj_id: str
    time: str
    x_columns: tuple[str, ...]
    z_columns: tuple[str, ...]
    block_lengths: tuple[int, ...]
    action: str
    reward: str
    action_count: int
    r_max: float
    delimiter: str = ","

    def __post_init__(self):
        if sum(self.block_lengths) != len(self.z_columns):
            raise SchemaError("block_lengths must partition z_columns")


def _parse_manifest(line: str) -> dict:
    pairs = {}
    for tok in line.split():
        if "=" not in tok:
            raise SchemaError(f"malformed manifest token {tok!r}")
        key, val = tok.split("=", 1)
        pairs[key] = val
    missing = [k for k in _MANIFEST_KEYS if k not in pairs]
    if missing:
        raise SchemaError(f"manifest lacks {missing}")
    try:
        return {
            "N": int(pairs["N"]), "T": int(pairs["T"]), "m0": int(pairs["m0"]),
            "block_lengths": tuple(int(b) for b in pairs["block_lengths"].split(",")),
            "action_count": int(pairs["action_count"]), "r_max": float(pairs["r_max"]),
        }
    except ValueError as exc:
        raise SchemaError(f"bad manifest value: {exc}") from None


def _assemble(records: list[tuple], m0: int, block_lengths: tuple[int, ...],
              action_count: int, r_max: float) -> TrajectoryDataset:
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec[0], []).append(rec)
    lengths = {len(g) for g in groups.values()}
    if len(lengths) != 1:
        raise RaggedTrajectoryError(f"trajectories have different lengths: {sorted(lengths)}")
    ids = tuple(groups)
    for g in groups.values():
        g.sort(key=lambda r: r[1])
    x = np.array([[r[2] for r in groups[k]] for k in ids], dtype=float)
    z = np.array([[r[3] for r in groups[k]] for k in ids], dtype=float)
    n, t = len(ids), lengths.pop()
    x = x.reshape(n, t, m0)
    a = np.array([[r[4] for r in groups[k]] for k in ids])
    y = np.array([[r[5] for r in groups[k]] for k in ids], dtype=float)
    return TrajectoryDataset(x, z, a, y, block_lengths, action_count, r_max, ids)


def _to_action(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise DimensionError(f"non-integer action {s!r}")
    return int(v)


def load_trajectories(path, schema: TrajectorySchema | None = None) -> TrajectoryDataset:
    """Read a trajectory file.

    Without ``schema`` the file must be in the native format written by
    :func:`save_trajectories`.  With a schema, the file is a headed CSV whose
    columns are looked up by name.
    """
    path = Path(path)
    if schema is not None:
        return _load_headed(path, schema)
    with path.open() as fh:
        head = fh.readline()
        if not head.strip():
            raise SchemaError(f"{path}: empty file")
        man = _parse_manifest(head)
        m0, blocks = man["m0"], man["block_lengths"]
        m = sum(blocks)
        width = 2 + m0 + m + 2
        records = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            f = line.split(",")
            if len(f) != width:
                raise DimensionError(f"{path}:{lineno}: {len(f)} fields, expected {width}")
            try:
                records.append((int(f[0]), int(f[1]),
                                [float(v) for v in f[2:2 + m0]],
                                [float(v) for v in f[2 + m0:2 + m0 + m]],
                                _to_action(f[-2]), float(f[-1])))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    ds = _assemble(records, m0, blocks, man["action_count"], man["r_max"])
    if (ds.n_traj, ds.horizon) != (man["N"], man["T"]):
        raise RaggedTrajectoryError(
            f"manifest declares N={man['N']}, T={man['T']} but records give "
            f"N={ds.n_traj}, T={ds.horizon}")
    return ds


def _load_headed(path: Path, schema: TrajectorySchema) -> TrajectoryDataset:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        needed = [schema.traj_id, schema.time, *schema.x_columns, *schema.z_columns,
                  schema.action, schema.reward]
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        records = []
        for row in reader:
            try:
                records.append((row[schema.traj_id], float(row[schema.time]),
                                [float(row[c]) for c in schema.x_columns],
                                [float(row[c]) for c in schema.z_columns],
                                _to_action(row[schema.action]), float(row[schema.reward])))
            except (TypeError, ValueError) as exc:
                raise DimensionError(f"{path}: bad record {row}: {exc}") from None
    if not records:
        raise SchemaError(f"{path}: no records")
    return _assemble(records, len(schema.x_columns), tuple(schema.block_lengths),
                     schema.action_count, schema.r_max)
