"""Selection maps, consensus decomposition and the agent-state <-> stacked-point maps.

The augmented primal variable is the stack ``col(x^1, ..., x^N)`` of every
agent's full-length estimate vector; agent ``i``'s own decision sits in
slot ``i`` of ``x^i``. Selection "matrices" are kept as gather indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class SelectionPair:
    """Gather maps picking own decisions (R) and estimates of others (S) out of ``bold_x``.

    ``R @ bold_x == bold_x[r_index]`` and ``S @ bold_x == bold_x[s_index]``.
    """

    dims: tuple[int, ...]
    r_index: np.ndarray = field(init=False)
    s_index: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("dims must be non-empty")
        if min(dims) < 1:
            raise ValueError(f"every n_i must be >= 1, got {dims}")
        N, n = len(dims), sum(dims)
        offsets = np.concatenate([[0], np.cumsum(dims)])
        owner = np.repeat(np.arange(N), dims)
        r = owner * n + np.arange(n)
        s = np.concatenate(
            [i * n + np.r_[0 : offsets[i], offsets[i + 1] : n] for i in range(N)]
        ).astype(int)
        for arr in (r, s):
            arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "r_index", r)
        object.__setattr__(self, "s_index", s)

    @property
    def N(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return sum(self.dims)

    def R(self, bold_x: np.ndarray) -> np.ndarray:
        return np.asarray(bold_x).reshape(-1)[self.r_index]

    def S(self, bold_x: np.ndarray) -> np.ndarray:
        return np.asarray(bold_x).reshape(-1)[self.s_index]

    def RT(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.N * self.n)
        out[self.r_index] = x
        return out

    def ST(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros(self.N * self.n)
        out[self.s_index] = y
        return out

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense ``(R, S)`` of shapes ``n x Nn`` and ``(Nn - n) x Nn``."""
        eye = np.eye(self.N * self.n)
        return eye[self.r_index], eye[self.s_index]


def selection_matrices(dims: Sequence[int]) -> SelectionPair:
    return SelectionPair(tuple(dims))


def consensus_decompose(bold_x, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``bold_x`` into its consensus part ``1_N kron mean`` and the orthogonal rest."""
    X = np.asarray(bold_x, dtype=float).reshape(N, -1)
    par = np.broadcast_to(X.mean(axis=0), X.shape).reshape(-1).copy()
    return par, X.reshape(-1) - par


def _max_pairwise(V: np.ndarray) -> float:
    if V.shape[0] < 2 or V.shape[1] == 0:
        return 0.0
    diff = V[:, None, :] - V[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))


def consensus_residual(bold_x, N: int) -> float:
    """``max_{i,j} ||x^i - x^j||``."""
    return _max_pairwise(np.asarray(bold_x, dtype=float).reshape(N, -1))


def multiplier_spread(lam, N: int) -> float:
    """``max_{i,j} ||lambda_i - lambda_j||``."""
    return _max_pairwise(np.asarray(lam, dtype=float).reshape(N, -1))


@dataclass
class AgentState:
    """Local variables of one agent.

    ``xs`` is the agent's full estimate of the decision profile with its own
    decision at ``slot``; ``x`` and ``est`` are views derived from it.
    """

    index: int
    slot: slice
    xs: np.ndarray
    z: np.ndarray
    lam: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.xs[self.slot]

    @property
    def est(self) -> np.ndarray:
        return np.concatenate([self.xs[: self.slot.start], self.xs[self.slot.stop :]])

    def copy(self) -> "AgentState":
        return AgentState(self.index, self.slot, self.xs.copy(), self.z.copy(), self.lam.copy())


@dataclass
class AugmentedPoint:
    """Stacked ``(bold_x, z, lam)`` with shapes ``(N, n)``, ``(N, m)``, ``(N, m)``."""

    bold_x: np.ndarray
    z: np.ndarray
    lam: np.ndarray

    def __post_init__(self) -> None:
        self.bold_x = np.atleast_2d(np.asarray(self.bold_x, dtype=float))
        N = self.bold_x.shape[0]
        self.z = np.asarray(self.z, dtype=float).reshape(N, -1)
        self.lam = np.asarray(self.lam, dtype=float).reshape(N, -1)
        if self.z.shape != self.lam.shape:
            raise ValueError("z and lam must have the same shape")

    @property
    def N(self) -> int:
        return self.bold_x.shape[0]

    @property
    def n(self) -> int:
        return self.bold_x.shape[1]

    @property
    def m(self) -> int:
        return self.lam.shape[1]

    def vector(self) -> np.ndarray:
        """Flat ``col(bold_x, z, lam)``."""
        return np.concatenate([self.bold_x.reshape(-1), self.z.reshape(-1), self.lam.reshape(-1)])

    @classmethod
    def from_vector(cls, v, N: int, n: int, m: int) -> "AugmentedPoint":
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != N * (n + 2 * m):
            raise ValueError(f"vector has size {v.size}, expected {N * (n + 2 * m)}")
        a, b = N * n, N * (n + m)
        return cls(v[:a].reshape(N, n), v[a:b].reshape(N, m), v[b:].reshape(N, m))

    def copy(self) -> "AugmentedPoint":
        return AugmentedPoint(self.bold_x.copy(), self.z.copy(), self.lam.copy())


def stack(states: Sequence[AgentState]) -> AugmentedPoint:
    if not states:
        raise ValueError("no agent states")
    for k, s in enumerate(states):
        if s.index != k:
            raise ValueError(f"state {k} carries index {s.index}")
        if np.any(s.lam < 0):
            raise ValueError(f"agent {k} has a negative multiplier entry")
    return AugmentedPoint(
        np.stack([s.xs for s in states]),
        np.stack([s.z for s in states]),
        np.stack([s.lam for s in states]),
    )


def unstack(point: AugmentedPoint, dims: Sequence[int]) -> list[AgentState]:
    offsets = np.concatenate([[0], np.cumsum(dims)])
    if len(dims) != point.N or offsets[-1] != point.n:
        raise ValueError("dims do not match the augmented point")
    return [
        AgentState(
            i,
            slice(int(offsets[i]), int(offsets[i + 1])),
            point.bold_x[i].copy(),
            point.z[i].copy(),
            point.lam[i].copy(),
        )
        for i in range(point.N)
    ]
