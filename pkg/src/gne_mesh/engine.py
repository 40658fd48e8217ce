"""Round-based simulation of the distributed primal-dual GNE iteration.

Two interchangeable backends are provided. ``"agents"`` runs every agent's
local update on its own state and inbox with a two-phase synchronous
exchange per round; ``"stacked"`` applies the same map to the whole
augmented point at once and is much faster. A full-information
primal-dual baseline is included for comparison.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .augment import (
    AgentState,
    AugmentedPoint,
    consensus_residual,
    multiplier_spread,
    stack,
    unstack,
)
from .game import Game, extended_pseudo_gradient, game_constants, project_box, pseudo_gradient
from .graph import CommGraph
from .tuning import TuningBundle
from .verify import KKTReport, kkt_residual

CSV_HEADER = ("round", "consensus_residual", "multiplier_spread", "kkt_residual", "step_norm")


class ProtocolError(RuntimeError):
    """An agent's inbox does not match its neighbourhood."""


class NumericError(FloatingPointError):
    """A NaN or Inf appeared; ``round`` is the round being computed."""

    def __init__(self, msg: str, round: int, trajectory: "Trajectory | None" = None):
        super().__init__(f"round {round}: {msg}")
        self.round = round
        self.trajectory = trajectory


@dataclass(frozen=True)
class NeighborMessage:
    """What agent ``sender`` broadcasts to its neighbours in one round.

    ``z_next`` is filled only in the second exchange of the round.
    """

    sender: int
    xs: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    z_next: np.ndarray | None = None


def _thread_count() -> int:
    raw = os.environ.get("GNE_MESH_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        raise ValueError(f"GNE_MESH_THREADS must be an integer, got {raw!r}") from None
    return max(k, 0)


def _check_inbox(i: int, inbox: Sequence[NeighborMessage], graph: CommGraph, n: int, m: int,
                 phase2: bool) -> list[NeighborMessage]:
    by_sender = {}
    for msg in inbox:
        if msg.sender in by_sender:
            raise ProtocolError(f"agent {i}: duplicate message from {msg.sender}")
        by_sender[msg.sender] = msg
    expected = graph.neighbors[i]
    missing = [j for j in expected if j not in by_sender]
    if missing:
        raise ProtocolError(f"agent {i}: missing messages from neighbours {missing}")
    extra = sorted(set(by_sender) - set(expected))
    if extra:
        raise ProtocolError(f"agent {i}: messages from non-neighbours {extra}")
    ordered = [by_sender[j] for j in expected]
    for msg in ordered:
        if msg.xs.shape != (n,) or msg.z.shape != (m,) or msg.lam.shape != (m,):
            raise ProtocolError(f"agent {i}: malformed message from {msg.sender}")
        if phase2 and (msg.z_next is None or msg.z_next.shape != (m,)):
            raise ProtocolError(f"agent {i}: message from {msg.sender} lacks z_next")
    return ordered


def _agent_phase1(i, state: AgentState, inbox, game: Game, graph: CommGraph,
                  params: TuningBundle, round_idx: int = 0):
    """Primal, estimate and auxiliary updates. Returns ``(xs_next, z_next)``."""
    w = graph.weights[i]
    s = state.slot
    xs, z, lam = state.xs, state.z, state.lam
    dx = np.zeros_like(xs)
    dlam = np.zeros_like(lam)
    for msg in inbox:  # fixed neighbour order
        dx += w[msg.sender] * (xs - msg.xs)
        dlam += w[msg.sender] * (lam - msg.lam)
    g = np.asarray(game.grad_fn(i, xs), dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient for agent {i}", round_idx)
    tau, c = params.tau[i], params.c
    Ai = game.A_block(i)
    lo, hi = game.box(i)
    x_next = project_box(lo, hi, xs[s] - tau * (g + Ai.T @ lam + c * dx[s]))
    xs_next = xs - tau * c * dx
    xs_next[s] = x_next
    z_next = z + params.nu[i] * dlam
    return xs_next, z_next


def _agent_phase2(i, state: AgentState, xs_next, z_next, inbox, game: Game, graph: CommGraph,
                  params: TuningBundle) -> np.ndarray:
    w = graph.weights[i]
    s = state.slot
    z, lam = state.z, state.lam
    dz = np.zeros_like(z)
    dlam = np.zeros_like(lam)
    for msg in inbox:
        wij = w[msg.sender]
        dz += wij * (2.0 * (z_next - msg.z_next) - (z - msg.z))
        dlam += wij * (lam - msg.lam)
    Ai = game.A_block(i)
    reflected = Ai @ (2.0 * xs_next[s] - state.xs[s])
    return np.maximum(lam + params.sigma[i] * (reflected - game.b_blocks[i] - dz - dlam), 0.0)


def agent_step(i: int, state: AgentState, inbox: Sequence[NeighborMessage], game: Game,
               graph: CommGraph, params: TuningBundle, round_idx: int = 0) -> AgentState:
    """One complete local update of agent ``i``.

    Every inbox message must already carry the sender's fresh ``z_next``
    (the second exchange of the round); :func:`sync_round` arranges this.
    """
    ordered = _check_inbox(i, inbox, graph, game.n, game.m, phase2=True)
    xs_next, z_next = _agent_phase1(i, state, ordered, game, graph, params, round_idx)
    lam_next = _agent_phase2(i, state, xs_next, z_next, ordered, game, graph, params)
    return AgentState(i, state.slot, xs_next, z_next, lam_next)


def _reset_estimates(states: Sequence[AgentState]) -> list[AgentState]:
    x = np.concatenate([s.x for s in states])
    return [AgentState(s.index, s.slot, x.copy(), s.z.copy(), s.lam.copy()) for s in states]


def sync_round(states: Sequence[AgentState], game: Game, graph: CommGraph, params: TuningBundle,
               round_idx: int = 0, full_information: bool = False,
               pool: ThreadPoolExecutor | None = None) -> list[AgentState]:
    """Advance every agent by one synchronous round (two exchanges).

    Exchange 1 broadcasts ``(x^i, z_i, lam_i)``; every agent then updates
    its decision, estimates and ``z``. Exchange 2 broadcasts the fresh
    ``z`` and every agent updates ``lam``. Within each phase agents read
    only the snapshot, so the update order is irrelevant.
    """
    if full_information:
        states = _reset_estimates(states)
    N = graph.n_agents
    if len(states) != N:
        raise ProtocolError(f"{len(states)} states for {N} agents")
    mapper = pool.map if pool is not None else map
    out1 = [
        NeighborMessage(s.index, s.xs, s.z, s.lam) for s in states
    ]

    def phase1(i):
        inbox = _check_inbox(i, [out1[j] for j in graph.neighbors[i]], graph, game.n, game.m, False)
        return _agent_phase1(i, states[i], inbox, game, graph, params, round_idx)

    primal = list(mapper(phase1, range(N)))
    out2 = [
        NeighborMessage(s.index, s.xs, s.z, s.lam, primal[s.index][1]) for s in states
    ]

    def phase2(i):
        inbox = _check_inbox(i, [out2[j] for j in graph.neighbors[i]], graph, game.n, game.m, True)
        xs_next, z_next = primal[i]
        return _agent_phase2(i, states[i], xs_next, z_next, inbox, game, graph, params)

    duals = list(mapper(phase2, range(N)))
    return [
        AgentState(i, states[i].slot, primal[i][0], primal[i][1], duals[i]) for i in range(N)
    ]


# -- stacked form ---------------------------------------------------------------


@dataclass(eq=False)
class StackedOperator:
    """Precomputed gather/scatter structure for the stacked iteration."""

    game: Game
    graph: CommGraph
    params: TuningBundle

    def __post_init__(self) -> None:
        g = self.game
        self.L = np.asarray(self.graph.laplacian)
        self.ar = np.arange(g.n)
        self.owner = g.owner
        self.tau_x = self.params.tau[g.owner]
        self.starts = g.offsets[:-1]

    def apply(self, p: AugmentedPoint, round_idx: int = 0, full_information: bool = False
              ) -> AugmentedPoint:
        g, L, c = self.game, self.L, self.params.c
        X, Z, Lam = p.bold_x, p.z, p.lam
        x = X[self.owner, self.ar]
        if full_information:
            X = np.broadcast_to(x, X.shape)
        LX = L @ X
        F = extended_pseudo_gradient(g, X)
        if not np.all(np.isfinite(F)):
            raise NumericError("non-finite pseudo-gradient", round_idx)
        At_lam = np.einsum("kj,jk->j", g.A, Lam[self.owner]) if g.m else 0.0
        x_next = project_box(
            g.lower, g.upper, x - self.tau_x * (F + At_lam + c * LX[self.owner, self.ar])
        )
        X_next = X - (self.params.tau * c)[:, None] * LX
        X_next[self.owner, self.ar] = x_next
        LLam = L @ Lam
        Z_next = Z + self.params.nu[:, None] * LLam
        if g.m:
            AX = np.add.reduceat(g.A * (2.0 * x_next - x), self.starts, axis=1).T
            dz = L @ (2.0 * Z_next - Z)
            Lam_next = np.maximum(
                Lam + self.params.sigma[:, None] * (AX - g.b_blocks - dz - LLam), 0.0
            )
        else:
            Lam_next = Lam.copy()
        return AugmentedPoint(X_next, Z_next, Lam_next)


def stacked_step(point: AugmentedPoint, game: Game, graph: CommGraph, params: TuningBundle,
                 full_information: bool = False) -> AugmentedPoint:
    """One round of the iteration written on the stacked point."""
    if point.N != game.N or point.n != game.n or point.m != game.m:
        raise ValueError("augmented point does not match the game dimensions")
    return StackedOperator(game, graph, params).apply(point, full_information=full_information)


# -- baseline ------------------------------------------------------------------


def baseline_full_info_step(x, lam, game: Game, tau, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Centralised projected primal-dual step with a single multiplier."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    x_next = project_box(game.lower, game.upper, x - tau * (pseudo_gradient(game, x) + game.A.T @ lam))
    lam_next = np.maximum(lam + sigma * (game.A @ (2.0 * x_next - x) - game.b), 0.0)
    return x_next, lam_next


def baseline_steps(game: Game) -> tuple[float, float, float]:
    """Default ``(tau, sigma, delta)`` for the baseline.

    Uses ``beta0 = mu / theta0^2`` (cocoercivity of F), ``delta = 1.01 / (2 beta0)``
    and Gershgorin-type bounds on the baseline metric.
    """
    k = game_constants(game)
    delta = 1.01 * k.theta0**2 / (2.0 * k.mu)
    absA = np.abs(game.A)
    col = absA.sum(axis=0).max() if game.m else 0.0
    row = absA.sum(axis=1).max() if game.m else 0.0
    return 1.0 / (col + delta), 1.0 / (row + delta), delta


# -- runs ----------------------------------------------------------------------


@dataclass(frozen=True)
class StopRule:
    """Stop once ``max(consensus, spread, step norm) < tol`` (and KKT below
    ``kkt_tol`` when set) or after ``max_rounds`` rounds."""

    tol: float = 1e-8
    max_rounds: int = 10**6
    kkt_tol: float | None = None

    def __post_init__(self) -> None:
        if self.tol < 0 or self.max_rounds < 0:
            raise ValueError("tol and max_rounds must be non-negative")


@dataclass
class Trajectory:
    """Per-round diagnostics (round 0 is the initial point) plus strided snapshots."""

    consensus: list[float] = field(default_factory=list)
    spread: list[float] = field(default_factory=list)
    kkt: list[float] = field(default_factory=list)
    step_norm: list[float] = field(default_factory=list)
    phi_distance: list[float] = field(default_factory=list)
    snapshots: list[tuple[int, AugmentedPoint]] = field(default_factory=list)
    stop_reason: str = "running"
    final: AugmentedPoint | None = None
    final_kkt: KKTReport | None = None

    @property
    def rounds(self) -> int:
        return len(self.kkt) - 1

    @property
    def n_records(self) -> int:
        return len(self.kkt)

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in range(self.n_records):
            w.writerow([k] + [repr(float(v)) for v in
                              (self.consensus[k], self.spread[k], self.kkt[k], self.step_norm[k])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def snapshots_json(self) -> list[dict]:
        return [{"round": k, **point_to_json(p)} for k, p in self.snapshots]


def point_to_json(p: AugmentedPoint) -> dict:
    return {"bold_x": p.bold_x.tolist(), "z": p.z.tolist(), "lam": p.lam.tolist()}


def point_from_json(doc: Mapping) -> AugmentedPoint:
    return AugmentedPoint(
        np.asarray(doc["bold_x"], float), np.asarray(doc["z"], float), np.asarray(doc["lam"], float)
    )


def default_init(game: Game) -> AugmentedPoint:
    """Own decisions at the box midpoints, all estimates, ``z`` and ``lam`` zero."""
    N, n, m = game.N, game.n, game.m
    X = np.zeros((N, n))
    X[game.owner, np.arange(n)] = game.midpoint()
    return AugmentedPoint(X, np.zeros((N, m)), np.zeros((N, m)))


def consensus_kkt(game: Game, p: AugmentedPoint) -> KKTReport:
    """KKT report at the true decisions and the average multiplier."""
    x = p.bold_x[game.owner, np.arange(game.n)]
    lam = p.lam.mean(axis=0) if game.m else np.zeros(0)
    return kkt_residual(game, x, lam)


def _validate_init(game: Game, p: AugmentedPoint) -> None:
    if p.N != game.N or p.n != game.n or p.m != game.m:
        raise ValueError(
            f"init has shape N={p.N}, n={p.n}, m={p.m}; game has N={game.N}, n={game.n}, m={game.m}"
        )
    if np.any(p.lam < 0):
        raise ValueError("initial multipliers must be non-negative")
    for arr in (p.bold_x, p.z, p.lam):
        if not np.all(np.isfinite(arr)):
            raise ValueError("initial point must be finite")


def run(game: Game, graph: CommGraph, params: TuningBundle, init: AugmentedPoint | None = None,
        stop: StopRule = StopRule(), backend: str = "stacked", stride: int = 10,
        full_information: bool = False, reference: AugmentedPoint | None = None,
        phi: np.ndarray | None = None,
        callback: Callable[[int, AugmentedPoint], None] | None = None,
        compiled: bool | None = None) -> Trajectory:
    """Iterate from ``init`` until the stop rule fires.

    Parameters
    ----------
    backend : {"stacked", "agents"}
        Vectorised stacked map or per-agent message passing.
    stride : int
        Snapshot every ``stride`` rounds; the initial and final points are
        always kept. ``0`` keeps only those two.
    full_information : bool
        Reset every agent's estimates to the true decisions before each
        round (each agent observes all decisions).
    reference, phi : optional
        When both are given, ``||p_k - reference||_phi`` is recorded per round.
    compiled : bool, optional
        Use the compiled loop for affine games on the stacked backend. By
        default it is used whenever possible (no callback, no reference).
    """
    if backend not in ("stacked", "agents"):
        raise ValueError(f"unknown backend {backend!r}")
    if stride < 0:
        raise ValueError("stride must be non-negative")
    p = (init or default_init(game)).copy()
    _validate_init(game, p)
    traj = Trajectory()
    ref_vec = reference.vector() if reference is not None and phi is not None else None

    def record(point, step):
        traj.consensus.append(consensus_residual(point.bold_x, game.N))
        traj.spread.append(multiplier_spread(point.lam, game.N))
        traj.kkt.append(consensus_kkt(game, point).max)
        traj.step_norm.append(step)
        if ref_vec is not None:
            d = point.vector() - ref_vec
            traj.phi_distance.append(float(np.sqrt(max(d @ phi @ d, 0.0))))

    record(p, float("nan"))
    traj.snapshots.append((0, p.copy()))
    eligible = backend == "stacked" and game.affine is not None and callback is None and ref_vec is None
    if compiled and not eligible:
        raise ValueError("the compiled loop needs an affine game, the stacked backend, "
                         "no callback and no reference point")
    if eligible and compiled is not False:
        return _run_compiled(game, graph, params, p, stop, stride, full_information, traj)
    op = StackedOperator(game, graph, params)
    threads = _thread_count()
    pool = ThreadPoolExecutor(max_workers=threads) if backend == "agents" and threads > 0 else None
    states = unstack(p, game.dims) if backend == "agents" else None
    k = 0
    try:
        while True:
            if k >= stop.max_rounds:
                traj.stop_reason = "max_rounds"
                break
            try:
                # overflow is reported as NumericError below, not as a warning
                with np.errstate(over="ignore", invalid="ignore"):
                    if backend == "stacked":
                        q = op.apply(p, k + 1, full_information)
                    else:
                        states = sync_round(states, game, graph, params, k + 1, full_information,
                                            pool)
                        q = stack(states)
            except NumericError as exc:
                exc.trajectory = traj
                traj.stop_reason = "numeric_error"
                traj.final = p
                raise
            vec_q = q.vector()
            if not np.all(np.isfinite(vec_q)):
                traj.stop_reason = "numeric_error"
                traj.final = p
                raise NumericError("non-finite iterate", k + 1, traj)
            step = float(np.linalg.norm(vec_q - p.vector()))
            p = q
            k += 1
            record(p, step)
            if stride and k % stride == 0:
                traj.snapshots.append((k, p.copy()))
            if callback is not None:
                callback(k, p)
            worst = max(traj.consensus[-1], traj.spread[-1], step)
            if worst < stop.tol and (stop.kkt_tol is None or traj.kkt[-1] < stop.kkt_tol):
                traj.stop_reason = "converged"
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if not traj.snapshots or traj.snapshots[-1][0] != k:
        traj.snapshots.append((k, p.copy()))
    traj.final = p
    traj.final_kkt = consensus_kkt(game, p)
    return traj


def _run_compiled(game: Game, graph: CommGraph, params: TuningBundle, p: AugmentedPoint,
                  stop: StopRule, stride: int, full_information: bool, traj: Trajectory
                  ) -> Trajectory:
    from ._kernels import affine_rounds

    X = np.ascontiguousarray(p.bold_x, dtype=float).copy()
    Z = np.ascontiguousarray(p.z, dtype=float).copy()
    Lam = np.ascontiguousarray(p.lam, dtype=float).copy()
    Q, h = game.affine
    fixed = (
        np.ascontiguousarray(graph.laplacian, dtype=float),
        np.ascontiguousarray(Q, dtype=float),
        np.ascontiguousarray(h, dtype=float),
        np.ascontiguousarray(game.A, dtype=float).reshape(game.m, game.n),
        np.ascontiguousarray(game.b_blocks, dtype=float),
        np.ascontiguousarray(game.b, dtype=float),
        game.lower, game.upper,
        np.ascontiguousarray(game.owner, dtype=np.int64),
        np.ascontiguousarray(game.offsets, dtype=np.int64),
        params.tau, params.nu, params.sigma, float(params.c), bool(full_information),
        float(stop.tol), -1.0 if stop.kkt_tol is None else float(stop.kkt_tol),
    )
    chunk = stride if stride else 4096
    bufs = [np.zeros(chunk + 1) for _ in range(4)]
    k = 0
    while True:
        if k >= stop.max_rounds:
            traj.stop_reason = "max_rounds"
            break
        todo = min(chunk, stop.max_rounds - k)
        done, status = affine_rounds(X, Z, Lam, *fixed, todo, *bufs, 0)
        for lst, buf in zip((traj.consensus, traj.spread, traj.kkt, traj.step_norm), bufs):
            lst.extend(buf[1 : done + 1].tolist())
        k += done
        if status == -1:
            traj.stop_reason = "numeric_error"
            traj.final = AugmentedPoint(X, Z, Lam)
            raise NumericError("non-finite iterate", k + 1, traj)
        if stride and k % stride == 0 and done:
            traj.snapshots.append((k, AugmentedPoint(X.copy(), Z.copy(), Lam.copy())))
        if status == 1:
            traj.stop_reason = "converged"
            break
    if traj.snapshots[-1][0] != k:
        traj.snapshots.append((k, AugmentedPoint(X.copy(), Z.copy(), Lam.copy())))
    traj.final = AugmentedPoint(X, Z, Lam)
    traj.final_kkt = consensus_kkt(game, traj.final)
    return traj


def run_baseline(game: Game, tau: float | None = None, sigma: float | None = None,
                 x0=None, lam0=None, stop: StopRule = StopRule(), stride: int = 10) -> Trajectory:
    """Run the full-information baseline; output uses the same schema as :func:`run`.

    The final point is stored as a one-agent augmented point.
    """
    if tau is None or sigma is None:
        t, s, _ = baseline_steps(game)
        tau = t if tau is None else tau
        sigma = s if sigma is None else sigma
    x = game.midpoint() if x0 is None else np.asarray(x0, dtype=float).copy()
    lam = np.zeros(game.m) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    if np.any(lam < 0):
        raise ValueError("initial multipliers must be non-negative")
    traj = Trajectory()

    def as_point(x, lam):
        return AugmentedPoint(x[None, :], np.zeros((1, game.m)), lam[None, :])

    def record(x, lam, step):
        traj.consensus.append(0.0)
        traj.spread.append(0.0)
        traj.kkt.append(kkt_residual(game, x, lam).max)
        traj.step_norm.append(step)

    record(x, lam, float("nan"))
    traj.snapshots.append((0, as_point(x, lam)))
    k = 0
    while True:
        if k >= stop.max_rounds:
            traj.stop_reason = "max_rounds"
            break
        xn, ln = baseline_full_info_step(x, lam, game, tau, sigma)
        if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(ln))):
            traj.stop_reason = "numeric_error"
            traj.final = as_point(x, lam)
            raise NumericError("non-finite iterate", k + 1, traj)
        step = float(np.sqrt(np.sum((xn - x) ** 2) + np.sum((ln - lam) ** 2)))
        x, lam = xn, ln
        k += 1
        record(x, lam, step)
        if stride and k % stride == 0:
            traj.snapshots.append((k, as_point(x, lam)))
        if step < stop.tol and (stop.kkt_tol is None or traj.kkt[-1] < stop.kkt_tol):
            traj.stop_reason = "converged"
            break
    if traj.snapshots[-1][0] != k:
        traj.snapshots.append((k, as_point(x, lam)))
    traj.final = as_point(x, lam)
    traj.final_kkt = kkt_residual(game, x, lam)
    return traj


def final_state_json(game: Game, traj: Trajectory) -> dict:
    p = traj.final
    return {
        "stop_reason": traj.stop_reason,
        "rounds": traj.rounds,
        "x": (p.bold_x[game.owner, np.arange(game.n)] if p.N == game.N else p.bold_x[0]).tolist(),
        "lam_mean": p.lam.mean(axis=0).tolist(),
        "consensus_residual": traj.consensus[-1],
        "multiplier_spread": traj.spread[-1],
        "kkt": traj.final_kkt.to_json() if traj.final_kkt else None,
        "point": point_to_json(p),
    }


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
