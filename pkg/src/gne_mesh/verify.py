"""Ground truth and certification.

* :func:`kkt_residual` scores a candidate ``(x, lam)`` against the KKT system
  of the variational inequality.
* :func:`solve_vi_oracle` computes the variational GNE of a small affine
  game exactly by active-set enumeration.
* :func:`inclusion_residual` checks that one iteration is exactly a
  preconditioned forward-backward step for the split operators.
* The ``sample_*`` functions probe the monotonicity/cocoercivity constants.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import AugmentedPoint, consensus_residual, multiplier_spread
from .game import Game, extended_pseudo_gradient, project_box, pseudo_gradient
from .graph import CommGraph

FACE_TOL = 1e-9
ORACLE_GUARD_LOG2 = 20


class OracleError(RuntimeError):
    """The oracle refused the instance or found no KKT point."""


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    primal_violation: float
    complementarity: float
    dual_feas: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal_violation, self.complementarity, self.dual_feas)

    def to_json(self) -> dict:
        return {**asdict(self), "max": self.max}


def kkt_residual(game: Game, x, lam) -> KKTReport:
    """Residuals of ``0 in F(x) + A'lam + N_Omega(x)``, ``Ax <= b``, ``lam >= 0`` and complementarity.

    Complementarity is measured entrywise, ``sum_k |lam_k (Ax - b)_k|``,
    which equals ``|lam'(Ax - b)|`` whenever the other two conditions hold.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if x.size != game.n or lam.size != game.m:
        raise ValueError("dimension mismatch in kkt_residual")
    g = pseudo_gradient(game, x) + game.A.T @ lam
    stat = float(np.linalg.norm(x - project_box(game.lower, game.upper, x - g)))
    slack = game.A @ x - game.b
    return KKTReport(
        stationarity=stat,
        primal_violation=float(np.linalg.norm(np.maximum(slack, 0.0))),
        complementarity=float(np.sum(np.abs(lam * slack))),
        dual_feas=float(np.linalg.norm(np.minimum(lam, 0.0))),
    )


# -- active-set oracle ---------------------------------------------------------


@dataclass(frozen=True)
class OracleSolution:
    x_star: np.ndarray
    lambda_star: np.ndarray
    active_rows: tuple[int, ...]
    at_lower: tuple[int, ...]
    at_upper: tuple[int, ...]
    box_multipliers: np.ndarray  # >= 0 at lower faces means the gradient pushes outward


def solve_vi_oracle(game: Game, tol: float = 1e-9) -> OracleSolution:
    """Exact variational GNE of an affine game ``F(x) = Qx + h`` by enumeration.

    Each coordinate is free, at its lower bound or at its upper bound and
    each coupling row is active or not. For every pattern the linear
    KKT system is solved and the candidate is kept if it passes
    feasibility, sign and complementarity checks. Strong monotonicity
    makes ``x*`` unique; ``lambda*`` is the least-norm multiplier of the
    accepted pattern.
    """
    if game.affine is None:
        raise OracleError("the oracle needs an affine pseudo-gradient")
    n, m = game.n, game.m
    if m + 2 * n > ORACLE_GUARD_LOG2:
        raise OracleError(
            f"instance too large for enumeration (m + 2n = {m + 2 * n} > {ORACLE_GUARD_LOG2})"
        )
    Q, h = game.affine
    A, b, lo, hi = game.A, game.b, game.lower, game.upper
    scale = 1.0 + max(np.abs(Q).max(), np.abs(h).max(), np.abs(A).max(initial=0.0))
    fixed_only = lo == hi

    best = None
    for pattern in itertools.product(*[((1,) if fixed_only[j] else (0, 1, 2)) for j in range(n)]):
        pat = np.array(pattern)
        free = np.flatnonzero(pat == 0)
        xb = np.where(pat == 2, hi, lo)
        for rows in itertools.chain.from_iterable(
            itertools.combinations(range(m), r) for r in range(m + 1)
        ):
            rows = list(rows)
            nf, na = free.size, len(rows)
            M = np.zeros((nf + na, nf + na))
            rhs = np.zeros(nf + na)
            bound_idx = np.flatnonzero(pat != 0)
            M[:nf, :nf] = Q[np.ix_(free, free)]
            M[:nf, nf:] = A[np.ix_(rows, free)].T
            rhs[:nf] = -(h[free] + Q[np.ix_(free, bound_idx)] @ xb[bound_idx])
            M[nf:, :nf] = A[np.ix_(rows, free)]
            rhs[nf:] = b[rows] - A[np.ix_(rows, bound_idx)] @ xb[bound_idx]
            if nf + na:
                sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
                if np.linalg.norm(M @ sol - rhs) > tol * scale * (1 + np.linalg.norm(rhs)):
                    continue
            else:
                sol = np.zeros(0)
            x = xb.copy()
            x[free] = sol[:nf]
            lam = np.zeros(m)
            lam[rows] = sol[nf:]
            if np.any(x < lo - tol) or np.any(x > hi + tol):
                continue
            if np.any(lam < -tol) or np.any(A @ x - b > tol * scale):
                continue
            g = Q @ x + h + A.T @ lam
            if np.any(g[pat == 1][~fixed_only[pat == 1]] < -tol * scale):
                continue
            if np.any(g[pat == 2] > tol * scale):
                continue
            x = np.clip(x, lo, hi)
            lam = np.maximum(lam, 0.0)
            rep = kkt_residual(game, x, lam)
            if best is None or rep.max < best[0]:
                box_mult = np.where(pat == 1, g, np.where(pat == 2, -g, 0.0))
                best = (rep.max, OracleSolution(
                    x, lam, tuple(rows),
                    tuple(int(j) for j in np.flatnonzero(pat == 1)),
                    tuple(int(j) for j in np.flatnonzero(pat == 2)),
                    box_mult,
                ))
            if rep.max <= 1e-12 * scale:
                return best[1]
    if best is None:
        raise OracleError("no active set passes the KKT checks; assumptions violated?")
    return best[1]


# -- split operators -----------------------------------------------------------


def _own(game: Game, X: np.ndarray) -> np.ndarray:
    return X[game.owner, np.arange(game.n)]


def _RT_AT(game: Game, Lam: np.ndarray) -> np.ndarray:
    """``R' A_blk' lam`` as an ``N x n`` array (nonzero only on own slots)."""
    out = np.zeros((game.N, game.n))
    if game.m:
        out[game.owner, np.arange(game.n)] = np.einsum("kj,jk->j", game.A, Lam[game.owner])
    return out


def _A_R(game: Game, X: np.ndarray) -> np.ndarray:
    """``A_blk R bold_x`` as an ``N x m`` array (row i is ``A_i x_i``)."""
    if not game.m:
        return np.zeros((game.N, 0))
    return np.add.reduceat(game.A * _own(game, X), game.offsets[:-1], axis=1).T


def operator_B(game: Game, graph: CommGraph, c: float, p: AugmentedPoint) -> AugmentedPoint:
    """Single-valued part: ``(R'F(bold_x) + c L_x bold_x, 0, L_lam lam + b)``."""
    L = graph.laplacian
    X = np.zeros((game.N, game.n))
    X[game.owner, np.arange(game.n)] = extended_pseudo_gradient(game, p.bold_x)
    X += c * (L @ p.bold_x)
    return AugmentedPoint(X, np.zeros_like(p.z), L @ p.lam + game.b_blocks)


def operator_skew(game: Game, graph: CommGraph, p: AugmentedPoint) -> AugmentedPoint:
    """Skew linear part of the set-valued operator."""
    L = graph.laplacian
    return AugmentedPoint(_RT_AT(game, p.lam), -(L @ p.lam), -_A_R(game, p.bold_x) + L @ p.z)


def phi_apply(game: Game, graph: CommGraph, tau, nu, sigma, d: AugmentedPoint) -> AugmentedPoint:
    """Matrix-free product with the metric matrix."""
    L = graph.laplacian
    tau, nu, sigma = (np.broadcast_to(np.asarray(v, float), (game.N,)) for v in (tau, nu, sigma))
    return AugmentedPoint(
        d.bold_x / tau[:, None] - _RT_AT(game, d.lam),
        d.z / nu[:, None] + L @ d.lam,
        -_A_R(game, d.bold_x) + L @ d.z + d.lam / sigma[:, None],
    )


def _sub(p: AugmentedPoint, q: AugmentedPoint) -> AugmentedPoint:
    return AugmentedPoint(p.bold_x - q.bold_x, p.z - q.z, p.lam - q.lam)


def inclusion_residual(p_k: AugmentedPoint, p_next: AugmentedPoint, game: Game, graph: CommGraph,
                       params, face_tol: float = FACE_TOL) -> float:
    """Largest violation of ``-B(p_k) in A(p_next) + Phi (p_next - p_k)``.

    The remainder ``-B(p_k) - Phi(p_next - p_k) - skew(p_next)`` must be a
    normal-cone element at ``p_next``: zero on estimate and ``z``
    coordinates and on interior decisions / positive multipliers,
    non-positive at lower faces and zero multipliers, non-negative at
    upper faces.
    """
    B = operator_B(game, graph, params.c, p_k)
    P = phi_apply(game, graph, params.tau, params.nu, params.sigma, _sub(p_next, p_k))
    S = operator_skew(game, graph, p_next)
    rX = -B.bold_x - P.bold_x - S.bold_x
    rZ = -B.z - P.z - S.z
    rL = -B.lam - P.lam - S.lam

    viol = [0.0]
    own = np.zeros(rX.shape, dtype=bool)
    own[game.owner, np.arange(game.n)] = True
    viol.append(np.abs(rX[~own]).max(initial=0.0))
    viol.append(np.abs(rZ).max(initial=0.0))
    r = _own(game, rX)
    x = _own(game, p_next.bold_x)
    at_lo = np.abs(x - game.lower) <= face_tol
    at_hi = np.abs(x - game.upper) <= face_tol
    both = at_lo & at_hi
    v = np.where(both, 0.0,
                 np.where(at_lo, np.maximum(r, 0.0), np.where(at_hi, np.maximum(-r, 0.0), np.abs(r))))
    outside = np.maximum(game.lower - x, 0.0) + np.maximum(x - game.upper, 0.0)
    viol.append(float(v.max(initial=0.0)))
    viol.append(float(outside.max(initial=0.0)))
    if game.m:
        lam = p_next.lam
        at0 = lam <= face_tol
        vl = np.where(at0, np.maximum(rL, 0.0), np.abs(rL))
        viol.append(float(vl.max()))
        viol.append(float(np.maximum(-lam, 0.0).max()))
    return float(max(viol))


def zero_point(game: Game, graph: CommGraph, x_star, lam_star) -> AugmentedPoint:
    """A zero of the split operators built from a KKT pair.

    Decisions and multipliers are replicated on every agent and ``z`` is
    the least-norm solution of ``L_lam z = A_blk R x - b_blk - w`` with the
    normal-cone element ``w_i = (A x* - b) / N``.
    """
    N, n, m = game.N, game.n, game.m
    x_star = np.asarray(x_star, dtype=float)
    lam_star = np.asarray(lam_star, dtype=float)
    X = np.tile(x_star, (N, 1))
    if m == 0:
        return AugmentedPoint(X, np.zeros((N, 0)), np.zeros((N, 0)))
    w = (game.A @ x_star - game.b) / N
    r = _A_R(game, X) - game.b_blocks - w
    L_lam = np.kron(graph.laplacian, np.eye(m))
    z = np.linalg.pinv(L_lam) @ r.reshape(-1)
    return AugmentedPoint(X, z.reshape(N, m), np.tile(lam_star, (N, 1)))


# -- sampling checks -------------------------------------------------------------


def _restricted_matrix(game: Game, graph: CommGraph, c: float) -> np.ndarray:
    """Symmetric part of ``R'R(I kron Q) + c L_x`` for affine games."""
    Q = game.affine[0]
    N, n = game.N, game.n
    M = np.zeros((N * n, N * n))
    for j in range(n):
        i = game.owner[j]
        M[i * n + j, i * n : (i + 1) * n] = Q[j]
    M += c * np.kron(graph.laplacian, np.eye(n))
    return 0.5 * (M + M.T)


def sample_restricted_monotonicity(game: Game, graph: CommGraph, c: float, trials: int = 10_000,
                                   seed: int = 0, radius: float = 10.0,
                                   directed: bool = True) -> float:
    """Worst ``<d, R'(F(x) - F(x')) + c L_x d> / ||d||^2`` with ``x'`` on the consensus subspace.

    ``x'`` is drawn from the box and ``x = x' + d`` from a ball of radius
    ``radius``. With ``directed`` and an affine game the minimising direction
    (smallest eigenvector of the symmetric part) is added as one extra trial.
    """
    rng = np.random.default_rng(seed)
    N, n = game.N, game.n
    L = graph.laplacian
    worst = np.inf
    dirs = []
    for _ in range(trials):
        d = rng.standard_normal((N, n))
        d *= radius * rng.random() ** (1.0 / (N * n)) / np.linalg.norm(d)
        dirs.append(d)
    if directed and game.affine is not None:
        vals, vecs = np.linalg.eigh(_restricted_matrix(game, graph, c))
        dirs.append(vecs[:, 0].reshape(N, n))
    for d in dirs:
        nd = float(np.sum(d * d))
        if nd == 0.0:
            continue  # degenerate pair
        xp = rng.uniform(game.lower, game.upper)
        Xp = np.tile(xp, (N, 1))
        dF = extended_pseudo_gradient(game, Xp + d) - extended_pseudo_gradient(game, Xp)
        lhs = float(_own(game, d) @ dF + c * np.sum(d * (L @ d)))
        worst = min(worst, lhs / nd)
    return worst


def sample_cocoercivity(game: Game, graph: CommGraph, c: float, trials: int = 10_000,
                        seed: int = 0, radius: float = 10.0, skip_tol: float = 1e-14) -> float:
    """Worst ``<p - p', B(p) - B(p')> / ||B(p) - B(p')||^2`` with ``bold_x'`` on consensus."""
    rng = np.random.default_rng(seed)
    N, n, m = game.N, game.n, game.m
    worst = np.inf
    for _ in range(trials):
        xp = rng.uniform(game.lower, game.upper)
        d = rng.standard_normal((N, n))
        d *= radius * rng.random() ** (1.0 / (N * n)) / np.linalg.norm(d)
        lam_p = rng.uniform(0.0, radius, (N, m))
        lam = rng.uniform(0.0, radius, (N, m))
        z_p = rng.standard_normal((N, m))
        z = rng.standard_normal((N, m))
        p1 = AugmentedPoint(np.tile(xp, (N, 1)) + d, z, lam)
        p0 = AugmentedPoint(np.tile(xp, (N, 1)), z_p, lam_p)
        dB = _sub(operator_B(game, graph, c, p1), operator_B(game, graph, c, p0)).vector()
        den = float(dB @ dB)
        if den <= skip_tol:
            continue
        worst = min(worst, float(_sub(p1, p0).vector() @ dB) / den)
    return worst


@dataclass
class DescentReport:
    passed: bool
    monotone: bool
    worst_margin: float
    pairs: int
    distances: list[float] = field(default_factory=list)


def phi_descent_check(points, p_star, phi: np.ndarray, xi: float, slack: float = 1e-9) -> DescentReport:
    """Check ``||p_{k+1}-p*||_phi^2 <= ||p_k-p*||_phi^2 - (1-xi)||p_k-p_{k+1}||_phi^2`` pairwise.

    The margin is computed as ``D' phi (d_k + d_{k+1}) - (1 - xi) D' phi D``
    with ``D = p_k - p_{k+1}``, which avoids cancelling two large squares.
    """
    V = np.stack([p.vector() if isinstance(p, AugmentedPoint) else np.asarray(p, float)
                  for p in points])
    star = p_star.vector() if isinstance(p_star, AugmentedPoint) else np.asarray(p_star, float)
    E = V - star
    dists = np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", E, phi, E), 0.0)).tolist()
    D = V[:-1] - V[1:]
    PD = D @ phi
    decrease = np.einsum("ki,ki->k", PD, E[:-1] + E[1:])
    margins = decrease - (1.0 - xi) * np.einsum("ki,ki->k", PD, D)
    worst = float(margins.min()) if len(margins) else 0.0
    # non-increase of the phi-distance, on squared values with the same slack
    monotone = bool(np.all(decrease >= -slack))
    return DescentReport(worst >= -slack, monotone, worst, max(len(V) - 1, 0), dists)


# -- reports ----------------------------------------------------------------------


@dataclass(frozen=True)
class VerifyCheck:
    name: str
    value: float | None
    bound: float | None
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list[VerifyCheck]
    seeds: dict = field(default_factory=dict)
    oracle: dict | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
            "seeds": self.seeds,
            "oracle": self.oracle,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def verify_state(game: Game, point: AugmentedPoint, tol: float = 1e-6,
                 oracle_tol: float = 1e-6, seeds: dict | None = None) -> VerificationReport:
    """KKT, consensus and (when the instance is small enough) oracle checks on a final state."""
    checks = []
    if point.N == game.N:
        cons = consensus_residual(point.bold_x, game.N)
        spread = multiplier_spread(point.lam, game.N)
        x = _own(game, point.bold_x)
    else:  # single-agent (baseline) state
        cons, spread = 0.0, 0.0
        x = point.bold_x[0]
    lam = point.lam.mean(axis=0) if game.m else np.zeros(0)
    checks.append(VerifyCheck("consensus_residual", cons, tol, cons <= tol))
    checks.append(VerifyCheck("multiplier_spread", spread, tol, spread <= tol))
    rep = kkt_residual(game, x, lam)
    for name, val in asdict(rep).items():
        checks.append(VerifyCheck(f"kkt_{name}", val, 10 * tol, val <= 10 * tol))
    oracle_doc = None
    try:
        sol = solve_vi_oracle(game)
    except OracleError as exc:
        oracle_doc = {"skipped": str(exc)}
    else:
        ex = float(np.max(np.abs(sol.x_star - x), initial=0.0))
        el = float(np.max(np.abs(sol.lambda_star - lam), initial=0.0))
        checks.append(VerifyCheck("oracle_x", ex, oracle_tol, ex <= oracle_tol))
        checks.append(VerifyCheck("oracle_lambda", el, oracle_tol, el <= oracle_tol))
        oracle_doc = {"x_star": sol.x_star.tolist(), "lambda_star": sol.lambda_star.tolist(),
                      "active_rows": list(sol.active_rows)}
    return VerificationReport(checks, dict(seeds or {}), oracle_doc)
