"""Games with box-constrained players and affine coupling constraints.

A :class:`Game` only exposes per-player gradients to the iteration. Costs
are kept when available so gradients can be checked by finite differences.
Two concrete families are provided: the networked Nash-Cournot model
(``cournot_game`` / ``make_cournot``) and general affine pseudo-gradient
games (``affine_game``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

GradFn = Callable[[int, np.ndarray], np.ndarray]
CostFn = Callable[[int, np.ndarray], float]


class ModelError(ValueError):
    """The game violates a standing assumption (empty box, Q not PD, ...)."""


@dataclass(frozen=True)
class GameConstants:
    """Strong monotonicity ``mu`` of F, Lipschitz constant ``theta0`` of F
    and ``theta`` of the extended pseudo-gradient."""

    mu: float
    theta0: float
    theta: float

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ModelError(f"mu must be positive, got {self.mu}")
        if self.theta0 < 0 or self.theta < 0:
            raise ModelError("Lipschitz constants must be non-negative")


@dataclass(eq=False)
class Game:
    """N-player game with box sets and coupling constraint ``sum A_i x_i <= sum b_i``.

    ``grad_fn(i, xs)`` returns the partial gradient of player ``i``'s cost
    with respect to its own block, evaluated at the full profile ``xs``
    (player ``i``'s own block first-class, the rest being whatever
    estimate the caller supplies). It must be pure.
    """

    dims: tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray
    A: np.ndarray  # m x n, column blocks A_i
    b_blocks: np.ndarray  # N x m, row i is b_i
    grad_fn: GradFn
    cost_fn: CostFn | None = None
    affine: tuple[np.ndarray, np.ndarray] | None = None  # (Q, h) when F(x) = Qx + h
    constants: GameConstants | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.dims = tuple(int(d) for d in self.dims)
        if not self.dims or min(self.dims) < 1:
            raise ModelError(f"player dimensions must be positive, got {self.dims}")
        n = sum(self.dims)
        self.lower = np.asarray(self.lower, dtype=float).reshape(n)
        self.upper = np.asarray(self.upper, dtype=float).reshape(n)
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ModelError("box bounds must be finite (compact local sets)")
        if np.any(self.lower > self.upper):
            raise ModelError("empty box: lower > upper")
        self.A = np.asarray(self.A, dtype=float)
        if self.A.ndim != 2 or self.A.shape[1] != n:
            raise ModelError(f"A must be m x {n}, got shape {self.A.shape}")
        self.b_blocks = np.asarray(self.b_blocks, dtype=float).reshape(len(self.dims), self.A.shape[0])
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self.owner = np.repeat(np.arange(len(self.dims)), self.dims)

    @property
    def N(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def b(self) -> np.ndarray:
        return self.b_blocks.sum(axis=0)

    def slot(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def A_block(self, i: int) -> np.ndarray:
        return self.A[:, self.slot(i)]

    def box(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.slot(i)
        return self.lower[s], self.upper[s]

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def project_box(lower: np.ndarray, upper: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``[lower, upper]`` (componentwise clamp)."""
    return np.minimum(np.maximum(v, lower), upper)


def _compose(game: Game, i: int, xi: np.ndarray, est: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float).reshape(-1)
    est = np.asarray(est, dtype=float).reshape(-1)
    if xi.size != game.dims[i]:
        raise ValueError(f"player {i} decision has size {xi.size}, expected {game.dims[i]}")
    if est.size != game.n - game.dims[i]:
        raise ValueError(
            f"player {i} estimate has size {est.size}, expected {game.n - game.dims[i]}"
        )
    s = game.slot(i)
    full = np.empty(game.n)
    full[: s.start] = est[: s.start]
    full[s] = xi
    full[s.stop :] = est[s.start :]
    return full


def partial_gradient(game: Game, i: int, xi, est) -> np.ndarray:
    """Gradient of ``J_i`` in ``x_i`` evaluated at ``(x_i, est)``.

    ``est`` lists the other players' blocks in player order.
    """
    return np.asarray(game.grad_fn(i, _compose(game, i, xi, est)), dtype=float)


def pseudo_gradient(game: Game, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != game.n:
        raise ValueError(f"profile has size {x.size}, expected {game.n}")
    if game.affine is not None:
        Q, h = game.affine
        return Q @ x + h
    return np.concatenate([game.grad_fn(i, x) for i in range(game.N)])


def extended_pseudo_gradient(game: Game, bold_x) -> np.ndarray:
    """``col(grad_i J_i(x^i))`` where ``x^i`` is agent ``i``'s full estimate vector.

    ``bold_x`` may be the flat ``N*n`` stack or an ``N x n`` array.
    """
    X = np.asarray(bold_x, dtype=float)
    if X.size != game.N * game.n:
        raise ValueError(f"augmented profile has size {X.size}, expected {game.N * game.n}")
    X = X.reshape(game.N, game.n)
    if game.affine is not None:
        Q, h = game.affine
        QX = X @ Q.T
        return QX[game.owner, np.arange(game.n)] + h
    return np.concatenate([game.grad_fn(i, X[i]) for i in range(game.N)])


def player_cost(game: Game, i: int, x) -> float:
    if game.cost_fn is None:
        raise ModelError("this game does not carry cost functions")
    return float(game.cost_fn(i, np.asarray(x, dtype=float)))


# -- constants --------------------------------------------------------------


def quadratic_constants(Q: np.ndarray) -> GameConstants:
    """``mu`` = smallest eigenvalue of the symmetric part, ``theta0 = theta = ||Q||``.

    For an affine game ``F(x) = Qx + h`` the extended pseudo-gradient is
    ``R (I kron Q) x + h`` whose Lipschitz constant is also bounded by ``||Q||``.
    """
    Q = np.asarray(Q, dtype=float)
    mu = float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])
    if mu <= 0:
        raise ModelError(f"Q is not positive definite (smallest eigenvalue {mu:.3e})")
    norm = float(np.linalg.norm(Q, 2))
    return GameConstants(mu=mu, theta0=norm, theta=norm)


def game_constants(game: Game) -> GameConstants:
    if game.constants is not None:
        return game.constants
    if game.affine is not None:
        return quadratic_constants(game.affine[0])
    raise ModelError("constants for a non-quadratic game must be supplied by the user")


# -- affine games -------------------------------------------------------------


def affine_game(
    Q,
    h,
    dims: Sequence[int],
    lower,
    upper,
    A=None,
    b_blocks=None,
    meta: Mapping | None = None,
) -> Game:
    """Game with pseudo-gradient ``F(x) = Qx + h``.

    Player ``i``'s cost is ``0.5 x_i'Q_ii x_i + x_i'(sum_{j!=i} Q_ij x_j + h_i)``,
    so ``Q_ii`` must be symmetric.
    """
    Q = np.asarray(Q, dtype=float)
    h = np.asarray(h, dtype=float).reshape(-1)
    n = sum(dims)
    if Q.shape != (n, n) or h.size != n:
        raise ModelError("Q must be n x n and h of length n")
    if A is None:
        A = np.zeros((0, n))
    A = np.asarray(A, dtype=float).reshape(-1, n)
    if b_blocks is None:
        b_blocks = np.zeros((len(dims), A.shape[0]))
    offsets = np.concatenate([[0], np.cumsum(dims)])
    for i in range(len(dims)):
        s = slice(offsets[i], offsets[i + 1])
        if not np.allclose(Q[s, s], Q[s, s].T):
            raise ModelError(f"diagonal block {i} of Q must be symmetric")

    def grad(i: int, xs: np.ndarray) -> np.ndarray:
        s = slice(offsets[i], offsets[i + 1])
        return Q[s] @ xs + h[s]

    def cost(i: int, xs: np.ndarray) -> float:
        s = slice(offsets[i], offsets[i + 1])
        xi = xs[s]
        others = xs.copy()
        others[s] = 0.0
        return float(0.5 * xi @ Q[s, s] @ xi + xi @ (Q[s] @ others + h[s]))

    doc = {"kind": "affine", "Q": Q.tolist(), "h": h.tolist()}
    doc.update(meta or {})
    return Game(dims, lower, upper, A, b_blocks, grad, cost, affine=(Q, h), meta=doc)


# -- networked Nash-Cournot ---------------------------------------------------


@dataclass(frozen=True)
class CournotParams:
    """Raw parameters of a networked Cournot game.

    ``markets[i]`` lists the market indices firm ``i`` delivers to, in the
    order of its decision components; ``Q_diag[i]`` are the diagonal
    production-cost coefficients (cost ``x'Q_i x + q_i'x``).
    """

    markets: tuple[tuple[int, ...], ...]
    n_markets: int
    Q_diag: tuple[tuple[float, ...], ...]
    q: tuple[tuple[float, ...], ...]
    capacity_upper: tuple[tuple[float, ...], ...]  # X_i
    P_bar: tuple[float, ...]
    chi: tuple[float, ...]
    r: tuple[float, ...]
    b_blocks: tuple[tuple[float, ...], ...] | None = None  # default r / N

    def to_json(self) -> dict:
        return {
            "markets": [list(mk) for mk in self.markets],
            "n_markets": self.n_markets,
            "Q_diag": [list(v) for v in self.Q_diag],
            "q": [list(v) for v in self.q],
            "capacity_upper": [list(v) for v in self.capacity_upper],
            "P_bar": list(self.P_bar),
            "chi": list(self.chi),
            "r": list(self.r),
            "b_blocks": None if self.b_blocks is None else [list(v) for v in self.b_blocks],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "CournotParams":
        tup = lambda rows: tuple(tuple(float(x) for x in row) for row in rows)  # noqa: E731
        return cls(
            markets=tuple(tuple(int(k) for k in mk) for mk in doc["markets"]),
            n_markets=int(doc["n_markets"]),
            Q_diag=tup(doc["Q_diag"]),
            q=tup(doc["q"]),
            capacity_upper=tup(doc["capacity_upper"]),
            P_bar=tuple(float(v) for v in doc["P_bar"]),
            chi=tuple(float(v) for v in doc["chi"]),
            r=tuple(float(v) for v in doc["r"]),
            b_blocks=None if doc.get("b_blocks") is None else tup(doc["b_blocks"]),
        )


def cournot_matrices(params: CournotParams) -> dict[str, np.ndarray]:
    """Assemble ``A``, ``Sigma``, ``Q = Sigma + A'XiA`` and ``h = col(q_i) - A'P_bar``."""
    dims = [len(mk) for mk in params.markets]
    n, m = sum(dims), params.n_markets
    A = np.zeros((m, n))
    col = 0
    for mk in params.markets:
        for k in mk:
            A[k, col] = 1.0
            col += 1
    Xi = np.diag(params.chi)
    P_bar = np.asarray(params.P_bar)
    Q_cost = np.diag(np.concatenate([np.asarray(v, float) for v in params.Q_diag]))
    offsets = np.concatenate([[0], np.cumsum(dims)])
    Sigma = 2.0 * Q_cost
    for i in range(len(dims)):
        s = slice(offsets[i], offsets[i + 1])
        Sigma[s, s] += A[:, s].T @ Xi @ A[:, s]
    Q = Sigma + A.T @ Xi @ A
    h = np.concatenate([np.asarray(v, float) for v in params.q]) - A.T @ P_bar
    return {"A": A, "Xi": Xi, "Sigma": Sigma, "Q": Q, "h": h, "Q_cost": Q_cost, "P_bar": P_bar}


def cournot_game(params: CournotParams, meta: Mapping | None = None) -> Game:
    """Build the Cournot :class:`Game` from raw parameters."""
    N, m = len(params.markets), params.n_markets
    for i, mk in enumerate(params.markets):
        if len(mk) == 0:
            raise ModelError(f"firm {i} participates in no market")
        if len(set(mk)) != len(mk) or min(mk) < 0 or max(mk) >= m:
            raise ModelError(f"firm {i} has an invalid market list {mk}")
    served = {k for mk in params.markets for k in mk}
    missing = sorted(set(range(m)) - served)
    if missing:
        raise ModelError(f"markets {missing} have no participating firm")
    if min(params.chi) <= 0 or min(min(v) for v in params.Q_diag) <= 0:
        raise ModelError("chi_k and the diagonal of Q_i must be positive")

    mats = cournot_matrices(params)
    A, Xi, Q, h = mats["A"], mats["Xi"], mats["Q"], mats["h"]
    Q_cost, P_bar = mats["Q_cost"], mats["P_bar"]
    q = np.concatenate([np.asarray(v, float) for v in params.q])
    dims = tuple(len(mk) for mk in params.markets)
    offsets = np.concatenate([[0], np.cumsum(dims)])
    upper = np.concatenate([np.asarray(v, float) for v in params.capacity_upper])
    if params.b_blocks is None:
        b_blocks = np.tile(np.asarray(params.r) / N, (N, 1))
    else:
        b_blocks = np.asarray(params.b_blocks, dtype=float)

    def grad(i: int, xs: np.ndarray) -> np.ndarray:
        s = slice(offsets[i], offsets[i + 1])
        Ai = A[:, s]
        xi = xs[s]
        price = P_bar - Xi @ (A @ xs)
        return 2.0 * Q_cost[s, s] @ xi + q[s] + Ai.T @ Xi @ (Ai @ xi) - Ai.T @ price

    def cost(i: int, xs: np.ndarray) -> float:
        s = slice(offsets[i], offsets[i + 1])
        xi = xs[s]
        price = P_bar - Xi @ (A @ xs)
        return float(xi @ Q_cost[s, s] @ xi + q[s] @ xi - price @ (A[:, s] @ xi))

    doc = {"kind": "cournot", "params": params.to_json()}
    doc.update(meta or {})
    return Game(
        dims, np.zeros(sum(dims)), upper, A, b_blocks, grad, cost, affine=(Q, h), meta=doc
    )


@dataclass(frozen=True)
class CournotTemplate:
    """Participation pattern plus sampling ranges for random Cournot instances.

    Every range is sampled uniformly on the open interval. ``fixed`` holds
    parameter values that override sampling (used for desk instances).
    """

    name: str
    markets: tuple[tuple[int, ...], ...]
    n_markets: int
    upper_range: tuple[float, float] = (5.0, 10.0)
    r_range: tuple[float, float] = (1.0, 2.0)
    Q_range: tuple[float, float] = (1.0, 8.0)
    q_range: tuple[float, float] = (1.0, 2.0)
    P_range: tuple[float, float] = (10.0, 20.0)
    chi_range: tuple[float, float] = (1.0, 3.0)
    fixed: Mapping | None = None


def _open_uniform(rng: np.random.Generator, lo: float, hi: float, size) -> np.ndarray:
    v = rng.uniform(lo, hi, size)
    # uniform() samples [lo, hi); redraw the measure-zero endpoint
    while np.any(v == lo):
        v = np.where(v == lo, rng.uniform(lo, hi, np.shape(v)), v)
    return v


def sample_cournot_params(template: CournotTemplate, seed: int) -> CournotParams:
    rng = np.random.default_rng(seed)
    dims = [len(mk) for mk in template.markets]
    m = template.n_markets

    def per_firm(rng_range):
        return tuple(tuple(float(v) for v in _open_uniform(rng, *rng_range, d)) for d in dims)

    upper = per_firm(template.upper_range)
    r = tuple(float(v) for v in _open_uniform(rng, *template.r_range, m))
    Q_diag = per_firm(template.Q_range)
    q = per_firm(template.q_range)
    P_bar = tuple(float(v) for v in _open_uniform(rng, *template.P_range, m))
    chi = tuple(float(v) for v in _open_uniform(rng, *template.chi_range, m))
    values = dict(
        markets=template.markets,
        n_markets=m,
        Q_diag=Q_diag,
        q=q,
        capacity_upper=upper,
        P_bar=P_bar,
        chi=chi,
        r=r,
    )
    values.update(template.fixed or {})
    return CournotParams(**values)


def make_cournot(template: CournotTemplate, seed: int) -> tuple[Game, GameConstants]:
    """Draw a reproducible Cournot instance and its spectral constants."""
    params = sample_cournot_params(template, seed)
    game = cournot_game(params, meta={"template": template.name, "seed": int(seed)})
    return game, quadratic_constants(game.affine[0])


# -- JSON --------------------------------------------------------------------


def game_to_json(game: Game) -> dict:
    """Serialise a Cournot or affine game. Games built from arbitrary
    gradient callables cannot be serialised."""
    kind = game.meta.get("kind")
    if kind not in ("cournot", "affine"):
        raise ModelError("only cournot and affine games can be serialised")
    doc = dict(game.meta)
    doc.update(
        {
            "dims": list(game.dims),
            "lower": game.lower.tolist(),
            "upper": game.upper.tolist(),
            "A": game.A.tolist(),
            "b_blocks": game.b_blocks.tolist(),
        }
    )
    return doc


def game_from_json(doc: Mapping) -> Game:
    kind = doc.get("kind")
    extra = {k: doc[k] for k in ("template", "seed") if k in doc}
    if kind == "cournot":
        params = CournotParams.from_json(doc["params"])
        game = cournot_game(params, meta=extra)
        # boxes and offsets are stored explicitly; honour edits to them
        game.lower = np.asarray(doc.get("lower", game.lower), dtype=float)
        game.upper = np.asarray(doc.get("upper", game.upper), dtype=float)
        game.b_blocks = np.asarray(doc.get("b_blocks", game.b_blocks), dtype=float).reshape(
            game.N, game.m
        )
        game.meta["params"] = doc["params"]
        if np.any(game.lower > game.upper):
            raise ModelError("empty box: lower > upper")
        return game
    if kind == "affine":
        n = sum(doc["dims"])
        A = np.asarray(doc["A"], dtype=float).reshape(-1, n)
        return affine_game(
            doc["Q"], doc["h"], doc["dims"], doc["lower"], doc["upper"], A,
            np.asarray(doc["b_blocks"], dtype=float).reshape(len(doc["dims"]), A.shape[0]),
            meta=extra,
        )
    raise ModelError(f"unknown game kind {kind!r}")
