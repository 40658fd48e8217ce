"""Consensus gain, step sizes and the metric matrix, with a convergence certificate."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .game import Game, GameConstants, game_constants
from .graph import CONNECTIVITY_TOL, CommGraph, DisconnectedGraphError, spectral_summary


def c_threshold(mu: float, theta0: float, theta: float, s2: float) -> float:
    """Smallest consensus gain ``c_min = ((theta + theta0)^2 / (4 mu) + theta) / s2``."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if not s2 > 0:
        raise ValueError(f"s2 must be positive, got {s2}")
    return ((theta + theta0) ** 2 / (4.0 * mu) + theta) / s2


def psi_matrix(c: float, mu: float, theta0: float, theta: float, N: int, s2: float) -> np.ndarray:
    off = -(theta + theta0) / (2.0 * math.sqrt(N))
    return np.array([[mu / N, off], [off, c * s2 - theta]])


def psi_and_cmin(mu, theta0, theta, N, s2, c):
    """Return ``(Psi(c), s_min(Psi(c)), c_min)``.

    ``Psi(c)`` is positive definite exactly when ``c > c_min``.
    """
    c_min = c_threshold(mu, theta0, theta, s2)
    psi = psi_matrix(c, mu, theta0, theta, N, s2)
    return psi, float(np.linalg.eigvalsh(psi)[0]), c_min


def cocoercivity_beta(mu_bar: float, theta: float, c: float, d_star: float) -> tuple[float, float]:
    """Return ``(theta_bar, beta)`` with the largest admissible beta."""
    if not mu_bar > 0:
        raise ValueError(f"mu_bar must be positive (c above threshold), got {mu_bar}")
    if not d_star > 0:
        raise ValueError("d_star must be positive")
    theta_bar = theta + 2.0 * c * d_star
    return theta_bar, min(mu_bar / theta_bar**2, 1.0 / (2.0 * d_star))


@dataclass(frozen=True)
class StepBounds:
    tau: np.ndarray
    nu: np.ndarray
    sigma: np.ndarray


def _block_sums(game: Game) -> tuple[np.ndarray, np.ndarray]:
    # per agent: max abs column sum of A_i (row sums of A_i^T) and max abs row sum of A_i
    col, row = np.zeros(game.N), np.zeros(game.N)
    if game.m:
        for i in range(game.N):
            Ai = np.abs(game.A_block(i))
            col[i] = Ai.sum(axis=0).max()
            row[i] = Ai.sum(axis=1).max()
    return col, row


def step_size_bounds(game: Game, graph: CommGraph, delta: float) -> StepBounds:
    """Per-agent upper bounds on ``tau_i, nu_i, sigma_i`` making ``Phi - delta I`` PSD."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    col, row = _block_sums(game)
    d = graph.degrees
    return StepBounds(
        tau=1.0 / (col + delta), nu=1.0 / (2.0 * d + delta), sigma=1.0 / (row + 2.0 * d + delta)
    )


def implied_delta(game: Game, graph: CommGraph, tau, nu, sigma) -> float:
    """Largest ``delta`` for which the given steps satisfy :func:`step_size_bounds`.

    Non-positive when no ``delta > 0`` works.
    """
    col, row = _block_sums(game)
    d = graph.degrees
    cand = np.concatenate([1.0 / tau - col, 1.0 / nu - 2.0 * d, 1.0 / sigma - row - 2.0 * d])
    return float(cand.min())


def uniform_step_bound(game: Game, graph: CommGraph, delta: float) -> float:
    """Common-step bound ``(||[A_blk  L kron I_m]|| + delta)^-1`` (convenience check)."""
    N, m = game.N, game.m
    if m == 0:
        return 1.0 / delta
    A_blk = np.zeros((N * m, game.n))
    for i in range(N):
        A_blk[i * m : (i + 1) * m, game.slot(i)] = game.A_block(i)
    M = np.hstack([A_blk, np.kron(graph.laplacian, np.eye(m))])
    return 1.0 / (float(np.linalg.norm(M, 2)) + delta)


@dataclass
class TuningBundle:
    """Algorithm parameters plus the derived constants used by the certificate.

    ``beta`` and ``xi`` are NaN when ``c <= c_min`` (no restricted
    cocoercivity guarantee). ``delta`` is the margin the steps were chosen
    for, or the implied one when steps were given directly.
    """

    c: float
    tau: np.ndarray
    nu: np.ndarray
    sigma: np.ndarray
    delta: float
    constants: GameConstants | None
    s2: float
    d_star: float
    psi: np.ndarray
    mu_bar: float
    c_min: float
    theta_bar: float
    beta: float
    xi: float
    source: dict = field(default_factory=dict)  # which fields were derived ("auto") vs given

    def to_json(self) -> dict:
        return {
            "c": self.c,
            "tau": self.tau.tolist(),
            "nu": self.nu.tolist(),
            "sigma": self.sigma.tolist(),
            "delta": self.delta,
            "mu": self.constants.mu if self.constants else None,
            "theta0": self.constants.theta0 if self.constants else None,
            "theta": self.constants.theta if self.constants else None,
            "s2": _finite_or_none(self.s2),
            "d_star": _finite_or_none(self.d_star),
            "psi": self.psi.tolist(),
            "mu_bar": _finite_or_none(self.mu_bar),
            "c_min": _finite_or_none(self.c_min),
            "theta_bar": _finite_or_none(self.theta_bar),
            "beta": _finite_or_none(self.beta),
            "xi": _finite_or_none(self.xi),
            "source": self.source,
        }


def _finite_or_none(v: float):
    return float(v) if np.isfinite(v) else None


def _per_agent(v, N: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(v, dtype=float), (N,)).copy()
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be positive and finite")
    return arr


def make_tuning(
    game: Game,
    graph: CommGraph,
    c: float | str = "auto",
    tau=None,
    nu=None,
    sigma=None,
    delta: float | str | None = None,
    constants: GameConstants | None = None,
    step_scale: float = 0.99,
) -> TuningBundle:
    """Resolve a tuning bundle; ``"auto"`` / ``None`` fields are derived.

    Auto rules: ``c = 1.05 c_min``, largest admissible ``beta``,
    ``delta = 1.01 / (2 beta)`` and every step at ``step_scale`` times its
    bound. With steps given and ``delta`` unset, ``delta`` is inferred from
    the steps.
    """
    constants = constants or game_constants(game)
    summary = spectral_summary(graph)
    N = game.N
    c_min = c_threshold(constants.mu, constants.theta0, constants.theta, summary.s2)
    source = {}
    if c is None or c == "auto":
        c = 1.05 * c_min
        source["c"] = "auto"
    c = float(c)
    if c < 0:
        raise ValueError("c must be non-negative")
    psi, mu_bar, _ = psi_and_cmin(
        constants.mu, constants.theta0, constants.theta, N, summary.s2, c
    )
    theta_bar = constants.theta + 2.0 * c * summary.d_star
    beta = cocoercivity_beta(mu_bar, constants.theta, c, summary.d_star)[1] if mu_bar > 0 else math.nan

    steps_auto = [s is None or (isinstance(s, str) and s == "auto") for s in (tau, nu, sigma)]
    if delta is None or delta == "auto":
        if any(steps_auto):
            if not np.isfinite(beta):
                raise ValueError("automatic steps need c > c_min (no admissible beta)")
            delta = 1.01 / (2.0 * beta)
            source["delta"] = "auto"
        else:
            delta = None
    if any(steps_auto):
        bounds = step_size_bounds(game, graph, float(delta))
        if steps_auto[0]:
            tau = step_scale * bounds.tau
            source["tau"] = "auto"
        if steps_auto[1]:
            nu = step_scale * bounds.nu
            source["nu"] = "auto"
        if steps_auto[2]:
            sigma = step_scale * bounds.sigma
            source["sigma"] = "auto"
    tau, nu, sigma = (_per_agent(v, N, k) for v, k in ((tau, "tau"), (nu, "nu"), (sigma, "sigma")))
    if delta is None:
        delta = implied_delta(game, graph, tau, nu, sigma)
        source["delta"] = "implied"
    delta = float(delta)
    xi = 1.0 / (2.0 * delta * beta) if np.isfinite(beta) and delta > 0 else math.nan
    return TuningBundle(
        c=c, tau=tau, nu=nu, sigma=sigma, delta=delta, constants=constants,
        s2=summary.s2, d_star=summary.d_star, psi=psi, mu_bar=mu_bar, c_min=c_min,
        theta_bar=theta_bar, beta=beta, xi=xi, source=source,
    )


def fixed_bundle(N: int, c: float, tau, nu, sigma) -> TuningBundle:
    """Bundle with given gain and steps and no derived constants.

    For driving the iteration on graphs the certificate cannot handle
    (a single agent, zero-weight test graphs); every derived field is NaN.
    """
    nan = math.nan
    return TuningBundle(
        c=float(c), tau=_per_agent(tau, N, "tau"), nu=_per_agent(nu, N, "nu"),
        sigma=_per_agent(sigma, N, "sigma"), delta=nan, constants=None, s2=nan, d_star=nan,
        psi=np.full((2, 2), nan), mu_bar=nan, c_min=nan, theta_bar=nan, beta=nan, xi=nan,
        source={"c": "given", "tau": "given", "nu": "given", "sigma": "given"},
    )


def auto_tuning(game: Game, graph: CommGraph, constants: GameConstants | None = None) -> TuningBundle:
    return make_tuning(game, graph, "auto", constants=constants)


def practical_tuning(game: Game, graph: CommGraph, constants: GameConstants | None = None,
                     step_scale: float = 0.99) -> TuningBundle:
    """Uncertified but fast rule: ``c = theta / s2``, ``delta = theta + 2 c d*``.

    ``delta`` then equals the Lipschitz bound ``theta_bar`` of the forward
    operator, so steps sit near ``1 / theta_bar``. Convergence is not
    guaranteed by the certificate (``c`` is usually below ``c_min``).
    """
    constants = constants or game_constants(game)
    summary = spectral_summary(graph)
    c = constants.theta / summary.s2
    bundle = make_tuning(game, graph, c, "auto", "auto", "auto",
                         delta=constants.theta + 2.0 * c * summary.d_star,
                         constants=constants, step_scale=step_scale)
    bundle.source.update({"c": "practical", "delta": "practical"})
    return bundle


def assemble_phi(
    tau, nu, sigma, game: Game, graph: CommGraph
) -> np.ndarray:
    """Dense metric matrix on ``col(bold_x, z, lam)``.

    ``[[diag(1/tau_i), 0, -R'A'], [0, diag(1/nu_i), L_lam], [-AR, L_lam, diag(1/sigma_i)]]``
    where ``A`` is the block-diagonal of the ``A_i`` and ``L_lam = L kron I_m``.
    """
    N, n, m = game.N, game.n, game.m
    tau, nu, sigma = (np.broadcast_to(np.asarray(v, float), (N,)) for v in (tau, nu, sigma))
    size = N * n + 2 * N * m
    phi = np.zeros((size, size))
    xs, zs = N * n, N * n + N * m
    phi[:xs, :xs] = np.diag(np.repeat(1.0 / tau, n))
    phi[xs:zs, xs:zs] = np.diag(np.repeat(1.0 / nu, m))
    phi[zs:, zs:] = np.diag(np.repeat(1.0 / sigma, m))
    if m:
        L_lam = np.kron(graph.laplacian, np.eye(m))
        phi[xs:zs, zs:] = L_lam
        phi[zs:, xs:zs] = L_lam
        for i in range(N):
            s = game.slot(i)
            rows = slice(i * n + s.start, i * n + s.stop)
            cols = slice(zs + i * m, zs + (i + 1) * m)
            phi[rows, cols] = -game.A_block(i).T
            phi[cols, rows] = -game.A_block(i)
    return phi


def bundle_phi(bundle: TuningBundle, game: Game, graph: CommGraph) -> np.ndarray:
    return assemble_phi(bundle.tau, bundle.nu, bundle.sigma, game, graph)


# -- certificate ----------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    value: float | None
    threshold: float | None
    passed: bool
    detail: str = ""


@dataclass
class Certificate:
    checks: list[Check]
    notes: list[str]

    @property
    def passed(self) -> bool:
        return all(ch.passed for ch in self.checks)

    def failed(self) -> list[str]:
        return [ch.name for ch in self.checks if not ch.passed]

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {k: (_num(v) if isinstance(v, float) else v) for k, v in asdict(ch).items()}
                for ch in self.checks
            ],
            "notes": list(self.notes),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _num(v) -> float | None:
    return float(v) if v is not None and np.isfinite(v) else None


def certify(bundle: TuningBundle, game: Game, graph: CommGraph, phi_eig: bool = True) -> Certificate:
    """Check every convergence hypothesis; never raises on a failed check.

    A failed certificate does not prevent running: convergence is often
    observed well outside the certified region.
    """
    checks = []
    notes = []
    try:
        s2 = spectral_summary(graph).s2
        connected = True
    except DisconnectedGraphError:
        s2 = float(np.linalg.eigvalsh(graph.laplacian)[1]) if graph.n_agents > 1 else 0.0
        connected = False
    checks.append(Check("graph_connected", s2, CONNECTIVITY_TOL, connected, "s2(L) > tol"))
    checks.append(Check("c_above_cmin", bundle.c, bundle.c_min, bundle.c > bundle.c_min))
    checks.append(Check("mu_bar_positive", bundle.mu_bar, 0.0, bundle.mu_bar > 0))
    inv2beta = 1.0 / (2.0 * bundle.beta) if np.isfinite(bundle.beta) else None
    checks.append(
        Check(
            "delta_above_half_inv_beta",
            bundle.delta,
            inv2beta,
            inv2beta is not None and bundle.delta > inv2beta,
        )
    )
    xi_ok = np.isfinite(bundle.xi) and 0.0 < bundle.xi < 1.0
    checks.append(Check("xi_in_unit_interval", _num(bundle.xi), 1.0, bool(xi_ok)))
    if bundle.delta > 0:
        b = step_size_bounds(game, graph, bundle.delta)
        for name, val, bound in (
            ("tau", bundle.tau, b.tau),
            ("nu", bundle.nu, b.nu),
            ("sigma", bundle.sigma, b.sigma),
        ):
            ratio = float(np.max(val / bound))
            checks.append(
                Check(f"{name}_within_bound", ratio, 1.0, ratio <= 1.0 + 1e-12, "max step/bound")
            )
    else:
        for name in ("tau", "nu", "sigma"):
            checks.append(
                Check(f"{name}_within_bound", None, None, False, "no positive delta fits the steps")
            )
    if phi_eig:
        s_min = float(np.linalg.eigvalsh(bundle_phi(bundle, game, graph))[0])
        checks.append(Check("phi_positive_definite", s_min, 0.0, s_min > 0.0))

    if bundle.c == 0.0:
        notes.append(
            "c = 0: the consensus terms vanish; with estimates reset to the true "
            "decisions every round the scheme is the dual-distributed full-information iteration"
        )
    if game.m == 0 or (not np.any(game.A) and not np.any(game.b_blocks)):
        notes.append(
            "A = 0 and b = 0: multipliers stay at zero from a zero start and the scheme "
            "is plain Nash-equilibrium seeking with estimate consensus"
        )
    return Certificate(checks, notes)
