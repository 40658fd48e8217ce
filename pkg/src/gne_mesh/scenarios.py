"""Built-in scenario templates: a game template plus a communication graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .game import CournotTemplate, Game, GameConstants, make_cournot
from .graph import CommGraph, fig2_graph, path_graph, ring_graph

# Firm -> markets (1-based) for the 20-firm / 7-market benchmark network.
FIG1_MARKETS_1BASED = (
    (1,), (1, 2), (2,), (3,), (1,), (1, 2, 3, 4), (4,), (3, 4), (3,), (1, 4, 6),
    (4, 5), (5,), (5,), (6,), (5, 6, 7), (5, 7), (6, 7), (7,), (7,), (7,),
)

FIG1_TEMPLATE = CournotTemplate(
    name="fig1-cournot-20x7",
    markets=tuple(tuple(k - 1 for k in mk) for mk in FIG1_MARKETS_1BASED),
    n_markets=7,
)


def desk_template(r: float = 1.0, upper: float = 10.0) -> CournotTemplate:
    """Two single-market firms with unit costs: ``Q = [[4, 1], [1, 4]]``, ``h = (-4, -4)``."""
    return CournotTemplate(
        name="desk-cournot-2x1",
        markets=((0,), (0,)),
        n_markets=1,
        fixed={
            "Q_diag": ((1.0,), (1.0,)),
            "q": ((0.0,), (0.0,)),
            "capacity_upper": ((upper,), (upper,)),
            "P_bar": (4.0,),
            "chi": (1.0,),
            "r": (r,),
        },
    )


DESK_4X2_TEMPLATE = CournotTemplate(
    name="desk-cournot-4x2",
    markets=((0,), (0, 1), (1,), (0, 1)),
    n_markets=2,
)


@dataclass(frozen=True)
class Scenario:
    name: str
    template: CournotTemplate
    graph: Callable[[], CommGraph]


SCENARIOS = {
    "fig1-cournot-20x7": Scenario("fig1-cournot-20x7", FIG1_TEMPLATE, fig2_graph),
    "desk-cournot-2x1": Scenario("desk-cournot-2x1", desk_template(), lambda: path_graph(2)),
    "desk-cournot-4x2": Scenario("desk-cournot-4x2", DESK_4X2_TEMPLATE, lambda: ring_graph(4)),
}


def build_scenario(name: str, seed: int) -> tuple[Game, CommGraph, GameConstants]:
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown template {name!r}; known: {', '.join(sorted(SCENARIOS))}") from None
    game, consts = make_cournot(sc.template, seed)
    return game, sc.graph(), consts


def random_small_cournot(seed: int, max_firms: int = 4, max_markets: int = 2) -> CournotTemplate:
    """Random participation pattern with one-dimensional firms.

    Every firm serves exactly one market and every market has a firm.
    """
    rng = np.random.default_rng(seed)
    N = int(rng.integers(2, max_firms + 1))
    m = int(rng.integers(1, min(max_markets, N) + 1))
    mk = list(range(m)) + [int(k) for k in rng.integers(0, m, N - m)]
    rng.shuffle(mk)
    return CournotTemplate(name=f"random-{seed}", markets=tuple((k,) for k in mk), n_markets=m)
