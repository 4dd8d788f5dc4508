"""Uniform random PV placement scenarios.

Each scenario is drawn from its own generator seeded with
``(study seed, n_gen, scenario index)``, so any scenario can be regenerated in
isolation and the set does not depend on evaluation order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Scenario:
    omega: tuple[int, ...]  # sorted load indices hosting a generator
    seed_id: int

    @property
    def n_gen(self) -> int:
        return len(self.omega)


@dataclass(frozen=True, eq=False)
class IndicatorVector:
    lam: np.ndarray  # 0/1 over the non-slack nodes

    @property
    def n_gen(self) -> int:
        return int(self.lam.sum())


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """A batch of scenarios plus the dense load-membership matrix used for vectorised evaluation."""

    scenarios: tuple[Scenario, ...]
    n_lds: int
    seed: int | None = None

    @property
    def n_gen(self) -> int:
        return self.scenarios[0].n_gen

    def __len__(self) -> int:
        return len(self.scenarios)

    @cached_property
    def _membership(self) -> np.ndarray:
        out = np.zeros((len(self.scenarios), self.n_lds))
        for row, sc in enumerate(self.scenarios):
            out[row, list(sc.omega)] = 1.0
        out.flags.writeable = False
        return out

    def membership(self) -> np.ndarray:
        """(N_MC, N_lds) 0/1 matrix; row i marks the loads of scenario i."""
        return self._membership


def _check_counts(n_lds: int, n_gen: int) -> None:
    if not 1 <= n_gen <= n_lds:
        raise ConfigError(f"n_gen must lie in [1, {n_lds}], got {n_gen}")


def sample_scenario(seed: int, index: int, n_lds: int, n_gen: int) -> Scenario:
    """Draw scenario ``index`` of the stream identified by ``seed``."""
    _check_counts(n_lds, n_gen)
    rng = np.random.default_rng([seed, n_gen, index])
    omega = rng.choice(n_lds, size=n_gen, replace=False)
    return Scenario(omega=tuple(sorted(int(k) for k in omega)), seed_id=index)


def draw_scenarios(seed: int, n_lds: int, n_gen: int, n_mc: int, start: int = 0) -> ScenarioSet:
    if n_mc < 1:
        raise ConfigError(f"n_mc must be at least 1, got {n_mc}")
    _check_counts(n_lds, n_gen)
    scenarios = tuple(sample_scenario(seed, i, n_lds, n_gen) for i in range(start, start + n_mc))
    return ScenarioSet(scenarios=scenarios, n_lds=n_lds, seed=seed)


def indicator(scenario: Scenario, load_nodes: np.ndarray, n_nodes: int) -> IndicatorVector:
    """Λ over the non-slack nodes: 1 at each selected load's (bus, phase) node.

    PV runs at unity power factor, so only the real-power rows are ever set.
    """
    load_nodes = np.asarray(load_nodes)
    lam = np.zeros(n_nodes)
    for k in scenario.omega:
        if not 0 <= k < load_nodes.size:
            raise ConfigError(f"load index {k} has no node in the ordering map")
        lam[load_nodes[k]] = 1.0
    return IndicatorVector(lam=lam)


def penetration(n_gen: int, n_lds: int) -> Fraction:
    if n_lds <= 0:
        raise ConfigError("n_lds must be positive")
    return Fraction(n_gen, n_lds)
