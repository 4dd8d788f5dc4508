"""Fixed-voltage and fixed-power hosting-capacity estimators.

Both estimators share the linear magnitude model ``v = F Λ P_gen + v_bar``,
where ``Λ`` marks the loads hosting PV and ``P_gen`` is the common
per-generator real power. Only voltages at load nodes are constrained.

Per-scenario maximum powers use ``math.inf`` for scenarios in which no load
voltage rises with generation (no constraint can bind).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllUnboundedError, BracketError, ConfigError, NoHeadroomError
from .loadflow import MagnitudeModel
from .scenarios import IndicatorVector, ScenarioSet, draw_scenarios, penetration

logger = logging.getLogger(__name__)

FIXED_VOLTAGE = "fixed-voltage"
FIXED_POWER = "fixed-power"

# sensitivities at or below this fraction of the largest one are round-off, not coupling
_SENS_CUT = 1e-12
_CHUNK = 256
BOX_STATS = ("min", "q1", "median", "q3", "max")


@dataclass(frozen=True, eq=False)
class HcSampleSet:
    p_gen_max: np.ndarray  # per-scenario max per-generator power, pu; inf where unbounded
    n_gen: int
    n_lds: int
    seed: int | None = None
    v_plus: float | None = None
    feeder: str = ""
    base_power_kva: float = 1.0
    wall_time: float = 0.0

    def __len__(self) -> int:
        return self.p_gen_max.size

    @property
    def unbounded_count(self) -> int:
        return int(np.isinf(self.p_gen_max).sum())

    @property
    def finite(self) -> np.ndarray:
        return self.p_gen_max[np.isfinite(self.p_gen_max)]


@dataclass(frozen=True)
class HcEstimate:
    phi_eps_total: float  # pu
    phi_eps_per_gen: float  # pu
    epsilon: float
    method: str
    n_gen: int
    base_power_kva: float = 1.0
    iterations: int = 0
    wall_time: float = 0.0
    converged: bool = True
    p1_doublings: int = 0
    trace: tuple[tuple[float, float], ...] = field(default=(), repr=False)

    @property
    def phi_eps_total_kw(self) -> float:
        return self.phi_eps_total * self.base_power_kva

    @property
    def phi_eps_per_gen_kw(self) -> float:
        return self.phi_eps_per_gen * self.base_power_kva


@dataclass(frozen=True)
class SummaryRow:
    n_gen: int
    n_pen: float
    stat_name: str
    phi_total_kw: float
    phi_per_gen_kw: float


@dataclass(frozen=True)
class DistributionSummary:
    """Boxplot statistics and ε-limited capacities per penetration level, in kW."""

    rows: tuple[SummaryRow, ...]

    @property
    def n_gens(self) -> list[int]:
        return sorted({r.n_gen for r in self.rows})

    def value(self, n_gen: int, stat_name: str, per_gen: bool = False) -> float:
        for r in self.rows:
            if r.n_gen == n_gen and r.stat_name == stat_name:
                return r.phi_per_gen_kw if per_gen else r.phi_total_kw
        raise KeyError((n_gen, stat_name))

    def series(self, stat_name: str, per_gen: bool = False) -> list[float]:
        return [self.value(n, stat_name, per_gen) for n in self.n_gens]


def eps_stat_name(epsilon: float) -> str:
    return f"phi_eps@{epsilon!r}"


# --------------------------------------------------------------------------- kernels


def _spans(n: int) -> list[tuple[int, int]]:
    # fixed chunking, so serial and threaded runs see identical blocks and agree bit for bit
    return [(k, min(k + _CHUNK, n)) for k in range(0, n, _CHUNK)]


def _map_spans(fn, n: int, threads: int) -> list:
    spans = _spans(n)
    if threads <= 1 or len(spans) == 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))


def _headroom(mag: MagnitudeModel, v_plus: float) -> np.ndarray:
    h = v_plus - mag.v_bar_mag[mag.load_rows]
    if np.any(h <= 0):
        k = int(np.argmin(h))
        raise NoHeadroomError(
            f"v_plus {v_plus} does not exceed the base voltage {mag.v_bar_mag[mag.load_rows][k]:.6f} pu at load {k}",
            load=k,
        )
    return h


def _backoff(h: np.ndarray, n_terms: int, v_plus: float) -> float:
    # relative margin that absorbs summation-order round-off in F Λ and in v_bar + s P
    return 64 * np.finfo(float).eps * (n_terms + v_plus / float(h.min()))


def _from_ratio(r: np.ndarray, backoff: float) -> np.ndarray:
    """Per-generator power from each scenario's largest sensitivity/headroom ratio."""
    cut = _SENS_CUT * max(float(r.max(initial=0.0)), np.finfo(float).tiny)
    finite = r > cut
    p = np.full(r.shape, np.inf)
    p[finite] = (1.0 - backoff) / r[finite]
    return p


def max_gen_fixed_voltage(mag: MagnitudeModel, lam: IndicatorVector, v_plus: float) -> float:
    """Largest per-generator power keeping every load voltage at or below ``v_plus``.

    For sensitivities ``s = F Λ`` and headroom ``h = v_plus - v_bar`` (all
    positive) the answer is ``min over s[k] > 0 of h[k] / s[k]``, computed as
    ``1 / max_k s[k] / h[k]`` less a round-off margin of order 1e-12 relative.
    Returns ``math.inf`` when no load voltage rises with this placement.
    """
    rows = mag.load_rows
    h = _headroom(mag, v_plus)
    lam = np.asarray(lam.lam, dtype=float)
    if lam.shape != (mag.n_load_nodes,):
        raise ConfigError(f"indicator must have length {mag.n_load_nodes}")
    s = mag.F[rows, : mag.n_load_nodes] @ lam
    r = np.array([(s / h).max()])
    return float(_from_ratio(r, _backoff(h, rows.size, v_plus))[0])


def fixed_voltage_samples(
    mag: MagnitudeModel, scenarios: ScenarioSet, v_plus: float, threads: int = 1
) -> np.ndarray:
    h = _headroom(mag, v_plus)
    G_scaled = mag.load_sensitivity() / h[:, None]
    backoff = _backoff(h, h.size, v_plus)
    member = scenarios.membership()

    def work(a, b):
        return _from_ratio((member[a:b] @ G_scaled.T).max(axis=1), backoff)

    return np.concatenate(_map_spans(work, len(scenarios), threads))


def run_fixed_voltage_on(
    mag: MagnitudeModel,
    scenarios: ScenarioSet,
    v_plus: float,
    threads: int = 1,
    feeder: str = "",
    base_power_kva: float = 1.0,
) -> HcSampleSet:
    """Fixed-voltage samples for an already drawn scenario set."""
    scenarios.membership()  # build outside the timed region
    t0 = time.perf_counter()
    p = fixed_voltage_samples(mag, scenarios, v_plus, threads)
    wall = time.perf_counter() - t0
    return HcSampleSet(
        p_gen_max=p,
        n_gen=scenarios.n_gen,
        n_lds=scenarios.n_lds,
        seed=scenarios.seed,
        v_plus=v_plus,
        feeder=feeder,
        base_power_kva=base_power_kva,
        wall_time=wall,
    )


def run_fixed_voltage(
    mag: MagnitudeModel,
    n_gen: int,
    n_mc: int,
    seed: int,
    v_plus: float,
    threads: int = 1,
    feeder: str = "",
    base_power_kva: float = 1.0,
) -> HcSampleSet:
    scenarios = draw_scenarios(seed, mag.load_rows.size, n_gen, n_mc)
    return run_fixed_voltage_on(mag, scenarios, v_plus, threads, feeder, base_power_kva)


def deterministic_capacity(mag: MagnitudeModel, v_plus: float) -> float:
    """Per-generator capacity with a generator at every load (100% penetration)."""
    h = _headroom(mag, v_plus)
    s = mag.load_sensitivity().sum(axis=1)
    return float(_from_ratio(np.array([(s / h).max()]), _backoff(h, h.size, v_plus))[0])


def predicted_load_voltages(mag: MagnitudeModel, scenarios: ScenarioSet, p_gen: np.ndarray) -> np.ndarray:
    """(N_MC, N_lds) linear-model load voltages with per-scenario generator power ``p_gen``."""
    p_gen = np.where(np.isfinite(p_gen), p_gen, 0.0)
    S = scenarios.membership() @ mag.load_sensitivity().T
    return S * p_gen[:, None] + mag.v_bar_mag[mag.load_rows]


def _order_index(epsilon: float, n: int) -> int:
    # the 1e-9 guards against eps * n landing a hair above an integer
    return max(1, math.ceil(epsilon * n - 1e-9))


def estimate_phi_eps(samples: HcSampleSet, epsilon: float) -> HcEstimate:
    """ε-limited capacity from the k-th smallest sample, ``k = max(1, ceil(ε N))``."""
    if not 0 <= epsilon <= 1:
        raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")
    n = len(samples)
    if n == 0:
        raise ConfigError("empty sample set")
    if samples.unbounded_count == n:
        raise AllUnboundedError("every scenario is unbounded; no voltage constraint ever binds")
    p = float(np.sort(samples.p_gen_max)[_order_index(epsilon, n) - 1])
    return HcEstimate(
        phi_eps_total=samples.n_gen * p,
        phi_eps_per_gen=p,
        epsilon=epsilon,
        method=FIXED_VOLTAGE,
        n_gen=samples.n_gen,
        base_power_kva=samples.base_power_kva,
        wall_time=samples.wall_time,
    )


# --------------------------------------------------------------------------- fixed power


def eps_hat(
    mag: MagnitudeModel, scenarios: ScenarioSet, p_total: float, v_plus: float, threads: int = 1
) -> float:
    """Fraction of scenarios with any load voltage above ``v_plus`` when
    ``p_total`` is split evenly between the scenario's generators."""
    p_gen = p_total / scenarios.n_gen
    G = mag.load_sensitivity()
    v_bar = mag.v_bar_mag[mag.load_rows]
    member = scenarios.membership()

    def work(a, b):
        v = (member[a:b] @ G.T) * p_gen + v_bar
        return int((v.max(axis=1) > v_plus).sum())

    return sum(_map_spans(work, len(scenarios), threads)) / len(scenarios)


def error_metric(eps_j: float, eps_jm1: float, epsilon: float) -> float:
    """Mixed relative/absolute change between two violation-probability estimates."""
    return abs((eps_j - epsilon) - (eps_jm1 - epsilon)) / (1 + abs(eps_jm1 - epsilon))


def bisect_fixed_power(
    mag: MagnitudeModel,
    scenarios: ScenarioSet,
    epsilon: float,
    tau: float,
    p0: float,
    p1: float,
    v_plus: float,
    max_iter: int = 60,
    threads: int = 1,
    max_doublings: int = 10,
    base_power_kva: float = 1.0,
) -> HcEstimate:
    """Bisect on total power until the violation estimate settles at ``epsilon``.

    The pair compared by the stopping test is the newest iterate and the
    retained bracket end on the other side of ``epsilon``. Every iterate reuses
    the same scenario set. ``iterations`` counts violation-probability
    evaluations, including the two at the initial guesses.
    """
    if tau <= 0:
        raise ConfigError("tau must be positive")
    if not 0 <= epsilon <= 1:
        raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")
    if not 0 <= p0 < p1:
        raise BracketError(f"need 0 <= p0 < p1, got p0={p0}, p1={p1}")

    t0 = time.perf_counter()
    trace: list[tuple[float, float]] = []

    def evaluate(p):
        e = eps_hat(mag, scenarios, p, v_plus, threads)
        trace.append((p, e))
        return e

    def result(p, converged=True, doublings=0):
        return HcEstimate(
            phi_eps_total=scenarios.n_gen * (p / scenarios.n_gen),
            phi_eps_per_gen=p / scenarios.n_gen,
            epsilon=epsilon,
            method=FIXED_POWER,
            n_gen=scenarios.n_gen,
            base_power_kva=base_power_kva,
            iterations=len(trace),
            wall_time=time.perf_counter() - t0,
            converged=converged,
            p1_doublings=doublings,
            trace=tuple(trace),
        )

    e_lo = evaluate(p0)
    if e_lo == epsilon:
        return result(p0)
    if e_lo > epsilon:
        raise BracketError(f"violation estimate {e_lo} at p0={p0} already exceeds epsilon={epsilon}")
    e_hi = evaluate(p1)
    doublings = 0
    while e_hi < epsilon:
        if doublings == max_doublings:
            raise BracketError(
                f"violation estimate {e_hi} still below epsilon after doubling p1 {max_doublings} times"
            )
        p1 *= 2
        doublings += 1
        e_hi = evaluate(p1)
    if e_hi == epsilon:
        return result(p1, doublings=doublings)

    lo, hi = p0, p1
    e_new, e_kept = e_hi, e_lo
    while error_metric(e_new, e_kept, epsilon) >= tau:
        mid = 0.5 * (lo + hi)
        if len(trace) >= max_iter or not lo < mid < hi:
            logger.warning(
                "fixed-power bisection stopped after %d evaluations without meeting tau=%g "
                "(bracket [%g, %g], eps_hat %g..%g)",
                len(trace), tau, lo, hi, e_lo, e_hi,
            )
            return result(0.5 * (lo + hi), converged=False, doublings=doublings)
        e_mid = evaluate(mid)
        if e_mid == epsilon:
            return result(mid, doublings=doublings)
        if e_mid > epsilon:
            hi, e_hi = mid, e_mid
            e_new, e_kept = e_mid, e_lo
        else:
            lo, e_lo = mid, e_mid
            e_new, e_kept = e_mid, e_hi
    return result(0.5 * (lo + hi), doublings=doublings)


def run_fixed_power(
    mag: MagnitudeModel,
    scenarios: ScenarioSet,
    epsilon: float,
    v_plus: float,
    tau: float = 0.01,
    max_iter: int = 60,
    threads: int = 1,
    base_power_kva: float = 1.0,
) -> HcEstimate:
    """Bisection bracketed by zero and the deterministic 100%-penetration capacity."""
    scenarios.membership()
    t0 = time.perf_counter()
    p1 = scenarios.n_lds * deterministic_capacity(mag, v_plus)
    est = bisect_fixed_power(
        mag, scenarios, epsilon, tau, 0.0, p1, v_plus,
        max_iter=max_iter, threads=threads, base_power_kva=base_power_kva,
    )
    return _with_wall_time(est, time.perf_counter() - t0)


def _with_wall_time(est: HcEstimate, wall: float) -> HcEstimate:
    return replace(est, wall_time=wall)


# --------------------------------------------------------------------------- sweeps


def _linear_quantile(sorted_vals: np.ndarray, q: float) -> float:
    h = (sorted_vals.size - 1) * q
    lo = math.floor(h)
    frac = h - lo
    if frac == 0:
        return float(sorted_vals[lo])
    a, b = sorted_vals[lo], sorted_vals[lo + 1]
    if math.isinf(b):
        return math.inf
    return float(a + frac * (b - a))


def box_stats(values: np.ndarray) -> dict[str, float]:
    """min, quartiles and max with linear interpolation; unbounded entries propagate as inf."""
    v = np.sort(np.asarray(values, dtype=float))
    return {name: _linear_quantile(v, q) for name, q in zip(BOX_STATS, (0, 0.25, 0.5, 0.75, 1))}


def sweep_penetration(
    mag: MagnitudeModel,
    n_gen_list,
    n_mc: int,
    seed: int,
    v_plus: float,
    eps_list=(0.05,),
    threads: int = 1,
    base_power_kva: float = 1.0,
) -> DistributionSummary:
    n_lds = mag.load_rows.size
    n_gen_list = list(n_gen_list)
    if not n_gen_list:
        raise ConfigError("n_gen list is empty")
    rows: list[SummaryRow] = []
    for n_gen in n_gen_list:
        if not 1 <= n_gen <= n_lds:
            raise ConfigError(f"n_gen must lie in [1, {n_lds}], got {n_gen}")
        samples = run_fixed_voltage(mag, n_gen, n_mc, seed, v_plus, threads, base_power_kva=base_power_kva)
        n_pen = float(penetration(n_gen, n_lds))
        for name, per_gen in box_stats(samples.p_gen_max).items():
            per_gen_kw = per_gen * base_power_kva
            rows.append(SummaryRow(n_gen, n_pen, name, n_gen * per_gen_kw, per_gen_kw))
        for eps in eps_list:
            est = estimate_phi_eps(samples, eps)
            rows.append(
                SummaryRow(n_gen, n_pen, eps_stat_name(eps), n_gen * est.phi_eps_per_gen_kw, est.phi_eps_per_gen_kw)
            )
    return DistributionSummary(rows=tuple(rows))
