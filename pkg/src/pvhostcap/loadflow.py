"""Nonlinear three-phase load flow and the linear voltage models built on it.

Sign convention: ``s`` is complex power *injected* into the network, so loads
are negative and PV generation is positive real power. Vectors named ``*_L``
or indexed by "load node" cover the non-slack nodes (rows 3.. of the full
nodal vector).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError, VoltageCollapseError
from .netmodel import NetworkModel, PartitionedAdmittance

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
DEFAULT_V_FLOOR = 0.5


@dataclass(frozen=True, eq=False)
class ComplexSolution:
    v0: np.ndarray
    vL: np.ndarray
    s_injected: np.ndarray
    residual: float
    iterations: int = 0

    @property
    def v(self) -> np.ndarray:
        return np.concatenate([self.v0, self.vL])


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``v = M [p; q] + a`` over the full nodal vector; ``p`` and ``q`` cover the load nodes."""

    M: np.ndarray
    a: np.ndarray
    built_at: ComplexSolution
    load_nodes: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class MagnitudeModel:
    """Voltage magnitudes ``v = F [p; q] + g`` with angles frozen at the base solution."""

    F: np.ndarray
    g: np.ndarray
    theta_bar: np.ndarray
    v_bar_mag: np.ndarray
    p_bar: np.ndarray
    q_bar: np.ndarray
    load_rows: np.ndarray | None = None

    @property
    def n_load_nodes(self) -> int:
        return self.p_bar.size

    @property
    def load_cols(self) -> np.ndarray:
        """Column of the ``p`` block that injects at each load's node."""
        return self.load_rows - 3

    def load_sensitivity(self) -> np.ndarray:
        """Square block of F: voltage rise at load k per unit real power injected at load j."""
        return self.F[np.ix_(self.load_rows, self.load_cols)]


def base_injections(net: NetworkModel, adm: PartitionedAdmittance) -> np.ndarray:
    """Per-unit complex injections of the nominal loads, laid out over the load nodes."""
    s = np.zeros(adm.n_load_nodes, dtype=complex)
    s[adm.load_nodes(net)] = net.load_injections_pu()
    return s


def no_load_voltages(adm: PartitionedAdmittance, v0: np.ndarray) -> np.ndarray:
    return -adm.solve_ll(adm.YL0 @ v0)


def power_mismatch(adm: PartitionedAdmittance, v0: np.ndarray, vL: np.ndarray, s_load: np.ndarray) -> np.ndarray:
    i_L = adm.YL0 @ v0 + adm.YLL @ vL
    return vL * np.conj(i_L) - s_load


def solve_nonlinear(
    adm: PartitionedAdmittance,
    s_load: np.ndarray,
    v0: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    v_floor: float = DEFAULT_V_FLOOR,
) -> ComplexSolution:
    """Z-bus fixed-point load flow.

    Iterates ``vL <- YLL^-1 (conj(s / vL) - YL0 v0)`` from the no-load voltages
    until the largest power mismatch at the load nodes is at most ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    s_load = np.asarray(s_load, dtype=complex)
    v0 = np.asarray(v0, dtype=complex)
    if s_load.shape != (adm.n_load_nodes,):
        raise ValueError(f"s_load must have length {adm.n_load_nodes}, got {s_load.shape}")

    w = no_load_voltages(adm, v0)
    vL = w
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(vL)):
            raise NonConvergenceError("load flow diverged", iteration=it)
        low = np.abs(vL).min()
        if low < v_floor:
            raise VoltageCollapseError(
                f"voltage {low:.4f} pu below collapse floor {v_floor} pu", iteration=it
            )
        residual = float(np.abs(power_mismatch(adm, v0, vL, s_load)).max())
        if residual <= tol:
            return ComplexSolution(v0=v0, vL=vL, s_injected=s_load, residual=residual, iterations=it)
        vL = adm.solve_ll(np.conj(s_load / vL)) + w
    raise NonConvergenceError(
        f"load flow did not converge in {max_iter} iterations (mismatch {residual:.3e} pu)",
        residual=residual,
    )


def polish(adm: PartitionedAdmittance, sol: ComplexSolution, max_sweeps: int = 20) -> ComplexSolution:
    """Continue the fixed-point map past the tolerance until its update stops shrinking.

    A linear model built at ``sol`` reproduces the next iterate, not ``sol``
    itself, so its error at the base equals the last step; polishing pushes
    that down to round-off.
    """
    w = no_load_voltages(adm, sol.v0)
    vL, last, sweeps = sol.vL, np.inf, 0
    for sweeps in range(1, max_sweeps + 1):
        nxt = adm.solve_ll(np.conj(sol.s_injected / vL)) + w
        step = float(np.abs(nxt - vL).max())
        if step >= last:
            break
        vL, last = nxt, step
        if step == 0:
            break
    residual = float(np.abs(power_mismatch(adm, sol.v0, vL, sol.s_injected)).max())
    return ComplexSolution(
        v0=sol.v0, vL=vL, s_injected=sol.s_injected, residual=residual, iterations=sol.iterations + sweeps
    )


def linearize(
    adm: PartitionedAdmittance, base: ComplexSolution, load_nodes: np.ndarray | None = None
) -> LinearModel:
    vbar = base.vL
    if np.any(np.abs(vbar) == 0):
        raise VoltageCollapseError("cannot linearize around a zero base voltage")
    n = vbar.size
    Z = adm.solve_ll(np.eye(n, dtype=complex))
    Mp = Z / np.conj(vbar)[None, :]
    M = np.zeros((n + 3, 2 * n), dtype=complex)
    M[3:, :n] = Mp
    M[3:, n:] = -1j * Mp
    a = np.concatenate([base.v0, no_load_voltages(adm, base.v0)])
    return LinearModel(M=M, a=a, built_at=base, load_nodes=load_nodes)


def magnitude_model(lin: LinearModel) -> MagnitudeModel:
    v = lin.built_at.v
    theta = np.angle(v)
    c, s = np.cos(theta), np.sin(theta)
    F = c[:, None] * lin.M.real + s[:, None] * lin.M.imag
    g = c * lin.a.real + s * lin.a.imag
    s_bar = lin.built_at.s_injected
    load_rows = None if lin.load_nodes is None else np.asarray(lin.load_nodes) + 3
    return MagnitudeModel(
        F=F,
        g=g,
        theta_bar=theta,
        v_bar_mag=np.abs(v),
        p_bar=s_bar.real.copy(),
        q_bar=s_bar.imag.copy(),
        load_rows=load_rows,
    )


def predict_voltages(mag: MagnitudeModel, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = mag.n_load_nodes
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError(f"p and q must both have length {n}, got {p.shape} and {q.shape}")
    return mag.F[:, :n] @ p + mag.F[:, n:] @ q + mag.g
