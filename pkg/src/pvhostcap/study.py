"""Per-feeder preparation shared by every study, and linear-model validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import loadflow
from .errors import NonConvergenceError, VoltageCollapseError
from .hostcap import deterministic_capacity
from .loadflow import ComplexSolution, LinearModel, MagnitudeModel
from .netmodel import NetworkModel, PartitionedAdmittance, assemble_admittance


@dataclass(frozen=True, eq=False)
class FeederStudy:
    """A feeder with its admittance, nominal-load base solution and linear models.

    The linearization point is the load flow at nominal loads with no PV; it is
    built once and reused for every scenario.
    """

    net: NetworkModel
    adm: PartitionedAdmittance
    load_nodes: np.ndarray
    base: ComplexSolution
    lin: LinearModel
    mag: MagnitudeModel
    tol: float = loadflow.DEFAULT_TOL

    @property
    def n_lds(self) -> int:
        return self.net.n_lds

    def generation_injections(self, p_gen_per_load: np.ndarray) -> np.ndarray:
        """Real power vector over the load nodes for a per-load generation pattern."""
        p = np.zeros(self.adm.n_load_nodes)
        p[self.load_nodes] = p_gen_per_load
        return p

    def solve_with_generation(self, p_gen_per_load: np.ndarray, max_iter: int = 200) -> ComplexSolution:
        s = self.base.s_injected + self.generation_injections(p_gen_per_load)
        sol = loadflow.solve_nonlinear(self.adm, s, self.net.slack.v_pu, tol=self.tol, max_iter=max_iter)
        return loadflow.polish(self.adm, sol)

    def predict_with_generation(self, p_gen_per_load: np.ndarray) -> np.ndarray:
        p = self.mag.p_bar + self.generation_injections(p_gen_per_load)
        return loadflow.predict_voltages(self.mag, p, self.mag.q_bar)


def prepare_study(net: NetworkModel, tol: float = loadflow.DEFAULT_TOL) -> FeederStudy:
    adm = assemble_admittance(net)
    load_nodes = adm.load_nodes(net)
    s_bar = loadflow.base_injections(net, adm)
    base = loadflow.polish(adm, loadflow.solve_nonlinear(adm, s_bar, net.slack.v_pu, tol=tol))
    lin = loadflow.linearize(adm, base, load_nodes=load_nodes)
    mag = loadflow.magnitude_model(lin)
    return FeederStudy(net=net, adm=adm, load_nodes=load_nodes, base=base, lin=lin, mag=mag, tol=tol)


@dataclass(frozen=True)
class ValidationRow:
    level: float  # fraction of the deterministic capacity
    p_per_gen: float  # pu
    v_max_linear: float
    v_max_nonlinear: float
    max_abs_error: float  # over all load nodes
    v_max_nonload: float  # largest nonlinear voltage at nodes without a load (unconstrained)


@dataclass(frozen=True)
class ValidationReport:
    feeder: str
    v_plus: float
    p_per_gen_capacity: float  # pu, deterministic 100% penetration
    base_power_kva: float
    rows: tuple[ValidationRow, ...]

    @property
    def max_abs_error(self) -> float:
        return max(r.max_abs_error for r in self.rows)

    @property
    def export_per_house_kw(self) -> float:
        return self.p_per_gen_capacity * self.base_power_kva


def validate_linear_model(study: FeederStudy, v_plus: float, n_levels: int = 11) -> ValidationReport:
    """Compare linear and nonlinear load-node voltages at 100% penetration.

    Uniform per-load injection is swept from zero to the deterministic capacity.
    Nonlinear magnitudes are exact ``|v|``; the angle-frozen projection lives
    only in the linear model.
    """
    cap = deterministic_capacity(study.mag, v_plus)
    rows_load = study.mag.load_rows
    nonload = np.setdiff1d(np.arange(3, study.adm.n_nodes), rows_load)
    rows = []
    for level in np.linspace(0.0, 1.0, n_levels):
        p = float(level * cap)
        gen = np.full(study.n_lds, p)
        v_lin = study.predict_with_generation(gen)[rows_load]
        try:
            sol = study.solve_with_generation(gen)
        except (NonConvergenceError, VoltageCollapseError) as exc:
            raise type(exc)(f"load flow failed at level {level:.2f} ({p:.6g} pu per generator): {exc}",
                            level=float(level), **exc.context) from exc
        v_nl_all = np.abs(sol.v)
        v_nl = v_nl_all[rows_load]
        rows.append(
            ValidationRow(
                level=float(level),
                p_per_gen=p,
                v_max_linear=float(v_lin.max()),
                v_max_nonlinear=float(v_nl.max()),
                max_abs_error=float(np.abs(v_lin - v_nl).max()),
                v_max_nonload=float(v_nl_all[nonload].max()) if nonload.size else float("nan"),
            )
        )
    return ValidationReport(
        feeder=study.net.name,
        v_plus=v_plus,
        p_per_gen_capacity=cap,
        base_power_kva=study.net.base_power_kva,
        rows=tuple(rows),
    )
