"""Feeder data model, feeder-file ingestion and admittance assembly.

All feeders are three-phase, four-wire (Kron-reduced to 3x3 phase frames) with
wye-connected single-phase loads. Internally everything is per-unit on one
feeder-wide base: the slack bus phase-to-neutral voltage and a single-phase
base power ``base_power_kva``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import FeederParseError, FeederValidationError, SingularAdmittanceError

PHASES = ("a", "b", "c")
PHASE_INDEX = {name: k for k, name in enumerate(PHASES)}

DEFAULT_P_KW = 0.3
DEFAULT_PF = 0.95
BUNDLED_FEEDERS = ("twobus", "synth10", "synth55")

# relative tolerances for structural checks
_SYM_RTOL = 1e-12
_SINGULAR_RCOND = 1e-13


@dataclass(frozen=True)
class Bus:
    id: str
    base_kv: float  # phase-to-neutral nominal voltage


@dataclass(frozen=True, eq=False)
class Branch:
    from_bus: str
    to_bus: str
    z_ohm: np.ndarray  # 3x3 complex series impedance
    y_shunt_s: np.ndarray | None = None  # 3x3 complex total shunt admittance


@dataclass(frozen=True)
class Load:
    id: int
    bus: str
    phase: str
    p_kw: float = DEFAULT_P_KW
    pf: float = DEFAULT_PF
    lagging: bool = True

    @property
    def q_kvar(self) -> float:
        q = self.p_kw * math.tan(math.acos(self.pf))
        return q if self.lagging else -q


@dataclass(frozen=True, eq=False)
class SlackSpec:
    bus: str
    v_pu: np.ndarray  # per-phase complex voltage


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Validated, immutable feeder description."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...]
    slack: SlackSpec
    v_plus: float | None
    base_power_kva: float = 1.0
    name: str = ""

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_lds(self) -> int:
        return len(self.loads)

    @property
    def base_kv(self) -> float:
        return self.bus(self.slack.bus).base_kv

    @property
    def z_base_ohm(self) -> float:
        v = self.base_kv * 1e3
        return v * v / (self.base_power_kva * 1e3)

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def with_v_plus(self, v_plus: float) -> NetworkModel:
        net = replace(self, v_plus=float(v_plus))
        net.validate()
        return net

    def load_injections_pu(self) -> np.ndarray:
        """Complex power *injected* by each load (negative of its demand), per-unit, in load order."""
        s = np.array([complex(ld.p_kw, ld.q_kvar) for ld in self.loads])
        return -s / self.base_power_kva

    def validate(self) -> None:
        """Check every model invariant; raise FeederValidationError naming the first violation."""
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise FeederValidationError("duplicate bus ids", invariant="unique_bus_ids")
        known = set(ids)
        if self.base_power_kva <= 0:
            raise FeederValidationError("base_power_kva must be positive", invariant="base_power")
        if self.slack.bus not in known:
            raise FeederValidationError(
                f"slack bus {self.slack.bus!r} does not exist", invariant="slack_bus_exists"
            )
        if np.shape(self.slack.v_pu) != (3,):
            raise FeederValidationError("slack v_pu needs three phases", invariant="slack_phases")
        base = self.base_kv
        for b in self.buses:
            if not b.base_kv > 0:
                raise FeederValidationError(f"bus {b.id!r}: base_kv must be positive", invariant="base_kv")
            # single voltage level: no transformers
            if not math.isclose(b.base_kv, base, rel_tol=1e-9):
                raise FeederValidationError(
                    f"bus {b.id!r}: base_kv {b.base_kv} differs from slack base {base}",
                    invariant="single_voltage_level",
                )

        for n, br in enumerate(self.branches):
            where = f"branches[{n}]"
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise FeederValidationError(
                        f"{where}: bus {end!r} does not exist", invariant="branch_buses_exist"
                    )
            if br.from_bus == br.to_bus:
                raise FeederValidationError(f"{where}: self-loop", invariant="no_self_loops")
            for label, mat in (("z_ohm", br.z_ohm), ("y_shunt_s", br.y_shunt_s)):
                if mat is None:
                    continue
                if np.shape(mat) != (3, 3):
                    raise FeederValidationError(f"{where}.{label}: must be 3x3", invariant="shape_3x3")
                scale = max(np.abs(mat).max(), 1e-300)
                if np.abs(mat - mat.T).max() > _SYM_RTOL * scale:
                    raise FeederValidationError(
                        f"{where}.{label}: matrix is not symmetric", invariant="reciprocal_network"
                    )

        load_ids = sorted(ld.id for ld in self.loads)
        if load_ids != list(range(len(self.loads))):
            raise FeederValidationError(
                "load ids must be exactly 0..N_lds-1", invariant="load_id_ordering"
            )
        if [ld.id for ld in self.loads] != load_ids:
            raise FeederValidationError("loads must be stored in id order", invariant="load_id_ordering")
        seen: set[tuple[str, str]] = set()
        for ld in self.loads:
            where = f"loads[{ld.id}]"
            if ld.bus not in known:
                raise FeederValidationError(
                    f"{where}: bus {ld.bus!r} does not exist", invariant="load_bus_exists"
                )
            if ld.phase not in PHASE_INDEX:
                raise FeederValidationError(
                    f"{where}: phase {ld.phase!r} is not one of a, b, c", invariant="load_phase_exists"
                )
            if ld.bus == self.slack.bus:
                raise FeederValidationError(f"{where}: load on the slack bus", invariant="load_not_on_slack")
            if (ld.bus, ld.phase) in seen:
                raise FeederValidationError(
                    f"{where}: second load on bus {ld.bus!r} phase {ld.phase}",
                    invariant="one_load_per_node",
                )
            seen.add((ld.bus, ld.phase))
            if not 0 < ld.pf <= 1:
                raise FeederValidationError(f"{where}: pf must lie in (0, 1]", invariant="power_factor")
            if not math.isfinite(ld.p_kw) or ld.p_kw < 0:
                raise FeederValidationError(f"{where}: p_kw must be >= 0", invariant="load_power")

        self._check_connected()

        if self.v_plus is not None:
            vmax_slack = float(np.abs(self.slack.v_pu).max())
            if not self.v_plus > vmax_slack:
                raise FeederValidationError(
                    f"v_plus {self.v_plus} must exceed the slack voltage magnitude {vmax_slack}",
                    invariant="v_plus_above_slack",
                )

    def _check_connected(self) -> None:
        pos = {b.id: k for k, b in enumerate(self.buses)}
        rows = [pos[br.from_bus] for br in self.branches]
        cols = [pos[br.to_bus] for br in self.branches]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_bus, self.n_bus))
        _, labels = connected_components(graph, directed=False)
        root = labels[pos[self.slack.bus]]
        cut = [b.id for b in self.buses if labels[pos[b.id]] != root]
        if cut:
            raise FeederValidationError(
                f"buses not reachable from the slack bus: {cut[:5]}", invariant="connected"
            )


# --------------------------------------------------------------------------- parsing


def bundled_feeder(name: str) -> Path:
    """Path of a feeder shipped with the package (``twobus``, ``synth10``, ``synth55``)."""
    if name not in BUNDLED_FEEDERS:
        raise FeederParseError(f"unknown bundled feeder {name!r}; choose from {BUNDLED_FEEDERS}")
    return Path(str(resources.files("pvhostcap.feeders").joinpath(f"{name}.json")))


def resolve_feeder(ref: str | Path) -> Path:
    """Accept either a file path or the name of a bundled feeder."""
    path = Path(ref)
    if path.exists() or str(ref) not in BUNDLED_FEEDERS:
        return path
    return bundled_feeder(str(ref))


def load_feeder(path: str | Path) -> NetworkModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FeederParseError(f"cannot read feeder file {path}: {exc.strerror}", path=str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederParseError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}", path=str(path), line=exc.lineno
        ) from exc
    return feeder_from_dict(data, name=path.stem)


def feeder_from_dict(data: dict[str, Any], name: str = "") -> NetworkModel:
    """Build and validate a NetworkModel from the parsed feeder schema."""
    if not isinstance(data, dict):
        raise FeederParseError("feeder document must be an object")

    buses = tuple(
        Bus(id=str(_get(b, "id", f"buses[{k}]")), base_kv=_num(b, "base_kv", f"buses[{k}]"))
        for k, b in enumerate(_list(data, "buses"))
    )
    branches = []
    for k, br in enumerate(_list(data, "branches")):
        where = f"branches[{k}]"
        shunt = br.get("y_shunt_s")
        branches.append(
            Branch(
                from_bus=str(_get(br, "from", where)),
                to_bus=str(_get(br, "to", where)),
                z_ohm=_cmatrix(_get(br, "z_ohm", where), f"{where}.z_ohm"),
                y_shunt_s=None if shunt is None else _cmatrix(shunt, f"{where}.y_shunt_s"),
            )
        )
    loads = []
    for k, ld in enumerate(_list(data, "loads")):
        where = f"loads[{k}]"
        lid = _get(ld, "id", where)
        if not isinstance(lid, int) or isinstance(lid, bool):
            raise FeederParseError(f"{where}.id: expected integer, got {lid!r}", field=f"{where}.id")
        lagging = ld.get("lagging", True)
        if not isinstance(lagging, bool):
            raise FeederParseError(f"{where}.lagging: expected boolean", field=f"{where}.lagging")
        loads.append(
            Load(
                id=lid,
                bus=str(_get(ld, "bus", where)),
                phase=str(_get(ld, "phase", where)).lower(),
                p_kw=_num(ld, "p_kw", where, DEFAULT_P_KW),
                pf=_num(ld, "pf", where, DEFAULT_PF),
                lagging=lagging,
            )
        )
    loads.sort(key=lambda ld: ld.id)

    slack = _get(data, "slack", "")
    v_pu = _get(slack, "v_pu", "slack")
    if not isinstance(v_pu, list) or len(v_pu) != 3:
        raise FeederParseError("slack.v_pu: expected three [re, im] pairs", field="slack.v_pu")
    slack_spec = SlackSpec(
        bus=str(_get(slack, "bus", "slack")),
        v_pu=np.array([_complex(v, f"slack.v_pu[{k}]") for k, v in enumerate(v_pu)]),
    )
    v_plus = data.get("v_plus_pu")
    net = NetworkModel(
        buses=buses,
        branches=tuple(branches),
        loads=tuple(loads),
        slack=slack_spec,
        v_plus=None if v_plus is None else _num(data, "v_plus_pu", ""),
        base_power_kva=_num(data, "base_power_kva", "", 1.0),
        name=str(data.get("name", name)),
    )
    net.validate()
    return net


def feeder_to_dict(net: NetworkModel) -> dict[str, Any]:
    """Inverse of :func:`feeder_from_dict`."""

    def cm(mat):
        return [[[float(z.real), float(z.imag)] for z in row] for row in mat]

    out: dict[str, Any] = {"name": net.name, "base_power_kva": net.base_power_kva}
    if net.v_plus is not None:
        out["v_plus_pu"] = net.v_plus
    out["slack"] = {"bus": net.slack.bus, "v_pu": [[float(v.real), float(v.imag)] for v in net.slack.v_pu]}
    out["buses"] = [{"id": b.id, "base_kv": b.base_kv} for b in net.buses]
    branches = []
    for br in net.branches:
        d = {"from": br.from_bus, "to": br.to_bus, "z_ohm": cm(br.z_ohm)}
        if br.y_shunt_s is not None:
            d["y_shunt_s"] = cm(br.y_shunt_s)
        branches.append(d)
    out["branches"] = branches
    out["loads"] = [
        {"id": ld.id, "bus": ld.bus, "phase": ld.phase, "p_kw": ld.p_kw, "pf": ld.pf, "lagging": ld.lagging}
        for ld in net.loads
    ]
    return out


def _get(obj, key, where):
    if not isinstance(obj, dict):
        raise FeederParseError(f"{where or 'document'}: expected an object", field=where)
    if key not in obj:
        name = f"{where}.{key}" if where else key
        raise FeederParseError(f"missing field {name}", field=name)
    return obj[key]


def _list(obj, key):
    val = _get(obj, key, "")
    if not isinstance(val, list):
        raise FeederParseError(f"{key}: expected a list", field=key)
    return val


def _num(obj, key, where, default=None):
    name = f"{where}.{key}" if where else key
    if key not in obj and default is not None:
        return float(default)
    val = _get(obj, key, where)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise FeederParseError(f"{name}: expected a number, got {val!r}", field=name)
    return float(val)


def _complex(val, where) -> complex:
    if (
        not isinstance(val, list)
        or len(val) != 2
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)
    ):
        raise FeederParseError(f"{where}: complex numbers are [re, im] pairs, got {val!r}", field=where)
    return complex(val[0], val[1])


def _cmatrix(val, where) -> np.ndarray:
    if not isinstance(val, list) or len(val) != 3 or not all(isinstance(r, list) and len(r) == 3 for r in val):
        raise FeederParseError(f"{where}: expected a 3x3 matrix of [re, im] pairs", field=where)
    return np.array([[_complex(z, f"{where}[{i}][{j}]") for j, z in enumerate(row)] for i, row in enumerate(val)])


# --------------------------------------------------------------------------- admittance


@dataclass(frozen=True, eq=False)
class PartitionedAdmittance:
    """Nodal admittance matrix (per-unit) split into slack and non-slack blocks.

    Rows are ordered bus-major, phase-minor, with the slack bus first; the
    non-slack ("L") blocks therefore start at row 3.
    """

    Y00: np.ndarray
    Y0L: np.ndarray
    YL0: np.ndarray
    YLL: np.ndarray
    node_index: dict[tuple[str, str], int]
    bus_order: tuple[str, ...]
    _lu: tuple = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return 3 * len(self.bus_order)

    @property
    def n_load_nodes(self) -> int:
        return self.n_nodes - 3

    @property
    def Y(self) -> np.ndarray:
        return np.block([[self.Y00, self.Y0L], [self.YL0, self.YLL]])

    def solve_ll(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``YLL x = rhs`` with the cached LU factorization."""
        return scipy.linalg.lu_solve(self._lu, rhs)

    def load_nodes(self, net: NetworkModel) -> np.ndarray:
        """Index into the non-slack node vector for every load, in load order."""
        return np.array([self.node_index[(ld.bus, ld.phase)] - 3 for ld in net.loads], dtype=int)


def assemble_admittance(net: NetworkModel) -> PartitionedAdmittance:
    order = [net.slack.bus] + [b.id for b in net.buses if b.id != net.slack.bus]
    pos = {bus: k for k, bus in enumerate(order)}
    n = 3 * len(order)
    z_base = net.z_base_ohm
    Y = np.zeros((n, n), dtype=complex)

    for k, br in enumerate(net.branches):
        z_pu = br.z_ohm / z_base
        if np.linalg.cond(z_pu) > 1 / _SINGULAR_RCOND:
            raise SingularAdmittanceError(
                f"branches[{k}] ({br.from_bus}->{br.to_bus}): singular series impedance", branch=k
            )
        y_series = np.linalg.inv(z_pu)
        y_half = np.zeros((3, 3), complex) if br.y_shunt_s is None else br.y_shunt_s * z_base / 2
        i = slice(3 * pos[br.from_bus], 3 * pos[br.from_bus] + 3)
        j = slice(3 * pos[br.to_bus], 3 * pos[br.to_bus] + 3)
        Y[i, i] += y_series + y_half
        Y[j, j] += y_series + y_half
        Y[i, j] -= y_series
        Y[j, i] -= y_series

    YLL = Y[3:, 3:].copy()
    with warnings.catch_warnings():
        # singularity is reported below with a clearer message
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu = scipy.linalg.lu_factor(YLL, check_finite=True)
    pivots = np.abs(np.diag(lu[0]))
    if pivots.size and pivots.min() <= _SINGULAR_RCOND * pivots.max():
        raise SingularAdmittanceError("YLL is singular: part of the network is floating")

    node_index = {(bus, ph): 3 * pos[bus] + k for bus in order for k, ph in enumerate(PHASES)}
    return PartitionedAdmittance(
        Y00=Y[:3, :3].copy(),
        Y0L=Y[:3, 3:].copy(),
        YL0=Y[3:, :3].copy(),
        YLL=YLL,
        node_index=node_index,
        bus_order=tuple(order),
        _lu=lu,
    )
