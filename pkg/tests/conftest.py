import copy
import json
import math
from functools import lru_cache

import numpy as np
import pytest

from pvhostcap.loadflow import ComplexSolution, no_load_voltages
from pvhostcap.netmodel import bundled_feeder, feeder_from_dict, load_feeder
from pvhostcap.study import prepare_study

FEEDERS = ("twobus", "synth10", "synth55")


@lru_cache(maxsize=None)
def study_for(name):
    return prepare_study(load_feeder(bundled_feeder(name)))


@lru_cache(maxsize=None)
def _feeder_doc(name):
    return json.loads(bundled_feeder(name).read_text())


def feeder_doc(name):
    """Fresh, mutable copy of a bundled feeder document."""
    return copy.deepcopy(_feeder_doc(name))


def net_from(doc):
    return feeder_from_dict(doc, name=doc.get("name", ""))


def twobus_exact(z_pu, s_pu, v0):
    """Closed-form voltage of a load bus fed through ``z_pu`` from a stiff source ``v0``.

    ``s_pu`` is injected complex power. Solves ``|v|^2 - conj(v) v0 = z conj(s)``
    on the high-voltage branch of the quadratic in ``|v|^2``.
    """
    c = z_pu * np.conj(s_pu)
    a = c.real
    V2 = abs(v0) ** 2
    W = 0.5 * ((2 * a + V2) + math.sqrt((2 * a + V2) ** 2 - 4 * abs(c) ** 2))
    return np.conj(W - c) * v0 / V2


def zbus_to_stall(adm, s_load, v0, max_sweeps=200):
    """Z-bus iteration carried on until the update stops shrinking (round-off floor)."""
    w = no_load_voltages(adm, v0)
    v = w
    last = math.inf
    for _ in range(max_sweeps):
        nxt = adm.solve_ll(np.conj(s_load / v)) + w
        step = float(np.abs(nxt - v).max())
        v = nxt
        if step == 0 or step >= last:
            break
        last = step
    return v


def no_load_base(adm, v0):
    """ComplexSolution at zero load, i.e. the no-load voltages."""
    return ComplexSolution(
        v0=np.asarray(v0, complex),
        vL=no_load_voltages(adm, np.asarray(v0, complex)),
        s_injected=np.zeros(adm.n_load_nodes, complex),
        residual=0.0,
    )


@pytest.fixture(params=FEEDERS)
def feeder_name(request):
    return request.param


@pytest.fixture
def twobus():
    return study_for("twobus")


@pytest.fixture
def synth10():
    return study_for("synth10")


@pytest.fixture
def synth55():
    return study_for("synth55")
