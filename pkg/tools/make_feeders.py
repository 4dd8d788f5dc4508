"""Regenerate the bundled feeder files in src/pvhostcap/feeders/.

Line impedances come from modified Carson equations for a four-core cable
(three phases plus neutral, square core layout), Kron-reduced to 3x3.

    python tools/make_feeders.py
"""

import json
import math
import random
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "pvhostcap" / "feeders"
FT_PER_M = 3.28084
KM_PER_MILE = 1.609344
V_LN_KV = 0.23


def carson_kron(r_ohm_km, gmr_m, spacing_m):
    """3x3 phase impedance in ohm/km for a square four-core cable."""
    pos = [(0, 0), (spacing_m, 0), (spacing_m, spacing_m), (0, spacing_m)]  # a, b, c, n
    r_mile = r_ohm_km * KM_PER_MILE
    gmr_ft = gmr_m * FT_PER_M
    z = np.zeros((4, 4), complex)
    for i in range(4):
        for j in range(4):
            if i == j:
                z[i, j] = r_mile + 0.09530 + 0.12134j * (math.log(1 / gmr_ft) + 7.93402)
            else:
                d_ft = math.dist(pos[i], pos[j]) * FT_PER_M
                z[i, j] = 0.09530 + 0.12134j * (math.log(1 / d_ft) + 7.93402)
    zp = z[:3, :3] - np.outer(z[:3, 3], z[3, :3]) / z[3, 3]
    zp = 0.5 * (zp + zp.T)
    return zp / KM_PER_MILE


MAINS = carson_kron(0.164, 0.0060, 0.020)  # 185 mm2 Al
SERVICE = carson_kron(0.524, 0.0026, 0.010)  # 35 mm2 Cu


def cmat(m):
    return [[[round(float(z.real), 12), round(float(z.imag), 12)] for z in row] for row in m]


def slack_v(mag):
    return [[mag * math.cos(a), mag * math.sin(a)] for a in (0.0, -2 * math.pi / 3, 2 * math.pi / 3)]


def line(a, b, z_per_km, length_m, shunt_s_per_km=None):
    out = {"from": str(a), "to": str(b), "z_ohm": cmat(z_per_km * length_m / 1000)}
    if shunt_s_per_km is not None:
        out["y_shunt_s"] = cmat(shunt_s_per_km * length_m / 1000)
    return out


def feeder(name, v_slack, v_plus, buses, branches, loads):
    return {
        "name": name,
        "base_power_kva": 1.0,
        "v_plus_pu": v_plus,
        "slack": {"bus": "0", "v_pu": slack_v(v_slack)},
        "buses": [{"id": str(b), "base_kv": V_LN_KV} for b in buses],
        "branches": branches,
        "loads": loads,
    }


def twobus():
    z_base = (V_LN_KV * 1e3) ** 2 / 1e3
    z = np.eye(3) * (0.01 + 0.01j) * z_base
    return feeder(
        "twobus", 1.0, 1.05, [0, 1],
        [{"from": "0", "to": "1", "z_ohm": cmat(z)}],
        [{"id": 0, "bus": "1", "phase": "a", "p_kw": 0.0, "pf": 1.0, "lagging": True}],
    )


def synth10():
    spans = [(0, 1, 120), (1, 2, 80), (2, 3, 80), (3, 4, 80), (4, 5, 80), (2, 6, 60), (6, 7, 60), (4, 8, 60), (8, 9, 60)]
    phases = {1: "a", 2: "b", 3: "a", 4: "c", 5: "a", 6: "b", 7: "a", 8: "b", 9: "c"}
    loads = [{"id": k, "bus": str(bus), "phase": phases[bus], "p_kw": 0.3, "pf": 0.95, "lagging": True}
             for k, bus in enumerate(range(1, 10))]
    return feeder("synth10", 1.05, 1.10, range(10), [line(a, b, MAINS, m) for a, b, m in spans], loads)


def synth55():
    rng = random.Random(20190101)
    shunt = 1j * 2 * math.pi * 50 * 0.6e-6 * np.eye(3)  # S/km
    # two mains legs and a sub-lateral; trunk buses are 1..14
    trunk = [(0, 1, 50)] + [(k, k + 1, 35) for k in range(1, 7)]  # leg A: 1..7
    trunk += [(0, 8, 45)] + [(k, k + 1, 40) for k in range(8, 12)]  # leg B: 8..12
    trunk += [(10, 13, 30), (13, 14, 30)]  # lateral off B3
    branches = [line(a, b, MAINS, m, shunt) for a, b, m in trunk]
    houses_per_node = [4] * 14
    for k in rng.sample(range(14), 1):
        houses_per_node[k] -= 1
    phases = ["a"] * 21 + ["b"] * 18 + ["c"] * 16
    rng.shuffle(phases)
    loads, bus = [], 15
    for node, count in zip(range(1, 15), houses_per_node):
        for _ in range(count):
            branches.append(line(node, bus, SERVICE, rng.randint(10, 30)))
            loads.append({"id": len(loads), "bus": str(bus), "phase": phases[len(loads)],
                          "p_kw": 0.3, "pf": 0.95, "lagging": True})
            bus += 1
    assert len(loads) == 55
    return feeder("synth55", 1.05, 1.10, range(bus), branches, loads)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (twobus, synth10, synth55):
        data = build()
        (OUT / f"{data['name']}.json").write_text(json.dumps(data, indent=1) + "\n")
        print(data["name"], len(data["buses"]), "buses", len(data["loads"]), "loads")


if __name__ == "__main__":
    main()
