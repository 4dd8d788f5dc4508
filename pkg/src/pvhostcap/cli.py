"""Command-line front end.

    pvhostcap validate --feeder synth10
    pvhostcap estimate --feeder synth55 --method fixed-voltage --npen 0.5 --nmc 1000 --eps 0.05 --out run/
    pvhostcap sweep --feeder synth55 --npen 0.1,0.2,0.3 --nmc 1000 --out run/

``--feeder`` takes a file path or the name of a bundled feeder.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import hostcap, results
from .errors import ConfigError, HostingCapacityError
from .netmodel import NetworkModel, load_feeder, resolve_feeder
from .scenarios import draw_scenarios
from .study import FeederStudy, prepare_study, validate_linear_model

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


@dataclass(frozen=True)
class StudyConfig:
    feeder: str
    method: str = hostcap.FIXED_VOLTAGE
    n_pen: tuple[float, ...] = ()
    n_gen: tuple[int, ...] = ()
    n_mc: int = 1000
    eps: tuple[float, ...] = (0.05,)
    v_plus: float | None = None
    seed: int = 0
    tau: float = 0.01
    threads: int = 1
    out: Path | None = None

    def check(self) -> None:
        if bool(self.n_pen) == bool(self.n_gen):
            raise ConfigError("give exactly one of --npen / --ngen")
        if self.n_mc < 1:
            raise ConfigError(f"--nmc must be at least 1, got {self.n_mc}")
        if not self.eps:
            raise ConfigError("--eps list is empty")
        for e in self.eps:
            if not 0 <= e <= 1:
                raise ConfigError(f"epsilon must lie in [0, 1], got {e}")
        for f in self.n_pen:
            if not 0 < f <= 1:
                raise ConfigError(f"--npen must lie in (0, 1], got {f}")
        if self.tau <= 0:
            raise ConfigError(f"--tau must be positive, got {self.tau}")
        if self.threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {self.threads}")

    def n_gen_list(self, n_lds: int) -> list[int]:
        if self.n_gen:
            return list(self.n_gen)
        return [n_gen_from_fraction(f, n_lds) for f in self.n_pen]


def n_gen_from_fraction(n_pen: float, n_lds: int) -> int:
    return max(1, math.ceil(n_pen * n_lds - 1e-9))


# --------------------------------------------------------------------------- arg parsing


def _list_of(kind):
    def parse(text: str):
        items = [t for t in text.replace(" ", "").split(",") if t]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        try:
            return tuple(kind(t) for t in items)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvhostcap", description="Stochastic PV hosting capacity of LV feeders.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--feeder", required=True, help="feeder JSON path or bundled name (twobus, synth10, synth55)")
        p.add_argument("--vmax", type=float, default=None, help="voltage limit v+ in pu (overrides the feeder file)")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    def monte_carlo(p, multi):
        group = p.add_mutually_exclusive_group(required=True)
        if multi:
            group.add_argument("--npen", type=_list_of(float), help="comma-separated penetration fractions")
            group.add_argument("--ngen", type=_list_of(int), help="comma-separated generator counts")
        else:
            group.add_argument("--npen", type=float, help="penetration fraction in (0, 1]")
            group.add_argument("--ngen", type=int, help="number of generators")
        p.add_argument("--nmc", type=int, default=1000, help="scenarios per penetration level")
        p.add_argument("--eps", type=_list_of(float), default=(0.05,), help="comma-separated epsilon values")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("validate", help="compare linear and nonlinear voltages at 100%% penetration")
    common(p)
    p.add_argument("--levels", type=int, default=11, help="injection levels from 0 to capacity")

    p = sub.add_parser("estimate", help="epsilon-limited hosting capacity at one penetration level")
    common(p)
    monte_carlo(p, multi=False)
    p.add_argument("--method", choices=(hostcap.FIXED_VOLTAGE, hostcap.FIXED_POWER), default=hostcap.FIXED_VOLTAGE)
    p.add_argument("--tau", type=float, default=0.01, help="bisection tolerance (fixed-power)")

    p = sub.add_parser("sweep", help="distribution statistics across penetration levels (fixed-voltage)")
    common(p)
    monte_carlo(p, multi=True)
    return parser


def config_from_args(args: argparse.Namespace) -> StudyConfig:
    def as_tuple(x):
        if x is None:
            return ()
        return x if isinstance(x, tuple) else (x,)

    return StudyConfig(
        feeder=args.feeder,
        method=getattr(args, "method", hostcap.FIXED_VOLTAGE),
        n_pen=as_tuple(getattr(args, "npen", None)),
        n_gen=as_tuple(getattr(args, "ngen", None)),
        n_mc=getattr(args, "nmc", 1000),
        eps=getattr(args, "eps", (0.05,)),
        v_plus=args.vmax,
        seed=getattr(args, "seed", 0),
        tau=getattr(args, "tau", 0.01),
        threads=getattr(args, "threads", 1),
        out=args.out,
    )


# --------------------------------------------------------------------------- commands


def _load(cfg: StudyConfig) -> tuple[NetworkModel, FeederStudy, float]:
    net = load_feeder(resolve_feeder(cfg.feeder))
    if cfg.v_plus is not None:
        net = net.with_v_plus(cfg.v_plus)
    if net.v_plus is None:
        raise ConfigError("no voltage limit: set v_plus_pu in the feeder file or pass --vmax")
    return net, prepare_study(net), float(net.v_plus)


def _out_dir(cfg: StudyConfig) -> Path | None:
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def cmd_validate(cfg: StudyConfig, levels: int = 11, stream=None):
    stream = stream or sys.stdout
    net, study, v_plus = _load(cfg)
    report = validate_linear_model(study, v_plus, n_levels=levels)
    print(f"feeder {report.feeder}: {net.n_lds} loads, v+ = {v_plus} pu", file=stream)
    print(f"export per house at 100% penetration: {report.export_per_house_kw:.4f} kW "
          f"({report.p_per_gen_capacity:.6g} pu)", file=stream)
    print(f"{'level':>6} {'p/gen kW':>10} {'v_lin':>10} {'v_nonlin':>10} {'|dv| max':>10}", file=stream)
    for r in report.rows:
        print(f"{r.level:6.2f} {r.p_per_gen * report.base_power_kva:10.4f} {r.v_max_linear:10.6f} "
              f"{r.v_max_nonlinear:10.6f} {r.max_abs_error:10.3e}", file=stream)
    print(f"max |v_linear - v_nonlinear| = {report.max_abs_error:.3e} pu", file=stream)
    out = _out_dir(cfg)
    if out is not None:
        results.write_validate_csv(report, out / "validate.csv")
    return report


def cmd_estimate(cfg: StudyConfig, stream=None) -> list[hostcap.HcEstimate]:
    stream = stream or sys.stdout
    cfg.check()
    net, study, v_plus = _load(cfg)
    (n_gen,) = cfg.n_gen_list(net.n_lds)
    scenarios = draw_scenarios(cfg.seed, net.n_lds, n_gen, cfg.n_mc)
    kva = net.base_power_kva
    samples = None
    if cfg.method == hostcap.FIXED_VOLTAGE:
        samples = hostcap.run_fixed_voltage_on(study.mag, scenarios, v_plus, cfg.threads, net.name, kva)
        estimates = [hostcap.estimate_phi_eps(samples, eps) for eps in cfg.eps]
    else:
        estimates = [
            hostcap.run_fixed_power(study.mag, scenarios, eps, v_plus, tau=cfg.tau, threads=cfg.threads,
                                    base_power_kva=kva)
            for eps in cfg.eps
        ]

    print(f"feeder {net.name}: {cfg.method}, n_gen {n_gen}/{net.n_lds}, N_MC {cfg.n_mc}, seed {cfg.seed}",
          file=stream)
    if samples is not None:
        print(f"  scenario loop wall time {samples.wall_time * 1e3:.3f} ms, "
              f"unbounded scenarios {samples.unbounded_count}", file=stream)
    for est in estimates:
        line = (f"  eps {est.epsilon:g}: Phi = {est.phi_eps_total_kw:.4f} kW ({est.phi_eps_total:.6g} pu), "
                f"phi = {est.phi_eps_per_gen_kw:.4f} kW per generator")
        if est.method == hostcap.FIXED_POWER:
            line += f", {est.iterations} iterations, wall time {est.wall_time * 1e3:.3f} ms"
            if not est.converged:
                line += " (tolerance not met; bracket collapsed)"
        print(line, file=stream)

    out = _out_dir(cfg)
    if out is not None:
        doc = results.samples_document(
            feeder=net.name, method=cfg.method, seed=cfg.seed, n_mc=cfg.n_mc, n_gen=n_gen, n_lds=net.n_lds,
            v_plus=v_plus, base_power_kva=kva, samples=samples, estimates=estimates,
        )
        results.write_json(doc, out / "samples.json")
    return estimates


def cmd_sweep(cfg: StudyConfig, stream=None) -> hostcap.DistributionSummary:
    stream = stream or sys.stdout
    cfg.check()
    net, study, v_plus = _load(cfg)
    n_gens = cfg.n_gen_list(net.n_lds)
    summary = hostcap.sweep_penetration(
        study.mag, n_gens, cfg.n_mc, cfg.seed, v_plus, eps_list=cfg.eps, threads=cfg.threads,
        base_power_kva=net.base_power_kva,
    )
    stats = list(hostcap.BOX_STATS) + [hostcap.eps_stat_name(e) for e in cfg.eps]
    print(f"feeder {net.name}: per-generator power phi (kW), N_MC {cfg.n_mc}, seed {cfg.seed}", file=stream)
    print(f"{'n_gen':>6} {'n_pen':>6} " + " ".join(f"{s:>14}" for s in stats), file=stream)
    for n in summary.n_gens:
        vals = " ".join(f"{summary.value(n, s, per_gen=True):14.4f}" for s in stats)
        print(f"{n:6d} {n / net.n_lds:6.3f} {vals}", file=stream)
    out = _out_dir(cfg)
    if out is not None:
        results.write_summary_csv(summary, out / "summary.csv")
    return summary


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    cfg = config_from_args(args)
    try:
        if args.command == "validate":
            cmd_validate(cfg, levels=args.levels)
        elif args.command == "estimate":
            cmd_estimate(cfg)
        else:
            cmd_sweep(cfg)
    except HostingCapacityError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
