"""Command line interface: ``tfasim run|sweep|oracle-check|channel-stats``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .channel import (
    ArrayGeometry,
    ClusterConfig,
    LargeScaleParams,
    los_probability,
    sample_link_state,
    sample_slot_channels,
    sample_small_scale,
)
from .ga import GaConfig, brute_force_oracle, solve_slot
from .harness import ALL_SCHEMES, Scenario, emit_results, power_sweep, run_experiment, sample_deployment
from .rate import SlotContext

log = logging.getLogger("tfasim")

# Scenario fields exposed as flags, with their parse types
SCENARIO_FLAGS = {
    "num_ues": int,
    "ue_placement": str,
    "streams_per_ue": int,
    "streams_per_bs": int,
    "tx_power_dbm": float,
    "carrier_freq": float,
    "noise_psd_dbm_per_hz": float,
    "bandwidth_hz": float,
    "num_clusters": int,
    "rays_per_cluster": int,
    "num_slots": int,
    "master_seed": int,
    "bs_height": float,
    "ue_height": float,
    "congested_count": int,
    "congested_radius": float,
}
GA_FLAGS = [f.name for f in fields(GaConfig)]


def load_config(path) -> dict:
    """Read a YAML config: Scenario keys, a ``ga:`` mapping, and optionally
    ``schemes`` and ``power_grid_dbm``."""
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def _ga_type(name):
    return {"mutation_rate_per_gene": float, "crossover_rate": float}.get(name, int)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tfasim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML config file (flags override it)")
        for name, typ in SCENARIO_FLAGS.items():
            sp.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
        for name in GA_FLAGS:
            sp.add_argument("--ga-" + name.replace("_", "-"), dest="ga_" + name, type=_ga_type(name), default=None)

    for name in ("run", "sweep"):
        sp = sub.add_parser(name, help=f"{name} an experiment and write results")
        common(sp)
        sp.add_argument("--schemes", default=None, help="comma list from " + ",".join(ALL_SCHEMES))
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        if name == "sweep":
            sp.add_argument("--powers", default=None, help="comma list of BS powers in dBm")

    sp = sub.add_parser("oracle-check", help="compare GA against exhaustive search on independent slots")
    common(sp)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--out", type=Path, default=None, help="optional CSV of per-trial results")

    sp = sub.add_parser("channel-stats", help="Monte Carlo checks of the channel model")
    sp.add_argument("--draws", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    return p


def resolve(args) -> tuple[Scenario, dict]:
    cfg = load_config(getattr(args, "config", None))
    extra = {k: cfg.pop(k) for k in ("schemes", "power_grid_dbm") if k in cfg}
    ga = dict(cfg.pop("ga", {}) or {})
    for name in SCENARIO_FLAGS:
        val = getattr(args, name, None)
        if val is not None:
            cfg[name] = val
    for name in GA_FLAGS:
        val = getattr(args, "ga_" + name, None)
        if val is not None:
            ga[name] = val
    cfg["ga"] = asdict(replace(GaConfig(), **ga))
    return Scenario.from_dict(cfg), extra


def _schemes(args, extra):
    if getattr(args, "schemes", None) is not None:
        return [s for s in args.schemes.split(",") if s]
    return list(extra.get("schemes", ALL_SCHEMES))


def cmd_run(args) -> int:
    scenario, extra = resolve(args)
    result = run_experiment(scenario, _schemes(args, extra))
    emit_results([result], args.out)
    for name, s in result.schemes.items():
        print(f"{name:20s} mean sum rate {s.mean_sum_rate:10.4f} bits/s/Hz  (+/- {s.ci95:.4f})")
    return 0


def cmd_sweep(args) -> int:
    scenario, extra = resolve(args)
    if args.powers is not None:
        grid = [float(x) for x in args.powers.split(",") if x]
    else:
        grid = extra.get("power_grid_dbm", [scenario.tx_power_dbm])
    results = power_sweep(scenario, _schemes(args, extra), grid)
    emit_results(results, args.out)
    for r in results:
        line = "  ".join(f"{n}={s.mean_sum_rate:.3f}" for n, s in r.schemes.items())
        print(f"{r.power_dbm:6.1f} dBm  {line}")
    return 0


def oracle_trials(scenario: Scenario, trials: int):
    """GA and exhaustive optimum on ``trials`` independent deployments (slot 0 each).

    Yields ``(trial, ga_utility, oracle_utility)``.
    """
    for i in range(trials):
        sc = replace(scenario, master_seed=scenario.master_seed + i, num_slots=1)
        dep = sample_deployment(sc)
        ue_geom, bs_geom = sc.geometries()
        H = sample_slot_channels(0, dep.cache, sc.cluster_cfg, ue_geom, bs_geom)
        ctx = SlotContext(H, sc.powers_w, sc.noise.power_w)
        ga = solve_slot(ctx, sc.stream_demands, sc.capacities, replace(sc.ga, seed=sc.ga.seed + i))
        best, _ = brute_force_oracle(ctx, sc.stream_demands, sc.capacities)
        yield i, ga.best_utility, best


def cmd_oracle_check(args) -> int:
    scenario, _ = resolve(args)
    rows = list(oracle_trials(scenario, args.trials))
    gaps = np.array([(o - g) / o if o > 0 else 0.0 for _, g, o in rows])
    exact = int(sum(abs(o - g) <= 1e-9 for _, g, o in rows))
    print(f"exact optimum in {exact}/{len(rows)} trials; worst relative gap {gaps.max():.3e}")
    if args.out is not None:
        lines = ["trial,ga_utility,oracle_utility"] + [f"{i},{g!r},{o!r}" for i, g, o in rows]
        args.out.write_text("\n".join(lines) + "\n")
    return 0


def cmd_channel_stats(args) -> int:
    rng = np.random.default_rng(args.seed)
    params = LargeScaleParams()
    cfg = ClusterConfig()
    ue, bs = ArrayGeometry(2, 2), ArrayGeometry(8, 8)
    power = np.mean(
        [np.linalg.norm(sample_small_scale(cfg, ue, bs, params.wavelength, rng)) ** 2 for _ in range(args.draws)]
    )
    print(f"mean ||H_ss||_F^2 over {args.draws} draws: {power:.2f} (target {ue.num_elements * bs.num_elements})")
    for d in (10.0, 27.0, 71.0, 100.0, 200.0):
        frac = np.mean([sample_link_state(d, params, rng).value == "LoS" for _ in range(args.draws)])
        print(f"d={d:6.1f} m  p_LoS={los_probability(d, params):.6f}  empirical={frac:.4f}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
    "channel-stats": cmd_channel_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # surfaced as a nonzero exit code
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
