"""
Experiment orchestration: scenario definition, deployment sampling,
multi-slot simulation of every association scheme, power sweeps, and result
persistence.

All schemes at one (seed, power) point see the same channel realizations.
Channels depend only on the deployment seed, UE/BS indices and slot index,
so different transmit powers also reuse the same channels.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .association import (
    UNSERVED,
    ActivationMatrix,
    ActivationVector,
    associate_load_balanced_fi,
    associate_max_sinr_drop,
    associate_max_sinr_share_drop,
    association_matrix,
    feasible,
)
from .channel import (
    ArrayGeometry,
    ClusterConfig,
    LargeScaleParams,
    channel_checksum,
    derived_rng,
    sample_large_scale,
    sample_slot_channels,
)
from .ga import GaConfig, solve_slot
from .rate import NoiseModel, SlotContext

log = logging.getLogger(__name__)

TFA = "TFA"
MAXSINR_DROP = "MAXSINR_DROP"
MAXSINR_SHARE_DROP = "MAXSINR_SHARE_DROP"
LB_FI = "LB_FI"
ALL_SCHEMES = (TFA, MAXSINR_DROP, MAXSINR_SHARE_DROP, LB_FI)

SCHEME_NOTES = {
    TFA: "per-slot GA maximisation of association-dependent sum rate",
    MAXSINR_DROP: "large-scale max-SINR attachment, overload dropped",
    MAXSINR_SHARE_DROP: "large-scale max-SINR attachment, streams shared at overloaded BS, excess dropped",
    LB_FI: "proxy: capacity-constrained max of summed full-interference rates (long-term average)",
}

_TAG_PLACEMENT = 3
_TAG_GA = 4

DEFAULT_BS_POSITIONS = [[150.0, 150.0], [75.0, 75.0], [225.0, 75.0], [150.0, 240.0]]


@dataclass
class Scenario:
    area: tuple = (300.0, 300.0)
    bs_positions: list = field(default_factory=lambda: [list(p) for p in DEFAULT_BS_POSITIONS])
    bs_height: float = 10.0
    ue_height: float = 1.5
    num_ues: int = 8
    ue_placement: str = "uniform_random"  # uniform_random | congested | explicit
    ue_positions: list | None = None
    congested_count: int = 5
    congested_radius: float = 25.0
    bs_array: tuple = (8, 8)
    ue_array: tuple = (2, 2)
    streams_per_ue: int = 2
    streams_per_bs: int = 4
    tx_power_dbm: float = 30.0
    carrier_freq: float = 73e9
    noise_psd_dbm_per_hz: float = -174.0
    bandwidth_hz: float = 1e9
    num_clusters: int = 5
    rays_per_cluster: int = 10
    azimuth_spread_deg: float = 5.0
    elevation_spread_deg: float = 2.5
    num_slots: int = 1000
    master_seed: int = 0
    ga: GaConfig = field(default_factory=GaConfig)

    def __post_init__(self):
        # YAML 1.1 reads "73e9" as a string; coerce scalars by their default's type
        for f in fields(self):
            default = f.default
            val = getattr(self, f.name)
            if isinstance(default, (int, float)) and not isinstance(default, bool) and val is not None:
                setattr(self, f.name, type(default)(float(val)) if isinstance(default, int) else float(val))
        self.area = tuple(float(x) for x in self.area)
        self.bs_array = tuple(int(x) for x in self.bs_array)
        self.ue_array = tuple(int(x) for x in self.ue_array)
        self.bs_positions = [[float(c) for c in p] for p in self.bs_positions]
        if isinstance(self.ga, dict):
            self.ga = GaConfig(**self.ga)
        self.validate()

    def validate(self):
        if self.num_ues < 1 or not self.bs_positions:
            raise ValueError("need at least one UE and one BS")
        if self.num_slots < 1:
            raise ValueError("num_slots must be >= 1")
        if self.ue_placement not in ("uniform_random", "congested", "explicit"):
            raise ValueError(f"unknown ue_placement {self.ue_placement!r}")
        if self.ue_placement == "explicit":
            if self.ue_positions is None or len(self.ue_positions) != self.num_ues:
                raise ValueError("explicit placement needs num_ues positions")
        if self.ue_placement == "congested" and self.congested_count > self.num_ues:
            raise ValueError("congested_count exceeds num_ues")
        W, Hh = self.area
        for p in self.bs_positions + list(self.ue_positions or []):
            if not (0 <= p[0] <= W and 0 <= p[1] <= Hh):
                raise ValueError(f"position {p} outside the {W}x{Hh} m area")
        if not 1 <= self.streams_per_ue <= self.ue_array[0] * self.ue_array[1]:
            raise ValueError("streams_per_ue must be between 1 and the UE antenna count")
        if self.streams_per_bs > self.bs_array[0] * self.bs_array[1]:
            raise ValueError("streams_per_bs cannot exceed the BS antenna count")

    @property
    def num_bss(self) -> int:
        return len(self.bs_positions)

    @property
    def stream_demands(self) -> np.ndarray:
        return np.full(self.num_ues, self.streams_per_ue, dtype=int)

    @property
    def capacities(self) -> np.ndarray:
        return np.full(self.num_bss, self.streams_per_bs, dtype=int)

    @property
    def powers_w(self) -> np.ndarray:
        return np.full(self.num_bss, 10.0 ** (self.tx_power_dbm / 10) / 1000)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.noise_psd_dbm_per_hz, self.bandwidth_hz)

    @property
    def large_scale(self) -> LargeScaleParams:
        return LargeScaleParams(carrier_freq=self.carrier_freq)

    @property
    def cluster_cfg(self) -> ClusterConfig:
        return ClusterConfig(
            self.num_clusters,
            self.rays_per_cluster,
            math.radians(self.azimuth_spread_deg),
            math.radians(self.elevation_spread_deg),
        )

    def geometries(self) -> tuple[ArrayGeometry, ArrayGeometry]:
        return ArrayGeometry(*self.ue_array), ArrayGeometry(*self.bs_array)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["area"] = list(self.area)
        d["bs_array"] = list(self.bs_array)
        d["ue_array"] = list(self.ue_array)
        d["ga"] = asdict(self.ga)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        d = dict(d)
        if "ga" in d and isinstance(d["ga"], dict):
            d["ga"] = GaConfig(**d["ga"])
        return cls(**d)


@dataclass
class Deployment:
    ue_positions: np.ndarray  # (K, 3)
    bs_positions: np.ndarray  # (J, 3)
    cache: object  # LargeScaleCache


def sample_deployment(scenario: Scenario) -> Deployment:
    """UE drop plus frozen large-scale link parameters, all from ``master_seed``."""
    rng = derived_rng(scenario.master_seed, _TAG_PLACEMENT)
    K = scenario.num_ues
    W, Hh = scenario.area
    if scenario.ue_placement == "explicit":
        xy = np.asarray(scenario.ue_positions, dtype=float)[:, :2]
    else:
        xy = np.column_stack([rng.uniform(0, W, K), rng.uniform(0, Hh, K)])
        if scenario.ue_placement == "congested":
            # first congested_count UEs dropped uniformly in a disc around BS 0
            c = np.asarray(scenario.bs_positions[0][:2])
            m = scenario.congested_count
            r = scenario.congested_radius * np.sqrt(rng.uniform(0, 1, m))
            phi = rng.uniform(0, 2 * np.pi, m)
            xy[:m] = c + np.column_stack([r * np.cos(phi), r * np.sin(phi)])
            xy[:m] = np.clip(xy[:m], [0, 0], [W, Hh])
    ue = np.column_stack([xy, np.full(K, scenario.ue_height)])
    bs = np.array([[p[0], p[1], p[2] if len(p) > 2 else scenario.bs_height] for p in scenario.bs_positions])
    cache = sample_large_scale(ue, bs, scenario.large_scale, scenario.master_seed)
    return Deployment(ue, bs, cache)


def _slot_ga_seed(scenario: Scenario, t: int) -> int:
    ss = np.random.SeedSequence([scenario.ga.seed, scenario.master_seed], spawn_key=(_TAG_GA, t))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class SchemeResult:
    name: str
    activations: list  # T x K BS indices (-1 = unserved)
    streams: list  # T x K granted stream counts
    slot_utilities: list  # T, bits/s/Hz
    user_rates: list  # T x K, bits/s/Hz
    channel_digest: str
    note: str = ""

    @property
    def horizon(self) -> int:
        return len(self.slot_utilities)

    def association(self, num_bss: int):
        cols = [ActivationVector(a, t) for t, a in enumerate(self.activations)]
        return association_matrix(ActivationMatrix(cols), num_bss)

    @property
    def mean_sum_rate(self) -> float:
        return float(np.mean(self.slot_utilities))

    @property
    def ci95(self) -> float:
        u = np.asarray(self.slot_utilities)
        if len(u) < 2:
            return 0.0
        return float(1.96 * u.std(ddof=1) / np.sqrt(len(u)))

    @property
    def mean_user_rates(self) -> np.ndarray:
        return np.mean(np.asarray(self.user_rates), axis=0)

    @property
    def drop_counts(self) -> list:
        """Per-user number of slots without service."""
        return (np.asarray(self.activations) == UNSERVED).sum(axis=0).astype(int).tolist()

    def to_dict(self, num_bss: int, bandwidth_hz: float) -> dict:
        return {
            "name": self.name,
            "note": self.note,
            "association_coefficients": self.association(num_bss).coefficients.tolist(),
            "mean_sum_rate_bpshz": self.mean_sum_rate,
            "mean_sum_rate_bps": self.mean_sum_rate * bandwidth_hz,
            "ci95_bpshz": self.ci95,
            "mean_user_rates_bpshz": self.mean_user_rates.tolist(),
            "drop_counts": self.drop_counts,
            "channel_digest": self.channel_digest,
            "activations": self.activations,
            "streams": self.streams,
            "slot_utilities": self.slot_utilities,
            "user_rates": self.user_rates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemeResult":
        return cls(
            d["name"], d["activations"], d["streams"], d["slot_utilities"], d["user_rates"], d["channel_digest"], d["note"]
        )


@dataclass
class ExperimentResult:
    scenario: Scenario
    schemes: dict  # name -> SchemeResult
    metadata: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0  # kept out of the serialized form

    @property
    def power_dbm(self) -> float:
        return self.scenario.tx_power_dbm

    def to_dict(self) -> dict:
        J, B = self.scenario.num_bss, self.scenario.bandwidth_hz
        return {
            "power_dbm": self.power_dbm,
            "scenario": self.scenario.to_dict(),
            "metadata": self.metadata,
            "schemes": {name: s.to_dict(J, B) for name, s in self.schemes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        return cls(
            Scenario.from_dict(d["scenario"]),
            {name: SchemeResult.from_dict(s) for name, s in d["schemes"].items()},
            d["metadata"],
        )


def _ordered(names) -> list[str]:
    names = set(names)
    return [s for s in ALL_SCHEMES if s in names]


def _digest(checksums) -> str:
    return channel_checksum(np.frombuffer("".join(checksums).encode(), dtype=np.uint8))


def run_experiment(scenario: Scenario, schemes=ALL_SCHEMES) -> ExperimentResult:
    """Simulate ``num_slots`` paired slots of one deployment for every scheme."""
    start = time.perf_counter()
    unknown = set(schemes) - set(ALL_SCHEMES)
    if unknown:
        raise ValueError(f"unknown schemes {sorted(unknown)}")
    schemes = _ordered(schemes)
    dep = sample_deployment(scenario)
    ue_geom, bs_geom = scenario.geometries()
    ccfg = scenario.cluster_cfg
    P = scenario.powers_w
    N = scenario.noise.power_w
    n = scenario.stream_demands
    D = scenario.capacities
    T = scenario.num_slots

    def channels(t):
        return sample_slot_channels(t, dep.cache, ccfg, ue_geom, bs_geom)

    static = {}
    if MAXSINR_DROP in schemes:
        static[MAXSINR_DROP] = (associate_max_sinr_drop(dep.cache, P, N, n, D), n)
    if MAXSINR_SHARE_DROP in schemes:
        act, streams = associate_max_sinr_share_drop(dep.cache, P, N, n, D)
        static[MAXSINR_SHARE_DROP] = (act, streams)
    if LB_FI in schemes:
        # long-term full-interference rate of every (k, j) pair
        fi = np.zeros((scenario.num_ues, scenario.num_bss))
        for t in range(T):
            fi += SlotContext(channels(t), P, N).fi_table(n)
        static[LB_FI] = (associate_load_balanced_fi(fi / T, n, D), n)

    records = {s: {"act": [], "streams": [], "u": [], "r": []} for s in schemes}
    checksums = []
    for t in range(T):
        H = channels(t)
        checksums.append(channel_checksum(H))
        ctx = SlotContext(H, P, N)
        for name in schemes:
            try:
                if name == TFA:
                    cfg = replace(scenario.ga, seed=_slot_ga_seed(scenario, t))
                    act, streams = solve_slot(ctx, n, D, cfg, t).best_activation, n
                else:
                    act, streams = static[name]
                if not feasible(act, streams, D):
                    raise RuntimeError(f"activation {act.assignment} violates capacities")
                rates = ctx.throughputs(act, streams)
            except Exception as exc:
                raise RuntimeError(f"scheme {name}, slot {t}: {exc}") from exc
            rec = records[name]
            rec["act"].append(list(act.assignment))
            rec["streams"].append([int(s) if a != UNSERVED else 0 for s, a in zip(streams, act.assignment)])
            rec["u"].append(rates.utility)
            rec["r"].append(rates.per_user_rate.tolist())
        if (t + 1) % 50 == 0:
            log.info("power %.1f dBm: slot %d/%d", scenario.tx_power_dbm, t + 1, T)

    digest = _digest(checksums)
    results = {
        name: SchemeResult(name, r["act"], r["streams"], r["u"], r["r"], digest, SCHEME_NOTES[name])
        for name, r in records.items()
    }
    metadata = {
        "software_version": __version__,
        "master_seed": scenario.master_seed,
        "ga_seed": scenario.ga.seed,
        "channel_checksums": checksums,
        "noise_power_w": N,
        "ue_positions": dep.ue_positions.tolist(),
        "bs_positions": dep.bs_positions.tolist(),
        "large_scale": dep.cache.to_dict(),
    }
    return ExperimentResult(scenario, results, metadata, time.perf_counter() - start)


def power_sweep(scenario: Scenario, schemes, power_grid_dbm) -> list[ExperimentResult]:
    grid = list(power_grid_dbm)
    if not grid:
        raise ValueError("power grid is empty")
    return [run_experiment(replace(scenario, tx_power_dbm=float(p)), schemes) for p in grid]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

SUMMARY_HEADER = ["power_dbm", "scheme", "mean_sum_rate_bpshz", "mean_sum_rate_bps", "ci95"]


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _point_dir(results, r) -> str:
    return "" if len(results) == 1 else f"power_{r.power_dbm!r}dBm"


def csv_files(results: list[ExperimentResult]) -> dict[str, str]:
    """Relative path -> CSV text for every table derived from ``results``."""
    files = {}
    summary = [SUMMARY_HEADER]
    for r in results:
        sub = _point_dir(results, r)
        B = r.scenario.bandwidth_hz
        for name in _ordered(r.schemes):
            s = r.schemes[name]
            files[os.path.join(sub, f"association_coeffs_{name}.csv")] = s.association(r.scenario.num_bss).to_csv()
            rows = [["slot", "utility_bpshz", "utility_bps"]]
            rows += [[t, repr(float(u)), repr(float(u) * B)] for t, u in enumerate(s.slot_utilities)]
            files[os.path.join(sub, f"slot_utilities_{name}.csv")] = _csv_text(rows)
            summary.append([repr(r.power_dbm), name, repr(s.mean_sum_rate), repr(s.mean_sum_rate * B), repr(s.ci95)])
    files["sweep_summary.csv"] = _csv_text(summary)
    return files


def resolved_config(results: list[ExperimentResult]) -> str:
    if not results:
        return ""
    cfg = results[0].scenario.to_dict()
    cfg.pop("tx_power_dbm")
    cfg["power_grid_dbm"] = [r.power_dbm for r in results]
    cfg["schemes"] = _ordered(results[0].schemes)
    return yaml.safe_dump(cfg, sort_keys=True)


def emit_results(results, output_dir) -> list[Path]:
    """Write config echo, CSV tables and ``result.json`` for one run or a sweep.

    Wall-clock time goes to ``timing.txt`` so the other files depend only on
    the configuration and seeds.
    """
    if isinstance(results, ExperimentResult):
        results = [results]
    out = Path(output_dir)
    written = []

    def put(rel, text):
        path = out / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    put("config.resolved", resolved_config(results))
    for rel, text in csv_files(results).items():
        put(rel, text)
    put("result.json", dump_results(results))
    put("timing.txt", "".join(f"{r.power_dbm!r} dBm: {r.wall_clock_s:.3f} s\n" for r in results))
    return written


def dump_results(results: list[ExperimentResult]) -> str:
    return json.dumps({"results": [r.to_dict() for r in results]}, indent=1, sort_keys=True) + "\n"


def load_results(path) -> list[ExperimentResult]:
    with open(path) as fh:
        data = json.load(fh)
    return [ExperimentResult.from_dict(d) for d in data["results"]]
