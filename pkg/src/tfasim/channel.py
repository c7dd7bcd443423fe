"""
Stochastic mmWave MIMO channel generation.

Small-scale fading follows a clustered ray model over uniform planar arrays;
large-scale fading combines a distance-dependent LoS probability with a
close-in path loss model and log-normal shadowing.  Large-scale parameters are
frozen per deployment, small-scale parameters are redrawn every slot.

All angles are in radians.  Elevation angles are measured from the array's
vertical axis, so ``pi/2`` points at the horizon.
"""

from __future__ import annotations

import enum
import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# spawn_key tags for derived RNG streams
_TAG_LARGE_SCALE = 1
_TAG_SMALL_SCALE = 2


class DegenerateDistanceWarning(UserWarning):
    """Raised when a link is shorter than the path-loss reference distance."""


class LinkState(enum.Enum):
    LOS = "LoS"
    NLOS = "NLoS"


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform ``rows_u`` x ``cols_v`` planar array.

    ``element_spacing`` of ``None`` means half a wavelength at the carrier.
    """

    rows_u: int
    cols_v: int
    element_spacing: float | None = None

    def __post_init__(self):
        if self.rows_u < 1 or self.cols_v < 1:
            raise ValueError(f"array dimensions must be >= 1, got {self.rows_u}x{self.cols_v}")
        if self.element_spacing is not None and not self.element_spacing > 0:
            raise ValueError("element_spacing must be positive")

    @property
    def num_elements(self) -> int:
        return self.rows_u * self.cols_v

    def spacing(self, wavelength: float) -> float:
        return wavelength / 2 if self.element_spacing is None else self.element_spacing


@dataclass(frozen=True)
class LargeScaleParams:
    """Path loss, shadowing and LoS-probability parameters (73 GHz defaults)."""

    carrier_freq: float = 73e9
    ref_distance_d0: float = 1.0
    pathloss_exp_los: float = 2.0
    pathloss_exp_nlos: float = 3.4
    shadow_sigma_los: float = 4.8
    shadow_sigma_nlos: float = 7.9
    breakpoint_d_bp: float = 27.0
    decay_eta: float = 71.0

    def __post_init__(self):
        for name in ("pathloss_exp_los", "pathloss_exp_nlos", "shadow_sigma_los", "shadow_sigma_nlos"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("carrier_freq", "ref_distance_d0", "breakpoint_d_bp", "decay_eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    def exponent(self, state: LinkState) -> float:
        return self.pathloss_exp_los if state is LinkState.LOS else self.pathloss_exp_nlos

    def shadow_sigma(self, state: LinkState) -> float:
        return self.shadow_sigma_los if state is LinkState.LOS else self.shadow_sigma_nlos


@dataclass(frozen=True)
class ClusterConfig:
    """Clustered small-scale model settings.

    Intra-cluster ray offsets are Laplacian with the given rms spreads.
    """

    num_clusters: int = 5
    rays_per_cluster: int = 10
    azimuth_spread: float = math.radians(5.0)
    elevation_spread: float = math.radians(2.5)

    def __post_init__(self):
        if self.num_clusters < 1 or self.rays_per_cluster < 1:
            raise ValueError("need at least one cluster and one ray per cluster")
        if self.azimuth_spread < 0 or self.elevation_spread < 0:
            raise ValueError("angle spreads must be non-negative")

    @property
    def num_rays(self) -> int:
        return self.num_clusters * self.rays_per_cluster


@dataclass(frozen=True)
class LinkLargeScale:
    """Frozen large-scale state of one UE-BS link for a deployment."""

    distance_3d: float
    state: LinkState
    shadow_db: float
    pathloss_db: float
    clamped: bool = False

    @property
    def gain(self) -> float:
        """Large-scale power gain ``10^(-PL/10)``."""
        return 10.0 ** (-self.pathloss_db / 10.0)

    def to_dict(self) -> dict:
        return {
            "distance_3d": self.distance_3d,
            "state": self.state.value,
            "shadow_db": self.shadow_db,
            "pathloss_db": self.pathloss_db,
            "clamped": self.clamped,
        }


@dataclass
class LargeScaleCache:
    """Per-deployment large-scale parameters for every (UE, BS) pair."""

    links: list[list[LinkLargeScale]]
    seed: int
    params: LargeScaleParams = field(default_factory=LargeScaleParams)

    @property
    def num_ues(self) -> int:
        return len(self.links)

    @property
    def num_bss(self) -> int:
        return len(self.links[0]) if self.links else 0

    def link(self, k: int, j: int) -> LinkLargeScale:
        try:
            return self.links[k][j]
        except IndexError:
            raise RuntimeError(f"no large-scale entry for link (ue={k}, bs={j})") from None

    def pathloss_matrix(self) -> np.ndarray:
        return np.array([[lk.pathloss_db for lk in row] for row in self.links])

    def gain_matrix(self) -> np.ndarray:
        """K x J large-scale power gains."""
        return 10.0 ** (-self.pathloss_matrix() / 10.0)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "links": [[lk.to_dict() for lk in row] for row in self.links]}


@dataclass(frozen=True)
class ChannelRealization:
    matrix: np.ndarray
    link_state: LinkState
    pathloss_db: float
    ue_index: int
    bs_index: int
    slot_index: int


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible stream for ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def array_response(azimuth, elevation, geometry: ArrayGeometry, wavelength: float) -> np.ndarray:
    """Unit-norm UPA steering vector(s).

    Element ``(u, v)`` sits at flat index ``u * V + v`` with phase
    ``2*pi/lambda * d * (u sin(az) sin(el) + v cos(el))``.  Angle arrays
    broadcast; the element axis is appended last.
    """
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    if not (np.all(np.isfinite(az)) and np.all(np.isfinite(el))):
        raise ValueError("angles must be finite")
    if not wavelength > 0:
        raise ValueError("wavelength must be positive")
    d = geometry.spacing(wavelength)
    u = np.repeat(np.arange(geometry.rows_u), geometry.cols_v)
    v = np.tile(np.arange(geometry.cols_v), geometry.rows_u)
    kd = 2 * np.pi / wavelength * d
    phase = kd * (
        u * (np.sin(az) * np.sin(el))[..., None] + v * np.cos(el)[..., None]
    )
    return np.exp(1j * phase) / np.sqrt(geometry.num_elements)


def los_probability(distance_3d, params: LargeScaleParams = LargeScaleParams()):
    d = np.asarray(distance_3d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    decay = np.exp(-d / params.decay_eta)
    p = (np.minimum(params.breakpoint_d_bp / d, 1.0) * (1 - decay) + decay) ** 2
    return float(p) if p.ndim == 0 else p


def nlos_probability(distance_3d, params: LargeScaleParams = LargeScaleParams()):
    return 1 - los_probability(distance_3d, params)


def sample_link_state(distance_3d: float, params: LargeScaleParams, rng: np.random.Generator) -> LinkState:
    p = los_probability(distance_3d, params)
    return LinkState.LOS if rng.random() < p else LinkState.NLOS


def path_loss_db(distance_3d: float, state: LinkState, params: LargeScaleParams, shadow_draw: float = 0.0) -> float:
    """Close-in path loss plus a supplied shadowing term, in dB.

    Distances below the reference distance are clamped to it with a
    :class:`DegenerateDistanceWarning`.
    """
    d0 = params.ref_distance_d0
    if distance_3d < d0:
        warnings.warn(
            f"distance {distance_3d:g} m below reference {d0:g} m; clamped",
            DegenerateDistanceWarning,
            stacklevel=2,
        )
        distance_3d = d0
    fspl = 20 * math.log10(4 * math.pi * d0 / params.wavelength)
    return fspl + 10 * params.exponent(state) * math.log10(distance_3d / d0) + shadow_draw


def sample_large_scale(
    ue_positions: np.ndarray,
    bs_positions: np.ndarray,
    params: LargeScaleParams,
    seed: int,
) -> LargeScaleCache:
    """Draw link state and shadowing for every UE-BS pair, one stream per link."""
    ue_positions = np.atleast_2d(ue_positions)
    bs_positions = np.atleast_2d(bs_positions)
    links = []
    for k, ue in enumerate(ue_positions):
        row = []
        for j, bs in enumerate(bs_positions):
            rng = derived_rng(seed, _TAG_LARGE_SCALE, k, j)
            d = float(np.linalg.norm(ue - bs))
            clamped = d < params.ref_distance_d0
            d_eff = max(d, params.ref_distance_d0)
            state = sample_link_state(d_eff, params, rng)
            shadow = float(rng.normal(0.0, params.shadow_sigma(state)))
            pl = path_loss_db(d_eff, state, params, shadow)
            row.append(LinkLargeScale(d, state, shadow, pl, clamped))
        links.append(row)
    return LargeScaleCache(links, seed, params)


def _cluster_gains(num_clusters: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_exponential(num_clusters)
    return g * (num_clusters / g.sum())


def _ray_angles(cfg: ClusterConfig, rng: np.random.Generator):
    C, L = cfg.num_clusters, cfg.rays_per_cluster
    az_c = rng.uniform(-np.pi, np.pi, C)
    el_c = rng.uniform(np.pi / 3, 2 * np.pi / 3, C)
    # laplace scale b has rms sqrt(2)*b
    az = az_c[:, None] + rng.laplace(0.0, cfg.azimuth_spread / np.sqrt(2), (C, L))
    el = el_c[:, None] + rng.laplace(0.0, cfg.elevation_spread / np.sqrt(2), (C, L))
    return az.ravel(), el.ravel()


def sample_small_scale(
    cluster_cfg: ClusterConfig,
    ue_geom: ArrayGeometry,
    bs_geom: ArrayGeometry,
    wavelength: float,
    rng: np.random.Generator,
    cluster_gains: np.ndarray | None = None,
) -> np.ndarray:
    """One N x M small-scale channel with ``E||H||_F^2 = N*M``.

    Each ray carries an independent uniform phase so that distinct rays add
    in power on average.  ``cluster_gains`` overrides the exponential draw.
    """
    C, L = cluster_cfg.num_clusters, cluster_cfg.rays_per_cluster
    N, M = ue_geom.num_elements, bs_geom.num_elements
    gains = _cluster_gains(C, rng) if cluster_gains is None else np.asarray(cluster_gains, dtype=float)
    if gains.shape != (C,):
        raise ValueError(f"expected {C} cluster gains, got shape {gains.shape}")
    az_ue, el_ue = _ray_angles(cluster_cfg, rng)
    az_bs, el_bs = _ray_angles(cluster_cfg, rng)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, C * L))
    amp = np.repeat(np.sqrt(gains), L) * phases * np.sqrt(N * M / (C * L))
    a_ue = array_response(az_ue, el_ue, ue_geom, wavelength)  # (CL, N)
    a_bs = array_response(az_bs, el_bs, bs_geom, wavelength)  # (CL, M)
    return (a_ue.T * amp) @ a_bs.conj()


def sample_channel(
    k: int,
    j: int,
    t: int,
    cache: LargeScaleCache,
    cluster_cfg: ClusterConfig,
    ue_geom: ArrayGeometry,
    bs_geom: ArrayGeometry,
    rng: np.random.Generator | None = None,
) -> ChannelRealization:
    """Channel of link (k, j) in slot t: frozen path loss times fresh small-scale fading."""
    link = cache.link(k, j)
    if rng is None:
        rng = derived_rng(cache.seed, _TAG_SMALL_SCALE, k, j, t)
    h_ss = sample_small_scale(cluster_cfg, ue_geom, bs_geom, cache.params.wavelength, rng)
    h = h_ss * 10.0 ** (-link.pathloss_db / 20.0)
    return ChannelRealization(h, link.state, link.pathloss_db, k, j, t)


def sample_slot_channels(
    t: int,
    cache: LargeScaleCache,
    cluster_cfg: ClusterConfig,
    ue_geom: ArrayGeometry,
    bs_geom: ArrayGeometry,
) -> np.ndarray:
    """All K x J channel matrices of slot t, shape ``(K, J, N, M)``."""
    K, J = cache.num_ues, cache.num_bss
    out = np.empty((K, J, ue_geom.num_elements, bs_geom.num_elements), dtype=complex)
    for k in range(K):
        for j in range(J):
            out[k, j] = sample_channel(k, j, t, cache, cluster_cfg, ue_geom, bs_geom).matrix
    return out


def channel_checksum(channels: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(channels).tobytes()).hexdigest()[:16]
