"""Geometric multipath channel between a planar BS array and the UE.

The BS sits at the origin. Scatterers are single-bounce points fixed in the
horizontal plane for a whole run; departure angles at the BS are therefore
fixed, while arrival angles (and with them the per-path Doppler shifts) follow
the UE as it moves.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from ._validation import ConfigError, check_in_range, check_interval, check_positive_int

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    n_elements_azimuth: int = 8
    n_elements_elevation: int = 8
    element_spacing_wavelengths: float = 0.5

    def __post_init__(self):
        check_positive_int(self.n_elements_azimuth, "n_elements_azimuth")
        check_positive_int(self.n_elements_elevation, "n_elements_elevation")
        check_in_range(self.element_spacing_wavelengths, "element_spacing_wavelengths",
                       low=0, low_inclusive=False)

    @property
    def n_elements(self):
        return self.n_elements_azimuth * self.n_elements_elevation


def _axis_response(n, spacing, direction_cosine):
    # direction_cosine: shape (K,) -> (n, K), unit norm columns
    idx = np.arange(n)[:, None]
    return np.exp(2j * np.pi * spacing * idx * direction_cosine[None, :]) / math.sqrt(n)


def steering_matrix(geometry, azimuth, elevation):
    """Array responses for K directions, returned as an (N, K) matrix.

    The planar response is the Kronecker product of the azimuth-axis response
    (direction cosine ``sin(az) sin(el)``) and the elevation-axis response
    (direction cosine ``cos(el)``); element index runs azimuth-major.
    """
    az = np.mod(np.atleast_1d(np.asarray(azimuth, dtype=float)), 2 * np.pi)
    el = np.atleast_1d(np.asarray(elevation, dtype=float))
    az, el = np.broadcast_arrays(az, el)
    if np.any((el < 0) | (el > np.pi)):
        raise ValueError("elevation must lie in [0, pi]")
    d = geometry.element_spacing_wavelengths
    a_az = _axis_response(geometry.n_elements_azimuth, d, np.sin(az) * np.sin(el))
    a_el = _axis_response(geometry.n_elements_elevation, d, np.cos(el))
    # column-wise Kronecker product
    return (a_az[:, None, :] * a_el[None, :, :]).reshape(geometry.n_elements, az.size)


def steering_vector(geometry, azimuth, elevation):
    """Unit-norm response of ``geometry`` towards a single (azimuth, elevation)."""
    return steering_matrix(geometry, azimuth, elevation)[:, 0]


@dataclass(frozen=True)
class ChannelConfig:
    n_paths: int = 10
    azimuth_range_deg: tuple = (-60.0, 60.0)
    elevation_range_deg: tuple = (60.0, 120.0)
    scatterer_distance_range_m: tuple = (20.0, 150.0)
    bs_height_m: float = 15.0
    ue_height_m: float = 1.5
    carrier_ghz: float = 28.0
    subcarrier_spacing_khz: float = 120.0
    shadowing_std_db: float = 6.0
    shadowing_corr_distance_m: float = 10.0
    bs_array: ArrayGeometry = field(default_factory=ArrayGeometry)
    ue_array: ArrayGeometry = field(default_factory=lambda: ArrayGeometry(1, 1))
    array_gain: bool = True

    def __post_init__(self):
        check_positive_int(self.n_paths, "n_paths")
        az = check_interval(self.azimuth_range_deg, "azimuth_range_deg")
        el = check_interval(self.elevation_range_deg, "elevation_range_deg")
        if el[0] < 0 or el[1] > 180:
            raise ConfigError("elevation range must lie within [0, 180] degrees",
                              "elevation_range_deg")
        if az[1] - az[0] > 360:
            raise ConfigError("azimuth range wider than 360 degrees", "azimuth_range_deg")
        lo, _ = check_interval(self.scatterer_distance_range_m, "scatterer_distance_range_m")
        if lo <= 0:
            raise ConfigError("scatterer distances must be positive", "scatterer_distance_range_m")
        check_in_range(self.bs_height_m, "bs_height_m", low=0, low_inclusive=False)
        check_in_range(self.ue_height_m, "ue_height_m", low=0, low_inclusive=False)
        check_in_range(self.carrier_ghz, "carrier_ghz", low=0, low_inclusive=False)
        check_in_range(self.subcarrier_spacing_khz, "subcarrier_spacing_khz",
                       low=0, low_inclusive=False)
        check_in_range(self.shadowing_std_db, "shadowing_std_db", low=0)
        check_in_range(self.shadowing_corr_distance_m, "shadowing_corr_distance_m",
                       low=0, low_inclusive=False)

    @property
    def wavelength_m(self):
        return SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)

    @property
    def symbol_period_s(self):
        return 1.0 / (self.subcarrier_spacing_khz * 1e3)


def pathloss_uma_nlos(distance_m, bs_height_m=15.0, ue_height_m=1.5, carrier_ghz=28.0):
    """3GPP TR 38.901 (Table 7.4.1-1) UMa NLOS pathloss in dB.

    ``max(PL_UMa-LOS, PL'_UMa-NLOS)`` with the LOS breakpoint computed from
    effective heights (environment height 1 m). Horizontal distances below
    10 m are clamped to 10 m.
    """
    d2d = np.maximum(np.asarray(distance_m, dtype=float), 10.0)
    d3d = np.sqrt(d2d ** 2 + (bs_height_m - ue_height_m) ** 2)
    log_fc = 20 * math.log10(carrier_ghz)
    d_bp = 4 * (bs_height_m - 1.0) * (ue_height_m - 1.0) * carrier_ghz * 1e9 / SPEED_OF_LIGHT
    pl1 = 28.0 + 22 * np.log10(d3d) + log_fc
    pl2 = (28.0 + 40 * np.log10(d3d) + log_fc
           - 9 * np.log10(d_bp ** 2 + (bs_height_m - ue_height_m) ** 2))
    pl_los = np.where(d2d <= d_bp, pl1, pl2)
    pl_nlos = 13.54 + 39.08 * np.log10(d3d) + log_fc - 0.6 * (ue_height_m - 1.5)
    out = np.maximum(pl_los, pl_nlos)
    return float(out) if out.ndim == 0 else out


def update_shadowing(previous_db, moved_m, std_db, corr_distance_m, rng):
    """Advance a Gudmundson-correlated log-normal shadowing process by ``moved_m``."""
    rho = math.exp(-abs(moved_m) / corr_distance_m)
    return rho * previous_db + math.sqrt(1 - rho ** 2) * std_db * rng.standard_normal()


@dataclass(frozen=True)
class Scatterer:
    complex_gain: complex
    position: tuple
    elevation_rad: float

    def doppler_hz(self, ue_position, ue_velocity, wavelength_m):
        to_scatterer = np.asarray(self.position) - np.asarray(ue_position, dtype=float)
        return float(_doppler(to_scatterer[None, :], np.asarray(ue_velocity, dtype=float),
                              wavelength_m)[0])


def _doppler(to_scatterer, velocity, wavelength_m):
    speed = math.hypot(velocity[0], velocity[1])
    if speed == 0.0:
        return np.zeros(len(to_scatterer))
    dist = np.hypot(to_scatterer[:, 0], to_scatterer[:, 1])
    dist = np.where(dist > 0, dist, 1.0)
    cos_angle = (to_scatterer @ velocity) / (dist * speed)
    return speed / wavelength_m * cos_angle


@dataclass(frozen=True, eq=False)
class ScattererSet:
    """S persistent paths plus the large-scale gain for the current UE position.

    ``gains``, ``positions`` and ``elevations`` are arrays of length S; the
    large-scale terms are refreshed with :meth:`with_large_scale`.
    """

    gains: np.ndarray
    positions: np.ndarray
    elevations: np.ndarray
    pathloss_db: float
    shadowing_db: float
    config: ChannelConfig

    @property
    def n_paths(self):
        return len(self.gains)

    @property
    def scatterers(self):
        return [Scatterer(complex(g), tuple(p), float(e))
                for g, p, e in zip(self.gains, self.positions, self.elevations)]

    @property
    def departure_azimuths(self):
        return np.arctan2(self.positions[:, 1], self.positions[:, 0])

    @property
    def large_scale_gain(self):
        """Linear power gain combining pathloss and shadowing."""
        return 10 ** (-(self.pathloss_db + self.shadowing_db) / 10)

    def with_large_scale(self, pathloss_db, shadowing_db):
        return replace(self, pathloss_db=float(pathloss_db), shadowing_db=float(shadowing_db))


def draw_scatterer_set(config, ue_position, rng):
    s = config.n_paths
    az = np.deg2rad(rng.uniform(*config.azimuth_range_deg, size=s))
    el = np.deg2rad(rng.uniform(*config.elevation_range_deg, size=s))
    r = rng.uniform(*config.scatterer_distance_range_m, size=s)
    positions = np.column_stack([r * np.cos(az), r * np.sin(az)])
    gains = (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / math.sqrt(2 * s)
    distance = math.hypot(*ue_position)
    pl = pathloss_uma_nlos(distance, config.bs_height_m, config.ue_height_m, config.carrier_ghz)
    shadow = config.shadowing_std_db * rng.standard_normal()
    return ScattererSet(gains, positions, el, pl, shadow, config)


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    entries: np.ndarray
    timestamp_symbols: int


@dataclass(frozen=True, eq=False)
class PathState:
    """Factored view of the channel: ``H = scale * A_rx diag(beta_t) A_tx^H``."""

    a_rx: np.ndarray
    a_tx: np.ndarray
    beta_t: np.ndarray
    scale: float

    def matrix(self):
        return self.scale * (self.a_rx * self.beta_t[None, :]) @ self.a_tx.conj().T


def path_state(sset, ue_position, ue_velocity, t_symbols):
    cfg = sset.config
    if t_symbols < 0:
        raise ValueError("t_symbols must be non-negative")
    ue = np.asarray(ue_position, dtype=float)
    to_scat = sset.positions - ue[None, :]
    a_tx = steering_matrix(cfg.bs_array, sset.departure_azimuths, sset.elevations)
    a_rx = steering_matrix(cfg.ue_array, np.arctan2(to_scat[:, 1], to_scat[:, 0]),
                           np.full(sset.n_paths, np.pi / 2))
    f = _doppler(to_scat, np.asarray(ue_velocity, dtype=float), cfg.wavelength_m)
    beta_t = sset.gains * np.exp(2j * np.pi * f * t_symbols * cfg.symbol_period_s)
    scale = math.sqrt(sset.large_scale_gain)
    if cfg.array_gain:
        scale *= math.sqrt(cfg.bs_array.n_elements * cfg.ue_array.n_elements)
    return PathState(a_rx, a_tx, beta_t, scale)


def channel_at(sset, ue_position, ue_velocity, t_symbols):
    """Channel matrix (N_rx x N_tx) at OFDM symbol ``t_symbols``."""
    return ChannelMatrix(path_state(sset, ue_position, ue_velocity, t_symbols).matrix(),
                         int(t_symbols))
