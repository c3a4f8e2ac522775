"""DFT codebooks, exhaustive beam sweeping and the beamformed scalar link."""

from dataclasses import dataclass
import math

import numpy as np

from ._validation import ConfigError, check_positive_int
from .channel import steering_matrix

MAX_BEAMS = 1024


@dataclass(frozen=True, eq=False)
class Codebook:
    columns: np.ndarray

    @property
    def beam_count(self):
        return self.columns.shape[1]

    @property
    def n_antennas(self):
        return self.columns.shape[0]


@dataclass(frozen=True)
class BeamPair:
    tx_index: int
    rx_index: int
    effective_channel: complex
    frame_index: int = 0


def _split_beams(n_beams, n_az, n_el):
    """Split a beam budget over the two array axes (elevation gets the smaller share)."""
    if n_el == 1:
        return n_beams, 1
    if n_az == 1:
        return 1, n_beams
    best = 1
    for k in range(1, int(math.isqrt(n_beams)) + 1):
        if n_beams % k == 0:
            best = k
    return n_beams // best, best


def _sector_grid(n, lo_deg, hi_deg):
    # bin centres of n equal slices of [lo, hi]
    edges = np.linspace(lo_deg, hi_deg, n + 1)
    return np.deg2rad(0.5 * (edges[:-1] + edges[1:]))


def dft_codebook(geometry, n_beams, grid="sector", azimuth_range_deg=(-60.0, 60.0),
                 elevation_range_deg=(60.0, 120.0), max_beams=MAX_BEAMS):
    """Codebook of steering vectors on a uniform angular grid.

    ``grid="sector"`` places beams at the centres of equal angular slices of the
    azimuth/elevation sector. ``grid="dft"`` uses the critically spaced spatial
    frequencies ``(2k + 1 - K) / (K d)`` of an orthogonal DFT basis on each axis.
    A single beam always points at broadside.
    """
    n_beams = check_positive_int(n_beams, "n_beams")
    if n_beams > max_beams:
        raise ConfigError(f"{n_beams} beams exceeds the maximum of {max_beams}", "n_beams")
    n_az, n_el = _split_beams(n_beams, geometry.n_elements_azimuth,
                              geometry.n_elements_elevation)
    if n_beams == 1:
        return Codebook(steering_matrix(geometry, 0.0, np.pi / 2))

    if grid == "sector":
        az = _sector_grid(n_az, *azimuth_range_deg) if n_az > 1 else np.zeros(1)
        el = _sector_grid(n_el, *elevation_range_deg) if n_el > 1 else np.full(1, np.pi / 2)
        az_g, el_g = np.meshgrid(az, el, indexing="ij")
        return Codebook(steering_matrix(geometry, az_g.ravel(), el_g.ravel()))

    if grid == "dft":
        d = geometry.element_spacing_wavelengths

        def freqs(k):
            if k == 1:
                return np.zeros(1)
            return np.clip((2 * np.arange(k) + 1 - k) / (k * 2 * d), -1.0, 1.0)

        u_az, u_el = freqs(n_az), freqs(n_el)
        idx_az = np.arange(geometry.n_elements_azimuth)[:, None]
        idx_el = np.arange(geometry.n_elements_elevation)[:, None]
        b_az = np.exp(2j * np.pi * d * idx_az * u_az[None, :]) / math.sqrt(len(idx_az))
        b_el = np.exp(2j * np.pi * d * idx_el * u_el[None, :]) / math.sqrt(len(idx_el))
        cols = (b_az[:, None, :, None] * b_el[None, :, None, :]).reshape(
            geometry.n_elements, n_az * n_el)
        return Codebook(cols)

    raise ConfigError(f"unknown grid {grid!r}", "grid")


def _entries(h):
    return h.entries if hasattr(h, "entries") else np.asarray(h)


TIE_RTOL = 1e-12


def sweep_metrics(h, w_tx, w_rx, noise_variance):
    """Beam-pair metric ``|w^H H f| / sigma^2`` as an (n_tx_beams, n_rx_beams) array."""
    gains = w_rx.columns.conj().T @ _entries(h) @ w_tx.columns
    return np.abs(gains).T / noise_variance


def beam_sweep(h, w_tx, w_rx, noise_variance, frame_index=0):
    """Exhaustive search over every transmit/receive beam pair.

    Ties resolve to the lowest ``(tx_index, rx_index)`` in lexicographic order;
    metrics within a relative ``TIE_RTOL`` of the best count as tied.
    """
    metrics = sweep_metrics(h, w_tx, w_rx, noise_variance)
    # mirrored beams can tie exactly in theory but differ by rounding in practice
    near_best = metrics >= metrics.max() * (1 - TIE_RTOL)
    tx, rx = divmod(int(np.argmax(near_best)), metrics.shape[1])
    gain = w_rx.columns[:, rx].conj() @ _entries(h) @ w_tx.columns[:, tx]
    return BeamPair(tx, rx, complex(gain), frame_index)


def effective_channel(h, pair, w_tx, w_rx):
    return complex(w_rx.columns[:, pair.rx_index].conj() @ _entries(h)
                   @ w_tx.columns[:, pair.tx_index])


def snr(effective_channel, noise_variance, symbol_power):
    """Post-beamforming SNR, returned as ``(linear, dB)``."""
    if noise_variance <= 0 or symbol_power <= 0:
        raise ValueError("noise_variance and symbol_power must be positive")
    lin = abs(effective_channel) ** 2 * symbol_power / noise_variance
    return lin, 10 * math.log10(lin) if lin > 0 else -math.inf


def dbm_to_watt(dbm):
    return 10 ** ((dbm - 30) / 10)
