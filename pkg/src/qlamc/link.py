"""Link abstraction: MCS action set, BLER-vs-SNR model, CQI quantizer and ILLA table.

The NR LDPC chain is not simulated. Each MCS gets a logistic BLER curve whose
50% point sits a fixed gap above the Shannon SNR of its spectral efficiency.
"""

from bisect import bisect_right
import csv
from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit

from ._validation import ConfigError, check_in_range, check_positive_int

INFO_BITS_PER_TB = 1024

# 3GPP TS 38.214 Table 5.1.3.1-1 (MCS index table 1, up to 64QAM):
# index -> (modulation order Qm, target code rate R x 1024)
MCS_TABLE_64QAM = {
    0: (2, 120), 1: (2, 157), 2: (2, 193), 3: (2, 251), 4: (2, 308),
    5: (2, 379), 6: (2, 449), 7: (2, 526), 8: (2, 602), 9: (2, 679),
    10: (4, 340), 11: (4, 378), 12: (4, 434), 13: (4, 490), 14: (4, 553),
    15: (4, 616), 16: (4, 658), 17: (6, 438), 18: (6, 466), 19: (6, 517),
    20: (6, 567), 21: (6, 616), 22: (6, 666), 23: (6, 719), 24: (6, 772),
    25: (6, 822), 26: (6, 873), 27: (6, 910), 28: (6, 948),
}


@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation_bits: int
    code_rate: float

    @property
    def nominal_efficiency(self):
        return self.modulation_bits * self.code_rate


def mcs_action_set(first=3, last=27):
    """MCS entries ``first..last`` ordered by ascending spectral efficiency.

    In the standard table MCS 17 (64QAM) is marginally less efficient than
    MCS 16 (16QAM), so the action order swaps those two indexes.
    """
    if not (0 <= first <= last <= 28):
        raise ConfigError(f"MCS range [{first}, {last}] outside [0, 28]", "mcs_range")
    entries = [McsEntry(i, q, r / 1024) for i, (q, r) in MCS_TABLE_64QAM.items()
               if first <= i <= last]
    return sorted(entries, key=lambda e: e.nominal_efficiency)


@dataclass(frozen=True)
class BlerModel:
    slope_per_db: float = 1.5
    implementation_gap_db: float = 2.0

    def __post_init__(self):
        check_in_range(self.slope_per_db, "bler_slope", low=0, low_inclusive=False)
        check_in_range(self.implementation_gap_db, "bler_gap_db")

    def snr50_db(self, mcs):
        return 10 * math.log10(2 ** mcs.nominal_efficiency - 1) + self.implementation_gap_db

    def threshold_db(self, mcs, target_bler):
        """SNR at which the BLER curve of ``mcs`` crosses ``target_bler``."""
        return self.snr50_db(mcs) + math.log((1 - target_bler) / target_bler) / self.slope_per_db


def bler(snr_db, mcs, model):
    """Block error probability of one transport block; scalar or array ``snr_db``."""
    x = -model.slope_per_db * (np.asarray(snr_db, dtype=float) - model.snr50_db(mcs))
    out = expit(x)
    return float(out) if out.ndim == 0 else out


def bler_scalar(snr_db, snr50_db, slope):
    # hot-loop variant of bler(); same logistic, no numpy
    z = slope * (snr_db - snr50_db)
    if z >= 0:
        e = math.exp(-z)
        return e / (1 + e)
    return 1 / (1 + math.exp(z))


@dataclass(frozen=True)
class TransmissionOutcome:
    ack: bool
    mcs_used: McsEntry
    snr_db_at_tx: float
    realized_efficiency: float
    n_bits: int = INFO_BITS_PER_TB


def transmit(snr_db, mcs, model, rng):
    """Send one transport block; ACK with probability ``1 - bler``."""
    ack = bool(rng.random() >= bler(snr_db, mcs, model))
    return TransmissionOutcome(ack, mcs, float(snr_db),
                               mcs.nominal_efficiency if ack else 0.0)


def spectral_efficiency(bler_value, mcs):
    return (1 - bler_value) * mcs.nominal_efficiency


@dataclass(frozen=True)
class CqiConfig:
    n_cqi: int = 30
    snr_min_db: float = -5.0
    snr_max_db: float = 40.0

    def __post_init__(self):
        check_positive_int(self.n_cqi, "n_cqi")
        if self.n_cqi < 2:
            raise ConfigError("n_cqi must be at least 2", "n_cqi")
        if not self.snr_max_db > self.snr_min_db:
            raise ConfigError("snr_max_db must exceed snr_min_db", "snr_max_db")


def cqi_quantize(snr_db, cfg):
    """Uniform CQI quantizer with clamping at both ends; scalar or array input."""
    if np.ndim(snr_db) == 0:
        return cqi_scalar(float(snr_db), cfg.n_cqi, cfg.snr_min_db, cfg.snr_max_db)
    snr = np.asarray(snr_db, dtype=float)
    raw = np.floor((snr - cfg.snr_min_db) * (cfg.n_cqi - 1) / (cfg.snr_max_db - cfg.snr_min_db))
    out = np.where(snr <= cfg.snr_min_db, 0,
                   np.where(snr >= cfg.snr_max_db, cfg.n_cqi - 1, raw))
    return out.astype(int)


def cqi_scalar(snr_db, n_cqi, snr_min_db, snr_max_db):
    if snr_db <= snr_min_db:
        return 0
    if snr_db >= snr_max_db:
        return n_cqi - 1
    return int(math.floor((snr_db - snr_min_db) * (n_cqi - 1) / (snr_max_db - snr_min_db)))


class IllaTable:
    """Static SNR-threshold lookup: one CQI per MCS, highest MCS meeting the BLER target."""

    def __init__(self, actions, thresholds_db, target_bler):
        self.actions = list(actions)
        self.thresholds_db = np.asarray(thresholds_db, dtype=float)
        self.target_bler = target_bler
        self._thr = self.thresholds_db.tolist()

    def __len__(self):
        return len(self.actions)

    def select(self, snr_db):
        """Action position for a measured SNR (lowest MCS below every threshold)."""
        return max(bisect_right(self._thr, snr_db) - 1, 0)

    def select_many(self, snr_db):
        pos = np.searchsorted(self.thresholds_db, np.asarray(snr_db, dtype=float),
                              side="right") - 1
        return np.maximum(pos, 0)

    def cqi(self, snr_db):
        return self.select(snr_db)


def build_illa_table(model, mcs_list, target_bler=0.1):
    check_in_range(target_bler, "target_bler", low=0, high=1,
                   low_inclusive=False, high_inclusive=False)
    thresholds = [model.threshold_db(m, target_bler) for m in mcs_list]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError("BLER model is not monotone over the MCS list: "
                          "switching thresholds must strictly increase", "bler_model")
    return IllaTable(mcs_list, thresholds, target_bler)


MCS_CSV_COLUMNS = ("index", "modulation_bits", "code_rate", "efficiency", "snr50_db",
                   "threshold_db")


def write_mcs_table_csv(path, model, mcs_list, target_bler=0.1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MCS_CSV_COLUMNS)
        for m in mcs_list:
            w.writerow([m.index, m.modulation_bits, repr(m.code_rate),
                        repr(m.nominal_efficiency), repr(model.snr50_db(m)),
                        repr(model.threshold_db(m, target_bler))])
