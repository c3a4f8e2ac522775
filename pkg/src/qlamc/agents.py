"""MCS selection policies: Q-learning AMC, the fixed ILLA lookup table and OLLA.

All three share one online decision interface, used by the simulator::

    agent.reset(rng)                   # start of a Monte Carlo run
    mcs = agent.select(snr_db)         # at an MCS decision point
    agent.observe(acks, next_snr_db)   # ACK/NACKs of the TBs sent with ``mcs``

and follow the scikit-learn estimator conventions (constructor parameters are
hyper-parameters, ``fit`` returns ``self``, learned state ends in ``_``).

Q-learning agents learn from an environment object exposing ``reset() ->
snr_db`` and ``step(mcs) -> (acks, next_snr_db, done)``.
"""

from dataclasses import dataclass, field
import hashlib
import json
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, as_1d_float, check_choice, check_in_range, check_positive_int
from .link import BlerModel, CqiConfig, build_illa_table, cqi_scalar, mcs_action_set

REWARDS = {"bler": "BLER", "se": "SE"}
SIGN_CONVENTIONS = ("standard", "as_printed")
QTABLE_MAGIC = "# qlamc-qtable v1"


# --------------------------------------------------------------------------- Q-learning

@dataclass
class QTable:
    values: np.ndarray
    visit_counts: np.ndarray
    actions: list

    @classmethod
    def zeros(cls, n_states, actions):
        n = len(actions)
        return cls(np.zeros((n_states, n)), np.zeros((n_states, n), dtype=np.int64), list(actions))

    @property
    def n_states(self):
        return self.values.shape[0]

    @property
    def n_actions(self):
        return self.values.shape[1]

    def copy(self):
        return QTable(self.values.copy(), self.visit_counts.copy(), list(self.actions))

    def greedy(self):
        """Greedy action position per state (first maximum wins)."""
        return np.argmax(self.values, axis=1)

    def save(self, path, config_hash=""):
        with open(path, "w") as fh:
            fh.write(self.dumps(config_hash))

    def dumps(self, config_hash=""):
        lines = [QTABLE_MAGIC,
                 f"n_states={self.n_states} n_actions={self.n_actions} config_hash={config_hash}",
                 "actions=" + ",".join(str(a.index) for a in self.actions),
                 "# values"]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.values]
        lines.append("# visit_counts")
        lines += [" ".join(str(int(c)) for c in row) for row in self.visit_counts]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path, actions=None):
        """Read a table written by :meth:`save`; returns ``(table, config_hash)``."""
        with open(path) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != QTABLE_MAGIC:
            raise ValueError(f"{path}: not a Q-table file (bad header)")
        header = dict(kv.split("=", 1) for kv in lines[1].split())
        n_states, n_actions = int(header["n_states"]), int(header["n_actions"])
        indexes = [int(i) for i in lines[2].split("=", 1)[1].split(",")]
        if actions is None:
            by_index = {a.index: a for a in mcs_action_set(0, 28)}
            actions = [by_index[i] for i in indexes]
        elif [a.index for a in actions] != indexes:
            raise ValueError(f"{path}: action set {indexes} does not match the configured MCS set")
        values = np.array([[float(v) for v in ln.split()] for ln in lines[4:4 + n_states]])
        counts = np.array([[int(v) for v in ln.split()]
                           for ln in lines[5 + n_states:5 + 2 * n_states]], dtype=np.int64)
        if values.shape != (n_states, n_actions) or counts.shape != (n_states, n_actions):
            raise ValueError(f"{path}: body does not match header dimensions")
        return cls(values, counts, list(actions)), header.get("config_hash", "")


@dataclass(frozen=True)
class QlConfig:
    learning_rate: float = 0.9
    discount: float = 0.1
    epsilon_max: float = 0.5
    epsilon_min: float = 0.05
    epsilon_decay: float = None
    n_training_decisions: int = 320_000
    deployment_epsilon: float = 0.05
    reward_kind: str = "se"
    target_bler: float = 0.1
    bler_smoothing: float = 0.1

    def __post_init__(self):
        check_in_range(self.learning_rate, "learning_rate", 0, 1)
        check_in_range(self.discount, "discount", 0, 1)
        check_in_range(self.epsilon_min, "epsilon_min", 0, 1)
        check_in_range(self.epsilon_max, "epsilon_max", self.epsilon_min, 1)
        check_in_range(self.deployment_epsilon, "deployment_epsilon", 0, 1)
        if self.epsilon_decay is not None:
            check_in_range(self.epsilon_decay, "epsilon_decay", 0, 1, low_inclusive=False)
        check_positive_int(self.n_training_decisions, "n_training_decisions")
        check_choice(self.reward_kind, "reward", REWARDS)
        check_in_range(self.target_bler, "target_bler", 0, 1, False, False)
        check_in_range(self.bler_smoothing, "bler_smoothing", 0, 1, False, True)

    @property
    def decay(self):
        """Per-decision multiplicative decay; by default epsilon bottoms out half-way."""
        if self.epsilon_decay is not None:
            return self.epsilon_decay
        if self.epsilon_max <= self.epsilon_min or self.epsilon_min == 0:
            return 1.0 if self.epsilon_min else 0.0
        half = max(self.n_training_decisions // 2, 1)
        return (self.epsilon_min / self.epsilon_max) ** (1.0 / half)


@dataclass(frozen=True)
class Feedback:
    ack: bool
    bler_estimate: float
    mcs_used: object
    next_state_cqi: int


def epsilon_schedule(decision_index, cfg, phase="learning"):
    if decision_index < 0:
        raise ValueError("decision_index must be non-negative")
    if phase == "deployment":
        return cfg.deployment_epsilon
    return max(cfg.epsilon_min, cfg.epsilon_max * cfg.decay ** decision_index)


def select_action_epsilon_greedy(q, state_cqi, epsilon, rng):
    """Greedy MCS for ``state_cqi`` with probability ``1 - epsilon``, else uniform.

    Ties go to the lowest action position (the least efficient MCS).
    """
    if rng.random() < epsilon:
        return q.actions[int(rng.integers(q.n_actions))]
    return q.actions[int(np.argmax(q.values[state_cqi]))]


def q_update(q, s, a, reward, s_next, cfg):
    """One temporal-difference update of ``Q(s, a)``; returns the new value."""
    alpha = cfg.learning_rate
    target = reward + cfg.discount * float(np.max(q.values[s_next]))
    q.values[s, a] = (1 - alpha) * q.values[s, a] + alpha * target
    q.visit_counts[s, a] += 1
    return q.values[s, a]


def reward_bler(bler_estimate, mcs, target_bler=0.1):
    return mcs.nominal_efficiency if bler_estimate <= target_bler else -1.0


def reward_se(bler_estimate, mcs):
    return (1 - bler_estimate) * mcs.nominal_efficiency


class LinkAdapter(BaseEstimator):
    """Shared plumbing for the three MCS policies."""

    label = "agent"

    def _actions(self):
        return mcs_action_set(self.mcs_first, self.mcs_last)

    def reset(self, rng=None):
        self.rng_ = rng if rng is not None else np.random.default_rng(self.random_state)

    def observe(self, acks, next_snr_db):
        pass

    def predict(self, X):
        """MCS index chosen for each measured SNR (dB), without exploration."""
        check_is_fitted(self)
        snr = as_1d_float(X)
        return np.array([self.actions_[self._greedy(s)].index for s in snr])

    @property
    def cardinality(self):
        return "-"

    @property
    def reward_label(self):
        return "-"


class QLAmcAgent(LinkAdapter):
    """Tabular Q-learning over CQI states and MCS actions."""

    label = "QL-AMC"

    def __init__(self, n_cqi=30, reward="se", learning_rate=0.9, discount=0.1,
                 epsilon_max=0.5, epsilon_min=0.05, epsilon_decay=None,
                 n_training_decisions=320_000, deployment_epsilon=0.05, target_bler=0.1,
                 bler_smoothing=0.1, snr_min_db=-5.0, snr_max_db=40.0, learn_online=True,
                 mcs_first=3, mcs_last=27, random_state=None):
        self.n_cqi = n_cqi
        self.reward = reward
        self.learning_rate = learning_rate
        self.discount = discount
        self.epsilon_max = epsilon_max
        self.epsilon_min = epsilon_min
        self.epsilon_decay = epsilon_decay
        self.n_training_decisions = n_training_decisions
        self.deployment_epsilon = deployment_epsilon
        self.target_bler = target_bler
        self.bler_smoothing = bler_smoothing
        self.snr_min_db = snr_min_db
        self.snr_max_db = snr_max_db
        self.learn_online = learn_online
        self.mcs_first = mcs_first
        self.mcs_last = mcs_last
        self.random_state = random_state

    @property
    def config(self):
        return QlConfig(self.learning_rate, self.discount, self.epsilon_max, self.epsilon_min,
                        self.epsilon_decay, self.n_training_decisions, self.deployment_epsilon,
                        self.reward, self.target_bler, self.bler_smoothing)

    @property
    def cqi_config(self):
        return CqiConfig(self.n_cqi, self.snr_min_db, self.snr_max_db)

    @property
    def cardinality(self):
        return str(self.n_cqi)

    @property
    def reward_label(self):
        return REWARDS[self.reward]

    def config_hash(self):
        key = {"n_cqi": self.n_cqi, "snr_min_db": float(self.snr_min_db),
               "snr_max_db": float(self.snr_max_db), "reward": self.reward,
               "actions": [a.index for a in self._actions()]}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    # -- state handling

    def _init_tables(self, q=None):
        self.config  # validates hyper-parameters
        self.cqi_config
        self.actions_ = self._actions()
        self.q_trained_ = q if q is not None else QTable.zeros(self.n_cqi, self.actions_)
        self._eff = [a.nominal_efficiency for a in self.actions_]

    def reset(self, rng=None, phase="deployment"):
        """Start a run from the trained table (a private working copy)."""
        super().reset(rng)
        check_is_fitted(self, "q_trained_")
        self.phase_ = phase
        self.q_ = self.q_trained_ if phase == "learning" else self.q_trained_.copy()
        self.bler_estimates_ = np.full(self.q_.values.shape, np.nan)
        self.decisions_ = 0
        self._pending = None
        cfg = self.config
        self._cfg = cfg
        self._decay = cfg.decay
        self._eps_now = epsilon_schedule(0, cfg, phase)

    def state_of(self, snr_db):
        return cqi_scalar(snr_db, self.n_cqi, self.snr_min_db, self.snr_max_db)

    @property
    def epsilon_(self):
        return self._eps_now

    def select(self, snr_db):
        s = cqi_scalar(snr_db, self.n_cqi, self.snr_min_db, self.snr_max_db)
        row = self.q_.values[s]
        if self.rng_.random() < self._eps_now:
            a = int(self.rng_.integers(len(self.actions_)))
        else:
            a = int(row.argmax())
        self._pending = (s, a)
        return self.actions_[a]

    def observe(self, acks, next_snr_db):
        if self._pending is None:
            return None
        s, a = self._pending
        self._pending = None
        est = self.bler_estimates_
        lam = self._cfg.bler_smoothing
        for ack in acks:
            nack = 0.0 if ack else 1.0
            prev = est[s, a]
            est[s, a] = nack if prev != prev else (1 - lam) * prev + lam * nack
        s_next = cqi_scalar(next_snr_db, self.n_cqi, self.snr_min_db, self.snr_max_db)
        fb = Feedback(bool(acks[-1]), float(est[s, a]), self.actions_[a], s_next)
        if self.phase_ == "learning" or self.learn_online:
            self.learn(s, a, fb)
        self.decisions_ += 1
        if self.phase_ == "learning":
            self._eps_now = max(self._cfg.epsilon_min,
                                self._cfg.epsilon_max * self._decay ** self.decisions_)
        return fb

    def reward_for(self, fb):
        if self.reward == "bler":
            return reward_bler(fb.bler_estimate, fb.mcs_used, self.target_bler)
        return reward_se(fb.bler_estimate, fb.mcs_used)

    def learn(self, s, a, fb):
        return q_update(self.q_, s, a, self.reward_for(fb), fb.next_state_cqi, self._cfg)

    def _greedy(self, snr_db):
        return int(self.q_trained_.values[self.state_of(snr_db)].argmax())

    # -- estimator API

    def fit(self, env, n_decisions=None):
        """Learning phase: run Q-learning against ``env`` starting from an all-zero table."""
        self._init_tables()
        self.reset(np.random.default_rng(self.random_state), phase="learning")
        limit = n_decisions if n_decisions is not None else self.n_training_decisions
        snr = env.reset()
        done = False
        while not done and self.decisions_ < limit:
            mcs = self.select(snr)
            acks, snr, done = env.step(mcs)
            self.observe(acks, snr)
        self.phase_ = "deployment"
        self._eps_now = self.config.deployment_epsilon
        return self

    def set_qtable(self, q):
        expected = (self.n_cqi, len(self._actions()))
        if q.values.shape != expected:
            raise ConfigError(f"Q-table shape {q.values.shape} does not match configured "
                              f"{expected} (n_cqi x n_actions)", "qtable")
        self._init_tables(q)
        return self

    def save_qtable(self, path):
        check_is_fitted(self, "q_trained_")
        self.q_trained_.save(path, self.config_hash())

    def load_qtable(self, path):
        q, file_hash = QTable.load(path, self._actions())
        self.set_qtable(q)
        self.loaded_hash_ = file_hash
        return self


# --------------------------------------------------------------------------- ILLA / OLLA

class LookupTableAgent(LinkAdapter):
    """Fixed SNR-threshold table derived from the BLER curves (ILLA)."""

    label = "Table"

    def __init__(self, target_bler=0.1, bler_slope=1.5, bler_gap_db=2.0, mcs_first=3,
                 mcs_last=27, random_state=None):
        self.target_bler = target_bler
        self.bler_slope = bler_slope
        self.bler_gap_db = bler_gap_db
        self.mcs_first = mcs_first
        self.mcs_last = mcs_last
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.actions_ = self._actions()
        self.table_ = build_illa_table(BlerModel(self.bler_slope, self.bler_gap_db),
                                       self.actions_, self.target_bler)
        return self

    def reset(self, rng=None):
        super().reset(rng)
        check_is_fitted(self, "table_")

    def _greedy(self, snr_db):
        return self.table_.select(snr_db)

    def select(self, snr_db):
        return self.actions_[self.table_.select(snr_db)]


@dataclass
class OllaState:
    delta_up_db: float
    target_bler: float = 0.1
    sign_convention: str = "standard"
    delta_olla_db: float = 0.0
    delta_down_db: float = field(init=False)

    def __post_init__(self):
        check_in_range(self.delta_up_db, "delta_up_db", low=0, low_inclusive=False)
        check_in_range(self.target_bler, "target_bler", 0, 1, False, False)
        check_choice(self.sign_convention, "sign_convention", SIGN_CONVENTIONS)
        self.delta_down_db = self.delta_up_db / (1 / self.target_bler - 1)


def olla_adjust_and_select(state, snr_db, illa_table):
    """ILLA selection applied to ``snr_db + delta_olla``; returns the MCS entry."""
    return illa_table.actions[illa_table.select(snr_db + state.delta_olla_db)]


def olla_update(state, ack):
    """Update the SNR offset from one ACK/NACK and return the new offset.

    ``standard`` lowers the offset by ``delta_up`` on a NACK and raises it by
    ``delta_down`` on an ACK; ``as_printed`` applies the opposite signs.
    """
    e_blk = 0 if ack else 1
    step = state.delta_up_db * e_blk - state.delta_down_db * (1 - e_blk)
    if state.sign_convention == "standard":
        step = -step
    state.delta_olla_db += step
    return state.delta_olla_db


class OllaAgent(LinkAdapter):
    """ILLA table whose input SNR is corrected by an ACK/NACK-driven offset."""

    label = "OLLA"

    def __init__(self, delta_up_db=0.1, target_bler=0.1, sign_convention="standard",
                 bler_slope=1.5, bler_gap_db=2.0, mcs_first=3, mcs_last=27, random_state=None):
        self.delta_up_db = delta_up_db
        self.target_bler = target_bler
        self.sign_convention = sign_convention
        self.bler_slope = bler_slope
        self.bler_gap_db = bler_gap_db
        self.mcs_first = mcs_first
        self.mcs_last = mcs_last
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.actions_ = self._actions()
        self.table_ = build_illa_table(BlerModel(self.bler_slope, self.bler_gap_db),
                                       self.actions_, self.target_bler)
        self.state_ = OllaState(self.delta_up_db, self.target_bler, self.sign_convention)
        return self

    def reset(self, rng=None):
        super().reset(rng)
        check_is_fitted(self, "table_")
        self.state_ = OllaState(self.delta_up_db, self.target_bler, self.sign_convention)

    def _greedy(self, snr_db):
        return self.table_.select(snr_db + self.state_.delta_olla_db)

    def select(self, snr_db):
        return self.actions_[self.table_.select(snr_db + self.state_.delta_olla_db)]

    def observe(self, acks, next_snr_db):
        for ack in acks:
            olla_update(self.state_, ack)
