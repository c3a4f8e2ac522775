"""Frame-level link simulator, learning/deployment phases and metric aggregation.

A frame lasts ``t_ss_ms``. Its first slot is the beam sweep; the remaining
``ttis_per_frame`` slots each carry one transport block. For every data TTI
the UE reports the SNR measured at the TTI's first symbol, and the block is
decoded at the capacity-averaged SNR over ``tb_symbols`` symbols spread
across the TTI.

Channel traces do not depend on the MCS policy, so a run's trace (SNRs and the
uniform draws that decide ACK/NACK) is generated once and replayed for every
agent: all agents in a run see common random numbers.
"""

from concurrent.futures import ProcessPoolExecutor
import copy
import csv
from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import ConfigError, check_choice, check_in_range, check_interval, check_positive_int
from .agents import QLAmcAgent
from .beams import beam_sweep, dbm_to_watt, dft_codebook
from .channel import (ChannelConfig, draw_scatterer_set, path_state, pathloss_uma_nlos,
                      steering_matrix, update_shadowing)
from .link import BlerModel, bler_scalar

MOBILITY_MODES = ("radial_out_and_back", "random_rectilinear")
TB_SNR_MODES = ("capacity_mean", "instantaneous")


@dataclass(frozen=True)
class FrameSchedule:
    t_ss_ms: float = 5.0
    ttis_per_frame: int = 10
    mcs_decision_period_ttis: int = 1
    sweep_slots: int = 1
    tb_symbols: int = 14

    def __post_init__(self):
        check_in_range(self.t_ss_ms, "t_ss_ms", low=0, low_inclusive=False)
        check_positive_int(self.ttis_per_frame, "ttis_per_frame")
        check_positive_int(self.mcs_decision_period_ttis, "mcs_decision_period_ttis")
        check_positive_int(self.sweep_slots, "sweep_slots")
        check_positive_int(self.tb_symbols, "tb_symbols")
        if self.ttis_per_frame % self.mcs_decision_period_ttis:
            raise ConfigError("decision period must divide ttis_per_frame",
                              "mcs_decision_period_ttis")

    def symbols_per_frame(self, symbol_period_s):
        return int(round(self.t_ss_ms * 1e-3 / symbol_period_s))

    def slot_symbols(self, symbol_period_s):
        n = self.symbols_per_frame(symbol_period_s) // (self.ttis_per_frame + self.sweep_slots)
        if n < 1:
            raise ConfigError("frame too short for the requested number of TTIs", "ttis_per_frame")
        return n


@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float = 43.0
    noise_power_dbm: float = -123.185
    bandwidth_mhz: float = 1440.0

    def symbol_power_w(self, subcarrier_spacing_khz):
        """Transmit power per subcarrier (total power spread evenly over the band)."""
        n_sc = self.bandwidth_mhz * 1e3 / subcarrier_spacing_khz
        return dbm_to_watt(self.tx_power_dbm) / n_sc

    @property
    def noise_w(self):
        return dbm_to_watt(self.noise_power_dbm)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to simulate the physical link (independent of the agent)."""

    channel: ChannelConfig = field(default_factory=ChannelConfig)
    schedule: FrameSchedule = field(default_factory=FrameSchedule)
    budget: LinkBudget = field(default_factory=LinkBudget)
    bler_model: BlerModel = field(default_factory=BlerModel)
    n_beams_tx: int = 16
    n_beams_rx: int = 1
    beam_grid: str = "sector"
    tb_snr_mode: str = "capacity_mean"

    def __post_init__(self):
        check_choice(self.tb_snr_mode, "tb_snr_mode", TB_SNR_MODES)


@dataclass(frozen=True)
class PhaseConfig:
    phase: str = "deployment"
    n_frames: int = 125
    n_runs: int = 200
    speed_kmh_range: tuple = (10.0, 20.0)
    start_distance_m_range: tuple = (25.0, 90.0)
    distance_bounds_m: tuple = (10.0, 150.0)
    mobility: str = "random_rectilinear"
    rng_seed: int = 1

    def __post_init__(self):
        check_choice(self.phase, "phase", ("learning", "deployment"))
        check_positive_int(self.n_frames, "n_frames")
        check_positive_int(self.n_runs, "n_runs")
        check_choice(self.mobility, "mobility", MOBILITY_MODES)
        for name in ("speed_kmh_range", "start_distance_m_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi or lo < 0:
                raise ConfigError(f"invalid range {getattr(self, name)!r}", name)
        lo, hi = check_interval(self.distance_bounds_m, "distance_bounds_m")
        if lo < 10.0:
            raise ConfigError("UE distance must stay at least 10 m from the BS",
                              "distance_bounds_m")
        if self.phase == "learning" and self.n_runs != 1:
            raise ConfigError("the learning phase uses a single run", "n_runs")

    @classmethod
    def learning(cls, n_frames=32_000, rng_seed=0):
        return cls("learning", n_frames, 1, (5.0, 5.0), (20.0, 20.0), (20.0, 100.0),
                   "radial_out_and_back", rng_seed)

    @classmethod
    def deployment(cls, n_frames=125, n_runs=200, rng_seed=1):
        return cls("deployment", n_frames, n_runs, rng_seed=rng_seed)


class MobilityTrack:
    """Straight-line UE motion that reverses direction at the distance bounds.

    ``radial_out_and_back`` starts moving straight away from the BS and bounces
    between the bounds; ``random_rectilinear`` uses an arbitrary heading.
    """

    def __init__(self, start_position, velocity_mps, mode="random_rectilinear",
                 distance_bounds_m=(10.0, 150.0)):
        self.position = np.asarray(start_position, dtype=float)
        self.velocity = np.asarray(velocity_mps, dtype=float)
        self.mode = check_choice(mode, "mobility", MOBILITY_MODES)
        self.min_distance, self.max_distance = distance_bounds_m

    @property
    def speed(self):
        return float(np.hypot(*self.velocity))

    def advance(self, dt):
        new = self.position + self.velocity * dt
        r = math.hypot(*new)
        if r > self.max_distance or r < self.min_distance:
            self.velocity = -self.velocity
            new = self.position + self.velocity * dt
        moved = float(np.hypot(*(new - self.position)))
        self.position = new
        return moved


@dataclass
class FrameChannel:
    frame_index: int
    tx_index: int
    rx_index: int
    sweep_snr_db: float
    report_snr_db: np.ndarray
    tb_snr_db: np.ndarray
    distance_m: float


def _snr_db(h, symbol_power, noise):
    p = np.abs(h) ** 2 * (symbol_power / noise)
    return 10 * np.log10(np.maximum(p, 1e-30))


class RunState:
    """Channel, mobility and beam state of one Monte Carlo run."""

    def __init__(self, scenario, phase, run_id=0):
        self.scenario = scenario
        self.run_id = run_id
        seq = np.random.SeedSequence(phase.rng_seed, spawn_key=(run_id,))
        chan_seq, ack_seq, self.agent_seq = seq.spawn(3)
        rng = np.random.default_rng(chan_seq)
        self.rng = rng
        self.ack_rng = np.random.default_rng(ack_seq)
        cfg = scenario.channel

        bearing = np.deg2rad(rng.uniform(*cfg.azimuth_range_deg))
        start = rng.uniform(*phase.start_distance_m_range)
        pos = start * np.array([math.cos(bearing), math.sin(bearing)])
        speed = rng.uniform(*phase.speed_kmh_range) / 3.6
        if phase.mobility == "radial_out_and_back":
            heading = bearing
        else:
            heading = rng.uniform(0, 2 * np.pi)
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        self.track = MobilityTrack(pos, vel, phase.mobility, phase.distance_bounds_m)

        self.scatterers = draw_scatterer_set(cfg, pos, rng)
        self.w_tx = dft_codebook(cfg.bs_array, scenario.n_beams_tx, scenario.beam_grid,
                                 cfg.azimuth_range_deg, cfg.elevation_range_deg)
        self.w_rx = dft_codebook(cfg.ue_array, scenario.n_beams_rx, scenario.beam_grid,
                                 cfg.azimuth_range_deg, cfg.elevation_range_deg)
        ts = cfg.symbol_period_s
        sched = scenario.schedule
        self.symbols_per_frame = sched.symbols_per_frame(ts)
        self.slot_symbols = sched.slot_symbols(ts)
        self.tti_s = self.slot_symbols * ts
        self.symbol_power = scenario.budget.symbol_power_w(cfg.subcarrier_spacing_khz)
        self.noise = scenario.budget.noise_w
        offs = np.floor(np.arange(sched.tb_symbols) * self.slot_symbols / sched.tb_symbols)
        self._tb_offsets = offs.astype(int)
        self._pending_move = 0.0

    def _refresh_large_scale(self):
        cfg = self.scenario.channel
        d = math.hypot(*self.track.position)
        pl = pathloss_uma_nlos(d, cfg.bs_height_m, cfg.ue_height_m, cfg.carrier_ghz)
        shadow = self.scatterers.shadowing_db
        if self._pending_move > 0:
            shadow = update_shadowing(shadow, self._pending_move, cfg.shadowing_std_db,
                                      cfg.shadowing_corr_distance_m, self.rng)
        self.scatterers = self.scatterers.with_large_scale(pl, shadow)
        self._pending_move = 0.0

    def frame(self, k):
        """Sweep beams at frame start, then evaluate every data TTI of frame ``k``."""
        sched = self.scenario.schedule
        cfg = self.scenario.channel
        ts = cfg.symbol_period_s
        self._refresh_large_scale()
        t0 = k * self.symbols_per_frame
        # sweep slot: channel frozen at its first symbol
        ps = path_state(self.scatterers, self.track.position, self.track.velocity, t0)
        pair = beam_sweep(ps.matrix(), self.w_tx, self.w_rx, self.noise, frame_index=k)
        sweep_snr = float(_snr_db(pair.effective_channel, self.symbol_power, self.noise))
        self._pending_move += self.track.advance(self.tti_s * sched.sweep_slots)

        f_vec = self.w_tx.columns[:, pair.tx_index]
        w_vec = self.w_rx.columns[:, pair.rx_index]
        tx_proj = (ps.a_tx.conj().T @ f_vec) * self.scatterers.gains  # fixed departure angles
        n = sched.ttis_per_frame
        positions = np.empty((n, 2))
        velocities = np.empty((n, 2))
        for i in range(n):
            positions[i] = self.track.position
            velocities[i] = self.track.velocity
            self._pending_move += self.track.advance(self.tti_s)
        # arrival angles and Doppler follow the UE, one snapshot per TTI
        sset = self.scatterers
        to_scat = sset.positions[None, :, :] - positions[:, None, :]
        dist = np.maximum(np.hypot(to_scat[..., 0], to_scat[..., 1]), 1e-9)
        doppler = np.einsum("nsk,nk->ns", to_scat, velocities) / (dist * cfg.wavelength_m)
        aoa = np.arctan2(to_scat[..., 1], to_scat[..., 0]).ravel()
        a_rx = steering_matrix(cfg.ue_array, aoa, np.full(aoa.size, np.pi / 2))
        rx_proj = (w_vec.conj() @ a_rx).reshape(n, sset.n_paths)
        coeff = ps.scale * rx_proj * tx_proj[None, :]
        starts = t0 + (sched.sweep_slots + np.arange(n)) * self.slot_symbols
        times = starts[:, None] + np.concatenate(([0], self._tb_offsets))[None, :]
        phase = np.exp(2j * np.pi * ts * times[:, :, None] * doppler[:, None, :])
        h = np.einsum("nts,ns->nt", phase, coeff)
        snr = _snr_db(h, self.symbol_power, self.noise)
        report = snr[:, 0]
        if self.scenario.tb_snr_mode == "instantaneous":
            tb = report.copy()
        else:
            lin = 10 ** (snr[:, 1:] / 10)
            tb = 10 * np.log10(np.maximum(2 ** np.mean(np.log2(1 + lin), axis=1) - 1, 1e-30))
        # symbols left over after the last slot (600 - 11 * 54 by default)
        spare = self.symbols_per_frame - (n + sched.sweep_slots) * self.slot_symbols
        if spare:
            self._pending_move += self.track.advance(spare * ts)
        return FrameChannel(k, pair.tx_index, pair.rx_index, sweep_snr, report, tb,
                            math.hypot(*self.track.position))


@dataclass
class LinkTrace:
    """Agent-independent per-TTI channel trace of one run."""

    report_snr_db: np.ndarray
    tb_snr_db: np.ndarray
    uniforms: np.ndarray
    frame_of_tti: np.ndarray
    sweep_snr_db: np.ndarray
    distance_m: np.ndarray
    beam_tx: np.ndarray

    @property
    def n_tti(self):
        return len(self.report_snr_db)


def generate_trace(scenario, phase, run_id=0, n_frames=None):
    state = RunState(scenario, phase, run_id)
    n_frames = phase.n_frames if n_frames is None else n_frames
    frames = [state.frame(k) for k in range(n_frames)]
    n = scenario.schedule.ttis_per_frame
    trace = LinkTrace(
        np.concatenate([f.report_snr_db for f in frames]),
        np.concatenate([f.tb_snr_db for f in frames]),
        state.ack_rng.random(n_frames * n),
        np.repeat(np.arange(n_frames), n),
        np.array([f.sweep_snr_db for f in frames]),
        np.array([f.distance_m for f in frames]),
        np.array([f.tx_index for f in frames]),
    )
    return trace, state


class TraceEnvironment:
    """Replays a :class:`LinkTrace` for one agent, one decision period per step."""

    def __init__(self, trace, bler_model, decision_period=1, record=True):
        self.trace = trace
        self.model = bler_model
        self.period = decision_period
        self.record = record
        self._report = trace.report_snr_db.tolist()
        self._tb = trace.tb_snr_db.tolist()
        self._u = trace.uniforms.tolist()
        self._snr50 = {}

    def reset(self):
        self.n = 0
        self.nacks = 0
        self.efficiency_sum = 0.0
        self.mcs_log = []
        self.ack_log = []
        return self._report[0]

    def step(self, mcs):
        snr50 = self._snr50.get(mcs.index)
        if snr50 is None:
            snr50 = self._snr50[mcs.index] = self.model.snr50_db(mcs)
        slope = self.model.slope_per_db
        acks = []
        end = min(self.n + self.period, len(self._report))
        for i in range(self.n, end):
            ack = self._u[i] >= bler_scalar(self._tb[i], snr50, slope)
            acks.append(ack)
            if ack:
                self.efficiency_sum += mcs.nominal_efficiency
            else:
                self.nacks += 1
            if self.record:
                self.mcs_log.append(mcs.index)
                self.ack_log.append(ack)
        self.n = end
        done = end >= len(self._report)
        return acks, self._report[end] if not done else self._report[-1], done


@dataclass
class RunMetrics:
    mean_bler: float
    mean_spectral_efficiency: float
    nack_count: int
    tti_count: int
    frames: np.ndarray = None
    snr_db: np.ndarray = None
    cqi: np.ndarray = None
    mcs_index: np.ndarray = None
    ack: np.ndarray = None

    @property
    def per_frame_trace(self):
        if self.frames is None:
            return []
        return list(zip(self.frames.tolist(), self.snr_db.tolist(), self.cqi.tolist(),
                        self.mcs_index.tolist(), self.ack.tolist()))


def _agent_cqi(agent, snr_db):
    if isinstance(agent, QLAmcAgent):
        return [agent.state_of(s) for s in snr_db]
    return agent.table_.select_many(snr_db).tolist()


def play(agent, trace, scenario, rng, keep_trace=False, phase="deployment"):
    """Run one agent over a trace (agent state reset first) and return its metrics."""
    env = TraceEnvironment(trace, scenario.bler_model,
                           scenario.schedule.mcs_decision_period_ttis, record=keep_trace)
    if isinstance(agent, QLAmcAgent):
        agent.reset(rng, phase=phase)
    else:
        agent.reset(rng)
    snr = env.reset()
    done = False
    while not done:
        mcs = agent.select(snr)
        acks, snr, done = env.step(mcs)
        agent.observe(acks, snr)
    return _metrics(env, agent, trace, keep_trace)


def _metrics(env, agent, trace, keep_trace):
    n = env.n
    m = RunMetrics(env.nacks / n, env.efficiency_sum / n, env.nacks, n)
    if keep_trace:
        m.frames = trace.frame_of_tti[:n].copy()
        m.snr_db = trace.report_snr_db[:n].copy()
        m.cqi = np.asarray(_agent_cqi(agent, m.snr_db))
        m.mcs_index = np.asarray(env.mcs_log)
        m.ack = np.asarray(env.ack_log, dtype=bool)
    return m


def run_frame(k, run_state, agent, rng=None):
    """Simulate frame ``k`` of ``run_state`` with ``agent`` (already reset).

    Returns the frame's channel record and a list of
    ``(frame, snr_db, cqi, mcs_index, ack)`` tuples, one per data TTI.
    """
    scenario = run_state.scenario
    fc = run_state.frame(k)
    u = (rng or run_state.ack_rng).random(len(fc.report_snr_db))
    model = scenario.bler_model
    period = scenario.schedule.mcs_decision_period_ttis
    out = []
    n = len(fc.report_snr_db)
    for start in range(0, n, period):
        mcs = agent.select(fc.report_snr_db[start])
        cqi = agent.state_of(fc.report_snr_db[start]) if isinstance(agent, QLAmcAgent) \
            else agent.table_.select(fc.report_snr_db[start])
        acks = []
        for i in range(start, start + period):
            ack = bool(u[i] >= bler_scalar(fc.tb_snr_db[i], model.snr50_db(mcs),
                                           model.slope_per_db))
            acks.append(ack)
            out.append((k, float(fc.report_snr_db[i]), cqi, mcs.index, ack))
        nxt = start + period
        agent.observe(acks, fc.report_snr_db[nxt] if nxt < n else fc.report_snr_db[-1])
    return fc, out


# --------------------------------------------------------------------------- phases

@dataclass
class LearningResult:
    agent: QLAmcAgent
    metrics: RunMetrics
    trace: LinkTrace
    final_epsilon: float
    simulated_time_s: float


def run_learning_phase(scenario, phase, agents, trace=None, keep_trace=True):
    """Train each QL-AMC agent on the same single-run channel trace.

    ``agents`` may be one agent or a list. The trace is generated once.
    """
    single = isinstance(agents, QLAmcAgent)
    agents = [agents] if single else list(agents)
    for a in agents:
        if not isinstance(a, QLAmcAgent):
            raise ConfigError("the learning phase requires QL-AMC agents", "agent")
    if trace is None:
        trace, _ = generate_trace(scenario, phase, 0)
    results = []
    for a in agents:
        a.set_params(n_training_decisions=max(
            trace.n_tti // scenario.schedule.mcs_decision_period_ttis, 1))
        env = TraceEnvironment(trace, scenario.bler_model,
                               scenario.schedule.mcs_decision_period_ttis, record=keep_trace)
        a.fit(env)
        eps = max(a.config.epsilon_min, a.config.epsilon_max * a.config.decay ** a.decisions_)
        metrics = _metrics(env, a, trace, keep_trace)
        results.append(LearningResult(a, metrics, trace, eps,
                                      phase.n_frames * scenario.schedule.t_ss_ms * 1e-3))
    return results[0] if single else results


@dataclass
class DeploymentRun:
    run_id: int
    metrics: list
    trace: LinkTrace = None


def _deploy_one(args):
    scenario, phase, agents, run_id, keep_trace = args
    trace, state = generate_trace(scenario, phase, run_id)
    seqs = state.agent_seq.spawn(len(agents))
    out = []
    for agent, seq in zip(agents, seqs):
        out.append(play(agent, trace, scenario, np.random.default_rng(seq), keep_trace))
    return DeploymentRun(run_id, out, trace if keep_trace else None)


def run_deployment_phase(scenario, phase, agents, parallel=1, keep_trace=False):
    """Evaluate every agent on ``phase.n_runs`` paired runs (common random numbers).

    Returns a list of :class:`DeploymentRun`, ordered by run id, each holding
    one :class:`RunMetrics` per agent in ``agents`` order.
    """
    if not agents:
        raise ConfigError("no agents to evaluate", "agents")
    for a in agents:
        if isinstance(a, QLAmcAgent) and not hasattr(a, "q_trained_"):
            raise ConfigError("QL-AMC agent has no trained Q-table", "qtable")
    jobs = [(scenario, phase, [copy.deepcopy(a) for a in agents], r, keep_trace)
            for r in range(phase.n_runs)]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_deploy_one, jobs, chunksize=max(1, len(jobs) // (4 * parallel))))
    return [_deploy_one(j) for j in jobs]


# --------------------------------------------------------------------------- aggregation

def aggregate_cdf(per_run_values):
    """Empirical CDF as ``[(value, probability), ...]`` with one step per sample."""
    values = sorted(float(v) for v in per_run_values)
    if not values:
        raise ValueError("cannot build a CDF from an empty sample")
    n = len(values)
    return [(v, (i + 1) / n) for i, v in enumerate(values)]


def cdf_at(cdf, x):
    """Evaluate a step CDF from :func:`aggregate_cdf` at ``x``."""
    p = 0.0
    for v, prob in cdf:
        if v <= x:
            p = prob
        else:
            break
    return p


RUNS_CSV_COLUMNS = ("run_id", "agent", "mean_bler", "mean_se")
TRACE_CSV_COLUMNS = ("run_id", "agent", "frame", "snr_db", "cqi", "mcs_index", "ack")
CDF_CSV_COLUMNS = ("agent", "value", "probability")
SUMMARY_CSV_COLUMNS = ("agent", "type", "cardinality", "reward", "bler", "se")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_runs_csv(path, runs, names):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(RUNS_CSV_COLUMNS)
        for run in runs:
            for name, m in zip(names, run.metrics):
                w.writerow([run.run_id, name, repr(m.mean_bler), repr(m.mean_spectral_efficiency)])


def write_trace_csv(path, rows_by_run):
    """``rows_by_run``: iterable of ``(run_id, agent_name, RunMetrics)``."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TRACE_CSV_COLUMNS)
        for run_id, name, m in rows_by_run:
            for frame, snr, cqi, mcs, ack in m.per_frame_trace:
                w.writerow([run_id, name, frame, repr(snr), cqi, mcs, int(ack)])


def write_cdf_csv(path, cdfs):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(CDF_CSV_COLUMNS)
        for name, cdf in cdfs.items():
            for v, p in cdf:
                w.writerow([name, repr(v), repr(p)])


def read_runs_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["run_id"]), r["agent"], float(r["mean_bler"]), float(r["mean_se"]))
            for r in rows]
