"""Run configuration: an INI file whose defaults reproduce the reference protocol.

Every key is optional; unknown sections or keys are rejected so that typos do
not silently fall back to defaults.
"""

import configparser
from dataclasses import dataclass, field
import re

from ._validation import ConfigError, check_choice, check_in_range, check_positive_int
from .agents import REWARDS, SIGN_CONVENTIONS, LookupTableAgent, OllaAgent, QLAmcAgent
from .beams import MAX_BEAMS
from .channel import ArrayGeometry, ChannelConfig
from .link import BlerModel, CqiConfig, mcs_action_set
from .sim import FrameSchedule, LinkBudget, PhaseConfig, Scenario

DEFAULT_CONFIG = """\
[channel]
n_paths = 10
azimuth_range_deg = -60, 60
elevation_range_deg = 60, 120
scatterer_distance_range_m = 20, 150
bs_height_m = 15
ue_height_m = 1.5
carrier_ghz = 28
subcarrier_spacing_khz = 120
element_spacing_wavelengths = 0.5
bs_antennas = 8, 8
ue_antennas = 1, 1
array_gain = true
shadowing_std_db = 6
shadowing_corr_distance_m = 10
tx_power_dbm = 43
noise_power_dbm = -123.185
bandwidth_mhz = 1440

[beam]
n_beams_tx = 16
n_beams_rx = 1
t_ss_ms = 5
grid = sector

[frame]
ttis_per_frame = 10
mcs_decision_period_ttis = 1
tb_symbols = 14
tb_snr_mode = capacity_mean

[link]
n_cqi = 30
snr_min_db = -5
snr_max_db = 40
bler_slope = 1.5
bler_gap_db = 2
target_bler = 0.1
mcs_first = 3
mcs_last = 27
curve_snr_min_db = -10
curve_snr_max_db = 50
curve_step_db = 0.1

[agent]
kind = qlamc
reward = se
learning_rate = 0.9
discount = 0.1
epsilon_max = 0.5
epsilon_min = 0.05
epsilon_decay = auto
deployment_epsilon = 0.05
bler_smoothing = 0.1
learn_online = true
olla_delta_up_db = 0.01, 0.1, 1
olla_sign_convention = standard
deploy = qlamc, table, olla
qlamc_variants = 10:bler, 15:bler, 30:bler, 60:bler, 10:se, 15:se, 30:se, 60:se

[learning]
n_frames = 32000
speed_kmh = 5
start_distance_m = 20
max_distance_m = 100
seed = 0

[deployment]
n_frames = 125
n_runs = 200
speed_kmh_range = 10, 20
start_distance_m_range = 25, 90
distance_bounds_m = 10, 150
seed = 1

[output]
directory = out
trace = false
"""

AGENT_KINDS = ("qlamc", "table", "olla")


def _defaults():
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(DEFAULT_CONFIG)
    return cp


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    cqi: CqiConfig
    mcs_range: tuple
    target_bler: float
    curve_grid_db: tuple
    agent_kind: str
    reward: str
    ql_params: dict
    olla_delta_up_db: tuple
    olla_sign_convention: str
    deploy_agents: tuple
    qlamc_variants: tuple
    learning: PhaseConfig
    deployment: PhaseConfig
    output_directory: str = "out"
    trace: bool = False
    source: dict = field(default_factory=dict, compare=False)

    def make_qlamc(self, n_cqi=None, reward=None, random_state=None):
        return QLAmcAgent(n_cqi=n_cqi or self.cqi.n_cqi, reward=reward or self.reward,
                          snr_min_db=self.cqi.snr_min_db, snr_max_db=self.cqi.snr_max_db,
                          target_bler=self.target_bler, mcs_first=self.mcs_range[0],
                          mcs_last=self.mcs_range[1], random_state=random_state,
                          **self.ql_params)

    def make_table(self):
        m = self.scenario.bler_model
        return LookupTableAgent(self.target_bler, m.slope_per_db, m.implementation_gap_db,
                                *self.mcs_range).fit()

    def make_olla(self, delta_up_db):
        m = self.scenario.bler_model
        return OllaAgent(delta_up_db, self.target_bler, self.olla_sign_convention,
                         m.slope_per_db, m.implementation_gap_db, *self.mcs_range).fit()

    def with_seed(self, seed):
        from dataclasses import replace
        return replace(self, learning=replace(self.learning, rng_seed=seed),
                       deployment=replace(self.deployment, rng_seed=seed))


class _Reader:
    """Typed accessors over a merged ConfigParser that report ``section.key`` on errors."""

    def __init__(self, cp, lines):
        self.cp = cp
        self.lines = lines

    def _fail(self, section, key, msg):
        where = f"{section}.{key}"
        line = self.lines.get((section, key))
        raise ConfigError(msg + (f" (line {line})" if line else ""), where)

    def raw(self, section, key):
        return self.cp.get(section, key).strip()

    def float(self, section, key):
        try:
            return float(self.raw(section, key))
        except ValueError:
            self._fail(section, key, f"expected a number, got {self.raw(section, key)!r}")

    def int(self, section, key):
        try:
            return int(self.raw(section, key))
        except ValueError:
            self._fail(section, key, f"expected an integer, got {self.raw(section, key)!r}")

    def bool(self, section, key):
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            self._fail(section, key, f"expected true/false, got {self.raw(section, key)!r}")

    def list(self, section, key):
        return [v.strip() for v in self.raw(section, key).split(",") if v.strip()]

    def floats(self, section, key, n=None):
        try:
            vals = [float(v) for v in self.list(section, key)]
        except ValueError:
            self._fail(section, key, f"expected numbers, got {self.raw(section, key)!r}")
        if n is not None and len(vals) != n:
            self._fail(section, key, f"expected {n} comma-separated values")
        return tuple(vals)

    def guard(self, section, key, fn):
        """Run a validator, re-raising its error against ``section.key``."""
        try:
            return fn()
        except ConfigError as exc:
            msg = str(exc).split(": ", 1)[-1] if exc.field else str(exc)
            self._fail(section, key, msg)


def _line_numbers(text):
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([A-Za-z0-9_]+)\s*[=:]", line)
        if m and section:
            out[(section, m.group(1).lower())] = no
    return out


def parse_config(text=""):
    """Parse INI ``text`` layered over the built-in defaults."""
    cp = _defaults()
    user = configparser.ConfigParser(interpolation=None)
    try:
        user.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = _line_numbers(text)
    for section in user.sections():
        if not cp.has_section(section):
            raise ConfigError(f"unknown section (line {lines.get((section, None), '?')})",
                              section)
        for key, value in user.items(section):
            if not cp.has_option(section, key):
                line = lines.get((section, key))
                raise ConfigError("unknown key" + (f" (line {line})" if line else ""),
                                  f"{section}.{key}")
            cp.set(section, key, value)
    return _build(_Reader(cp, lines))


def load_config(path=None):
    if path is None:
        return parse_config("")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}", str(path)) from None
    return parse_config(text)


def _array(r, key):
    az, el = r.floats("channel", key, 2)
    if az != int(az) or el != int(el):
        r._fail("channel", key, "antenna counts must be integers")
    spacing = r.float("channel", "element_spacing_wavelengths")
    return r.guard("channel", key, lambda: ArrayGeometry(int(az), int(el), spacing))


def _build(r):
    ch = lambda k: r.float("channel", k)  # noqa: E731
    bs, ue = _array(r, "bs_antennas"), _array(r, "ue_antennas")
    channel = r.guard("channel", "n_paths", lambda: ChannelConfig(
        n_paths=r.int("channel", "n_paths"),
        azimuth_range_deg=r.floats("channel", "azimuth_range_deg", 2),
        elevation_range_deg=r.floats("channel", "elevation_range_deg", 2),
        scatterer_distance_range_m=r.floats("channel", "scatterer_distance_range_m", 2),
        bs_height_m=ch("bs_height_m"), ue_height_m=ch("ue_height_m"),
        carrier_ghz=ch("carrier_ghz"), subcarrier_spacing_khz=ch("subcarrier_spacing_khz"),
        shadowing_std_db=ch("shadowing_std_db"),
        shadowing_corr_distance_m=ch("shadowing_corr_distance_m"),
        bs_array=bs, ue_array=ue, array_gain=r.bool("channel", "array_gain")))
    budget = LinkBudget(ch("tx_power_dbm"), ch("noise_power_dbm"),
                        r.guard("channel", "bandwidth_mhz", lambda: check_in_range(
                            ch("bandwidth_mhz"), "bandwidth_mhz", low=0, low_inclusive=False)))

    n_tx, n_rx = r.int("beam", "n_beams_tx"), r.int("beam", "n_beams_rx")
    for key, n in (("n_beams_tx", n_tx), ("n_beams_rx", n_rx)):
        r.guard("beam", key, lambda n=n: check_positive_int(n, key))
        if n > MAX_BEAMS:
            r._fail("beam", key, f"at most {MAX_BEAMS} beams supported")
    grid = r.guard("beam", "grid", lambda: check_choice(r.raw("beam", "grid"), "grid",
                                                         ("sector", "dft")))
    schedule = r.guard("frame", "ttis_per_frame", lambda: FrameSchedule(
        t_ss_ms=r.float("beam", "t_ss_ms"), ttis_per_frame=r.int("frame", "ttis_per_frame"),
        mcs_decision_period_ttis=r.int("frame", "mcs_decision_period_ttis"),
        tb_symbols=r.int("frame", "tb_symbols")))
    schedule.slot_symbols(channel.symbol_period_s)

    model = r.guard("link", "bler_slope", lambda: BlerModel(r.float("link", "bler_slope"),
                                                              r.float("link", "bler_gap_db")))
    scenario = r.guard("frame", "tb_snr_mode", lambda: Scenario(
        channel, schedule, budget, model, n_tx, n_rx, grid, r.raw("frame", "tb_snr_mode")))

    cqi = r.guard("link", "n_cqi", lambda: CqiConfig(r.int("link", "n_cqi"),
                                                     r.float("link", "snr_min_db"),
                                                     r.float("link", "snr_max_db")))
    target = r.guard("link", "target_bler", lambda: check_in_range(
        r.float("link", "target_bler"), "target_bler", 0, 1, False, False))
    mcs_range = (r.int("link", "mcs_first"), r.int("link", "mcs_last"))
    r.guard("link", "mcs_first", lambda: mcs_action_set(*mcs_range))
    grid_db = (r.float("link", "curve_snr_min_db"), r.float("link", "curve_snr_max_db"),
               r.float("link", "curve_step_db"))
    if not grid_db[0] < grid_db[1] or grid_db[2] <= 0:
        r._fail("link", "curve_step_db", "curve grid needs min < max and a positive step")

    kind = r.guard("agent", "kind", lambda: check_choice(r.raw("agent", "kind"), "kind",
                                                         AGENT_KINDS))
    reward = r.guard("agent", "reward", lambda: check_choice(r.raw("agent", "reward"),
                                                             "reward", REWARDS))
    decay_raw = r.raw("agent", "epsilon_decay")
    ql_params = {
        "learning_rate": r.float("agent", "learning_rate"),
        "discount": r.float("agent", "discount"),
        "epsilon_max": r.float("agent", "epsilon_max"),
        "epsilon_min": r.float("agent", "epsilon_min"),
        "epsilon_decay": None if decay_raw.lower() in ("", "auto") else
        r.float("agent", "epsilon_decay"),
        "deployment_epsilon": r.float("agent", "deployment_epsilon"),
        "bler_smoothing": r.float("agent", "bler_smoothing"),
        "learn_online": r.bool("agent", "learn_online"),
    }
    for key, value in ql_params.items():
        if key in ("learn_online",) or value is None:
            continue
        r.guard("agent", key, lambda key=key, value=value: check_in_range(
            value, key, 0, 1, low_inclusive=key != "epsilon_decay"))
    if ql_params["epsilon_max"] < ql_params["epsilon_min"]:
        r._fail("agent", "epsilon_max", "must not be below epsilon_min")

    deltas = r.floats("agent", "olla_delta_up_db")
    for d in deltas:
        r.guard("agent", "olla_delta_up_db", lambda d=d: check_in_range(
            d, "olla_delta_up_db", low=0, low_inclusive=False))
    convention = r.guard("agent", "olla_sign_convention", lambda: check_choice(
        r.raw("agent", "olla_sign_convention"), "olla_sign_convention", SIGN_CONVENTIONS))
    deploy = tuple(r.list("agent", "deploy"))
    for k in deploy:
        r.guard("agent", "deploy", lambda k=k: check_choice(k, "deploy", AGENT_KINDS))
    variants = []
    for item in r.list("agent", "qlamc_variants"):
        try:
            n, rw = item.split(":")
            n = int(n)
        except ValueError:
            r._fail("agent", "qlamc_variants", f"expected <n_cqi>:<reward>, got {item!r}")
        r.guard("agent", "qlamc_variants", lambda: (CqiConfig(n),
                                                    check_choice(rw, "reward", REWARDS)))
        variants.append((n, rw))

    learning = r.guard("learning", "n_frames", lambda: PhaseConfig(
        "learning", r.int("learning", "n_frames"), 1,
        (r.float("learning", "speed_kmh"),) * 2,
        (r.float("learning", "start_distance_m"),) * 2,
        (r.float("learning", "start_distance_m"), r.float("learning", "max_distance_m")),
        "radial_out_and_back", r.int("learning", "seed")))
    deployment = r.guard("deployment", "n_runs", lambda: PhaseConfig(
        "deployment", r.int("deployment", "n_frames"), r.int("deployment", "n_runs"),
        r.floats("deployment", "speed_kmh_range", 2),
        r.floats("deployment", "start_distance_m_range", 2),
        r.floats("deployment", "distance_bounds_m", 2),
        "random_rectilinear", r.int("deployment", "seed")))

    source = {s: dict(r.cp.items(s)) for s in r.cp.sections()}
    return RunConfig(scenario, cqi, mcs_range, target, grid_db, kind, reward, ql_params,
                     deltas, convention, deploy, tuple(variants), learning, deployment,
                     r.raw("output", "directory"), r.bool("output", "trace"), source)
