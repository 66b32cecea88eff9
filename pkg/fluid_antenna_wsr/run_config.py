import configparser
import logging
import math
import os

import attr

from fluid_antenna_wsr.channel import SystemDims, dbm_to_watts, wavelength_for
from fluid_antenna_wsr.errors import InvalidArgument

logging.basicConfig(level=logging.INFO)
log = logging.getLogger("faw")

BISECTION, INVERSE_FREE = "bisection", "inverse_free"
BEAMFORMERS = (BISECTION, INVERSE_FREE)


def _positive(instance, attribute, value):
    if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
        raise InvalidArgument(f"{attribute.name} must be positive: {value!r}")


def _non_negative(instance, attribute, value):
    if not (isinstance(value, (int, float)) and value >= 0 and math.isfinite(value)):
        raise InvalidArgument(f"{attribute.name} must be non-negative: {value!r}")


def _count(instance, attribute, value):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise InvalidArgument(f"{attribute.name} must be an integer >= 1: {value!r}")


def _steps(instance, attribute, value):
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise InvalidArgument(f"{attribute.name} must be an integer >= 0: {value!r}")


def _finite(instance, attribute, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value)):
        raise InvalidArgument(f"{attribute.name} must be finite: {value!r}")


def _one_of(*choices):
    def check(instance, attribute, value):
        if value not in choices:
            raise InvalidArgument(
                f"{attribute.name} must be one of {', '.join(choices)}: {value!r}"
            )

    return check


@attr.s(slots=True, frozen=True)
class SolverConfig:
    max_outer = attr.ib(default=80, validator=_count)
    tol_outer = attr.ib(default=1e-4, validator=_positive)
    tol_inner = attr.ib(default=1e-5, validator=_positive)
    max_inner = attr.ib(default=50, validator=_count)
    bisection_tol = attr.ib(default=1e-10, validator=_positive)
    bisection_max_iter = attr.ib(default=100, validator=_count)
    bisection_max_doublings = attr.ib(default=200, validator=_count)
    optimize_tx = attr.ib(default=True)
    optimize_rx = attr.ib(default=True)
    beamformer = attr.ib(default=BISECTION, validator=_one_of(*BEAMFORMERS))
    delta_tx_rule = attr.ib(default="exact", validator=_one_of("exact", "separable"))
    momentum_restart = attr.ib(default=True)
    dec_mm_steps = attr.ib(default=0, validator=_steps)
    seed = attr.ib(default=0, validator=_non_negative)
    check_invariants = attr.ib(default=True)

    def evolve(self, **changes) -> "SolverConfig":
        return attr.evolve(self, **changes)

    def mm_budget(self):
        """(step cap, stopping tolerance) for the decentralized position MM.

        ``dec_mm_steps`` of 0 runs to ``tol_inner`` within ``max_inner`` steps; a
        positive value forces exactly that many steps.
        """
        if self.dec_mm_steps:
            return self.dec_mm_steps, None
        return self.max_inner, self.tol_inner


@attr.s(slots=True, frozen=True)
class ScenarioSpec:
    """Monte Carlo scenario parameters; defaults follow the 28 GHz desk setup."""

    M = attr.ib(default=16, validator=_count)
    N = attr.ib(default=4, validator=_count)
    K = attr.ib(default=6, validator=_count)
    d = attr.ib(default=4, validator=_count)
    C = attr.ib(default=4, validator=_count)
    carrier_hz = attr.ib(default=28e9, validator=_positive)
    min_sep_wavelengths = attr.ib(default=0.5, validator=_positive)
    noise_dbm = attr.ib(default=-90.0, validator=_finite)
    power_dbm = attr.ib(default=30.0, validator=_finite)
    d_min = attr.ib(default=100.0, validator=_positive)
    d_max = attr.ib(default=300.0, validator=_positive)
    pathloss_exp = attr.ib(default=3.67, validator=_positive)
    ref_loss_db = attr.ib(default=-61.4, validator=_finite)
    ref_distance = attr.ib(default=1.0, validator=_positive)
    paths = attr.ib(default=3, validator=_count)
    rho = attr.ib(default=2.0, validator=_positive)
    realizations = attr.ib(default=50, validator=_count)
    seed = attr.ib(default=0, validator=_non_negative)

    def __attrs_post_init__(self):
        if self.d_max < self.d_min:
            raise InvalidArgument(f"d_max={self.d_max!r} < d_min={self.d_min!r}")
        if self.d_min < self.ref_distance:
            raise InvalidArgument("d_min is below the pathloss reference distance")
        # validates d <= min(M, N) and the cluster split
        self.dims

    @property
    def dims(self) -> SystemDims:
        return SystemDims(M=self.M, N=self.N, K=self.K, d=self.d, C=self.C)

    @property
    def wavelength(self) -> float:
        return wavelength_for(self.carrier_hz)

    @property
    def min_sep(self) -> float:
        return self.min_sep_wavelengths * self.wavelength

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def power_w(self) -> float:
        return dbm_to_watts(self.power_dbm)

    def evolve(self, **changes) -> "ScenarioSpec":
        return attr.evolve(self, **changes)


def _coerce(field: attr.Attribute, raw):
    """Convert an ini string to the type of the field's default."""
    if not isinstance(raw, str):
        return raw
    default = field.default
    try:
        if isinstance(default, bool):
            if raw.lower() not in configparser.RawConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.RawConfigParser.BOOLEAN_STATES[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise InvalidArgument(f"{field.name}: cannot parse {raw!r}") from exc
    return raw


def build_from_section(cls, cp: configparser.RawConfigParser, section: str):
    if not cp.has_section(section):
        return cls()
    fields = {field.name: field for field in attr.fields(cls)}
    values = {}
    for key, raw in cp.items(section):
        if key not in fields:
            log.warning("ignoring unknown key %r in [%s]", key, section)
            continue
        values[key] = _coerce(fields[key], raw)
    return cls(**values)


class RunConfig:
    """
    Layered run configuration.
    System ini, then user ini, then ./faw.ini, then command line overrides.
    """

    global_conf_path = "/etc/faw/faw.ini"
    user_conf_path = os.path.expanduser("~/.config/faw/faw.ini")
    __slots__ = ("solver", "scenario", "output_dir")

    def __init__(self, solver=None, scenario=None, output_dir=None):
        self.solver = solver or SolverConfig()
        self.scenario = scenario or ScenarioSpec()
        self.output_dir = output_dir or os.environ.get("FAW_OUTPUT_DIR") or "./faw-out"

    def __repr__(self):
        props = ",".join(f"{slot}={getattr(self, slot)!r}" for slot in self.__slots__)
        return f"{self.__class__.__name__}({props})"

    @staticmethod
    def load_from_files(solver_overrides=None, scenario_overrides=None, output_dir=None):
        """loads config files in order, then applies cli overrides"""
        cp = configparser.RawConfigParser()
        # dimension keys M, N, K, C are case sensitive
        cp.optionxform = str
        read_files = cp.read(
            [RunConfig.global_conf_path, RunConfig.user_conf_path, "./faw.ini"]
        )
        # cli overrides
        overrides = {}
        if solver_overrides:
            overrides["solver"] = {k: str(v) for k, v in solver_overrides.items()}
        if scenario_overrides:
            overrides["scenario"] = {k: str(v) for k, v in scenario_overrides.items()}
        cp.read_dict(overrides)
        log.debug("loaded config: %r", read_files)
        loaded_config = RunConfig(
            solver=build_from_section(SolverConfig, cp, "solver"),
            scenario=build_from_section(ScenarioSpec, cp, "scenario"),
            output_dir=output_dir,
        )
        log.debug("loaded config=%r", loaded_config)
        return loaded_config
