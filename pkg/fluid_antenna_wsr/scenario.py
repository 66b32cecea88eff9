"""Scenario files: one channel realization plus the array and budget settings.

Schema::

    {
      "dims": {"M": 16, "N": 4, "K": 6, "d": 4, "C": 4},
      "wavelength_m": 0.0107,
      "users": [{"aod": [[theta, phi], ...], "aoa": [[theta, phi], ...],
                 "prm_real": [[...]], "prm_imag": [[...]], "distance_m": 150.0}],
      "box": {"rho": 2.0, "D": 0.00535},
      "noise_dbm": -90.0,            # or one value per user
      "power_dbm": 30.0,
      "weights": [1.0, ...],
      "seed": 0
    }

Floats are written with ``repr`` precision so a load/dump cycle is lossless.
"""
import json
import logging
from typing import Sequence

import attr
import numpy as np

from fluid_antenna_wsr.channel import (
    AntennaLayout,
    PathGeometry,
    SystemDims,
    assemble_channels,
    dbm_to_watts,
)
from fluid_antenna_wsr.errors import InvalidArgument
from fluid_antenna_wsr.objective import BeamformerSet

log = logging.getLogger("faw")


def _per_user(value) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _default_layout(scenario) -> AntennaLayout:
    return AntennaLayout.box_mode(
        scenario.dims, scenario.wavelength, scenario.rho, scenario.min_sep
    )


@attr.s(slots=True, frozen=True, eq=False)
class Scenario:
    dims: SystemDims = attr.ib()
    geometries = attr.ib(converter=tuple)
    distances = attr.ib(converter=_per_user)
    rho = attr.ib(converter=float)
    min_sep = attr.ib(converter=float)
    noise_dbm = attr.ib(converter=_per_user)
    power_dbm = attr.ib(converter=float)
    weights = attr.ib(converter=_per_user)
    seed = attr.ib(default=0, converter=int)
    layout: AntennaLayout = attr.ib(
        default=attr.Factory(_default_layout, takes_self=True)
    )

    def __attrs_post_init__(self):
        K = self.dims.K
        if len(self.geometries) != K:
            raise InvalidArgument(f"{len(self.geometries)} users for K={K}")
        if len(self.noise_dbm) == 1 and K > 1:
            object.__setattr__(self, "noise_dbm", _per_user(np.repeat(self.noise_dbm, K)))
        for name in ("distances", "noise_dbm", "weights"):
            if len(getattr(self, name)) != K:
                raise InvalidArgument(f"{name} must have one entry per user (K={K})")
        if np.any(self.weights <= 0):
            raise InvalidArgument("user weights must be positive")
        if self.layout.T.shape[0] != self.dims.M or self.layout.R.shape[1:2] != (self.dims.N,):
            raise InvalidArgument("layout does not match the scenario dimensions")

    @property
    def wavelength(self) -> float:
        return self.geometries[0].wavelength

    @property
    def noise_w(self) -> np.ndarray:
        return np.array([dbm_to_watts(v) for v in self.noise_dbm])

    @property
    def power_w(self) -> float:
        return dbm_to_watts(self.power_dbm)

    def initial_beams(self) -> BeamformerSet:
        return BeamformerSet.initial(self.dims, self.power_w, self.weights, self.noise_w)

    def channels(self, geometries: Sequence[PathGeometry] = None, layout: AntennaLayout = None):
        return assemble_channels(geometries or self.geometries, layout or self.layout)

    def evolve(self, **changes) -> "Scenario":
        return attr.evolve(self, **changes)


def scenario_from_dict(data: dict) -> Scenario:
    try:
        dims = SystemDims(**{key: int(data["dims"][key]) for key in ("M", "N", "K", "d", "C")})
        wavelength = float(data["wavelength_m"])
        geometries, distances = [], []
        for user in data["users"]:
            prm = np.asarray(user["prm_real"], float) + 1j * np.asarray(user["prm_imag"], float)
            geometries.append(
                PathGeometry(aod=user["aod"], aoa=user["aoa"], prm=prm, wavelength=wavelength)
            )
            distances.append(float(user["distance_m"]))
        return Scenario(
            dims=dims,
            geometries=geometries,
            distances=distances,
            rho=data["box"]["rho"],
            min_sep=data["box"]["D"],
            noise_dbm=data["noise_dbm"],
            power_dbm=data["power_dbm"],
            weights=data["weights"],
            seed=data.get("seed", 0),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"malformed scenario: missing or invalid {exc}") from exc


def scenario_to_dict(scenario: Scenario) -> dict:
    noise = [float(v) for v in scenario.noise_dbm]
    return {
        "dims": attr.asdict(scenario.dims),
        "wavelength_m": scenario.wavelength,
        "users": [
            {
                "aod": geo.aod.tolist(),
                "aoa": geo.aoa.tolist(),
                "prm_real": geo.prm.real.tolist(),
                "prm_imag": geo.prm.imag.tolist(),
                "distance_m": float(distance),
            }
            for geo, distance in zip(scenario.geometries, scenario.distances)
        ],
        "box": {"rho": scenario.rho, "D": scenario.min_sep},
        "noise_dbm": noise[0] if len(set(noise)) == 1 else noise,
        "power_dbm": scenario.power_dbm,
        "weights": [float(w) for w in scenario.weights],
        "seed": scenario.seed,
    }


def load_scenario(path: str) -> Scenario:
    log.debug("loading scenario %s", path)
    with open(path) as fp:
        try:
            data = json.load(fp)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


def dump_scenario(scenario: Scenario, path: str):
    with open(path, "w") as fp:
        json.dump(scenario_to_dict(scenario), fp, indent=2)
        fp.write("\n")
