import json

import numpy as np
import pytest

from fluid_antenna_wsr.cli import SAMPLE_SCENARIO
from fluid_antenna_wsr.errors import InvalidArgument
from fluid_antenna_wsr.scenario import (
    dump_scenario,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


def test_sample_scenario_loads():
    scenario = load_scenario(SAMPLE_SCENARIO)
    assert (scenario.dims.M, scenario.dims.N, scenario.dims.K) == (4, 2, 2)
    assert scenario.noise_dbm.shape == (2,)
    assert scenario.power_w == pytest.approx(1.0)
    assert scenario.seed == 7
    assert scenario.layout.contains()
    beams = scenario.initial_beams()
    assert beams.power == pytest.approx(scenario.power_w)
    channels = scenario.channels()
    assert channels.H[0].shape == (2, 4)


def test_dump_then_load_is_lossless(tmp_path):
    scenario = load_scenario(SAMPLE_SCENARIO)
    path = str(tmp_path / "scenario.json")
    dump_scenario(scenario, path)
    again = load_scenario(path)
    assert scenario_to_dict(again) == scenario_to_dict(scenario)
    for a, b in zip(scenario.geometries, again.geometries):
        np.testing.assert_array_equal(a.prm, b.prm)


def test_per_user_noise():
    data = scenario_to_dict(load_scenario(SAMPLE_SCENARIO))
    data["noise_dbm"] = [-90.0, -80.0]
    scenario = scenario_from_dict(data)
    assert scenario.noise_w[1] == pytest.approx(10 * scenario.noise_w[0])
    assert scenario_to_dict(scenario)["noise_dbm"] == [-90.0, -80.0]


@pytest.mark.parametrize(
    "change",
    [
        lambda d: d.pop("users"),
        lambda d: d["box"].pop("rho"),
        lambda d: d.update(weights=[1.0]),
        lambda d: d.update(weights=[1.0, 0.0]),
        lambda d: d.update(users=d["users"][:1]),
        lambda d: d.update(box={"rho": 0.1, "D": 0.005}),
    ],
    ids=["no users", "no rho", "short weights", "zero weight", "one user", "tiny boxes"],
)
def test_malformed_scenarios(change):
    data = scenario_to_dict(load_scenario(SAMPLE_SCENARIO))
    change(data)
    with pytest.raises(InvalidArgument):
        scenario_from_dict(data)


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(InvalidArgument, match="not valid JSON"):
        load_scenario(str(path))
    path.write_text(json.dumps({"dims": {"M": 4}}))
    with pytest.raises(InvalidArgument, match="malformed"):
        load_scenario(str(path))
