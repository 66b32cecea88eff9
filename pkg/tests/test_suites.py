import pytest

from fluid_antenna_wsr.errors import InvalidArgument
from fluid_antenna_wsr.suites import (
    DEC_EQUIVALENCE,
    DELTA_DOMINANCE,
    GRAD_RX,
    GRAD_TX,
    MUL_EQUIVALENCE,
    SUITES,
    NameRegexFilter,
    SuiteResult,
    run_suites,
    select_suites,
    suite_dec_equivalence,
    suite_delta_dominance,
    suite_majorization,
    suite_mul_equivalence,
    suite_tightness,
)


def test_name_filter():
    matches = NameRegexFilter.from_glob_list(["grad-*", "tight*"])
    assert matches("grad-tx")
    assert matches("tightness")
    assert not matches("majorization")
    assert "NameRegexFilter<" in repr(matches)


def test_select_suites():
    assert select_suites(()) == list(SUITES)
    assert select_suites(["grad-*"]) == [GRAD_TX, GRAD_RX]
    assert select_suites(["*equivalence", "delta-*"]) == [
        DELTA_DOMINANCE,
        MUL_EQUIVALENCE,
        DEC_EQUIVALENCE,
    ]
    with pytest.raises(InvalidArgument, match="nosuch"):
        select_suites(["grad-*", "nosuch"])


def test_suite_result_coerces():
    result = SuiteResult("x", "m", "1e-3", 1, 2.0, 1)
    assert result.value == pytest.approx(1e-3)
    assert result.cases == 2
    assert result.passed is True


@pytest.mark.parametrize(
    "suite, kwargs",
    [
        (suite_majorization, {"cases": 2, "points": 20}),
        (suite_delta_dominance, {"cases": 2}),
        (suite_tightness, {"cases": 5, "draws": 20}),
        (suite_mul_equivalence, {"cases": 20}),
        (suite_dec_equivalence, {"cases": 3}),
    ],
    ids=lambda v: getattr(v, "__name__", None),
)
def test_suites_pass_on_small_runs(suite, kwargs):
    result = suite(seed=1, **kwargs)
    assert result.passed, result


def test_run_suites():
    results = run_suites([MUL_EQUIVALENCE], seed=3)
    assert [r.name for r in results] == [MUL_EQUIVALENCE]
    assert results[0].passed
    assert results[0].cases == 100
