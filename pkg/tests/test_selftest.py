import pytest

from onestep_sr.bench.selftest import SUITES, run_selftest


@pytest.mark.slow
def test_every_selftest_suite_passes():
    results = run_selftest()

    assert [result.name for result in results] == [name for name, _ in SUITES]
    assert all(result.passed for result in results), [(r.name, r.detail) for r in results if not r.passed]
