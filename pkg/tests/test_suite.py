import json

import numpy as np

from probekit.suite import CriterionResult, SuiteReport, degenerate_check
from probekit.indicator import mid_shell_point


def test_result_line_and_status():
    ok = CriterionResult(3, "natural decomposition", True, {"max": np.float64(3.4e-16), "n": 25}, "<= 0.5%")
    assert ok.status == "PASS"
    assert ok.line() == "PASS criterion  3 natural decomposition: max=3.4e-16, n=25 [<= 0.5%]"
    assert CriterionResult(11, "x", False).status == "FAIL"
    assert CriterionResult(1, "x", None).status == "SKIP"


def test_report_json_and_text():
    rep = SuiteReport([
        CriterionResult(1, "a", True, {"v": np.array([1.0, np.inf])}),
        CriterionResult(2, "b", False, {"w": np.float32(0.5)}),
    ])
    assert not rep.passed
    assert rep.text().splitlines()[-1] == "1/2 criteria without failure"
    data = json.loads(rep.json())
    assert data["criteria"][0]["measured"]["v"] == [1.0, "inf"]
    assert data["criteria"][1]["status"] == "FAIL"
    assert SuiteReport([CriterionResult(1, "a", None)]).passed


def test_degenerate_check_without_obstacle(empty_system, empty_pair):
    x = mid_shell_point(empty_system.domain, [1, 0, 0])
    res = degenerate_check(empty_system, *empty_pair, x, None)
    assert res.passed is True
