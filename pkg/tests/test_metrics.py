"""Metric arithmetic: inefficiency and unqualified flexibility.

Expected values are short hand derivations, written down before the
implementation and kept as frozen oracles.
"""

import pytest

from flexoe.envelopes import Envelope
from flexoe.metrics import (
    InstanceReport,
    VariantOutcome,
    inefficiency,
    unqualified_flex,
)

from helpers import downward, upward


class TestInefficiency:
    def test_worked_example(self):
        # 610 vs a 520 reference: (610-520)/520 * 100 = 17.3077 %
        assert inefficiency(610.0, 520.0) == pytest.approx(17.3077, abs=1e-2)
        assert inefficiency(610.0, 520.0) == pytest.approx(90.0 / 520.0 * 100.0)

    def test_equal_costs_give_zero(self):
        assert inefficiency(520.0, 520.0) == 0.0

    def test_cheaper_than_reference_is_negative(self):
        assert inefficiency(520.0, 610.0) == pytest.approx(-90.0 / 610.0 * 100.0)

    def test_negative_reference_uses_magnitude(self):
        # downward-only clearings earn money; -100 vs -120 is 16.67 % worse
        assert inefficiency(-100.0, -120.0) == pytest.approx(20.0 / 120.0 * 100.0)

    def test_undefined_cases_return_none(self):
        assert inefficiency(None, 520.0) is None
        assert inefficiency(610.0, None) is None
        assert inefficiency(610.0, 0.0) is None
        assert inefficiency(610.0, 5e-10) is None


class TestUnqualifiedFlex:
    def test_worked_upward_example(self):
        # offers 4 and 6 MW, envelopes keep 2 and 6: delta_up = 2/10 = 20 %
        res = [
            upward("u1", "d1", 1, 0.04, 40.0),
            upward("u2", "d1", 2, 0.06, 45.0),
        ]
        env = {
            "u1": Envelope("u1", 0.0, 0.02),
            "u2": Envelope("u2", 0.0, 0.06),
        }
        delta_down, delta_up = unqualified_flex(res, env)
        assert delta_up == pytest.approx(20.0)
        assert delta_down is None

    def test_downward_example(self):
        # offer -5 MW, envelope keeps -2: delta_down = 3/5 = 60 %
        res = [downward("d1", "d1", 1, -0.05, 20.0)]
        env = {"d1": Envelope("d1", -0.02, 0.0)}
        delta_down, delta_up = unqualified_flex(res, env)
        assert delta_down == pytest.approx(60.0)
        assert delta_up is None

    def test_mixed_directions(self):
        res = [
            upward("u1", "d1", 1, 0.04, 40.0),
            downward("d1", "d1", 1, -0.05, 20.0),
        ]
        env = {
            "u1": Envelope("u1", 0.0, 0.04),
            "d1": Envelope("d1", -0.05, 0.0),
        }
        delta_down, delta_up = unqualified_flex(res, env)
        assert delta_up == 0.0
        assert delta_down == 0.0

    def test_resources_without_envelopes_ignored(self):
        # transmission offers never get envelopes and must not dilute delta
        res = [
            upward("u1", "d1", 1, 0.04, 40.0),
            upward("T:u1", "T", 1, 1.0, 70.0),
        ]
        env = {"u1": Envelope("u1", 0.0, 0.02)}
        delta_down, delta_up = unqualified_flex(res, env)
        assert delta_up == pytest.approx(50.0)
        assert delta_down is None

    def test_no_enveloped_resources(self):
        res = [upward("T:u1", "T", 1, 1.0, 70.0)]
        assert unqualified_flex(res, {}) == (None, None)


def test_report_containers_hold_rows():
    row = VariantOutcome(
        regime="oe_two_step",
        weight_rule="price",
        status="optimal",
        cost=610.0,
        eta_pct=0.0,
        violations_v=0,
        violations_flow=0,
        delta_u_pct=20.0,
        delta_d_pct=None,
    )
    report = InstanceReport(instance_id=3, discarded=False, outcomes=(row,))
    assert report.outcomes[0].cost == 610.0
    assert not report.discarded
    assert InstanceReport(instance_id=4, discarded=True).outcomes == ()
