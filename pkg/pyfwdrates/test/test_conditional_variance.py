import pytest

from pyfwdrates.reserve import ValuationReport, conditional_variance, variance_tolerance


class Test_conditional_variance:
    def test_value(self):
        assert (conditional_variance(2.0, 5.0) == 1.0)

    def test_tolerance(self):
        assert (variance_tolerance(0.5) == 1e-6)
        assert (variance_tolerance(-1e4) == pytest.approx(1e-2))

    def test_report(self):
        report = ValuationReport("active", "annuity", 2.0, 5.0, 0.05, 100, 3.0, 1.0, s_plus=9.0 - 1e-8)
        assert (report.variance == pytest.approx(-1e-8))
        assert (report.variance_ok)
        row = report.to_row()
        assert (row["cashflow"] == "annuity" and "oracle" not in row)
        assert (not ValuationReport("a", "b", 0.0, 1.0, 0.1, 10, 3.0, 0.0, s_plus=8.0).variance_ok)
        assert (ValuationReport("a", "b", 0.0, 1.0, 0.1, 10, 3.0, 0.0).variance_ok)
