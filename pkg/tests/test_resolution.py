import numpy as np
import pytest

from pupilrecon.errors import ParameterError
from pupilrecon.resolution import (coherent_cutoff_period, incoherent_cutoff_period, incoherent_mtf,
                                   numerical_aperture, resolution_report, usaf_bracket,
                                   usaf_lp_per_mm)

D, F, LAM = 5.5e-3, 0.167, 520e-9


def test_cutoff_periods():
    na = numerical_aperture(D, F)
    assert na == pytest.approx(2.75 / 167)
    assert coherent_cutoff_period(LAM, na) == pytest.approx(31.6e-6, abs=0.05e-6)
    assert incoherent_cutoff_period(LAM, na) == pytest.approx(15.8e-6, abs=0.05e-6)


def test_usaf_table_values():
    assert usaf_lp_per_mm(0, 1) == 1.0
    assert usaf_lp_per_mm(5, 1) == 32.0
    assert usaf_lp_per_mm(5, 5) == pytest.approx(32 * 2 ** (4 / 6))
    with pytest.raises(ParameterError):
        usaf_lp_per_mm(5, 7)


def test_bracket_against_table_scan():
    # independent oracle: walk the table in frequency order
    f_coh = 1e-3 / (LAM / numerical_aperture(D, F))
    table = sorted((2 ** (g + (e - 1) / 6), g, e) for g in range(-2, 10) for e in range(1, 7))
    lower = next((g, e) for f, g, e in table if f >= f_coh)
    upper = [(g, e) for f, g, e in table
             if f / (2 * f_coh) < 1 and incoherent_mtf(f / (2 * f_coh)) >= 0.05][-1]
    assert usaf_bracket(D, F, LAM) == (lower, upper) == ((5, 1), (5, 5))


def test_mtf_endpoints():
    assert incoherent_mtf(0.0) == pytest.approx(1.0)
    assert incoherent_mtf(1.0) == pytest.approx(0.0)
    assert incoherent_mtf(2.0) == 0.0
    assert np.all(np.diff(incoherent_mtf(np.linspace(0, 1, 50))) <= 0)


def test_report_and_errors():
    rep = resolution_report(D, F, LAM)
    assert rep["usaf_bracket"] == {"lower": {"group": 5, "element": 1},
                                   "upper": {"group": 5, "element": 5}}
    with pytest.raises(ParameterError):
        numerical_aperture(0, F)
