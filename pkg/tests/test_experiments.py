import math
import warnings

import numpy as np
import pytest

from trispdc.experiments import (
    MomentCache,
    Scenario,
    SweepGrid,
    run_double_spdc,
    run_fig1,
    run_fig2,
    run_fig3,
    run_fig4,
)
from trispdc.fock import InvalidArgument, ModeSystem
from trispdc.model import ThermalSpec, Variant

# G at t = 0 for the product thermal state: -3 sqrt(n_a n_b n_c), truncated at d = 8
G0_THERMAL_27 = -0.0009451306846198387

SMALL = ModeSystem(cutoff=5)


class TestGrid:
    def test_defaults(self):
        g = SweepGrid(Scenario.FIG2)
        assert len(g.g0_values) == 30 and len(g.beta_values) == 30
        assert g.g0_values[0] == pytest.approx(0.001) and g.g0_values[-1] == pytest.approx(0.1)
        assert g.beta_values[0] == 1.0 and g.beta_values[-1] == 3.0
        assert g.t_max == 50.0
        ratios = np.diff(np.log(g.g0_values))
        np.testing.assert_allclose(ratios, ratios[0])

    @pytest.mark.parametrize("scenario", [Scenario.FIG3, Scenario.FIG4])
    def test_landscape_temperature(self, scenario):
        assert SweepGrid(scenario).beta_values == (2.7,)

    @pytest.mark.parametrize(
        "scenario, variant",
        [
            (Scenario.FIG1, Variant.FULL),
            (Scenario.FIG2, Variant.FULL),
            (Scenario.FIG3, Variant.RWA),
            (Scenario.FIG4, Variant.FULL),
            (Scenario.DOUBLE, Variant.DOUBLE),
        ],
    )
    def test_variant_per_scenario(self, scenario, variant):
        assert scenario.variant == variant

    def test_outside_regime_warns(self):
        with pytest.warns(UserWarning):
            SweepGrid(Scenario.FIG1, g0_values=(0.05, 0.2))
        with pytest.warns(UserWarning):
            SweepGrid(Scenario.FIG1, beta_values=(0.5, 2.0))

    def test_inside_regime_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            SweepGrid(Scenario.FIG1, g0_values=(0.01, 0.1), beta_values=(1.0, 2.0))

    @pytest.mark.parametrize("g0", [(), (0.1, 0.05), (0.1, 0.1)])
    def test_rejects_bad_axis(self, g0):
        with pytest.raises(InvalidArgument):
            SweepGrid(Scenario.FIG1, g0_values=g0)

    def test_preset_checks_scenario(self):
        with pytest.raises(InvalidArgument):
            run_fig1(SweepGrid(Scenario.FIG2, g0_values=(0.01,)))


def test_zero_coupling_column():
    grid = SweepGrid(Scenario.FIG3, g0_values=(0.0, 0.01), n_samples=10, t_max=10)
    res = run_fig3(grid, sys=ModeSystem(cutoff=8))
    t, G = res.series_array(0.0)
    np.testing.assert_allclose(G, G0_THERMAL_27, rtol=1e-9)
    n = ThermalSpec(2.7).occupations(ModeSystem())
    assert G0_THERMAL_27 == pytest.approx(-3 * math.sqrt(np.prod(n)), rel=1e-7)
    _, I1 = res.series_array(0.0, "I")
    np.testing.assert_allclose(np.array(I1.tolist()), G0_THERMAL_27 / 3, rtol=1e-9)


def test_double_spdc_gaussian_null():
    grid = SweepGrid(Scenario.DOUBLE, g0_values=(0.001, 0.02, 0.1), beta_values=(1.0, 2.0, 3.0), n_samples=40)
    res = run_double_spdc(grid, sys=ModeSystem(cutoff=8), certify=False)
    for c in res.cells:
        assert c.max_abs_abc < 1e-10
        assert c.max_G < 1e-10
        assert max(c.max_I) <= 0


def test_fig3_structure():
    grid = SweepGrid(Scenario.FIG3, g0_values=(0.01, 0.1), n_samples=20, t_max=5)
    res = run_fig3(grid, sys=ModeSystem(cutoff=8))
    assert len(res.series) == 40
    for g0 in grid.g0_values:
        t, G = res.series_array(g0)
        assert np.all(np.diff(t) > 0)
    # faster coupling reaches larger G at equal early times
    _, G_lo = res.series_array(0.01)
    _, G_hi = res.series_array(0.1)
    assert np.all(G_hi[:5] >= G_lo[:5])
    assert res.step_check is None


def test_fig3_matches_brute_force_thermal_oracle():
    # brute-force expm of the dense RWA Hamiltonian on the d = 8 thermal state at g0 t = 0.02
    grid = SweepGrid(Scenario.FIG3, g0_values=(0.01, 0.1), t_max=2.0, n_samples=1)
    res = run_fig3(grid, sys=ModeSystem(cutoff=8), certify=False)
    assert res.series_array(0.01)[1][0] == pytest.approx(0.006702600921690505, rel=1e-9)
    grid = SweepGrid(Scenario.FIG3, g0_values=(0.1,), t_max=0.2, n_samples=1)
    res = run_fig3(grid, sys=ModeSystem(cutoff=8), certify=False)
    assert res.series_array(0.1)[1][0] == pytest.approx(0.006702600921690505, rel=1e-9)


def test_full_cells_and_cache_sharing():
    cache = MomentCache()
    kw = dict(sys=SMALL, cache=cache, certify=False)
    g1 = SweepGrid(Scenario.FIG1, g0_values=(0.02, 0.05), beta_values=(2.0, 2.7), t_max=6, n_samples=24)
    r1 = run_fig1(g1, **kw)
    n_cached = len(cache)
    g2 = SweepGrid(Scenario.FIG2, g0_values=(0.02, 0.05), beta_values=(2.0, 2.7), t_max=6, n_samples=24)
    r2 = run_fig2(g2, **kw)
    assert len(cache) == n_cached
    for a, b in zip(r1.cells, r2.cells):
        assert a.max_G == b.max_G and a.max_I == b.max_I
    assert r1.cell(0.05, 2.7).max_I[0] > 0
    assert r1.cell(0.05, 2.7).max_G > 0
    assert r1.step_check is not None and r1.step_check.passed
    assert r1.table("max_I1").shape == (2, 2)


def test_fig4_series_and_step_check():
    grid = SweepGrid(Scenario.FIG4, g0_values=(0.05, 0.1), t_max=5, n_samples=10)
    res = run_fig4(grid, sys=SMALL, certify=False)
    assert len(res.series) == 20
    assert res.step_check.g0 == 0.1
    assert res.step_check.drift < 1e-3


def test_certification_marks_cells():
    grid = SweepGrid(Scenario.FIG3, g0_values=(0.001, 0.1), n_samples=20, t_max=50)
    res = run_fig3(grid, sys=ModeSystem(cutoff=4))
    small, big = res.cells
    assert small.converged
    assert not big.converged
    assert not res.all_converged
    assert any(not r.converged for r in res.series)
    assert small.certificate.cutoff_used == 4


def test_escalation_rescues_cells():
    grid = SweepGrid(Scenario.FIG3, g0_values=(0.05,), n_samples=10, t_max=5)
    plain = run_fig3(grid, sys=ModeSystem(cutoff=3))
    escalated = run_fig3(grid, sys=ModeSystem(cutoff=3), escalate=True)
    assert not plain.cells[0].converged
    assert escalated.cells[0].converged
    assert escalated.cells[0].certificate.cutoff_used == 5


def test_serial_parallel_identical():
    grid = SweepGrid(Scenario.FIG2, g0_values=(0.02, 0.05, 0.1), beta_values=(2.0,), t_max=3, n_samples=6)
    kw = dict(sys=ModeSystem(cutoff=4), certify=False, step_check=False)
    serial = run_fig2(grid, workers=1, **kw)
    parallel = run_fig2(grid, workers=2, **kw)
    assert serial.cells == parallel.cells


def test_provenance():
    grid = SweepGrid(Scenario.FIG3, g0_values=(0.01,), n_samples=4, t_max=1)
    res = run_fig3(grid, sys=ModeSystem(cutoff=4))
    assert res.provenance["scenario"] == "fig3-rwa-G"
    assert res.provenance["cutoff"] == 4
    assert res.provenance["version"]
