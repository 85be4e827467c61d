"""End-to-end acceptance checks on the default grids.

Each test records a single PASS/FAIL line (shown in the terminal summary). The
full-Hamiltonian propagations for the 30-point coupling grid are computed once
at cutoffs 8 and 10 and shared by the inseparability, genuine-entanglement and
RWA-breakdown checks; expect roughly 20-25 minutes on one core.
"""
import numpy as np
import pytest
from scipy.linalg import expm

from trispdc.evolution import EvolutionConfig, evolve_static, midpoint_order_estimate
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
from trispdc.fock import DensityMatrix, ModeSystem
from trispdc.model import HamiltonianSpec, ThermalSpec, Variant, rwa_hamiltonian, thermal_state, vacuum_state
from trispdc.witness import covariance, evaluate, moments, product_across, witness_G

pytestmark = pytest.mark.slow

TOL = 1e-3
SYS = ModeSystem(cutoff=8)


@pytest.fixture(scope="module")
def cache():
    return MomentCache()


@pytest.fixture(scope="module")
def fig1(cache):
    return run_fig1(SweepGrid(Scenario.FIG1), sys=SYS, cache=cache)


@pytest.fixture(scope="module")
def fig2(cache, fig1):
    return run_fig2(SweepGrid(Scenario.FIG2), sys=SYS, cache=cache)


@pytest.fixture(scope="module")
def fig3():
    return run_fig3(SweepGrid(Scenario.FIG3), sys=SYS)


@pytest.fixture(scope="module")
def fig4(cache, fig1):
    return run_fig4(SweepGrid(Scenario.FIG4), sys=SYS, cache=cache)


@pytest.fixture(scope="module")
def fig3_check():
    # the same landscape at cutoff 10, for the truncation certificate
    return run_fig3(SweepGrid(Scenario.FIG3), sys=ModeSystem(cutoff=10), certify=False)


@pytest.fixture(scope="module")
def fig4_check(cache, fig1):
    return run_fig4(SweepGrid(Scenario.FIG4), sys=ModeSystem(cutoff=10), cache=cache, certify=False, step_check=False)


def landscape(res):
    """G as an array [g0, t] plus the axes."""
    g0s = np.array(res.grid.g0_values)
    rows = [res.series_array(g)[1] for g in g0s]
    return g0s, res.series_array(g0s[0])[0], np.array(rows)


def test_criterion_1_full_inseparability_region(fig1, criterion):
    I1 = fig1.table("max_I1")
    g0s = np.array(fig1.grid.g0_values)
    betas = np.array(fig1.grid.beta_values)
    gi, bi = np.nonzero(I1 <= 0)
    outside = [(g0s[i], betas[j]) for i, j in zip(gi, bi) if not (g0s[i] < 0.004 and betas[j] < 1.4)]
    corner = f"{len(gi)} cells with max I1 <= 0"
    if len(gi):
        corner += f" (g0 <= {g0s[gi].max():.4g}, beta <= {betas[bi].max():.4g})"
    ok = not outside
    criterion(1, ok, corner + (f"; {len(outside)} outside the allowed corner" if outside else ""))
    assert ok, outside[:5]


def test_criterion_2_genuine_threshold(fig2, criterion):
    G = fig2.table("max_G")
    g0s = np.array(fig2.grid.g0_values)
    betas = np.array(fig2.grid.beta_values)
    crossings, bad = [], []
    for i in np.nonzero((g0s >= 0.01 - 1e-12) & (g0s <= 0.1 + 1e-12))[0]:
        positive = G[i] > 0
        flips = np.nonzero(positive[1:] != positive[:-1])[0]
        if len(flips) != 1 or positive[0]:
            bad.append((g0s[i], "no single negative-to-positive crossing"))
            continue
        k = flips[0]
        b = betas[k] + (betas[k + 1] - betas[k]) * (-G[i, k]) / (G[i, k + 1] - G[i, k])
        crossings.append(b)
        if abs(b - 1.6) > 0.1:
            bad.append((g0s[i], b))
    ok = not bad
    span = f"crossing beta*omega_a in [{min(crossings):.3f}, {max(crossings):.3f}]" if crossings else "no crossing"
    criterion(2, ok, f"{span} over {len(crossings)} couplings in [0.01, 0.1]")
    assert ok, bad


def test_criterion_3_monotone_growth_rwa(fig3, criterion):
    g0s, ts, G = landscape(fig3)
    drop_t = np.max(G[:, :-1] - G[:, 1:])
    drop_g = np.max(G[:-1, :] - G[1:, :])
    s = g0s[:, None] * ts[None, :]
    window = (s > 0) & (s <= 0.5 + 1e-12)
    min_G = G[window].min()
    where = np.unravel_index(np.argmin(np.where(window, G, np.inf)), G.shape)
    ok_t, ok_g, ok_pos = drop_t <= TOL, drop_g <= TOL, min_G > 0
    criterion(
        3,
        ok_t and ok_g and ok_pos,
        f"largest decrease in t {drop_t:.3g}, in g0 {drop_g:.3g} (tol {TOL}); "
        f"min G over g0 t in (0, 0.5] = {min_G:.3g} at g0 t = {s[where]:.3g}",
    )
    assert ok_t, f"G decreases in t by {drop_t}"
    assert ok_g, f"G decreases in g0 by {drop_g}"
    assert ok_pos, f"G = {min_G} <= 0 at g0 t = {s[where]}"


def test_criterion_4_rwa_breakdown(fig3, fig4, criterion):
    g0s, ts, G_rwa = landscape(fig3)
    _, ts_full, G_full = landscape(fig4)
    np.testing.assert_array_equal(ts, ts_full)
    s = g0s[:, None] * ts[None, :]
    short = s <= 0.05 + 1e-12
    rel = np.abs(G_full - G_rwa) / np.maximum(np.abs(G_rwa), 1e-6)
    excess = np.where(short, rel / (2 * g0s[:, None]), 0.0)
    worst = np.unravel_index(np.argmax(excess), excess.shape)
    ok_short = excess.max() <= 1.0
    k = int(np.argmin(np.abs(g0s - 0.1)))
    negative = np.nonzero(G_full[k] < 0)[0]
    ok_negative = len(negative) > 0
    first = f"first G < 0 at t = {ts[negative[0]]:.4g}" if ok_negative else "G never negative"
    criterion(
        4,
        ok_short and ok_negative,
        f"worst short-time relative gap {rel[worst]:.3g} vs bound {2 * g0s[worst[0]]:.3g} "
        f"(g0 = {g0s[worst[0]]:.3g}, t = {ts[worst[1]]:.3g}); g0 = 0.1: {first}",
    )
    assert ok_short, f"relative gap {rel[worst]} exceeds 2 g0 = {2 * g0s[worst[0]]}"
    assert ok_negative


def test_criterion_5_perturbative_oracle(criterion):
    g0, t = 0.01, 2.0
    H = rwa_hamiltonian(HamiltonianSpec(Variant.RWA, g0), SYS)
    m = evolve_static(H, vacuum_state(SYS), EvolutionConfig(t_max=t, sample_times=(t,)), SYS, False).moments[0]
    r = evaluate(m)
    x = g0 * t / 2
    err_abc = abs(abs(m.abc) - x) / x
    err_I = max(abs(i - (x - x * x)) / (x - x * x) for i in r.I)
    err_G = abs(r.G - (x - 3 * x * x)) / (x - 3 * x * x)
    ok = err_abc <= 0.01 and err_I <= 0.05 and err_G <= 0.05
    criterion(5, ok, f"relative errors |abc| {err_abc:.2e}, I {err_I:.2e}, G {err_G:.2e}")
    assert ok


def test_criterion_6_gaussian_null(criterion):
    res = run_double_spdc(SweepGrid(Scenario.DOUBLE), sys=SYS, certify=False)
    max_abc = max(c.max_abs_abc for c in res.cells)
    max_G = max(c.max_G for c in res.cells)
    ok = max_abc < 1e-10 and max_G < 1e-10
    criterion(6, ok, f"over {len(res.cells)} cells: max |<abc>| = {max_abc:.2e}, max G = {max_G:.3g}")
    assert ok


def test_criterion_7_covariance_diagonal(criterion):
    g0 = 0.05
    H = rwa_hamiltonian(HamiltonianSpec(Variant.RWA, g0), SYS)
    cfg = EvolutionConfig(t_max=1 / g0, sample_times=(1 / g0,))
    worst = {}
    for name, rho0 in (("vacuum", vacuum_state(SYS)), ("thermal", thermal_state(ThermalSpec(2.7), SYS))):
        rho = evolve_static(H, rho0, cfg, SYS).states[0]
        worst[name] = covariance(rho, SYS).max_offdiagonal()
    ok = max(worst.values()) < 1e-10
    criterion(7, ok, ", ".join(f"{k} max off-diagonal {v:.1e}" for k, v in worst.items()))
    assert ok


def test_criterion_8_selection_rule(criterion):
    H = rwa_hamiltonian(HamiltonianSpec(Variant.RWA, 0.05, theta=0.4), SYS)
    occ = SYS.occupations
    diff = occ[:, None, :] - occ[None, :, :]
    forbidden = ~(diff == diff[..., :1]).all(axis=-1)
    rho0 = thermal_state(ThermalSpec(2.7), SYS)
    traj = evolve_static(H, rho0, EvolutionConfig(t_max=50, n_samples=10), SYS)
    leak_block = max(np.max(np.abs(r.entries[forbidden])) for r in traj.states)
    # independent dense exponential
    U = expm(-1j * 20.0 * H.entries)
    leak_dense = np.max(np.abs((U @ rho0.entries @ U.conj().T)[forbidden]))
    ok = leak_block == 0.0 and leak_dense < 1e-15
    criterion(8, ok, f"forbidden coherences: block propagator {leak_block:.1e}, dense expm {leak_dense:.1e}")
    assert ok


def test_criterion_9_biseparable_soundness(criterion):
    sys = ModeSystem(cutoff=4)
    d = sys.cutoff
    rng = np.random.default_rng(20240611)

    def random_density(n, rank):
        x = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
        rho = x @ x.conj().T
        return rho / np.trace(rho).real

    worst = -np.inf
    for trial in range(200):
        w = rng.dirichlet(np.ones(3))
        rank = 1 + trial % 3
        rho = sum(
            w[s] * product_across(s, random_density(d, rank), random_density(d * d, rank), sys) for s in range(3)
        )
        worst = max(worst, witness_G(moments(DensityMatrix(rho), sys)))
    ok = worst <= 1e-10
    criterion(9, ok, f"max G over 200 random biseparable mixtures = {worst:.3g}")
    assert ok


def test_criterion_10_numerics_hygiene(fig1, fig2, fig3, fig4, fig3_check, fig4_check, criterion):
    failures = []
    # sweep maxima: G drift between cutoffs 8 and 10 for every cell
    sweep_G = max(c.drifts[3] for res in (fig1, fig2) for c in res.cells)
    sweep_I1 = max(c.drifts[0] for c in fig1.cells)
    if sweep_G >= TOL:
        failures.append(f"sweep max G drift {sweep_G:.2e}")
    # landscapes: the points the growth and breakdown checks rely on
    g0s, ts, G8 = landscape(fig3)
    _, _, G10 = landscape(fig3_check)
    s = g0s[:, None] * ts[None, :]
    used3 = s <= 0.5 + 1e-12
    d3 = np.max(np.abs(G8 - G10)[used3] / np.maximum(1, np.abs(G8[used3])))
    _, _, F8 = landscape(fig4)
    _, _, F10 = landscape(fig4_check)
    used4 = s <= 0.05 + 1e-12
    k = int(np.argmin(np.abs(g0s - 0.1)))
    neg = np.nonzero(F8[k] < 0)[0]
    if len(neg):
        used4[k, neg[0]] = True
    d4 = np.max(np.abs(F8 - F10)[used4] / np.maximum(1, np.abs(F8[used4])))
    for name, v in (("fig3", d3), ("fig4", d4)):
        if v >= TOL:
            failures.append(f"{name} G drift {v:.2e}")
    est = midpoint_order_estimate(HamiltonianSpec(Variant.FULL, 0.1), SYS, 2.0, 0.02)
    if abs(est.successive_ratio - 4.0) > 0.4:
        failures.append(f"order ratio {est.successive_ratio:.3f}")
    step = fig2.step_check
    criterion(
        10,
        not failures,
        f"G drift d=8 vs 10: sweeps {sweep_G:.2e}, fig3 {d3:.2e}, fig4 {d4:.2e}; "
        f"step-halving ratio {est.successive_ratio:.3f}, sweep dt/2 drift {step.drift:.1e} "
        f"(max I1 drift, not part of the criterion: {sweep_I1:.2e})",
    )
    assert not failures
