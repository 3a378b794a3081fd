import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosonbus.fidelity import (
    BlochState,
    DirectEngine,
    FidelityTrace,
    LadderEngine,
    TransferTensor,
    UnphysicalTensorError,
    assemble_transfer_tensor,
    average_fidelity_direct,
    average_fidelity_ladder,
    average_fidelity_montecarlo,
    fidelity_trace,
    find_peak,
    phase_envelope,
    reduced_density_b,
    sphere_mesh,
    transfer_tensor,
)
from bosonbus.ladder import build_ladders
from bosonbus.model import ModelParams, Truncation
from bosonbus.propagate import diagonalize, propagator_at
from bosonbus.validation import (
    AXIS_STATES,
    oracle_fidelity,
    oracle_reduced_density_b,
    oracle_transfer_tensor,
    random_params,
)

BASELINE = ModelParams.symmetric(20.0, 0.8)
ZERO = np.diag([1.0, 0.0]).astype(complex)

# Dense-exponential oracle values (scipy expm on the full space, six axis
# states), frozen here so the direct engine is pinned to numbers it never
# produced itself.
FROZEN = [
    (ModelParams(1.3, 0.7, 1.0, 0.5, -0.4), 6, 0.5, 0.501216327962906),
    (ModelParams(1.3, 0.7, 1.0, 0.5, -0.4), 6, 3.7, 0.42934773024538647),
    (ModelParams(1.3, 0.7, 1.0, 0.5, -0.4), 6, 12.0, 0.3911037953097673),
    (ModelParams.symmetric(2.0, 1.0), 10, 1.0, 0.4702445204480509),
    (ModelParams.symmetric(2.0, 1.0), 10, 10.0, 0.5370908803741454),
]


@pytest.mark.parametrize("params,m,t,expected", FROZEN)
def test_direct_matches_frozen_oracle(params, m, t, expected):
    f = DirectEngine(params, Truncation(m)).fidelity(np.array([t]))[0]
    assert f == pytest.approx(expected, abs=1e-10)
    assert LadderEngine(params, Truncation(m)).fidelity(np.array([t]))[0] == pytest.approx(expected, abs=1e-10)


def test_bloch_state():
    s = BlochState(math.pi / 2, math.pi / 2)
    assert np.allclose(s.bloch_vector(), [0, 1, 0], atol=1e-15)
    c = s.ket()
    rho = np.outer(c, c.conj())
    assert np.trace(rho @ np.array([[0, -1j], [1j, 0]])).real == pytest.approx(1.0)
    with pytest.raises(ValueError):
        BlochState(4.0)
    with pytest.raises(ValueError):
        BlochState(1.0, 2 * math.pi)


def test_reduced_density_at_zero(rng):
    p = random_params(rng)
    for _, state in AXIS_STATES:
        assert np.allclose(reduced_density_b(p, Truncation(4), state, 0.0), ZERO, atol=1e-15)


def test_reduced_density_uncoupled():
    p = ModelParams(1.7, 0.9, 1.0)
    rho = reduced_density_b(p, Truncation(3), BlochState(1.1, 2.0), 55.0)
    assert np.allclose(rho, ZERO, atol=1e-14)


def test_reduced_density_baseline_point_matches_oracle():
    trunc = Truncation(50)
    state = BlochState(1.0, 0.4)
    rho = reduced_density_b(BASELINE, trunc, state, 100.0)
    ref = oracle_reduced_density_b(BASELINE, trunc, state, 100.0)
    assert np.max(np.abs(rho - ref)) <= 1e-8
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    assert np.min(np.linalg.eigvalsh(rho)) >= -1e-10


def test_transfer_tensor_at_zero_and_uncoupled(rng):
    for p, t in ((random_params(rng), 0.0), (ModelParams(2.0, 1.0), 31.0)):
        tt = transfer_tensor(p, Truncation(4), t)
        assert np.allclose(tt.T, 0.0, atol=1e-14)
        assert np.allclose(tt.T0, [0, 0, 1], atol=1e-14)


def test_transfer_tensor_matches_oracle(rng):
    p = random_params(rng)
    tt = transfer_tensor(p, Truncation(7), 9.5)
    tmat, t0 = oracle_transfer_tensor(p, Truncation(7), 9.5)
    assert np.max(np.abs(tt.T - tmat)) <= 1e-10
    assert np.max(np.abs(tt.T0 - t0)) <= 1e-10


def test_transfer_tensor_is_physical(rng):
    p = random_params(rng)
    for t in (0.3, 4.0, 250.0):
        tt = transfer_tensor(p, Truncation(8), t)
        assert tt.max_output_norm() <= 1 + 1e-10
        for vec, state in AXIS_STATES[:4]:
            rho = reduced_density_b(p, Truncation(8), state, t)
            bloch = [np.trace(rho @ s).real for s in (
                np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1]))]
            assert np.allclose(tt.apply(vec), bloch, atol=1e-12)


def test_sphere_mesh():
    pts = sphere_mesh()
    assert pts.shape == (26, 3)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)


def test_assembled_tensor_from_propagator_sums(rng):
    # J_B[b, b', a, a'] = sum over A and boson of the evolved matrix units.
    p = random_params(rng)
    trunc = Truncation(5)
    gram = DirectEngine(p, trunc).gram(np.array([6.0]))[0]
    jb = np.transpose(gram, (2, 3, 0, 1))
    tt = assemble_transfer_tensor(jb)
    ref = transfer_tensor(p, trunc, 6.0)
    assert np.allclose(tt.T, ref.T, atol=1e-12)
    assert np.allclose(tt.T0, ref.T0, atol=1e-12)


def test_average_fidelity_direct_examples():
    assert average_fidelity_direct(TransferTensor(np.zeros((3, 3)), np.array([0, 0, 1.0]))) == 0.5
    assert average_fidelity_direct(TransferTensor(np.eye(3), np.zeros(3))) == 1.0
    t = np.diag([2.988 / 3] * 3)
    assert average_fidelity_direct(TransferTensor(t, np.zeros(3))) == pytest.approx(0.998, abs=1e-12)
    with pytest.raises(UnphysicalTensorError):
        average_fidelity_direct(TransferTensor(2 * np.eye(3), np.zeros(3)))


def test_printed_ladder_formula_at_zero(rng):
    p = random_params(rng)
    plus, minus = build_ladders(p, Truncation(6))
    fp = propagator_at(diagonalize(plus.matrix()), 0.0, parity=1)
    fm = propagator_at(diagonalize(minus.matrix()), 0.0, parity=-1)
    assert average_fidelity_ladder(fp, fm, "printed") == pytest.approx(0.4375, abs=1e-15)
    assert average_fidelity_ladder(fp, fm, "calibrated") == pytest.approx(0.5, abs=1e-15)


def test_calibrated_ladder_matches_direct_large_cutoff(rng):
    p = random_params(rng)
    trunc = Truncation(30)
    assert LadderEngine(p, trunc).fidelity(np.array([50.0]))[0] == pytest.approx(
        DirectEngine(p, trunc).fidelity(np.array([50.0]))[0], abs=1e-8
    )


def test_calibrated_ladder_dense_sample(rng):
    p = random_params(rng)
    trunc = Truncation(10)
    ts = np.linspace(0.0, 200.0, 2001)
    diff = LadderEngine(p, trunc).fidelity(ts) - DirectEngine(p, trunc).fidelity(ts)
    assert np.max(np.abs(diff)) <= 1e-8


def test_ladder_propagators_must_match():
    plus, minus = build_ladders(BASELINE, Truncation(4))
    fp = propagator_at(diagonalize(plus.matrix()), 1.0)
    with pytest.raises(ValueError):
        average_fidelity_ladder(fp, propagator_at(diagonalize(minus.matrix()), 2.0))
    small, _ = build_ladders(BASELINE, Truncation(3))
    with pytest.raises(ValueError):
        average_fidelity_ladder(fp, propagator_at(diagonalize(small.matrix()), 1.0))


def test_zero_a_splitting_characterization():
    # Identical ladders.  Both engines are recorded; the direct value stays
    # close to but not exactly at 1/2.
    p = ModelParams(0.0, 2.0, 1.0, 0.8, 0.8)
    trunc = Truncation(20)
    ts = np.linspace(0.0, 2000.0, 4001)
    direct = DirectEngine(p, trunc).fidelity(ts)
    assert np.max(np.abs(LadderEngine(p, trunc).fidelity(ts) - direct)) <= 1e-8
    assert 0.3 < direct.min() and direct.max() < 0.6
    assert np.ptp(direct) > 1e-3
    assert np.all(np.isfinite(LadderEngine(p, trunc, "printed").fidelity(ts)))


def test_montecarlo_uncoupled_and_zero_time(rng):
    for p, t in ((ModelParams(1.0, 2.0), 13.0), (random_params(rng), 0.0)):
        est, err = average_fidelity_montecarlo(p, Truncation(3), t, 10_000, seed=7)
        assert abs(est - 0.5) <= 3 * err
        assert 0 < err < 0.01


def test_montecarlo_generic_point(generic_params):
    trunc = Truncation(8)
    direct = DirectEngine(generic_params, trunc).fidelity(np.array([20.0]))[0]
    est, err = average_fidelity_montecarlo(generic_params, trunc, 20.0, 10_000, seed=3)
    assert abs(est - direct) <= 3 * err


def test_montecarlo_streams(generic_params):
    trunc = Truncation(4)
    a = average_fidelity_montecarlo(generic_params, trunc, 2.0, 5000, seed=1, task_index=4)
    b = average_fidelity_montecarlo(generic_params, trunc, 2.0, 5000, seed=1, task_index=4)
    c = average_fidelity_montecarlo(generic_params, trunc, 2.0, 5000, seed=1, task_index=5)
    assert a == b and a != c
    with pytest.raises(ValueError):
        average_fidelity_montecarlo(generic_params, trunc, 2.0, 10)


def test_trace_examples(generic_params):
    tr = fidelity_trace(generic_params, Truncation(4), [0.0])
    assert tr.values.tolist() == [0.5]
    tr = fidelity_trace(ModelParams(3.0, 1.0), Truncation(2), np.linspace(0, 100, 51))
    assert np.allclose(tr.values, 0.5, atol=1e-15)
    with pytest.raises(ValueError):
        fidelity_trace(generic_params, Truncation(4), [1.0, 0.5])
    with pytest.raises(ValueError):
        fidelity_trace(generic_params, Truncation(4), [0.0], engine="bogus")


@pytest.mark.parametrize("engine", ["direct", "ladder", "montecarlo"])
def test_trace_engines_agree(generic_params, engine):
    ts = np.array([0.0, 1.5, 7.0])
    trunc = Truncation(6)
    ref = oracle_fidelity
    tr = fidelity_trace(generic_params, trunc, ts, engine=engine, n_samples=4000)
    for t, v in zip(ts, tr.values):
        tol = 0.05 if engine == "montecarlo" else 1e-9
        assert v == pytest.approx(ref(generic_params, trunc, t), abs=tol)


def test_baseline_trace_maximum():
    tr = fidelity_trace(BASELINE, Truncation(20), np.arange(0.0, 33_001.0))
    assert abs(tr.values.max() - 0.998) <= 0.003


def test_baseline_peak_and_tensor_trace():
    tr = fidelity_trace(BASELINE, Truncation(20), np.arange(0.0, 33_001.0, 4.0))
    peak = find_peak(tr)
    assert abs(peak.f_max - 0.998) <= 0.003
    assert peak.t_peak < 33_000 and not peak.window_bound
    trace_t = np.trace(transfer_tensor(BASELINE, Truncation(20), peak.t_peak).T)
    assert trace_t == pytest.approx(2.988, abs=0.018)


@settings(max_examples=20, deadline=None)
@given(
    st.floats(0, 3), st.floats(0, 3), st.floats(0.5, 2), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5),
    st.floats(-300, 300),
)
def test_fidelity_invariants(wa, wb, w, la, lb, t):
    p = ModelParams(wa, wb, w, la, lb)
    trunc = Truncation(6)
    eng = DirectEngine(p, trunc)
    f0, ft, fback = eng.fidelity(np.array([0.0, t, -t]))
    assert abs(f0 - 0.5) <= 1e-9
    assert -1e-9 <= ft <= 1 + 1e-9
    assert abs(ft - fback) <= 1e-9
    flipped = DirectEngine(p.replace(lambda_a=-la, lambda_b=-lb), trunc).fidelity(np.array([t]))[0]
    assert abs(flipped - ft) <= 1e-9


def test_envelope_bounds_fidelity(generic_params):
    tmat, _ = DirectEngine(generic_params, Truncation(6)).transfer(np.linspace(0, 80, 161))
    fid = 0.5 * (1 + np.trace(tmat, axis1=1, axis2=2) / 3)
    assert np.all(phase_envelope(tmat) >= fid - 1e-12)


def _trace(values, times=None):
    values = np.asarray(values, dtype=float)
    times = np.arange(len(values), dtype=float) if times is None else times
    return FidelityTrace(times, values, BASELINE, Truncation(1), "direct")


def test_peak_constant_trace():
    peak = find_peak(_trace(np.full(50, 0.5)))
    assert (peak.f_max, peak.t_peak, peak.window_bound) == (0.5, 0.0, False)


def test_peak_monotone_trace_is_window_bound():
    peak = find_peak(_trace(np.linspace(0.5, 0.9, 100)))
    assert peak.window_bound and peak.t_peak == 99.0 and peak.f_max == pytest.approx(0.9)


def test_peak_first_near_maximum_wins():
    values = np.full(100, 0.5)
    values[20] = 0.9995
    values[60] = 1.0
    peak = find_peak(_trace(values))
    assert peak.t_peak == 20.0 and peak.f_max == 1.0
    assert find_peak(_trace(values), eps_peak=1e-4).t_peak == 60.0
    with pytest.raises(ValueError):
        find_peak(_trace(values), eps_peak=0.0)


def test_trace_range_check():
    with pytest.raises(UnphysicalTensorError):
        _trace([0.5, 1.2])
    with pytest.raises(ValueError):
        FidelityTrace(np.arange(3.0), np.zeros(2), BASELINE, Truncation(1), "direct")


def test_refinement_finds_between_grid_points():
    # At dt = 4 the lab-frame fidelity aliases; refinement recovers a value
    # at least as large as anything on a fine grid near the located peak.
    trunc = Truncation(20)
    coarse = fidelity_trace(BASELINE, trunc, np.arange(0.0, 3001.0, 4.0))
    peak = find_peak(coarse)
    fine = DirectEngine(BASELINE, trunc).fidelity(np.linspace(peak.t_peak - 4, peak.t_peak + 4, 4001))
    assert peak.f_max >= coarse.values.max()
    assert peak.f_max >= fine.max() - 1e-9
