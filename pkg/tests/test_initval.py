"""Measurement-only initialization: tree guess, angle-free seeds, DC angles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridtae.initval import (
    FLAT_B,
    FLAT_G,
    InitConfig,
    build_tree_topology,
    dc_angle_seed,
    make_initial_state,
    moving_average,
    phasor_free_admittance,
)
from gridtae.mlmodel import ModelContext, pack
from gridtae.netmodel import candidate_set, load_bundled_case
from gridtae.powerflow import (
    MeasurementTensor,
    generate_load_profile,
    noiseless_vector,
    solve_snapshots,
)
from helpers import chain_case, full_plan_n


# --------------------------------------------------------------- smoothing ---

def test_moving_average_ramp():
    out = moving_average(np.array([1.0, 2.0, 3.0, 4.0]), 2)
    assert np.array_equal(out, [1.5, 2.5, 3.5])


def test_moving_average_identity_and_constant():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    assert np.array_equal(moving_average(x, 1), x)
    assert np.array_equal(moving_average(np.full(6, 2.5), 4), np.full(3, 2.5))


def test_moving_average_2d_and_bad_window():
    panel = np.arange(12.0).reshape(4, 3)
    out = moving_average(panel, 2)
    assert out.shape == (3, 3)
    assert np.array_equal(out[:, 0], [1.5, 4.5, 7.5])
    with pytest.raises(ValueError):
        moving_average(panel, 5)
    with pytest.raises(ValueError):
        moving_average(panel, 0)


@pytest.mark.parametrize("bad", [dict(window=0), dict(flow_mode="magic")])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        InitConfig(**bad)


# -------------------------------------------------------------- tree guess ---

def test_tree_recovers_noiseless_chain():
    case = chain_case(5)
    prof = generate_load_profile(case, 40, seed=1, spread=0.5)
    truth = solve_snapshots(case, prof)
    tree = build_tree_topology(truth.V, InitConfig(window=5))
    assert set(tree.pairs) == {(1, 2), (2, 3), (3, 4), (4, 5)}


def test_tree_two_buses():
    panel = np.column_stack([np.full(6, 1.0), 0.97 + 0.01 * np.arange(6)])
    tree = build_tree_topology(panel, InitConfig(window=2))
    assert tree.pairs == ((1, 2),)


def test_tree_constant_series_falls_back_with_warning():
    rng = np.random.default_rng(0)
    wig = rng.normal(0.0, 1e-3, 8)
    panel = np.column_stack([
        1.00 + wig,                  # bus 1, root
        0.99 + wig,                  # bus 2, correlated with root
        np.full(8, 0.98),            # bus 3, constant -> fallback
    ])
    with pytest.warns(RuntimeWarning, match="constant voltage"):
        tree = build_tree_topology(panel, InitConfig(window=1))
    assert (2, 3) in tree.pairs      # nearest mean magnitude is bus 2


def test_tree_silent_when_only_root_is_constant():
    # a stiff slack has a constant magnitude; the first attachment is forced
    # and should not warn
    rng = np.random.default_rng(3)
    wig = rng.normal(0.0, 1e-3, 10)
    panel = np.column_stack([np.full(10, 1.0), 0.99 + wig, 0.98 + 1.5 * wig])
    import warnings as _w
    with _w.catch_warnings():
        _w.simplefilter("error")
        tree = build_tree_topology(panel, InitConfig(window=1))
    assert len(tree.pairs) == 2


def _spans(pairs, n):
    adj = {i: set() for i in range(1, n + 1)}
    for a, b in pairs:
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = {1}, [1]
    while stack:
        for v in adj[stack.pop()] - seen:
            seen.add(v)
            stack.append(v)
    return len(seen) == n


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 7), seed=st.integers(0, 2**31))
def test_tree_is_always_spanning(n, seed):
    rng = np.random.default_rng(seed)
    panel = rng.uniform(0.9, 1.1, (9, n))
    tree = build_tree_topology(panel, InitConfig(window=3))
    assert len(tree.pairs) == n - 1
    assert _spans(tree.pairs, n)


# ------------------------------------------------------ admittance seeding ---

def consistent_chain_data(cg, cb, T=30, seed=4, mode="subtree"):
    """Series generated exactly from the angle-free branch model.

    Bus k+1 hangs off bus k; branch flows follow P_child/V_child =
    (V_child - V_parent) * cg (and cb for Q).  In subtree mode the nodal
    injections are the flow differences so the accumulated sums reproduce
    the flows exactly.
    """
    n = len(cg) + 1
    rng = np.random.default_rng(seed)
    V = 1.0 + np.cumsum(-rng.uniform(0.005, 0.02, (T, n)), axis=1)
    flows_p = np.zeros((T, n))
    flows_q = np.zeros((T, n))
    for k in range(1, n):
        dv = V[:, k] - V[:, k - 1]
        flows_p[:, k] = V[:, k] * dv * cg[k - 1]
        flows_q[:, k] = V[:, k] * dv * cb[k - 1]
    P = flows_p.copy()
    Q = flows_q.copy()
    if mode == "subtree":
        P[:, :-1] -= flows_p[:, 1:]
        Q[:, :-1] -= flows_q[:, 1:]
    tree = candidate_set(n, prior=[(k, k + 1) for k in range(1, n)])
    return P, Q, V, tree


def test_regression_exact_on_model_consistent_data():
    cg = np.array([4.0, 7.5, 2.0])
    cb = np.array([9.0, 3.0, 6.5])
    for mode in ("subtree", "nodal"):
        P, Q, V, tree = consistent_chain_data(cg, cb, mode=mode)
        g, b = phasor_free_admittance(P, Q, V, tree, mode=mode)
        assert np.abs(g - cg).max() <= 1e-10 * np.abs(cg).max()
        assert np.abs(b - cb).max() <= 1e-10 * np.abs(cb).max()


def test_regression_resistive_branch_recovers_conductance_scale():
    cg = np.array([5.0, 5.0])
    cb = np.zeros(2)
    P, Q, V, tree = consistent_chain_data(cg, cb, mode="nodal")
    g, b = phasor_free_admittance(P, Q, V, tree, mode="nodal")
    assert np.abs(g - cg).max() <= 1e-10 * cg.max()
    assert np.abs(b).max() <= 1e-12


def test_regression_invariant_to_snapshot_shuffling():
    cg = np.array([4.0, 7.5, 2.0])
    cb = np.array([9.0, 3.0, 6.5])
    P, Q, V, tree = consistent_chain_data(cg, cb)
    rng = np.random.default_rng(9)
    order = rng.permutation(P.shape[0])
    g1, b1 = phasor_free_admittance(P, Q, V, tree)
    g2, b2 = phasor_free_admittance(P[order], Q[order], V[order], tree)
    assert np.allclose(g1, g2, rtol=0, atol=1e-12)
    assert np.allclose(b1, b2, rtol=0, atol=1e-12)


def test_regression_degenerate_drop_gets_flat_start():
    T = 10
    V = np.column_stack([np.full(T, 1.0), np.full(T, 1.0)])   # zero drop
    P = np.ones((T, 2))
    Q = np.ones((T, 2))
    tree = candidate_set(2, prior=[(1, 2)])
    with pytest.warns(RuntimeWarning, match="no magnitude drop"):
        g, b = phasor_free_admittance(P, Q, V, tree)
    assert g[0] == FLAT_G and b[0] == FLAT_B


def test_regression_rejects_unknown_mode():
    P, Q, V, tree = consistent_chain_data(np.array([4.0]), np.array([9.0]))
    with pytest.raises(ValueError, match="unknown flow mode"):
        phasor_free_admittance(P, Q, V, tree, mode="psychic")


# ------------------------------------------------------------- angle seeds ---

def test_dc_seed_zero_injections():
    cs = candidate_set(3, prior=[(1, 2), (2, 3)])
    th = dc_angle_seed(np.zeros((4, 3)), cs, np.array([-10.0, -5.0]))
    assert np.array_equal(th, np.zeros((4, 3)))


def test_dc_seed_two_bus_scalar():
    cs = candidate_set(2, prior=[(1, 2)])
    P = np.array([[0.1, -0.1]])
    th = dc_angle_seed(P, cs, np.array([-10.0]), slack_bus=1)
    assert th[0, 0] == 0.0
    assert th[0, 1] == pytest.approx(-0.01, abs=1e-15)


def test_dc_seed_disconnected_warns_and_zeroes():
    cs = candidate_set(4, prior=[(1, 2), (3, 4)])    # two islands
    P = np.ones((2, 4))
    with pytest.warns(RuntimeWarning, match="singular"):
        th = dc_angle_seed(P, cs, np.array([-10.0, -10.0]))
    assert np.array_equal(th, np.zeros((2, 4)))


# --------------------------------------------------- 33-bus approximation ---

@pytest.fixture(scope="module")
def feeder33():
    case = load_bundled_case("case33")
    prof = generate_load_profile(case, 40, seed=2, spread=0.5)
    return case, solve_snapshots(case, prof)


def test_tree_quality_on_feeder(feeder33):
    case, truth = feeder33
    tree = build_tree_topology(truth.V, InitConfig(window=5))
    true_pairs = {br.pair for br in case.branches}
    hits = len(set(tree.pairs) & true_pairs)
    assert hits >= 0.9 * len(true_pairs)


def test_seed_magnitudes_on_feeder(feeder33):
    case, truth = feeder33
    tree = build_tree_topology(truth.V, InitConfig(window=5))
    g, b = phasor_free_admittance(truth.P, truth.Q, truth.V, tree)
    idx = {p: k for k, p in enumerate(tree.pairs)}
    ratios = [np.hypot(g[idx[br.pair]], b[idx[br.pair]])
              / np.hypot(br.g, br.b)
              for br in case.branches if br.pair in idx]
    ratios = np.asarray(ratios)
    assert np.mean((ratios >= 0.2) & (ratios <= 5.0)) >= 0.9


def test_dc_seed_accuracy_on_feeder(feeder33):
    # feeder r/x near 1 makes the lossless-DC angle profile overshoot; the
    # seed is order-of-magnitude only, and that is all the optimizer needs
    case, _ = feeder33
    prof = generate_load_profile(case, 1, seed=0, spread=0.0)
    base = solve_snapshots(case, prof)
    bt = np.array([br.b for br in case.branches])
    cs = candidate_set(case.bus_count, prior=[br.pair for br in case.branches])
    th = dc_angle_seed(base.P, cs, bt, slack_bus=case.slack_bus)
    assert np.abs(th - base.theta).max() <= 0.15


# ---------------------------------------------------------- full assembly ---

def three_bus_tensor(T=20, seed=0):
    case = load_bundled_case("case3")
    prof = generate_load_profile(case, T, seed=seed, spread=0.5)
    truth = solve_snapshots(case, prof)
    plan = full_plan_n(case.bus_count, T, quantities=("P", "Q", "V"))
    z = MeasurementTensor(noiseless_vector(plan, truth),
                          np.full(plan.M, 0.001), plan)
    return case, truth, plan, z


def test_initial_state_voltage_block_copies_measurements():
    case, truth, plan, z = three_bus_tensor()
    x0 = make_initial_state(z, slack_bus=case.slack_bus)
    assert np.array_equal(x0.V, truth.V)
    assert x0.theta[:, case.slack_bus - 1].max() == 0.0


def test_initial_state_finite_loss_and_shapes():
    case, truth, plan, z = three_bus_tensor()
    x0 = make_initial_state(z, slack_bus=case.slack_bus)
    assert len(x0.layout.cset) == 3           # all pairs of a 3-bus network
    ctx = ModelContext(x0.layout, plan)
    assert np.isfinite(ctx.loss(pack(x0), z))


def test_initial_state_seeds_by_candidate_set_kind():
    case, truth, plan, z = three_bus_tensor()
    x0_free = make_initial_state(z, slack_bus=case.slack_bus)
    tree_pairs = {p for k, p in enumerate(x0_free.layout.cset.pairs)
                  if x0_free.g[k] != 0.0 or x0_free.b[k] != 0.0}
    assert len(tree_pairs) == 2               # a 3-bus tree has two edges
    assert all(b <= 0 for b in x0_free.b)

    prior = candidate_set(3)                  # same pairs, but caller-given
    x0_prior = make_initial_state(z, cset=prior, slack_bus=case.slack_bus)
    off_tree = [k for k, p in enumerate(prior.pairs) if p not in tree_pairs]
    assert all(x0_prior.g[k] == FLAT_G and x0_prior.b[k] == FLAT_B
               for k in off_tree)


def test_initial_state_requires_voltage_channels():
    case, truth, plan, z = three_bus_tensor()
    bare = full_plan_n(3, plan.T, quantities=("P", "Q"))
    zb = MeasurementTensor(noiseless_vector(bare, truth),
                           np.full(bare.M, 0.001), bare)
    with pytest.raises(ValueError, match="supply x0"):
        make_initial_state(zb)


def test_initial_state_night_window_filters_snapshots():
    case, truth, plan, z = three_bus_tensor(T=30)
    cfg = InitConfig(window=3, night_window=slice(0, 12))
    x0 = make_initial_state(z, cfg=cfg, slack_bus=case.slack_bus)
    assert x0.V.shape == (30, 3)              # state keeps every snapshot
    assert np.isfinite(x0.g).all()
