import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridtae.netmodel import (
    Branch,
    CaseError,
    NetworkCase,
    build_admittance,
    candidate_set,
    impedance_to_gb,
    load_bundled_case,
    parse_case,
    serialize_case,
)

TWO_BUS_M = """
function mpc = case
mpc.baseMVA = 1;
mpc.bus = [
    1 3 0 0;
    2 1 0.1 0.05;
];
mpc.branch = [
    1 2 0 0.5 0;
];
"""


def test_impedance_inversion_by_hand():
    # r=0, x=0.5: y = 1/(j0.5) = -2j
    g, b = impedance_to_gb(0.0, 0.5)
    assert g == 0.0
    assert b == -2.0


def test_parse_matpower_two_bus():
    case = parse_case(TWO_BUS_M, "matpower-subset")
    assert case.bus_count == 2
    assert case.slack_bus == 1
    assert case.branches[0].pair == (1, 2)
    assert case.branches[0].g == 0.0
    assert case.branches[0].b == -2.0
    # loads divided by baseMVA
    assert case.buses[1].pd == pytest.approx(0.1)


def test_parse_rejects_self_loop():
    bad = TWO_BUS_M.replace("1 2 0 0.5 0;", "2 2 0 0.5 0;")
    with pytest.raises(CaseError, match="self-loop"):
        parse_case(bad, "matpower-subset")


def test_parse_rejects_zero_impedance():
    bad = TWO_BUS_M.replace("1 2 0 0.5 0;", "1 2 0 0 0;")
    with pytest.raises(CaseError, match="zero-impedance"):
        parse_case(bad, "matpower-subset")


def test_parse_rejects_duplicate_branch():
    bad = TWO_BUS_M.replace("1 2 0 0.5 0;", "1 2 0 0.5 0; 2 1 0.1 0.5 0;")
    with pytest.raises(CaseError, match="duplicate"):
        parse_case(bad, "matpower-subset")


def test_parse_reports_line_number():
    bad = TWO_BUS_M.replace("2 1 0.1 0.05;", "2 1 0.x1 0.05;")
    with pytest.raises(CaseError, match="line"):
        parse_case(bad, "matpower-subset")


def test_shunt_column_warns():
    with_shunt = TWO_BUS_M.replace("1 2 0 0.5 0;", "1 2 0 0.5 0.01;")
    with pytest.warns(UserWarning, match="shunt"):
        parse_case(with_shunt, "matpower-subset")


def test_bundled_case33():
    case = load_bundled_case("case33")
    assert case.bus_count == 33
    assert len(case.branches) == 32
    assert case.slack_bus == 1
    # total load is the classic 3.715 MW / 2.3 MVAr, in p.u. on 10 MVA
    s = case.nominal_loads.sum()
    assert s.real == pytest.approx(0.3715, rel=1e-9)
    assert s.imag == pytest.approx(0.2300, rel=1e-9)


def test_bundled_case141():
    case = load_bundled_case("case141")
    assert case.bus_count == 141
    assert len(case.branches) == 140


def test_bundled_case3_native_json():
    case = load_bundled_case("case3")
    assert case.bus_count == 3
    assert [br.pair for br in case.branches] == [(1, 2), (2, 3)]


def test_native_json_round_trip():
    case = load_bundled_case("case33")
    again = parse_case(serialize_case(case), "native-json")
    assert again.bus_count == case.bus_count
    assert again.slack_bus == case.slack_bus
    for a, b in zip(again.branches, case.branches):
        assert a.pair == b.pair
        assert a.g == pytest.approx(b.g, rel=1e-12)
        assert a.b == pytest.approx(b.b, rel=1e-12)
    for a, b in zip(again.buses, case.buses):
        assert (a.id, a.pd, a.qd) == pytest.approx((b.id, b.pd, b.qd))


def test_build_admittance_from_case_matches_branches():
    case = parse_case(TWO_BUS_M, "matpower-subset")
    adm = build_admittance(case)
    assert np.allclose(adm.B, [[-2, 2], [2, -2]])
    assert np.all(adm.G == 0)


def test_build_admittance_single_line_values():
    cs = candidate_set(2)
    adm = build_admittance(cs, g=[1.0], b=[-2.0], bus_count=2)
    assert np.allclose(adm.G, [[1, -1], [-1, 1]])
    assert np.allclose(adm.B, [[-2, 2], [2, -2]])


def test_build_admittance_empty():
    cs = candidate_set(3, prior=[])
    adm = build_admittance(cs, g=[], b=[], bus_count=3)
    assert np.all(adm.G == 0) and np.all(adm.B == 0)
    assert adm.G.shape == (3, 3)


def test_case33_row_sums_zero():
    adm = build_admittance(load_bundled_case("case33"))
    assert np.max(np.abs(adm.G.sum(axis=1))) < 1e-12
    assert np.max(np.abs(adm.B.sum(axis=1))) < 1e-12
    assert np.allclose(adm.G, adm.G.T)
    assert np.allclose(adm.B, adm.B.T)


def test_admittance_matches_branch_values():
    case = load_bundled_case("case33")
    adm = build_admittance(case)
    for br in case.branches:
        i, j = br.from_bus - 1, br.to_bus - 1
        assert adm.G[i, j] == pytest.approx(-br.g, rel=1e-14)
        assert adm.B[i, j] == pytest.approx(-br.b, rel=1e-14)


@given(st.integers(2, 8), st.data())
def test_admittance_symmetry_property(n, data):
    cs = candidate_set(n)
    vals = data.draw(
        st.lists(st.floats(-50, 50, allow_nan=False), min_size=2 * len(cs),
                 max_size=2 * len(cs)))
    g = np.array(vals[: len(cs)])
    b = np.array(vals[len(cs):])
    adm = build_admittance(cs, g=g, b=b, bus_count=n)
    assert np.array_equal(adm.G, adm.G.T)
    assert np.array_equal(adm.B, adm.B.T)
    assert np.max(np.abs(adm.G.sum(axis=1))) < 1e-10 * max(1.0, np.abs(g).max())


def test_candidate_set_counts():
    assert len(candidate_set(33)) == 528
    assert candidate_set(2).pairs == ((1, 2),)
    prior = [br.pair for br in load_bundled_case("case33").branches]
    assert len(candidate_set(33, prior=prior)) == 32


def test_candidate_set_prior_validation():
    with pytest.raises(CaseError, match="nonexistent"):
        candidate_set(5, prior=[(1, 9)])
    # order inside a pair does not matter
    cs = candidate_set(5, prior=[(4, 2)])
    assert cs.pairs == ((2, 4),)
