import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from pcmtoggle.circuit import CircuitConfig, FetParams, fet_current, linear_device, solve_coupled
from pcmtoggle.errors import ConfigError, CouplingError

K = 2e-3
P = FetParams(v_threshold=0.4, transconductance_factor=K)


def test_cutoff():
    assert fet_current(0.0, 1.0, P) == 0.0
    assert fet_current(0.4, 2.0, P) == 0.0


def test_saturation_closed_form():
    p = FetParams(v_threshold=0.5, transconductance_factor=K)
    assert fet_current(1.5, 2.0, p) == K / 2  # overdrive 1 V


def test_triode_slope_at_origin():
    h = 1e-9
    assert fet_current(1.4, h, P) / h == pytest.approx(K * 1.0, rel=1e-6)


@given(vgs=st.floats(0.0, 3.0), vds=st.floats(0.0, 3.0))
def test_continuous_and_monotone(vgs, vds):
    v_ov = vgs - P.v_threshold
    i = fet_current(vgs, vds, P)
    assert i >= 0
    assert fet_current(vgs, vds + 1e-6, P) >= i
    if v_ov > 0:  # region boundary
        lo, hi = fet_current(vgs, v_ov * (1 - 1e-9), P), fet_current(vgs, v_ov, P)
        assert lo == pytest.approx(hi, rel=1e-6)


def test_reverse_bias_is_antisymmetric():
    # swapping drain and source of a device with the gate tied relative to the source
    assert fet_current(1.0, -0.2, P) == -fet_current(1.2, 0.2, P)


def test_fet_params_validation():
    with pytest.raises(ConfigError):
        FetParams(0.4, 0.0)
    with pytest.raises(ConfigError, match="r_load"):
        CircuitConfig(r_load=0.0)
    with pytest.raises(ConfigError):
        CircuitConfig(v_gate_read=float("nan"))


def branch_oracle(v_supply, r_dev, r_load, v_gate, fet):
    """Series supply -> resistor -> FET -> load, solved for the branch current by bisection."""
    def mismatch(i):
        v2 = v_supply - i * r_dev
        vq = i * r_load
        return fet_current(v_gate - vq, v2 - vq, fet) - i
    if v_supply == 0:
        return 0.0
    i = brentq(mismatch, 0.0, v_supply / (r_dev + r_load), xtol=1e-18, rtol=1e-14)
    return i * r_load


def _read_cfg(**kw):
    return CircuitConfig(v_read_supply=kw.pop("v_read_supply", 0.0759), **kw)


def test_read_against_branch_oracle():
    cfg = _read_cfg()
    dev = linear_device({("R1", "R2"): 1e-3, ("R1", "R3"): 1e-6})
    cs = solve_coupled(cfg, dev, "read")
    for v, r in ((cs.v_q, 1e3), (cs.v_qprime, 1e6)):
        assert v == pytest.approx(branch_oracle(cfg.v_read_supply, r, cfg.r_load, cfg.v_gate_read, cfg.read_fet),
                                  rel=1e-6)


def test_blocked_branch_reads_fifty_fold_lower():
    cfg = _read_cfg()
    cs = solve_coupled(cfg, linear_device({("R1", "R2"): 1e-3, ("R1", "R3"): 1e-6}), "read")
    assert cs.v_q == pytest.approx(0.05, rel=0.01)  # drive tuned for ~50 mV on the crystalline side
    assert cs.v_q / cs.v_qprime >= 50


def test_write_against_oracle():
    cfg = CircuitConfig()
    dev = linear_device({("W1", "W2"): 1e-3, ("W1", "W3"): 1e-3})
    cs = solve_coupled(cfg, dev, "write")
    v1 = branch_oracle(cfg.v_write_supply, 0.0, 500.0, cfg.v_gate_write, cfg.write_fet)
    assert cs.contact_voltages["W1"] == pytest.approx(v1, rel=1e-6)
    assert cs.i_write == pytest.approx(v1 / 500.0, rel=1e-6)
    assert cs.contact_voltages["W2"] == cs.contact_voltages["W3"] == 0.0


def test_zero_supply_gives_zeros():
    dev = linear_device({("R1", "R2"): 1e-3, ("R1", "R3"): 1e-6})
    cs = solve_coupled(_read_cfg(v_read_supply=0.0), dev, "read")
    assert cs.v_q == cs.v_qprime == 0.0
    assert all(v == 0.0 for v in cs.contact_currents.values())
    cw = solve_coupled(CircuitConfig(v_write_supply=0.0), linear_device({("W1", "W2"): 1e-3}), "write")
    assert cw.i_write == 0.0


def test_identical_branches_are_symmetric():
    dev = linear_device({("R1", "R2"): 1e-4, ("R1", "R3"): 1e-4})
    cs = solve_coupled(_read_cfg(), dev, "read")
    assert cs.v_q == cs.v_qprime


def test_swapping_branches_swaps_outputs():
    a = solve_coupled(_read_cfg(), linear_device({("R1", "R2"): 1e-3, ("R1", "R3"): 1e-6}), "read")
    b = solve_coupled(_read_cfg(), linear_device({("R1", "R2"): 1e-6, ("R1", "R3"): 1e-3}), "read")
    assert (a.v_q, a.v_qprime) == (b.v_qprime, b.v_q)


@given(ga=st.floats(1e-6, 1e-2), gb=st.floats(1e-6, 1e-2), r_load=st.floats(1e2, 1e6))
def test_kcl_at_output_nodes(ga, gb, r_load):
    cfg = _read_cfg(r_load=r_load)
    cs = solve_coupled(cfg, linear_device({("R1", "R2"): ga, ("R1", "R3"): gb}), "read")
    for node, contact in (("v_q", "R2"), ("v_qprime", "R3")):
        vq = getattr(cs, node)
        v2 = cs.contact_voltages[contact]
        i_fet = fet_current(cfg.v_gate_read - vq, v2 - vq, cfg.read_fet)
        assert abs(i_fet - vq / r_load) <= max(1e-12, 1e-4 * abs(i_fet))
        assert abs(-cs.contact_currents[contact] - i_fet) <= max(1e-12, 1e-4 * abs(i_fet))


@given(r1=st.floats(1e2, 1e6), scale=st.floats(1.5, 20.0))
def test_outputs_rise_and_ratio_falls_with_load(r1, scale):
    dev = linear_device({("R1", "R2"): 1e-3, ("R1", "R3"): 1e-6})
    a = solve_coupled(_read_cfg(r_load=r1), dev, "read")
    b = solve_coupled(_read_cfg(r_load=r1 * scale), dev, "read")
    assert b.v_q > a.v_q and b.v_qprime > a.v_qprime
    assert b.v_q / b.v_qprime < a.v_q / a.v_qprime


def test_non_convergence_reports_mismatch():
    dev = linear_device({("R1", "R2"): 1e-3, ("R1", "R3"): 1e-6})
    with pytest.raises(CouplingError) as info:
        solve_coupled(_read_cfg(), dev, "read", max_iter=1)
    assert info.value.residual > 0
    assert "residual" in str(info.value)


def test_unknown_mode():
    with pytest.raises(ConfigError):
        solve_coupled(CircuitConfig(), linear_device({}), "erase")
