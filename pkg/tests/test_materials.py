import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcmtoggle import materials as mat
from pcmtoggle.errors import InputDomainError

TABLE = mat.MaterialTable()
KB = 8.617333262e-5


def test_endpoints_are_exact():
    assert mat.conductivity(1.0, 300.0, False, TABLE) == TABLE.crystalline.sigma_ref
    assert mat.conductivity(0.0, 300.0, False, TABLE) == TABLE.amorphous.sigma_ref


def test_half_mixture_is_geometric_mean():
    # hand arithmetic for the shipped defaults: sqrt(3 * 4e4)
    assert mat.conductivity(0.5, 300.0, False, TABLE) == pytest.approx(math.sqrt(3.0 * 4.0e4), rel=1e-12)
    assert math.sqrt(3.0 * 4.0e4) == pytest.approx(346.41016151377545)


def test_molten_is_temperature_flat():
    a = mat.conductivity(0.3, 950.0, True, TABLE)
    b = mat.conductivity(0.9, 1500.0, True, TABLE)
    assert a == b == TABLE.molten.sigma_ref


def test_activation_law_against_closed_form():
    T = 700.0
    ea = TABLE.amorphous.activation_energy
    expected = 3.0 * math.exp(-ea / KB * (1.0 / T - 1.0 / 300.0))
    assert mat.conductivity(0.0, T, False, TABLE) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("cd,T", [(-0.1, 300.0), (1.2, 300.0), (0.5, 0.0), (0.5, -10.0), (np.nan, 300.0)])
def test_bad_inputs_raise(cd, T):
    with pytest.raises(InputDomainError):
        mat.conductivity(cd, T, False, TABLE)


def test_contrast_at_room_temperature():
    assert mat.conductivity(1.0, 300.0, False, TABLE) / mat.conductivity(0.0, 300.0, False, TABLE) >= 100


@given(cd=st.floats(0.0, 1.0), t1=st.floats(250.0, 1500.0), dt=st.floats(1e-3, 500.0))
def test_conductivity_increases_with_temperature(cd, t1, dt):
    assert mat.conductivity(cd, t1 + dt, False, TABLE) > mat.conductivity(cd, t1, False, TABLE)


@given(T=st.floats(1.0, 3000.0))
def test_rates_vanish_outside_window(T):
    v = mat.growth_velocity(T, TABLE)
    r = mat.nucleation_rate(T, TABLE)
    if T < TABLE.T_crys or T >= TABLE.T_melt:
        assert v == 0.0 and r == 0.0
    else:
        assert v >= 0.0 and r >= 0.0


def test_growth_velocity_closed_form_mid_window():
    T = 0.5 * (TABLE.T_crys + TABLE.T_melt)
    expected = TABLE.growth_prefactor * math.exp(-TABLE.growth_activation / (KB * T)) * (1 - T / TABLE.T_melt)
    assert mat.growth_velocity(T, TABLE) == pytest.approx(expected, rel=1e-12)
    assert mat.growth_velocity(300.0, TABLE) == 0.0
    assert mat.growth_velocity(TABLE.T_melt, TABLE) == 0.0


def test_nucleation_rate_closed_form():
    T = 0.8 * TABLE.T_melt
    expected = (TABLE.nucleation_rate_prefactor * math.exp(-TABLE.nucleation_activation / (KB * T))
                * (1 - T / TABLE.T_melt))
    assert mat.nucleation_rate(T, TABLE) == pytest.approx(expected, rel=1e-12)
    assert expected > 0


def test_table_invariants():
    with pytest.raises(InputDomainError):
        mat.MaterialTable(T_crys=950.0)
    with pytest.raises(InputDomainError):
        mat.MaterialTable(amorphous=mat.PhaseProperties(1e3, 0.3, 0.3, 1.25e6))
    with pytest.raises(InputDomainError):
        mat.PhaseProperties(-1.0, 0.1, 1.0, 1.0)


def test_latent_heat_integrates_to_table_value():
    T = np.linspace(TABLE.T_melt - 30, TABLE.T_melt + 30, 60001)
    cd = np.zeros_like(T)
    bump = mat.gst_heat_capacity(T, cd, np.zeros_like(T, dtype=bool), TABLE) - TABLE.amorphous.c_vol
    assert np.trapezoid(bump, T) == pytest.approx(TABLE.latent_heat, rel=1e-3)
