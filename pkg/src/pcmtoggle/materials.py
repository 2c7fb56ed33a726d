"""Temperature- and phase-dependent properties of GST and its surroundings.

All quantities are SI. The default values are typical literature magnitudes
for Ge2Sb2Te5 and are meant to be calibrated, not taken as measured data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError

K_B_EV = 8.617333262e-5  # Boltzmann constant, eV/K
T_REF = 300.0


@dataclass(frozen=True)
class PhaseProperties:
    sigma_ref: float  # S/m at T_REF
    activation_energy: float  # eV
    kappa: float  # W/(m K)
    c_vol: float  # J/(m^3 K)

    def __post_init__(self):
        if self.sigma_ref <= 0 or self.kappa <= 0 or self.c_vol <= 0:
            raise InputDomainError("sigma_ref, kappa and c_vol must be positive")
        if self.activation_energy < 0:
            raise InputDomainError("activation_energy must be non-negative")

    def sigma(self, T):
        """Thermally activated conductivity, anchored at ``T_REF``."""
        return self.sigma_ref * np.exp(-self.activation_energy / K_B_EV * (1.0 / T - 1.0 / T_REF))


@dataclass(frozen=True)
class MaterialTable:
    amorphous: PhaseProperties = field(
        default_factory=lambda: PhaseProperties(3.0, 0.45, 0.3, 1.25e6))
    crystalline: PhaseProperties = field(
        default_factory=lambda: PhaseProperties(4.0e4, 0.02, 1.0, 1.25e6))
    molten: PhaseProperties = field(
        default_factory=lambda: PhaseProperties(1.0e6, 0.0, 1.5, 1.25e6))
    T_melt: float = 900.0
    T_crys: float = 430.0
    latent_heat: float = 6.0e8  # J/m^3
    latent_window: float = 20.0  # K, full width of the c_eff bump
    growth_prefactor: float = 6600.0  # m/s
    growth_activation: float = 0.3  # eV
    nucleation_rate_prefactor: float = 1.0e40  # 1/(m^3 s)
    nucleation_activation: float = 2.0  # eV
    electrode_sigma: float = 1.0e7
    electrode_kappa: float = 100.0
    electrode_c_vol: float = 3.0e6
    insulator_kappa: float = 1.0
    insulator_c_vol: float = 1.7e6

    def __post_init__(self):
        if not self.T_melt > self.T_crys > 300.0:
            raise InputDomainError("require T_melt > T_crys > 300 K")
        contrast = self.crystalline.sigma(300.0) / self.amorphous.sigma(300.0)
        if contrast < 100.0:
            raise InputDomainError(
                f"crystalline/amorphous conductivity contrast at 300 K is {contrast:.3g}, need >= 100")
        for name in ("latent_heat", "latent_window", "growth_prefactor", "nucleation_rate_prefactor",
                     "electrode_sigma", "electrode_kappa", "electrode_c_vol",
                     "insulator_kappa", "insulator_c_vol"):
            if not getattr(self, name) > 0:
                raise InputDomainError(f"{name} must be positive")
        if self.growth_activation < 0 or self.nucleation_activation < 0:
            raise InputDomainError("activation energies must be non-negative")


def _check_T(T):
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise InputDomainError("temperature must be positive")
    return T


def conductivity(cd_norm, T, molten, table: MaterialTable):
    """Electrical conductivity of GST from crystal fraction, temperature and melt state.

    Non-molten material mixes the two solid phases geometrically,
    ``sigma_a(T)**(1 - cd) * sigma_c(T)**cd``, which is exact at both ends.
    Molten material has a flat conductivity. Works on scalars and arrays.
    """
    cd = np.asarray(cd_norm, dtype=float)
    if np.any(~((cd >= 0.0) & (cd <= 1.0))):
        raise InputDomainError("cd_norm must lie in [0, 1]")
    T = _check_T(T)
    log_sa = np.log(table.amorphous.sigma(T))
    log_sc = np.log(table.crystalline.sigma(T))
    mixed = np.exp(log_sa + cd * (log_sc - log_sa))
    # keep endpoints bit-exact
    mixed = np.where(cd == 0.0, table.amorphous.sigma(T), mixed)
    mixed = np.where(cd == 1.0, table.crystalline.sigma(T), mixed)
    out = np.where(np.asarray(molten, dtype=bool), table.molten.sigma_ref, mixed)
    return out[()] if out.ndim == 0 else out


def growth_velocity(T, table: MaterialTable):
    """Grain growth speed (m/s); zero outside ``[T_crys, T_melt)``."""
    T = _check_T(T)
    window = (T >= table.T_crys) & (T < table.T_melt)
    Ts = np.where(window, T, table.T_crys)
    v = table.growth_prefactor * np.exp(-table.growth_activation / (K_B_EV * Ts)) * (1.0 - Ts / table.T_melt)
    out = np.where(window, v, 0.0)
    return out[()] if out.ndim == 0 else out


def nucleation_rate(T, table: MaterialTable):
    """Expected nucleation events per volume per time; zero outside ``[T_crys, T_melt)``."""
    T = _check_T(T)
    window = (T >= table.T_crys) & (T < table.T_melt)
    Ts = np.where(window, T, table.T_crys)
    r = (table.nucleation_rate_prefactor * np.exp(-table.nucleation_activation / (K_B_EV * Ts))
         * (1.0 - Ts / table.T_melt))
    out = np.where(window, r, 0.0)
    return out[()] if out.ndim == 0 else out


def gst_kappa(cd_norm, molten, table: MaterialTable):
    """Thermal conductivity of GST, linear in crystal fraction."""
    cd = np.asarray(cd_norm, dtype=float)
    k = table.amorphous.kappa + cd * (table.crystalline.kappa - table.amorphous.kappa)
    return np.where(np.asarray(molten, dtype=bool), table.molten.kappa, k)


def gst_heat_capacity(T, cd_norm, molten, table: MaterialTable):
    """Effective volumetric heat capacity including the latent-heat bump at the melt."""
    T = np.asarray(T, dtype=float)
    cd = np.asarray(cd_norm, dtype=float)
    c = table.amorphous.c_vol + cd * (table.crystalline.c_vol - table.amorphous.c_vol)
    c = np.where(np.asarray(molten, dtype=bool), table.molten.c_vol, c)
    half = 0.5 * table.latent_window
    bump = np.where(np.abs(T - table.T_melt) <= half, table.latent_heat / table.latent_window, 0.0)
    return c + bump
