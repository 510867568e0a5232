"""Physical constants, cesium line data and unit conversions.

Everything inside the package is SI (m, s, J, rad/s). The helpers here are
the only place lab units (um, nm, ns, uK, MHz, uW) are converted.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import constants as csts

C = csts.c
HBAR = csts.hbar
H = csts.h
KB = csts.k

TWO_PI = 2.0 * np.pi

# lab-unit multipliers: value_in_SI = value_in_lab * FACTOR
NM = 1e-9
UM = 1e-6
NS = 1e-9
US = 1e-6
UK = KB * 1e-6          # J per microkelvin
MK = KB * 1e-3
MHZ = TWO_PI * 1e6      # rad/s per MHz
GHZ = TWO_PI * 1e9
UW = 1e-6
UM2 = 1e-12
KHZ_UM3 = H * 1e3 * 1e-18   # J m^3 per (h x kHz x um^3), usual C3 unit


class Level(str, enum.Enum):
    """Internal state an atom's potential is evaluated for."""

    F3 = "F3"
    F4 = "F4"
    EXCITED = "excited"


@dataclass(frozen=True)
class Transitions:
    """Cesium D-line data used by the dipole-potential model.

    Line centres are the fine-structure centroids; the ground hyperfine
    levels sit ``-9/16`` (F=3) and ``+7/16`` (F=4) of the splitting away.
    """

    omega_d1: float = TWO_PI * 335.116048807e12
    omega_d2: float = TWO_PI * 351.72571850e12
    gamma_d1: float = TWO_PI * 4.575e6
    gamma_d2: float = TWO_PI * 5.234e6
    hfs: float = TWO_PI * 9.192631770e9
    mass: float = 132.905451931 * csts.atomic_mass

    def ground_offset(self, level: Level) -> float:
        if level is Level.F3:
            return -9.0 / 16.0 * self.hfs
        if level is Level.F4:
            return 7.0 / 16.0 * self.hfs
        raise ValueError(f"{level} is not a ground hyperfine level")

    def line(self, name: str, level: Level) -> float:
        """Angular frequency of the D1/D2 line starting from ``level``."""
        centre = {"D1": self.omega_d1, "D2": self.omega_d2}[name]
        return centre - self.ground_offset(level)

    def laser_omega(self, detuning: float) -> float:
        """Absolute laser frequency for a detuning quoted from D2, F=3."""
        return self.line("D2", Level.F3) + detuning

    @property
    def d1_wavelength(self) -> float:
        return TWO_PI * C / self.omega_d1

    @property
    def recoil_velocity(self) -> float:
        """Single D1 photon recoil speed."""
        return H / (self.mass * self.d1_wavelength)


CESIUM = Transitions()
CS_MASS = CESIUM.mass
GAMMA0 = CESIUM.gamma_d1   # free-space linewidth of the probed D1 line
