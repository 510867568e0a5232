"""Optical and surface potentials around the two-beam waveguide cross-section.

Coordinates are the 2D (y, z) plane through the thick part of the structure,
with the centre of the vacuum gap at the origin and atoms arriving from +z.
All array functions broadcast over ``y``, ``z`` and ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (DomainExitError, GridDomainError, GridFormatError,
                     InsideDielectricError, SingularInputError)
from .units import (C, CESIUM, GHZ, NM, UK, UM, UM2, Level, Transitions)

GRADIENT_STEP = 1.0 * NM


# -- geometry

def _rect_sdf(y, z, yc, zc, hy, hz):
    """Signed distance to an axis-aligned rectangle and its gradient."""
    py = y - yc
    pz = z - zc
    qy = np.abs(py) - hy
    qz = np.abs(pz) - hz
    oy = np.maximum(qy, 0.0)
    oz = np.maximum(qz, 0.0)
    out = np.sqrt(oy * oy + oz * oz)
    d = out + np.minimum(np.maximum(qy, qz), 0.0)
    outside = out > 0
    inv = 1.0 / np.where(outside, out, 1.0)
    y_face = qy >= qz
    gy = np.copysign(np.where(outside, oy * inv, y_face), py)
    gz = np.copysign(np.where(outside, oz * inv, ~y_face), pz)
    return d, gy, gz


def _rect_distance(y, z, yc, zc, hy, hz):
    qy = np.abs(y - yc) - hy
    qz = np.abs(z - zc) - hz
    oy = np.maximum(qy, 0.0)
    oz = np.maximum(qz, 0.0)
    return np.sqrt(oy * oy + oz * oz) + np.minimum(np.maximum(qy, qz), 0.0)


@dataclass(frozen=True)
class Geometry2D:
    """Cross-section of the two nanobeams at their widest point.

    Each beam is a ``beam_width`` x ``thickness`` rectangle; the beams sit
    symmetrically about y = 0, separated by ``gap_width``.
    """

    gap_width: float = 250 * NM
    beam_width: float = 300 * NM
    thickness: float = 200 * NM
    unit_cell: float = 370 * NM
    cells: int = 150

    def __post_init__(self):
        for name in ("gap_width", "beam_width", "thickness", "unit_cell"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cells <= 0:
            raise ValueError("cells must be positive")

    @property
    def outer_edge(self) -> float:
        return 0.5 * self.gap_width + self.beam_width

    @property
    def length(self) -> float:
        return self.cells * self.unit_cell

    @property
    def beams(self):
        """(yc, zc, half_y, half_z) for the +y and -y beams."""
        yc = 0.5 * self.gap_width + 0.5 * self.beam_width
        h = (0.5 * self.beam_width, 0.5 * self.thickness)
        return ((yc, 0.0) + h, (-yc, 0.0) + h)

    def beam_distances(self, y, z):
        return [_rect_sdf(y, z, *b) for b in self.beams]

    def signed_distance(self, y, z):
        """Distance to the nearest dielectric surface, negative inside."""
        # mirror symmetry: the nearer beam is always the one on the same side
        return _rect_distance(np.abs(y), z, *self.beams[0])

    def distance_and_gradient(self, y, z):
        y = np.asarray(y, dtype=float)
        d, gy, gz = _rect_sdf(np.abs(y), z, *self.beams[0])
        return d, np.where(y < 0, -gy, gy), gz

    def footprint_distance(self, y, z):
        """Distance to the box enclosing both beams and the gap (0 inside)."""
        d, gy, gz = _rect_sdf(y, z, 0.0, 0.0, self.outer_edge, 0.5 * self.thickness)
        inside = d <= 0
        return (np.where(inside, 0.0, d), np.where(inside, 0.0, gy),
                np.where(inside, 0.0, gz))

    def inside(self, y, z):
        return self.signed_distance(y, z) <= 0

    def in_gap(self, y, z, tol=0.0):
        return (np.abs(y) < 0.5 * self.gap_width + tol) & (np.abs(z) <= 0.5 * self.thickness)


@dataclass(frozen=True)
class Domain:
    y_half: float = 25 * UM
    z_min: float = -10 * UM
    z_max: float = 60 * UM

    def margin(self, y, z):
        """Positive inside, <= 0 once the boundary is crossed."""
        return np.minimum(np.minimum(self.y_half - np.abs(y), z - self.z_min), self.z_max - z)

    def contains(self, y, z):
        return self.margin(y, z) > 0


# -- imported grids

@dataclass(frozen=True)
class FieldGrid:
    """Regularly sampled relative intensity on the (y, z) plane.

    ``values[iz, iy]`` is the sample at ``(origin_y + iy*dy, origin_z + iz*dz)``.
    """

    values: np.ndarray
    dy: float
    dz: float
    origin_y: float
    origin_z: float

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def nz(self) -> int:
        return self.values.shape[0]

    @property
    def y_max(self) -> float:
        return self.origin_y + (self.ny - 1) * self.dy

    @property
    def z_max(self) -> float:
        return self.origin_z + (self.nz - 1) * self.dz

    def covers(self, y_min, y_max, z_min, z_max) -> bool:
        return (self.origin_y <= y_min and self.y_max >= y_max
                and self.origin_z <= z_min and self.z_max >= z_max)

    def __call__(self, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        fy = (y - self.origin_y) / self.dy
        fz = (z - self.origin_z) / self.dz
        eps = 1e-9
        if np.any((fy < -eps) | (fy > self.ny - 1 + eps) | (fz < -eps) | (fz > self.nz - 1 + eps)):
            raise GridDomainError("field grid evaluated outside its sampled area")
        # snap float noise so node evaluation is exact
        fy = np.clip(np.where(np.abs(fy - np.round(fy)) < eps, np.round(fy), fy), 0.0, self.ny - 1)
        fz = np.clip(np.where(np.abs(fz - np.round(fz)) < eps, np.round(fz), fz), 0.0, self.nz - 1)
        iy = np.minimum(np.floor(fy).astype(int), max(self.ny - 2, 0))
        iz = np.minimum(np.floor(fz).astype(int), max(self.nz - 2, 0))
        wy = fy - iy
        wz = fz - iz
        v = self.values
        iy1 = np.minimum(iy + 1, self.ny - 1)
        iz1 = np.minimum(iz + 1, self.nz - 1)
        return ((1 - wz) * ((1 - wy) * v[iz, iy] + wy * v[iz, iy1])
                + wz * ((1 - wy) * v[iz1, iy] + wy * v[iz1, iy1]))

    def gradient(self, y, z, step=GRADIENT_STEP):
        """Central differences, one-sided where a +-step leaves the grid."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        yp = np.minimum(y + step, self.y_max)
        ym = np.maximum(y - step, self.origin_y)
        zp = np.minimum(z + step, self.z_max)
        zm = np.maximum(z - step, self.origin_z)
        gy = (self(yp, z) - self(ym, z)) / np.where(yp > ym, yp - ym, 1.0)
        gz = (self(y, zp) - self(y, zm)) / np.where(zp > zm, zp - zm, 1.0)
        return gy, gz


def import_field_grid(path) -> FieldGrid:
    """Read a plain-text intensity grid.

    Header: ``nx ny dy_nm dz_nm origin_y_nm origin_z_nm``, where ``nx`` counts
    samples along y and ``ny`` along z. It is followed by ``ny`` lines (one per
    z, increasing) of ``nx`` non-negative values (y increasing). Lines starting
    with ``#`` are ignored.
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise GridFormatError("empty grid file")
    head = lines[0].split()
    if len(head) != 6:
        raise GridFormatError("header must be: nx ny dy_nm dz_nm origin_y_nm origin_z_nm")
    try:
        nx, ny = int(head[0]), int(head[1])
        dy, dz, oy, oz = (float(v) * NM for v in head[2:])
    except ValueError as exc:
        raise GridFormatError(f"unparseable header: {lines[0]!r}") from exc
    if nx < 2 or ny < 2 or not (dy > 0 and dz > 0):
        raise GridFormatError("grid needs nx, ny >= 2 and positive spacings")
    if not (np.isfinite(oy) and np.isfinite(oz)):
        raise GridFormatError("non-finite origin")
    rows = lines[1:]
    if len(rows) != ny:
        raise GridFormatError(f"expected {ny} data rows, found {len(rows)}")
    try:
        values = np.array([[float(v) for v in row.split()] for row in rows], dtype=object)
    except ValueError as exc:
        raise GridFormatError("non-numeric grid value") from exc
    if any(len(row.split()) != nx for row in rows):
        raise GridFormatError(f"every data row must hold {nx} values")
    values = np.array([[float(v) for v in row.split()] for row in rows])
    if not np.all(np.isfinite(values)):
        raise GridFormatError("non-finite grid value")
    if np.any(values < 0):
        raise GridFormatError("negative intensity in grid")
    return FieldGrid(values, dy, dz, oy, oz)


def write_field_grid(path, grid: FieldGrid) -> None:
    with open(path, "w") as fh:
        fh.write(f"{grid.ny} {grid.nz} {grid.dy / NM!r} {grid.dz / NM!r} "
                 f"{grid.origin_y / NM!r} {grid.origin_z / NM!r}\n")
        for row in grid.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


# -- dipole potential

def dipole_coefficient(detuning: float, level: Level, transitions: Transitions = CESIUM) -> float:
    """Ground-state light shift per unit intensity (J per W/m^2).

    Scalar two-line formula with D2/D1 weights 2:1. ``detuning`` is the laser
    detuning from the D2 line out of F=3.
    """
    if level is Level.EXCITED:
        raise ValueError("excited-state shifts are a ratio of the ground shift")
    omega = transitions.laser_omega(detuning)
    d2 = omega - transitions.line("D2", level)
    d1 = omega - transitions.line("D1", level)
    if d2 == 0 or d1 == 0:
        raise SingularInputError("laser is resonant with a D line")
    w0 = transitions.omega_d2
    pref = np.pi * C**2 * transitions.gamma_d2 / (2.0 * w0**3)
    return pref * (2.0 / d2 + 1.0 / d1)


def dipole_potential(intensity, level: Level, detuning: float,
                     transitions: Transitions = CESIUM):
    intensity = np.asarray(intensity, dtype=float)
    if np.any(intensity < 0):
        raise ValueError("intensity must be non-negative")
    return dipole_coefficient(detuning, level, transitions) * intensity


# -- lattice

@dataclass(frozen=True)
class LatticeParams:
    """Moving 1D standing wave along z ("conveyor belt")."""

    depth: float = 500 * UK
    waist: float = 60 * UM
    f_chirp: float = 1.2e6
    detuning: float = -800 * GHZ
    wavelength: Optional[float] = None
    phase: float = 0.0
    excited_ratio: float = 1.0
    scattering: Optional[FieldGrid] = None

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("lattice depth must be >= 0")
        if not self.waist > 0:
            raise ValueError("lattice waist must be positive")

    @property
    def lam(self) -> float:
        if self.wavelength is not None:
            return self.wavelength
        return 2 * np.pi * C / CESIUM.laser_omega(self.detuning)

    @property
    def k(self) -> float:
        return 2 * np.pi / self.lam

    @property
    def spacing(self) -> float:
        return 0.5 * self.lam

    @property
    def speed(self) -> float:
        """Antinode speed; the antinodes travel towards -z."""
        return self.f_chirp * self.spacing

    @property
    def period(self) -> float:
        return 1.0 / self.f_chirp if self.f_chirp else np.inf

    def theta(self, z, t):
        return self.k * z + np.pi * self.f_chirp * t + self.phase

    def antinode_time(self, n: int) -> float:
        """Time at which antinode ``n`` (z = n*spacing at t = 0) crosses z = 0."""
        return (n * np.pi - self.phase) / (np.pi * self.f_chirp)

    def peak_intensity(self, transitions: Transitions = CESIUM) -> float:
        if self.depth == 0:
            return 0.0
        coef = dipole_coefficient(self.detuning, Level.F3, transitions)
        return self.depth / abs(coef)


def track_antinode(p: LatticeParams, z0: float, t0: float, t1: float, steps: int = 200,
                   resolution: float = 1e-13) -> float:
    """Follow the intensity maximum that starts near ``z0`` from ``t0`` to ``t1``.

    The maximum is located numerically on the y = 0 axis at each step by a
    golden-section search within a quarter period of its previous position.
    """
    from scipy.optimize import minimize_scalar

    z = z0
    q = 0.25 * p.spacing
    for t in np.linspace(t0, t1, steps + 1):
        res = minimize_scalar(lambda zz: -float(lattice_intensity((0.0, zz), t, p)),
                              bounds=(z - q, z + q), method="bounded",
                              options={"xatol": resolution})
        z = res.x
    return z


def lattice_intensity(pos, t, p: LatticeParams, transitions: Transitions = CESIUM):
    """I0 exp(-2y^2/w0^2) cos^2(k z + pi f t + phi), times any scattering grid."""
    y, z = pos
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    i0 = p.peak_intensity(transitions)
    out = i0 * np.exp(-2 * np.asarray(y) ** 2 / p.waist**2) * np.cos(p.theta(z, t)) ** 2
    if p.scattering is not None:
        out = out * p.scattering(y, z)
    return out


# -- guided modes

@dataclass(frozen=True)
class GMModeModel:
    """A far-detuned guided mode with a parametric transverse profile.

    profile:
      ``evanescent``  1 inside the beam/gap footprint, exp(-2 d / decay_length)
                      outside it (d = distance to the footprint box);
      ``surface``     sum over both beams of exp(-2 d_beam / decay_length),
                      brightest on the dielectric walls;
      ``gaussian``    exp(-2[(y-y0)^2/wy^2 + (z-z0)^2/wz^2]);
      ``grid``        imported relative-intensity grid.
    """

    detuning: float
    power: float = 0.0
    mode_area: float = 10 * UM2
    polarization: str = "TM"
    decay_length: float = 100 * NM
    contrast: Optional[float] = None
    profile: str = "evanescent"
    center: tuple = (0.0, 0.0)
    waist_y: float = 200 * NM
    waist_z: float = 150 * NM
    grid: Optional[FieldGrid] = None
    excited_ratio: float = 1.0
    level_scale: tuple = (1.0, 1.0)
    name: str = "gm"

    def __post_init__(self):
        if self.polarization not in ("TE", "TM"):
            raise ValueError("polarization must be TE or TM")
        if self.profile not in ("evanescent", "surface", "gaussian", "grid"):
            raise ValueError(f"unknown GM profile {self.profile!r}")
        if self.profile == "grid" and self.grid is None:
            raise ValueError("grid profile needs an imported grid")
        if self.power < 0 or not self.mode_area > 0 or not self.decay_length > 0:
            raise ValueError("GM power must be >= 0; mode area and decay length > 0")
        c = self.axial_contrast
        if not 0 <= c <= 1:
            raise ValueError("axial contrast must lie in [0, 1]")

    @property
    def axial_contrast(self) -> float:
        if self.contrast is not None:
            return self.contrast
        return 1.0 if self.polarization == "TE" else 0.0

    @property
    def peak_intensity(self) -> float:
        return self.power / self.mode_area

    def scale(self, level: Level) -> float:
        return self.level_scale[0] if level is Level.F3 else self.level_scale[1]

    def transverse(self, y, z, geometry: Geometry2D):
        """Relative intensity and its (y, z) gradient."""
        if self.profile == "evanescent":
            d, gy, gz = geometry.footprint_distance(y, z)
            f = np.exp(-2 * d / self.decay_length)
            c = -2 / self.decay_length * f
            return f, c * gy, c * gz
        if self.profile == "surface":
            f = 0.0
            fy = 0.0
            fz = 0.0
            for d, gy, gz in geometry.beam_distances(y, z):
                d = np.maximum(d, 0.0)
                e = np.exp(-2 * d / self.decay_length)
                f = f + e
                fy = fy - 2 / self.decay_length * e * gy
                fz = fz - 2 / self.decay_length * e * gz
            return f, fy, fz
        if self.profile == "gaussian":
            y0, z0 = self.center
            uy = (y - y0) / self.waist_y
            uz = (z - z0) / self.waist_z
            f = np.exp(-2 * (uy**2 + uz**2))
            return f, -4 * uy / self.waist_y * f, -4 * uz / self.waist_z * f
        f = self.grid(y, z)
        gy, gz = self.grid.gradient(y, z)
        return f, gy, gz

    def axial(self, x, unit_cell: float):
        """Intensity along the waveguide axis relative to a Bloch antinode."""
        c = self.axial_contrast
        return (1 - c) + c * np.cos(2 * np.pi * np.asarray(x) / unit_cell) ** 2

    def intensity(self, y, z, geometry: Geometry2D):
        return self.peak_intensity * self.transverse(y, z, geometry)[0]


# -- Casimir-Polder

@dataclass(frozen=True)
class CPModel:
    """Van der Waals atom-surface attraction, -C3/d^3.

    ``mode='nearest'`` uses the closest surface of either beam; ``'per_beam'``
    sums the closest-surface terms of the two beams, which keeps the potential
    smooth on the symmetry plane of the gap.
    """

    c3_ground: float
    c3_excited: float
    enabled: bool = True
    mode: str = "nearest"
    floor: float = 0.1 * NM

    def __post_init__(self):
        if not (self.c3_ground > 0 and self.c3_excited > 0):
            raise ValueError("C3 coefficients must be positive")
        if self.mode not in ("nearest", "per_beam"):
            raise ValueError("CP mode must be 'nearest' or 'per_beam'")

    def c3(self, level: Level) -> float:
        return self.c3_excited if level is Level.EXCITED else self.c3_ground

    def energy_and_gradient(self, y, z, geometry: Geometry2D, level: Level):
        c3 = self.c3(level)
        if self.mode == "nearest":
            parts = [geometry.distance_and_gradient(y, z)]
        else:
            parts = geometry.beam_distances(y, z)
        u = 0.0
        gy = 0.0
        gz = 0.0
        for d, ny, nz in parts:
            d = np.maximum(d, self.floor)
            u = u - c3 / d**3
            slope = 3 * c3 / d**4
            gy = gy + slope * ny
            gz = gz + slope * nz
        return u, gy, gz


def cp_potential(pos, g: Geometry2D, cp: CPModel, level: Level = Level.F3) -> float:
    y, z = pos
    if np.any(g.signed_distance(y, z) <= 0):
        raise InsideDielectricError(f"position {pos} is inside the dielectric")
    return cp.energy_and_gradient(y, z, g, level)[0]


# -- the full stack

@dataclass(frozen=True)
class PotentialStack:
    """U(r, t) = U_lattice(r, t) + sum U_GM(r) + U_CP(r) for one internal level.

    Excited-state optical shifts are ``excited_ratio`` times the shift of the
    ``ground_reference`` level; the excited-state CP term uses its own C3.
    """

    geometry: Geometry2D = field(default_factory=Geometry2D)
    lattice: Optional[LatticeParams] = field(default_factory=LatticeParams)
    gms: tuple = ()
    cp: Optional[CPModel] = None
    transitions: Transitions = CESIUM
    domain: Domain = field(default_factory=Domain)
    ground_reference: Level = Level.F3

    @cached_property
    def _lattice_i0(self) -> float:
        return 0.0 if self.lattice is None else self.lattice.peak_intensity(self.transitions)

    @cached_property
    def _coefs(self) -> dict:
        out = {}
        for lv in (Level.F3, Level.F4):
            if self.lattice is not None:
                out["lattice", lv] = dipole_coefficient(self.lattice.detuning, lv, self.transitions)
            for i, gm in enumerate(self.gms):
                out[i, lv] = dipole_coefficient(gm.detuning, lv, self.transitions) * gm.scale(lv)
        return out

    @property
    def mass(self) -> float:
        return self.transitions.mass

    def _ground(self, level):
        return self.ground_reference if level is Level.EXCITED else level

    def _lattice_terms(self, y, z, t, level):
        lat = self.lattice
        lv = self._ground(level)
        a = self._coefs["lattice", lv] * self._lattice_i0
        if level is Level.EXCITED:
            a = a * lat.excited_ratio
        env = np.exp(-2 * y**2 / lat.waist**2)
        th = lat.theta(z, t)
        c2 = np.cos(th) ** 2
        u = a * env * c2
        gy = u * (-4 * y / lat.waist**2)
        gz = -a * env * lat.k * np.sin(2 * th)
        if lat.scattering is not None:
            s = lat.scattering(y, z)
            sy, sz = lat.scattering.gradient(y, z)
            gy = gy * s + u * sy
            gz = gz * s + u * sz
            u = u * s
        return u, gy, gz

    def _gm_terms(self, i, y, z, level):
        gm = self.gms[i]
        lv = self._ground(level)
        a = self._coefs[i, lv] * gm.peak_intensity
        if level is Level.EXCITED:
            a = a * gm.excited_ratio
        f, fy, fz = gm.transverse(y, z, self.geometry)
        return a * f, a * fy, a * fz

    def terms(self, y, z, t, level: Level):
        """Energy and gradient of every source, keyed by name."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        out = {}
        if self.lattice is not None and self.lattice.depth > 0:
            out["lattice"] = self._lattice_terms(y, z, t, level)
        for i, gm in enumerate(self.gms):
            out[f"gm{i}:{gm.name}"] = self._gm_terms(i, y, z, level)
        if self.cp is not None and self.cp.enabled:
            out["cp"] = self.cp.energy_and_gradient(y, z, self.geometry, level)
        return out

    def components(self, y, z, t, level: Level = Level.F3) -> dict:
        return {k: v[0] for k, v in self.terms(y, z, t, level).items()}

    def energy(self, y, z, t, level: Level = Level.F3):
        y = np.asarray(y, dtype=float)
        total = np.zeros(np.broadcast(y, np.asarray(z), np.asarray(t)).shape)
        for u, _, _ in self.terms(y, z, t, level).values():
            total = total + u
        return total

    def gradient(self, y, z, t, level: Level = Level.F3):
        shape = np.broadcast(np.asarray(y), np.asarray(z), np.asarray(t)).shape
        gy = np.zeros(shape)
        gz = np.zeros(shape)
        for _, a, b in self.terms(y, z, t, level).values():
            gy = gy + a
            gz = gz + b
        return gy, gz

    def force(self, y, z, t, level: Level = Level.F3):
        gy, gz = self.gradient(y, z, t, level)
        return -gy, -gz

    def transition_shift(self, y, z, t, level: Level = Level.F3):
        """U_excited - U_ground (J): how far the probed line moves up."""
        return self.energy(y, z, t, Level.EXCITED) - self.energy(y, z, t, level)

    def without_cp(self) -> "PotentialStack":
        return PotentialStack(self.geometry, self.lattice, self.gms, None,
                              self.transitions, self.domain, self.ground_reference)


def _check_pos(pos, stack: PotentialStack):
    y, z = pos
    if not stack.domain.contains(y, z):
        raise DomainExitError(f"position {pos} is outside the simulation domain")
    if stack.geometry.signed_distance(y, z) <= 0:
        raise InsideDielectricError(f"position {pos} is inside the dielectric")


def total_potential(pos, t, stack: PotentialStack, level: Level = Level.F3) -> float:
    _check_pos(pos, stack)
    return float(stack.energy(pos[0], pos[1], t, level))


def force(pos, t, stack: PotentialStack, level: Level = Level.F3):
    _check_pos(pos, stack)
    fy, fz = stack.force(pos[0], pos[1], t, level)
    return np.array([float(fy), float(fz)])


def numeric_force(stack: PotentialStack, y, z, t, level: Level = Level.F3, step=GRADIENT_STEP):
    """Central-difference force, used where no analytic gradient is trusted."""
    fy = -(stack.energy(y + step, z, t, level) - stack.energy(y - step, z, t, level)) / (2 * step)
    fz = -(stack.energy(y, z + step, t, level) - stack.energy(y, z - step, t, level)) / (2 * step)
    return fy, fz
