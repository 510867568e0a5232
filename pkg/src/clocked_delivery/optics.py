"""Guided-mode transmission of an atom-loaded waveguide by transfer matrices.

Each atom is a point scatterer with amplitude reflection r and transmission
t = 1 + r; waveguide segments between atoms are pure propagation phases. A
matrix maps the (forward, backward) amplitudes on the left of an element to
those on its right, so the whole chain is the ordered product with the
leftmost element acting first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import TrajectorySet
from .errors import SingularInputError
from .fields import GMModeModel, Geometry2D, PotentialStack
from .units import CESIUM, GAMMA0, HBAR, MHZ, NM, Level

SINGULAR_M22 = 1e-30


@dataclass(frozen=True)
class TransferMatrix:
    m: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(2, dtype=complex))

    m11 = property(lambda self: self.m[0, 0])
    m12 = property(lambda self: self.m[0, 1])
    m21 = property(lambda self: self.m[1, 0])
    m22 = property(lambda self: self.m[1, 1])

    @property
    def det(self) -> complex:
        return self.m[0, 0] * self.m[1, 1] - self.m[0, 1] * self.m[1, 0]

    def __matmul__(self, other: "TransferMatrix") -> "TransferMatrix":
        return TransferMatrix(self.m @ other.m)


def atom_coefficients(delta, g1d, gp):
    """Single-atom (r, t) for detuning delta, guided rate g1d and other losses gp."""
    delta, g1d, gp = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (delta, g1d, gp)))
    den = g1d + gp - 2j * delta
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(g1d == 0, 0.0, -g1d / np.where(den == 0, 1.0, den))
    t = 1.0 + r
    if np.any(np.abs(t) == 0) or np.any((den == 0) & (g1d != 0)):
        raise SingularInputError("atom is a perfect reflector (gamma' = 0 and delta = 0)")
    return r, t


def atom_matrices(delta, g1d, gp) -> np.ndarray:
    """Stack of atom matrices with shape broadcast(delta, g1d, gp) + (2, 2)."""
    r, t = atom_coefficients(delta, g1d, gp)
    m = np.empty(r.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = t - r * r / t
    m[..., 0, 1] = r / t
    m[..., 1, 0] = -r / t
    m[..., 1, 1] = 1.0 / t
    return m


def atom_matrix(delta: float, g1d: float, gp: float) -> TransferMatrix:
    return TransferMatrix(atom_matrices(delta, g1d, gp)[()])


def segment_matrix(k: float, length: float) -> TransferMatrix:
    if length < 0:
        raise ValueError("segment length must be >= 0")
    ph = np.exp(1j * k * length)
    return TransferMatrix(np.array([[ph, 0], [0, 1 / ph]], dtype=complex))


def transmission(m) -> tuple:
    """(T, R) of a chain; accepts a TransferMatrix or an array (..., 2, 2)."""
    arr = m.m if isinstance(m, TransferMatrix) else np.asarray(m)
    m22 = arr[..., 1, 1]
    if np.any(np.abs(m22) < SINGULAR_M22):
        raise SingularInputError("m22 vanishes; transmission undefined")
    tr = np.abs(1.0 / m22) ** 2
    rf = np.abs(arr[..., 1, 0] / m22) ** 2
    if np.ndim(tr) == 0:
        return float(tr), float(rf)
    return tr, rf


# -- probe and atom placement

@dataclass(frozen=True)
class ProbeConfig:
    """Weak guided probe on the D1 line.

    ``detunings`` are probe detunings (rad/s) from the free-space transition;
    the transverse profile of the probe sets the local coupling through
    ``profile`` and ``decay_length`` (same parametrisation as GMModeModel).
    """

    polarization: str = "TM"
    detunings: tuple = tuple(np.linspace(-40, 40, 40) * MHZ)
    gamma_1d_peak: float = 0.5 * MHZ
    gamma_prime: float = GAMMA0
    n_eff: float = 1.7
    wavelength: float = CESIUM.d1_wavelength
    unit_cell: float = 370 * NM
    cells: int = 150
    profile: str = "evanescent"
    decay_length: float = 150 * NM
    contrast: Optional[float] = None
    coupling_cutoff: float = 1e-4
    ground_level: Level = Level.F3

    def __post_init__(self):
        if self.polarization not in ("TE", "TM"):
            raise ValueError("polarization must be TE or TM")
        if not self.gamma_prime > 0:
            raise ValueError("gamma_prime must be positive")
        if self.gamma_1d_peak < 0:
            raise ValueError("gamma_1d_peak must be >= 0")
        if not self.length > 0:
            raise ValueError("waveguide length must be positive")

    @property
    def length(self) -> float:
        return self.cells * self.unit_cell

    @property
    def k(self) -> float:
        if self.polarization == "TE":
            return np.pi / self.unit_cell
        return 2 * np.pi * self.n_eff / self.wavelength

    @property
    def axial_contrast(self) -> float:
        if self.contrast is not None:
            return self.contrast
        return 1.0 if self.polarization == "TE" else 0.0

    @property
    def mode(self) -> GMModeModel:
        # detuning is irrelevant for a profile-only model
        return GMModeModel(detuning=0.0, power=1.0, mode_area=1.0, polarization=self.polarization,
                           decay_length=self.decay_length, contrast=self.axial_contrast,
                           profile=self.profile, name="probe")


@dataclass
class AtomSnapshot:
    x: float
    gamma_1d: float
    shift: float        # line shift (U_e - U_g)/hbar in rad/s
    atom_id: int = 0


def local_coupling(intensity, probe: ProbeConfig, peak_intensity: float = 1.0):
    """Gamma_1D = Gamma_1D^peak * I / I_peak."""
    intensity = np.asarray(intensity, dtype=float)
    if np.any(intensity < 0):
        raise ValueError("intensity must be >= 0")
    return probe.gamma_1d_peak * intensity / peak_intensity


def transverse_coupling(y, z, probe: ProbeConfig, geometry: Geometry2D):
    return probe.gamma_1d_peak * probe.mode.transverse(y, z, geometry)[0]


def local_detuning(delta_p, pos, stack: PotentialStack, t: float = 0.0, level: Level = Level.F3):
    """Delta_eff = Delta_p - (U_excited - U_ground)/hbar."""
    y, z = pos
    shift = stack.transition_shift(y, z, t, level) / HBAR
    return np.asarray(delta_p) - shift


def _axial_inverse_cdf(u, probe: ProbeConfig):
    """Map uniforms on [0, 1) to x with density (1 - c/2) + (c/2) cos(4 pi x / a)."""
    u = np.asarray(u, dtype=float)
    c = probe.axial_contrast
    half = 0.5 * probe.unit_cell
    nper = 2 * probe.cells
    v = u * nper
    m = np.minimum(np.floor(v), nper - 1)
    target = v - m
    if c == 0:
        return (m + target) * half
    b = c / (2 - c) / (2 * np.pi)
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f = mid + b * np.sin(2 * np.pi * mid)
        below = f < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return (m + 0.5 * (lo + hi)) * half


def distribute_x(n: int, probe: ProbeConfig, rng) -> np.ndarray:
    """Axial positions on [0, L) with density proportional to the probe Bloch profile."""
    return _axial_inverse_cdf(rng.random(n), probe)


def order_snapshots(snaps: Sequence[AtomSnapshot], unit_cell: float) -> list:
    """Sort by x (then atom id) and separate exact ties by 1e-3 a per repeat."""
    snaps = sorted(snaps, key=lambda s: (s.x, s.atom_id))
    out = []
    last = None
    rep = 0
    for s in snaps:
        if last is not None and s.x == last:
            rep += 1
        else:
            rep = 0
            last = s.x
        out.append(AtomSnapshot(s.x + rep * 1e-3 * unit_cell, s.gamma_1d, s.shift, s.atom_id))
    return out


def chain_matrices(x, g1d, shift, delta_p, gp: float, k: float) -> np.ndarray:
    """Product over sorted atoms for every probe detuning; shape (n_det, 2, 2)."""
    x = np.asarray(x, dtype=float)
    delta_p = np.atleast_1d(np.asarray(delta_p, dtype=float))
    if np.any(np.diff(x) <= 0):
        raise ValueError("atoms must be sorted by strictly increasing x")
    m = np.broadcast_to(np.eye(2, dtype=complex), delta_p.shape + (2, 2)).copy()
    prev = 0.0
    for xi, gi, si in zip(x, np.broadcast_to(g1d, x.shape), np.broadcast_to(shift, x.shape)):
        ph = np.exp(1j * k * (xi - prev))
        prev = xi
        # segment first, then the atom: M <- A (S M)
        m[..., 0, :] *= ph
        m[..., 1, :] /= ph
        a = atom_matrices(delta_p - si, gi, gp)
        m = np.einsum("...ij,...jk->...ik", a, m)
    return m


def total_matrix(snapshots: Sequence[AtomSnapshot], probe: ProbeConfig, delta_p: float = 0.0) -> TransferMatrix:
    """M_tot = A_n S_n ... A_1 S_1 with S_i spanning x_{i-1} -> x_i (x_0 = 0).

    The trailing section after the last atom only adds a global phase and is
    left out.
    """
    xs = [s.x for s in snapshots]
    if np.any(np.diff(xs) <= 0):
        raise ValueError("snapshots must be sorted by strictly increasing x")
    if not snapshots:
        return TransferMatrix.identity()
    m = chain_matrices(xs, [s.gamma_1d for s in snapshots], [s.shift for s in snapshots],
                       delta_p, probe.gamma_prime, probe.k)
    return TransferMatrix(m[0])


# -- time-resolved spectra

@dataclass
class SpectrumResult:
    times: np.ndarray          # s, absolute
    detunings: np.ndarray      # rad/s
    T: np.ndarray              # (n_t, n_det)
    R: np.ndarray
    n_coupled: np.ndarray      # atoms inside coupling range per time

    def write_csv(self, file) -> None:
        write_spectrum_csv(file, self.times, self.detunings, self.T)


def write_spectrum_csv(file, times, detunings, values, time_label="t_ns") -> None:
    """Matrix CSV: first row detunings in MHz, first column times in ns."""
    with open(file, "w") as fh:
        fh.write(time_label + "," + ",".join("%.10g" % (d / MHZ) for d in detunings) + "\n")
        for t, row in zip(times, values):
            fh.write("%.10g," % (t * 1e9) + ",".join("%.17g" % v for v in row) + "\n")


def read_spectrum_csv(file):
    lines = [ln for ln in open(file).read().strip().splitlines() if not ln.startswith("#")]
    det = np.array([float(v) for v in lines[0].split(",")[1:]]) * MHZ
    rows = [np.array([float(v) for v in ln.split(",")]) for ln in lines[1:]]
    if not rows:
        return np.array([]), det, np.zeros((0, len(det)))
    arr = np.array(rows)
    return arr[:, 0] * 1e-9, det, arr[:, 1:]


def spectrum_grid(trajectories: TrajectorySet, probe: ProbeConfig, stack: PotentialStack,
                  times=None, seed: int = 0) -> SpectrumResult:
    """Raw T(Delta_p, t) over the trajectory sample times (or a subset of them).

    At each time the atoms still in flight and within coupling range get a
    fresh axial position, drawn from a stream keyed by (seed, time index,
    pancake) in atom-id order, so the placement of one atom does not depend on
    which others happen to be coupled.
    """
    ts = trajectories
    if times is None:
        idx = np.arange(len(ts.times))
    else:
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(ts.times, times - 1e-6 * (ts.times[1] - ts.times[0] if len(ts.times) > 1 else 1.0))
        bad = (idx >= len(ts.times))
        if bad.any() or not np.allclose(ts.times[np.minimum(idx, len(ts.times) - 1)], times,
                                        rtol=0, atol=1e-12):
            raise ValueError("trajectories do not cover the requested time grid")
    det = np.asarray(probe.detunings, dtype=float)
    n_t = len(idx)
    out_t = np.ones((n_t, len(det)))
    out_r = np.zeros((n_t, len(det)))
    ncoup = np.zeros(n_t, dtype=int)
    mode = probe.mode
    pancakes = np.asarray(ts.final.pancake)
    ids = np.asarray(ts.final.atom_id)
    order = np.argsort(ids, kind="stable")
    for row, ti in enumerate(idx):
        t = ts.times[ti]
        y = ts.y[:, ti]
        z = ts.z[:, ti]
        live = np.isfinite(y)
        if not live.any():
            continue
        f = np.zeros(len(y))
        f[live] = mode.transverse(y[live], z[live], stack.geometry)[0]
        near = live & (f >= probe.coupling_cutoff)
        if not near.any():
            continue
        x = np.zeros(len(y))
        for p in np.unique(pancakes[near]):
            members = order[pancakes[order] == p]
            u = np.random.default_rng([seed, int(ti), int(p)]).random(len(members))
            x[members] = _axial_inverse_cdf(u, probe)
        sel = np.flatnonzero(near)
        g1d = probe.gamma_1d_peak * f[sel] * mode.axial(x[sel], probe.unit_cell)
        shift = stack.transition_shift(y[sel], z[sel], t, probe.ground_level) / HBAR
        snaps = order_snapshots([AtomSnapshot(x[i], g, s, int(ids[i])) for i, g, s in zip(sel, g1d, shift)],
                                probe.unit_cell)
        m = chain_matrices([s.x for s in snaps], [s.gamma_1d for s in snaps], [s.shift for s in snaps],
                           det, probe.gamma_prime, probe.k)
        out_t[row], out_r[row] = transmission(m)
        ncoup[row] = len(sel)
    return SpectrumResult(ts.times[idx], det, out_t, out_r, ncoup)
