"""Two-color guided-mode trap in the gap and single-photon capture Monte Carlo.

A blue-detuned mode bright on the dielectric walls pushes atoms to the gap
centre; a red-detuned mode concentrated in the gap pulls them in. Atoms arrive
on the shallow F=4 surface; an optical pumping pulse at a trigger time moves
the ones inside an AC-Stark window to F=3 with branching ratio beta.
"""
from __future__ import annotations

import heapq
import json
from functools import cached_property
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage, stats

from .dynamics import LEVELS, Ensemble, IntegratorOptions, integrate, Status
from .errors import InsideDielectricError, NoTrapMinimumError
from .fields import CPModel, Domain, GMModeModel, Geometry2D, PotentialStack, dipole_coefficient
from .units import CESIUM, GHZ, HBAR, KB, KHZ_UM3, MK, NM, NS, TWO_PI, Level

SURFACE_CUT = 5 * NM      # closer than this to a wall counts as lost to the surface


def gm_power(gm: GMModeModel, target: float) -> float:
    """Power giving |U| = target at unit relative intensity on F=3."""
    c = abs(dipole_coefficient(gm.detuning, Level.F3, CESIUM))
    return target * gm.mode_area / c


@dataclass(frozen=True)
class TwoColorTrap:
    blue: GMModeModel
    red: GMModeModel
    cp: Optional[CPModel] = None
    geometry: Geometry2D = field(default_factory=Geometry2D)
    f3_scale: float = 1.0
    f4_scale: float = 0.2
    box: tuple = (-500 * NM, 500 * NM, -600 * NM, 600 * NM)   # y0, y1, z0, z1

    @cached_property
    def stack(self) -> PotentialStack:
        sc = (self.f3_scale, self.f4_scale)
        gms = (replace(self.blue, level_scale=sc, name="blue"), replace(self.red, level_scale=sc, name="red"))
        return PotentialStack(self.geometry, None, gms, self.cp, domain=Domain())

    def energy(self, y, z, level: Level = Level.F3):
        return self.stack.energy(y, z, 0.0, level)

    def gradient(self, y, z, level: Level = Level.F3):
        return self.stack.gradient(y, z, 0.0, level)

    def optical_shift(self, y, z, level: Level = Level.F4):
        """Light shift from the two trap modes alone (J)."""
        c = self.stack.components(y, z, 0.0, level)
        return c["gm0:blue"] + c["gm1:red"]

    def allowed(self, y, z):
        return self.geometry.signed_distance(y, z) > SURFACE_CUT


def default_trap(blue_peak: float = 50 * MK, red_peak: float = 5 * MK, cp: bool = True,
                 geometry: Geometry2D = Geometry2D(), blue_detuning: float = 60 * GHZ,
                 red_detuning: float = -600 * GHZ, **kw) -> TwoColorTrap:
    """Blue surface mode and red gap mode, powers set by their peak F=3 shifts."""
    blue = GMModeModel(blue_detuning, profile="surface", decay_length=50 * NM, name="blue")
    red = GMModeModel(red_detuning, profile="gaussian", center=(0.0, 0.0), waist_y=200 * NM,
                      waist_z=150 * NM, name="red")
    blue = replace(blue, power=gm_power(blue, blue_peak))
    red = replace(red, power=gm_power(red, red_peak))
    cpm = CPModel(2.6 * KHZ_UM3, 5.2 * KHZ_UM3, mode="per_beam") if cp else None
    return TwoColorTrap(blue, red, cpm, geometry, **kw)


def trap_potential(pos, level: Level, trap: TwoColorTrap) -> float:
    y, z = pos
    if trap.geometry.signed_distance(y, z) <= 0:
        raise InsideDielectricError(f"position {pos} is inside the dielectric")
    return float(trap.energy(y, z, level))


@dataclass
class TrapMinimum:
    position: np.ndarray
    energy: float
    depth: float
    saddle_energy: float
    hessian: np.ndarray
    frequencies: np.ndarray      # Hz, ascending
    level: str
    iterations: int = 0

    def as_dict(self) -> dict:
        return {"level": self.level, "y_nm": self.position[0] / NM, "z_nm": self.position[1] / NM,
                "energy_mK": self.energy / MK, "depth_mK": self.depth / MK,
                "saddle_mK": self.saddle_energy / MK, "frequencies_kHz": (self.frequencies / 1e3).tolist()}


def _hessian(surf, p, level, h):
    H = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        gp = np.array(surf.gradient(*(p + e), level), dtype=float)
        gm = np.array(surf.gradient(*(p - e), level), dtype=float)
        H[:, j] = (gp - gm) / (2 * h)
    return 0.5 * (H + H.T)


def energy_grid(surf, level: Level, step: float = 2 * NM, box=None):
    y0, y1, z0, z1 = surf.box if box is None else box
    ys = np.arange(y0, y1 + 0.5 * step, step)
    zs = np.arange(z0, z1 + 0.5 * step, step)
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    allowed = np.asarray(surf.allowed(Y, Z), dtype=bool) if hasattr(surf, "allowed") else np.ones(Y.shape, bool)
    U = np.where(allowed, surf.energy(Y, Z, level), -np.inf)
    return ys, zs, U, allowed


def _sinks(allowed):
    """Grid boundary plus every allowed cell touching a forbidden one."""
    s = np.zeros(allowed.shape, bool)
    s[0, :] = s[-1, :] = s[:, 0] = s[:, -1] = True
    near = ndimage.binary_dilation(~allowed, structure=np.ones((3, 3), bool)) & allowed
    return (s & allowed) | near


def basin_barrier(U, allowed, seed_idx) -> tuple:
    """Lowest level at which the region below it around seed_idx reaches a sink.

    Binary search over the sorted grid energies with 4-connected labelling.
    Returns (saddle energy, basin mask just below the saddle).
    """
    sinks = _sinks(allowed)
    levels = np.unique(U[allowed & np.isfinite(U)])
    u0 = U[seed_idx]
    levels = levels[levels >= u0]

    def leaks(e):
        lab, _ = ndimage.label(allowed & (U <= e))
        k = lab[seed_idx]
        return k > 0 and np.any(sinks & (lab == k)), lab, k

    lo, hi = 0, len(levels) - 1
    if not leaks(levels[hi])[0]:
        return np.inf, allowed.copy()
    while lo < hi:
        mid = (lo + hi) // 2
        if leaks(levels[mid])[0]:
            hi = mid
        else:
            lo = mid + 1
    saddle = float(levels[lo])
    below = levels[lo - 1] if lo > 0 else u0
    _, lab, k = leaks(below)
    return saddle, lab == k


def minimax_barrier(U, allowed, seed_idx) -> float:
    """Minimax path energy from seed to any sink (priority flood, 4-connected)."""
    sinks = _sinks(allowed)
    best = np.full(U.shape, np.inf)
    best[seed_idx] = U[seed_idx]
    heap = [(U[seed_idx], seed_idx)]
    nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    while heap:
        e, (i, j) = heapq.heappop(heap)
        if e > best[i, j]:
            continue
        if sinks[i, j]:
            return float(e)
        for di, dj in nbrs:
            a, b = i + di, j + dj
            if 0 <= a < U.shape[0] and 0 <= b < U.shape[1] and allowed[a, b]:
                ne = max(e, U[a, b])
                if ne < best[a, b]:
                    best[a, b] = ne
                    heapq.heappush(heap, (ne, (a, b)))
    return np.inf


def find_trap_minimum(surf, level: Level = Level.F3, start=(0.0, 0.0), tol: float = 1e-3,
                      max_iter: int = 100, h: float = 0.5 * NM, grid_step: float = 2 * NM,
                      mass: float = CESIUM.mass, depth: bool = True) -> TrapMinimum:
    """Newton refinement of a local minimum, its barrier depth and frequencies.

    ``surf`` is a TwoColorTrap or any object with energy(y, z, level) and
    gradient(y, z, level) (plus optionally ``box`` and ``allowed``).
    Converged when |grad U| < tol x the force scale around the start.
    """
    p = np.asarray(start, dtype=float).copy()
    probe = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]]) * 50 * NM
    fs = max(np.hypot(*surf.gradient(*(p + d), level)) for d in probe)
    if not fs > 0:
        raise NoTrapMinimumError("potential is flat around the start point")

    def grad(q):
        return np.array(surf.gradient(q[0], q[1], level), dtype=float)

    g = grad(p)
    it = 0
    for it in range(1, max_iter + 1):
        if np.hypot(*g) < tol * fs:
            break
        H = _hessian(surf, p, level, h)
        ev = np.linalg.eigvalsh(H)
        if ev.min() > 0:
            step = -np.linalg.solve(H, g)
        else:
            step = -g / (np.abs(ev).max() + 1e-300)
        # backtracking on the energy
        e0 = float(surf.energy(p[0], p[1], level))
        lim = 20 * NM
        n = np.hypot(*step)
        if n > lim:
            step *= lim / n
        for _ in range(40):
            q = p + step
            ok = not hasattr(surf, "allowed") or bool(surf.allowed(q[0], q[1]))
            if ok and float(surf.energy(q[0], q[1], level)) <= e0:
                break
            step *= 0.5
        else:
            raise NoTrapMinimumError("line search failed; no minimum near the start")
        p = q
        g = grad(p)
    else:
        raise NoTrapMinimumError("Newton iteration did not converge")
    H = _hessian(surf, p, level, h)
    ev = np.linalg.eigvalsh(H)
    if ev.min() <= 0:
        raise NoTrapMinimumError("stationary point is not a minimum (Hessian not positive definite)")
    u_min = float(surf.energy(p[0], p[1], level))
    saddle = np.inf
    if depth:
        ys, zs, U, allowed = energy_grid(surf, level, grid_step)
        seed = (int(np.argmin(np.abs(ys - p[0]))), int(np.argmin(np.abs(zs - p[1]))))
        saddle, _ = basin_barrier(U, allowed, seed)
    freqs = np.sqrt(ev / mass) / TWO_PI
    return TrapMinimum(p, u_min, saddle - u_min, saddle, H, freqs, level.value, it)


# -- capture

@dataclass(frozen=True)
class CaptureConfig:
    trigger_time: float = 1.2e-6
    window: Optional[tuple] = None     # (lo, hi) on the F=4 light shift in rad/s
    beta: float = 0.5
    recoil: float = CESIUM.recoil_velocity
    barrier: Optional[float] = None    # F=3 capture threshold above the minimum; None -> computed
    n_atoms: int = 2000
    temperature: float = 10e-6
    start_z: float = 600 * NM
    speed: float = 0.5112
    spread_y: float = 40 * NM
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if self.n_atoms <= 0 or self.temperature < 0 or self.trigger_time < 0:
            raise ValueError("n_atoms > 0, temperature >= 0 and trigger_time >= 0 required")


@dataclass
class CaptureResult:
    outcome: np.ndarray          # per atom: lost, not_pumped, stayed_f4, escaped, captured
    pumped: np.ndarray
    y: np.ndarray                # state at the trigger (before the kick)
    z: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    kick_angle: np.ndarray
    energy_f3: np.ndarray        # total F=3 energy after the kick (NaN unless transferred)
    threshold: float             # absolute F=3 energy below which an atom is bound
    minimum: TrapMinimum
    config: CaptureConfig
    basin: Optional[tuple] = None   # (ys, zs, mask)

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def captured(self) -> int:
        return int(np.sum(self.outcome == "captured"))

    @property
    def fraction(self) -> float:
        return self.captured / self.n

    def interval(self, level: float = 0.95) -> tuple:
        ci = stats.binomtest(self.captured, self.n).proportion_ci(level, method="wilson")
        return float(ci.low), float(ci.high)

    def counts(self) -> dict:
        keys = ("lost", "not_pumped", "stayed_f4", "escaped", "captured")
        return {k: int(np.sum(self.outcome == k)) for k in keys}

    def report(self) -> dict:
        lo, hi = self.interval()
        return {"n_atoms": self.n, "counts": self.counts(), "capture_fraction": self.fraction,
                "ci95": [lo, hi], "beta": self.config.beta, "threshold_mK": self.threshold / MK,
                "trap": self.minimum.as_dict()}

    def write_json(self, file) -> None:
        with open(file, "w") as fh:
            json.dump(self.report(), fh, indent=2)


def in_basin(basin, y, z) -> np.ndarray:
    if basin is None:
        return np.ones(np.shape(y), bool)
    ys, zs, mask = basin
    i = np.clip(np.round((np.asarray(y) - ys[0]) / (ys[1] - ys[0])).astype(int), 0, len(ys) - 1)
    j = np.clip(np.round((np.asarray(z) - zs[0]) / (zs[1] - zs[0])).astype(int), 0, len(zs) - 1)
    inside = (y >= ys[0]) & (y <= ys[-1]) & (z >= zs[0]) & (z <= zs[-1])
    return inside & mask[i, j]


def is_bound(trap: TwoColorTrap, y, z, vy, vz, threshold: float, basin, mass=CESIUM.mass):
    e = 0.5 * mass * (np.asarray(vy) ** 2 + np.asarray(vz) ** 2) + trap.energy(y, z, Level.F3)
    return (e < threshold) & in_basin(basin, y, z), e


def f4_ensemble(cfg: CaptureConfig, trap: TwoColorTrap, rng) -> Ensemble:
    """Atoms above the gap on the F=4 surface moving down at the lattice speed."""
    n = cfg.n_atoms
    sv = np.sqrt(KB * cfg.temperature / trap.stack.mass)
    half = 0.5 * trap.geometry.gap_width - 2 * SURFACE_CUT
    y = np.clip(rng.normal(0.0, cfg.spread_y, n), -half, half)
    v = rng.normal(0.0, 1.0, (n, 2)) * sv
    return Ensemble(y, np.full(n, cfg.start_z), v[:, 0], v[:, 1] - cfg.speed,
                    np.full(n, LEVELS.index(Level.F4)), np.arange(n), np.zeros(n, int))


def default_window(trap: TwoColorTrap, minimum_f4: Optional[TrapMinimum] = None) -> tuple:
    """Pump atoms whose F=4 light shift is in the deeper half of the trap."""
    p = (0.0, 0.0) if minimum_f4 is None else minimum_f4.position
    u = float(trap.optical_shift(p[0], p[1], Level.F4)) / HBAR
    return (-np.inf, 0.5 * u) if u < 0 else (-np.inf, np.inf)


def capture_monte_carlo(trap: TwoColorTrap, cfg: CaptureConfig = CaptureConfig(), rng=None,
                        options: IntegratorOptions = IntegratorOptions(h_max=5 * NS, cadence=50 * NS),
                        minimum: Optional[TrapMinimum] = None) -> CaptureResult:
    """Propagate on F=4 to the trigger, pump, kick and test the F=3 energy."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    stack = trap.stack
    m3 = minimum or find_trap_minimum(trap, Level.F3)
    basin = None
    if cfg.barrier is None:
        ys, zs, U, allowed = energy_grid(trap, Level.F3)
        seed = (int(np.argmin(np.abs(ys - m3.position[0]))), int(np.argmin(np.abs(zs - m3.position[1]))))
        saddle, mask = basin_barrier(U, allowed, seed)
        threshold = saddle
        basin = (ys, zs, mask)
    else:
        threshold = m3.energy + cfg.barrier
    ens = f4_ensemble(cfg, trap, rng)
    n = len(ens)
    if cfg.trigger_time > 0:
        fin = integrate(ens, stack, 0.0, cfg.trigger_time, options).final
        fin = fin.subset(np.argsort(fin.atom_id))
    else:
        fin = ens
    alive = fin.status == Status.ALIVE.value
    window = cfg.window if cfg.window is not None else default_window(trap)
    shift = np.full(n, np.nan)
    shift[alive] = trap.optical_shift(fin.y[alive], fin.z[alive], Level.F4) / HBAR
    pumped = alive & (shift >= window[0]) & (shift <= window[1])
    # random draws for every atom keep the streams independent of the outcome
    theta = rng.uniform(0.0, TWO_PI, n)
    u = rng.uniform(0.0, 1.0, n)
    to_f3 = pumped & (u < cfg.beta)
    vy = fin.vy + cfg.recoil * np.cos(theta)
    vz = fin.vz + cfg.recoil * np.sin(theta)
    e3 = np.full(n, np.nan)
    bound = np.zeros(n, bool)
    if to_f3.any():
        b, e = is_bound(trap, fin.y[to_f3], fin.z[to_f3], vy[to_f3], vz[to_f3], threshold, basin, stack.mass)
        bound[to_f3] = b
        e3[to_f3] = e
    out = np.full(n, "not_pumped", dtype=object)
    out[~alive] = "lost"
    out[pumped & ~to_f3] = "stayed_f4"
    out[to_f3] = "escaped"
    out[to_f3 & bound] = "captured"
    return CaptureResult(out, pumped, fin.y.copy(), fin.z.copy(), fin.vy.copy(), fin.vz.copy(), theta,
                         e3, threshold, m3, cfg, basin)


def enumerate_capture(trap: TwoColorTrap, result: CaptureResult, n_angles: int = 720) -> np.ndarray:
    """Per-atom probability of capture given pumping, by sweeping the kick angle."""
    th = (np.arange(n_angles) + 0.5) * TWO_PI / n_angles
    p = np.zeros(result.n)
    idx = np.flatnonzero(result.pumped)
    m = CESIUM.mass
    for i in idx:
        vy = result.vy[i] + result.config.recoil * np.cos(th)
        vz = result.vz[i] + result.config.recoil * np.sin(th)
        u3 = float(trap.energy(result.y[i], result.z[i], Level.F3))
        e = 0.5 * m * (vy**2 + vz**2) + u3
        ok = bool(in_basin(result.basin, result.y[i], result.z[i]))
        p[i] = np.mean(e < result.threshold) if ok else 0.0
    return p
