"""Classical transport of lattice-loaded atoms through the composite potential.

Atoms are independent point particles. The integrator is a vectorised
Dormand-Prince 5(4) scheme in which every atom carries its own time and step
size, so one sweep advances all live atoms by one (individually sized) step.
Between steps each atom has a quintic Hermite interpolant built from position,
velocity and acceleration at both ends; it is used for the fixed-cadence output
samples and to locate surface crossings.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .fields import Geometry2D, PotentialStack
from .units import KB, NM, NS, UK, UM, Level

LEVELS = (Level.F3, Level.F4)


class Status(str, Enum):
    ALIVE = "alive"
    CRASHED = "crashed"
    EXITED = "exited"
    FAILED = "failed"


@dataclass
class AtomState:
    y: float
    z: float
    vy: float
    vz: float
    level: Level = Level.F3
    status: Status = Status.ALIVE
    t: float = 0.0
    atom_id: int = 0
    pancake: int = 0


@dataclass
class Ensemble:
    """Structure-of-arrays view of many AtomStates."""

    y: np.ndarray
    z: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    level: np.ndarray          # index into LEVELS
    atom_id: np.ndarray
    pancake: np.ndarray
    status: Optional[np.ndarray] = None   # Status values as str
    t: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.y)
        if self.status is None:
            self.status = np.full(n, Status.ALIVE.value, dtype=object)
        if self.t is None:
            self.t = np.zeros(n)

    def __len__(self):
        return len(self.y)

    def subset(self, mask) -> "Ensemble":
        return Ensemble(*(np.asarray(getattr(self, f))[mask] for f in
                          ("y", "z", "vy", "vz", "level", "atom_id", "pancake", "status", "t")))

    def states(self) -> list:
        return [AtomState(float(self.y[i]), float(self.z[i]), float(self.vy[i]), float(self.vz[i]),
                          LEVELS[int(self.level[i])], Status(self.status[i]), float(self.t[i]),
                          int(self.atom_id[i]), int(self.pancake[i])) for i in range(len(self))]

    @classmethod
    def from_states(cls, states: Sequence[AtomState]) -> "Ensemble":
        get = lambda f: np.array([getattr(s, f) for s in states], dtype=float)
        return cls(get("y"), get("z"), get("vy"), get("vz"),
                   np.array([LEVELS.index(Level(s.level)) for s in states], dtype=int),
                   np.array([s.atom_id for s in states], dtype=int),
                   np.array([s.pancake for s in states], dtype=int),
                   np.array([Status(s.status).value for s in states], dtype=object),
                   get("t"))

    def kinetic(self, mass):
        return 0.5 * mass * (self.vy**2 + self.vz**2)


# -- initial conditions

@dataclass(frozen=True)
class EnsembleSpec:
    atoms_per_pancake: int = 500
    pancakes: int = 5
    temperature: float = 100e-6        # K
    launch_z: float = 60 * UM
    seed: int = 0
    depth: Optional[float] = None      # J; must agree with the lattice if given
    batch: int = 4096

    def __post_init__(self):
        if self.atoms_per_pancake <= 0 or self.pancakes <= 0:
            raise ValueError("atoms_per_pancake and pancakes must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


def pancake_indices(spec: EnsembleSpec, stack: PotentialStack) -> np.ndarray:
    """Antinode numbers of the loaded pancakes, highest (latest arriving) first.

    Antinode n sits at z = (n pi - phi)/k at t = 0 and reaches z = 0 at n/f_chirp
    (for phi = 0). The first pancake is the highest antinode at least half a
    spacing below the launch height.
    """
    lat = stack.lattice
    n0 = int(np.floor((lat.k * (spec.launch_z - 0.5 * lat.spacing) + lat.phase) / np.pi))
    return n0 - np.arange(spec.pancakes)


def sample_ensemble(spec: EnsembleSpec, stack: PotentialStack, rng=None) -> Ensemble:
    """Thermal atoms in the lattice wells of the requested pancakes.

    Velocities are Maxwellian in the frame co-moving with the lattice. Positions
    are rejection sampled from a uniform box around each antinode with
    acceptance exp(-(U - U_min)/kT), U the full potential at t = 0. Each pancake
    draws from its own stream keyed by (seed, pancake), in fixed-size batches, so
    a larger ensemble extends a smaller one with the same seed.
    """
    lat = stack.lattice
    if lat is None or lat.depth <= 0:
        raise ValueError("sampling needs a lattice with positive depth")
    if spec.depth is not None and not np.isclose(spec.depth, lat.depth, rtol=1e-12, atol=0.0):
        raise ValueError("ensemble depth disagrees with the lattice depth")
    t_k = spec.temperature
    depth_uk = lat.depth / UK
    if not 10e-6 <= t_k <= 150e-6:
        warnings.warn(f"temperature {t_k * 1e6:.3g} uK outside the supported 10-150 uK range")
    if not 200 <= depth_uk <= 500:
        warnings.warn(f"lattice depth {depth_uk:.3g} uK outside the supported 200-500 uK range")
    if lat.depth <= KB * t_k:
        warnings.warn("lattice depth does not exceed k_B T; wells are barely bound")
    if rng is not None:
        base = int(rng.integers(0, 2**63 - 1))
    else:
        base = spec.seed

    kt = KB * t_k
    m = stack.mass
    sig_z = np.sqrt(kt / (2 * lat.depth)) / lat.k
    sig_y = lat.waist * np.sqrt(kt / (4 * lat.depth))
    hz = min(0.5 * lat.spacing, 8 * sig_z)
    hy = min(stack.domain.y_half, 8 * sig_y)
    sig_v = np.sqrt(kt / m)

    cols = {k: [] for k in ("y", "z", "vy", "vz", "pancake")}
    for j, n in enumerate(pancake_indices(spec, stack)):
        zc = (n * np.pi - lat.phase) / lat.k
        u_min = float(stack.energy(0.0, zc, 0.0, Level.F3))
        g = np.random.default_rng([base, j])
        ys, zs = [], []
        got = 0
        while got < spec.atoms_per_pancake:
            y = g.uniform(-hy, hy, spec.batch)
            z = zc + g.uniform(-hz, hz, spec.batch)
            u = stack.energy(y, z, 0.0, Level.F3)
            p = np.exp(-np.clip(u - u_min, 0, None) / kt)
            keep = g.uniform(size=spec.batch) < p
            ys.append(y[keep])
            zs.append(z[keep])
            got += int(keep.sum())
        na = spec.atoms_per_pancake
        vg = np.random.default_rng([base, j, 1])
        v = vg.normal(0.0, sig_v, (na, 2)).T
        cols["y"].append(np.concatenate(ys)[:na])
        cols["z"].append(np.concatenate(zs)[:na])
        cols["vy"].append(v[0])
        cols["vz"].append(v[1] - lat.speed)
        cols["pancake"].append(np.full(na, j))
    arr = {k: np.concatenate(v) for k, v in cols.items()}
    n_tot = len(arr["y"])
    return Ensemble(arr["y"], arr["z"], arr["vy"], arr["vz"], np.zeros(n_tot, dtype=int),
                    np.arange(n_tot), arr["pancake"].astype(int))


# -- integrator

_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def hermite_position(s, h, x0, v0, a0, x1, v1, a1):
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    s5 = s4 * s
    h0 = 1 - 10 * s3 + 15 * s4 - 6 * s5
    h1 = s - 6 * s3 + 8 * s4 - 3 * s5
    h2 = 0.5 * (s2 - 3 * s3 + 3 * s4 - s5)
    h3 = 0.5 * (s3 - 2 * s4 + s5)
    h4 = -4 * s3 + 7 * s4 - 3 * s5
    h5 = 10 * s3 - 15 * s4 + 6 * s5
    return h0 * x0 + h5 * x1 + h * (h1 * v0 + h4 * v1) + h * h * (h2 * a0 + h3 * a1)


def hermite_velocity(s, h, x0, v0, a0, x1, v1, a1):
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    d0 = -30 * s2 + 60 * s3 - 30 * s4
    d1 = 1 - 18 * s2 + 32 * s3 - 15 * s4
    d2 = 0.5 * (2 * s - 9 * s2 + 12 * s3 - 5 * s4)
    d3 = 0.5 * (3 * s2 - 8 * s3 + 5 * s4)
    d4 = -12 * s2 + 28 * s3 - 15 * s4
    return d0 * (x0 - x1) / h + d1 * v0 + d4 * v1 + h * (d2 * a0 + d3 * a1)


@dataclass(frozen=True)
class IntegratorOptions:
    rtol: float = 1e-8
    atol: float = 1e-12
    h_init: float = 1e-9
    h_max: float = 20 * NS
    h_min: float = 1e-18
    max_steps: int = 2_000_000
    cadence: float = 10 * NS
    record_from: Optional[float] = None
    crash_tol: float = 0.1 * NM
    check_points: tuple = (0.25, 0.5, 0.75)
    static_time: Optional[float] = None   # evaluate the potential at a frozen time
    check_geometry: bool = True


@dataclass
class TrajectorySet:
    """Fixed-cadence samples of many atoms plus their terminal states.

    ``y``, ``z``, ``vy``, ``vz`` have shape (n_atoms, n_samples) and are NaN
    before the start and after the termination of each atom.
    """

    times: np.ndarray
    y: np.ndarray
    z: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    final: Ensemble
    steps: np.ndarray

    def __len__(self):
        return len(self.final)

    @property
    def atom_id(self):
        return self.final.atom_id

    @property
    def status(self):
        return self.final.status

    @property
    def t_end(self):
        return self.final.t

    def __getitem__(self, i) -> "Trajectory":
        ok = np.isfinite(self.y[i])
        t = self.times[ok]
        rows = [self.y[i][ok], self.z[i][ok], self.vy[i][ok], self.vz[i][ok]]
        f = self.final
        if len(t) == 0 or f.t[i] > t[-1]:
            t = np.append(t, f.t[i])
            rows = [np.append(r, v) for r, v in zip(rows, (f.y[i], f.z[i], f.vy[i], f.vz[i]))]
        return Trajectory(int(f.atom_id[i]), t, *rows, Status(f.status[i]), int(f.pancake[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def alive_mask(self):
        """(n_atoms, n_samples) mask of atoms still in flight at each sample."""
        return np.isfinite(self.y)


@dataclass
class Trajectory:
    atom_id: int
    t: np.ndarray
    y: np.ndarray
    z: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    status: Status
    pancake: int = 0


def _accel(stack: PotentialStack, y, z, t, level):
    ay = np.empty_like(y)
    az = np.empty_like(y)
    m = stack.mass
    for code, lv in enumerate(LEVELS):
        sel = level == code
        if not sel.any():
            continue
        tt = t[sel] if np.ndim(t) else t
        fy, fz = stack.force(y[sel], z[sel], tt, lv)
        ay[sel] = fy / m
        az[sel] = fz / m
    return ay, az


def integrate(atoms, stack: PotentialStack, t0: float, t1: float,
              options: IntegratorOptions = IntegratorOptions()) -> TrajectorySet:
    """Propagate atoms from t0 to t1 under m dv/dt = -grad U(r, t).

    Atoms whose path crosses into a beam are stopped at the crossing (located
    by bisection of the step interpolant to ``crash_tol``) and marked crashed;
    atoms crossing the domain boundary are marked exited. An atom whose step
    size underflows ``h_min`` or that exceeds ``max_steps`` is marked failed.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    ens = atoms if isinstance(atoms, Ensemble) else Ensemble.from_states(list(atoms))
    if np.any(ens.status != Status.ALIVE.value):
        raise ValueError("only alive atoms can be integrated")
    o = options
    n = len(ens)
    geom: Geometry2D = stack.geometry
    dom = stack.domain

    rec0 = t0 if o.record_from is None else o.record_from
    k_first = max(0, int(np.ceil((t0 - rec0) / o.cadence - 1e-9)))
    k_last = int(np.floor((t1 - rec0) / o.cadence + 1e-9))
    times = rec0 + o.cadence * np.arange(k_first, k_last + 1)
    ns = len(times)
    out = {k: np.full((n, ns), np.nan) for k in ("y", "z", "vy", "vz")}
    nxt = np.searchsorted(times, t0 - 1e-9 * o.cadence)
    nxt = np.full(n, nxt, dtype=int)

    x = np.stack([ens.y, ens.z]).astype(float)
    v = np.stack([ens.vy, ens.vz]).astype(float)
    level = np.asarray(ens.level, dtype=int)
    t = np.full(n, float(t0))
    h = np.full(n, min(o.h_init, t1 - t0))
    status = np.full(n, Status.ALIVE.value, dtype=object)
    steps = np.zeros(n, dtype=np.int64)

    def tfun(tt):
        return o.static_time if o.static_time is not None else tt

    # initial checks
    if o.check_geometry:
        bad = geom.signed_distance(x[0], x[1]) <= 0
        status[bad] = Status.CRASHED.value
    gone = ~dom.contains(x[0], x[1])
    status[gone & (status == Status.ALIVE.value)] = Status.EXITED.value

    a = np.zeros_like(x)
    live = np.flatnonzero(status == Status.ALIVE.value)
    if len(live):
        a[0, live], a[1, live] = _accel(stack, x[0, live], x[1, live], tfun(t[live]), level[live])

    def write_samples(idx, tend, tstart, hh, x0, v0, a0, x1, v1, a1):
        """Fill output samples with times in [tstart, tend] for atoms idx."""
        while ns:
            p = nxt[idx]
            has = p < ns
            pt = np.where(has, times[np.minimum(p, ns - 1)], np.inf)
            want = has & (pt <= tend + 1e-12 * o.cadence)
            if not want.any():
                return
            w = np.flatnonzero(want)
            s = np.clip((pt[w] - tstart[w]) / hh[w], 0.0, 1.0)
            hw = hh[w]
            ii = idx[w]
            for c, key in enumerate(("y", "z")):
                args = (x0[c, w], v0[c, w], a0[c, w], x1[c, w], v1[c, w], a1[c, w])
                out[key][ii, p[w]] = hermite_position(s, hw, *args)
                out["v" + key][ii, p[w]] = hermite_velocity(s, hw, *args)
            nxt[ii] += 1

    while True:
        live = np.flatnonzero(status == Status.ALIVE.value)
        live = live[t[live] < t1]
        if len(live) == 0:
            break
        tl = t[live]
        hl = np.minimum(h[live], t1 - tl)
        xl = x[:, live]
        vl = v[:, live]
        lv = level[live]
        kx = [vl]
        kv = [a[:, live]]
        for st in range(1, 7):
            xs = xl.copy()
            vs = vl.copy()
            for j, aij in enumerate(_A[st]):
                if aij:
                    xs += hl * aij * kx[j]
                    vs += hl * aij * kv[j]
            ay, az = _accel(stack, xs[0], xs[1], tfun(tl + _C[st] * hl), lv)
            kx.append(vs)
            kv.append(np.stack([ay, az]))
        xn = xs
        vn = vs
        ex = sum(e * k for e, k in zip(_E, kx) if e) * hl
        ev = sum(e * k for e, k in zip(_E, kv) if e) * hl
        sx = o.atol + o.rtol * np.maximum(np.abs(xl), np.abs(xn))
        sv = o.atol + o.rtol * np.maximum(np.abs(vl), np.abs(vn))
        err = np.sqrt(((ex / sx) ** 2 + (ev / sv) ** 2).sum(axis=0) / 4.0)
        acc = err <= 1.0
        fac = np.clip(0.9 * np.where(err > 0, err, 1e-10) ** -0.2, 0.2, 10.0)
        hnew = np.minimum(hl * fac, o.h_max)
        steps[live] += 1

        rej = live[~acc]
        h[rej] = hnew[~acc]
        under = rej[h[rej] < o.h_min]
        status[under] = Status.FAILED.value

        ia = np.flatnonzero(acc)
        if len(ia):
            idx = live[ia]
            ha = hl[ia]
            x0, v0, a0 = xl[:, ia], vl[:, ia], kv[0][:, ia]
            x1, v1, a1 = xn[:, ia], vn[:, ia], kv[6][:, ia]
            t_start = tl[ia]
            s_hit = np.full(len(ia), np.inf)
            kind = np.zeros(len(ia), dtype=int)   # 1 crashed, 2 exited

            # crossing checks on the interpolant
            checks = tuple(o.check_points) + (1.0,)
            s_prev = np.zeros(len(ia))
            found = np.zeros(len(ia), dtype=bool)
            for sc in checks:
                py = hermite_position(sc, ha, x0[0], v0[0], a0[0], x1[0], v1[0], a1[0])
                pz = hermite_position(sc, ha, x0[1], v0[1], a0[1], x1[1], v1[1], a1[1])
                hit_d = geom.signed_distance(py, pz) <= 0 if o.check_geometry else np.zeros(len(ia), bool)
                hit_b = ~dom.contains(py, pz)
                new = ~found & (hit_d | hit_b)
                kind[new] = np.where(hit_d[new], 1, 2)
                s_hit[new] = sc
                found |= new
                s_prev = np.where(found, s_prev, sc)
            if found.any():
                w = np.flatnonzero(found)
                lo = s_prev[w].copy()
                hi = s_hit[w].copy()
                seg = (x0[:, w], v0[:, w], a0[:, w], x1[:, w], v1[:, w], a1[:, w])
                speed = np.maximum(np.hypot(*v0[:, w]), np.hypot(*v1[:, w])) + 1e-30
                for _ in range(80):
                    if np.all((hi - lo) * ha[w] * speed * 2 < o.crash_tol):
                        break
                    mid = 0.5 * (lo + hi)
                    py = hermite_position(mid, ha[w], *(s[0] for s in seg))
                    pz = hermite_position(mid, ha[w], *(s[1] for s in seg))
                    bad = np.where(kind[w] == 1, geom.signed_distance(py, pz) <= 0,
                                   ~dom.contains(py, pz))
                    hi = np.where(bad, mid, hi)
                    lo = np.where(bad, lo, mid)
                s_hit[w] = hi
                # terminal state on the interpolant at the crossing
                y_end = hermite_position(hi, ha[w], *(s[0] for s in seg))
                z_end = hermite_position(hi, ha[w], *(s[1] for s in seg))
                vy_end = hermite_velocity(hi, ha[w], *(s[0] for s in seg))
                vz_end = hermite_velocity(hi, ha[w], *(s[1] for s in seg))
                x1 = x1.copy()
                v1 = v1.copy()

            t_end = np.where(found, t_start + np.where(np.isfinite(s_hit), s_hit, 1.0) * ha, t_start + ha)
            write_samples(idx, t_end, t_start, ha, x0, v0, a0, x1, v1, a1)

            x[:, idx] = x1
            v[:, idx] = v1
            a[:, idx] = a1
            t[idx] = t_end
            if found.any():
                wi = idx[w]
                x[0, wi], x[1, wi] = y_end, z_end
                v[0, wi], v[1, wi] = vy_end, vz_end
                status[wi] = np.where(kind[w] == 1, Status.CRASHED.value, Status.EXITED.value)
            # land exactly on t1 to avoid float creep
            t[idx[np.abs(t[idx] - t1) <= 1e-12 * max(abs(t1), 1e-12)]] = t1
            h[idx] = hnew[ia]
        over = live[steps[live] >= o.max_steps]
        status[over[status[over] == Status.ALIVE.value]] = Status.FAILED.value

    final = Ensemble(x[0].copy(), x[1].copy(), v[0].copy(), v[1].copy(), level.copy(),
                     np.asarray(ens.atom_id).copy(), np.asarray(ens.pancake).copy(), status, t.copy())
    return TrajectorySet(times, out["y"], out["z"], out["vy"], out["vz"], final, steps)


def mechanical_energy(stack: PotentialStack, ens: Ensemble, t=None):
    tt = ens.t if t is None else t
    u = np.empty(len(ens))
    for code, lv in enumerate(LEVELS):
        sel = ens.level == code
        if sel.any():
            u[sel] = stack.energy(ens.y[sel], ens.z[sel], tt[sel] if np.ndim(tt) else tt, lv)
    return ens.kinetic(stack.mass) + u


# -- classification

class TrajectoryClass(str, Enum):
    CENTER = "center"
    SIDES = "sides"
    OTHER = "other"


@dataclass(frozen=True)
class ClassifierConfig:
    """Geometric predicates for the three trajectory classes.

    ``center``: some sample has |y| < gap/2 + gap_tol and |z| <= t/2 + z_tol.
    ``sides``: some sample has z < -t/2 and |y| > outer edge, and never centre.
    ``other``: everything else (bounces, crashes on the incoming faces, ...).
    """

    gap_tol: float = 0.0
    z_tol: float = 0.0


def _classify_arrays(y, z, g: Geometry2D, cfg: ClassifierConfig):
    ay = np.abs(y)
    center = np.any((ay < 0.5 * g.gap_width + cfg.gap_tol)
                    & (np.abs(z) <= 0.5 * g.thickness + cfg.z_tol), axis=-1)
    sides = np.any((z < -0.5 * g.thickness) & (ay > g.outer_edge), axis=-1)
    return np.where(center, TrajectoryClass.CENTER.value,
                    np.where(sides, TrajectoryClass.SIDES.value, TrajectoryClass.OTHER.value))


def classify_trajectory(traj: Trajectory, g: Geometry2D, cfg: ClassifierConfig = ClassifierConfig()) -> TrajectoryClass:
    return TrajectoryClass(str(_classify_arrays(np.asarray(traj.y), np.asarray(traj.z), g, cfg)))


def classify_all(ts: TrajectorySet, g: Geometry2D, cfg: ClassifierConfig = ClassifierConfig()) -> np.ndarray:
    """Class label per atom, using the samples and the terminal state."""
    y = np.concatenate([ts.y, ts.final.y[:, None]], axis=1)
    z = np.concatenate([ts.z, ts.final.z[:, None]], axis=1)
    with np.errstate(invalid="ignore"):
        return _classify_arrays(np.nan_to_num(y, nan=np.inf), np.nan_to_num(z, nan=np.inf), g, cfg)


# -- export

CSV_COLUMNS = ("atom_id", "t_s", "y_m", "z_m", "vy_m_s", "vz_m_s", "status", "class")


def export_trajectories(trajectories, file, g: Optional[Geometry2D] = None,
                        cfg: ClassifierConfig = ClassifierConfig(), stride: int = 1) -> int:
    """One row per sample; the last row of each atom carries its terminal status.

    ``stride`` keeps every stride-th sample (the terminal row is always kept).
    Returns the number of sample rows written.
    """
    g = g or Geometry2D()
    items = list(trajectories)
    count = 0
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for tr in items:
            cls = classify_trajectory(tr, g, cfg).value
            nrow = len(tr.t)
            keep = sorted(set(range(0, nrow - 1, stride)) | {nrow - 1}) if nrow else []
            for k in keep:
                st = tr.status.value if k == nrow - 1 else Status.ALIVE.value
                w.writerow([tr.atom_id] + ["%.17g" % v for v in
                                           (tr.t[k], tr.y[k], tr.z[k], tr.vy[k], tr.vz[k])] + [st, cls])
            count += len(keep)
    return count


def read_trajectories(file) -> list:
    """Inverse of export_trajectories; returns Trajectory objects in file order."""
    rows = {}
    order = []
    classes = {}
    with open(file, newline="") as fh:
        r = csv.reader(ln for ln in fh if not ln.startswith("#"))
        head = next(r)
        if tuple(head) != CSV_COLUMNS:
            raise ValueError("not a trajectory file")
        for row in r:
            aid = int(row[0])
            if aid not in rows:
                rows[aid] = []
                order.append(aid)
            rows[aid].append(row)
            classes[aid] = row[7]
    out = []
    for aid in order:
        rr = rows[aid]
        cols = [np.array([float(x[c]) for x in rr]) for c in range(1, 6)]
        out.append(Trajectory(aid, *cols, Status(rr[-1][6])))
    return out


def trajectory_summary(ts: TrajectorySet, g: Geometry2D, cfg: ClassifierConfig = ClassifierConfig(),
                       bin_width: float = 100 * NS) -> dict:
    cls = classify_all(ts, g, cfg)
    crashed = ts.final.status == Status.CRASHED.value
    tc = ts.final.t[crashed]
    if len(tc):
        lo = np.floor(tc.min() / bin_width) * bin_width
        edges = lo + bin_width * np.arange(int(np.ceil((tc.max() - lo) / bin_width)) + 2)
        hist, _ = np.histogram(tc, edges)
    else:
        edges, hist = np.array([]), np.array([], dtype=int)
    pan = ts.final.pancake
    per_pancake = {int(p): {c.value: int(np.sum((pan == p) & (cls == c.value))) for c in TrajectoryClass}
                   for p in np.unique(pan)}
    return {
        "atoms": int(len(ts)),
        "classes": {c.value: int(np.sum(cls == c.value)) for c in TrajectoryClass},
        "status": {s.value: int(np.sum(ts.final.status == s.value)) for s in Status},
        "per_pancake": per_pancake,
        "crash_time_histogram": {"edges_ns": (edges / NS).tolist(), "counts": hist.tolist()},
    }


def write_summary(summary: dict, file) -> None:
    with open(file, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
