import json

import numpy as np
import pytest

from clocked_delivery.dynamics import (Ensemble, EnsembleSpec, IntegratorOptions, Status,
                                       Trajectory, TrajectoryClass, classify_all,
                                       classify_trajectory, export_trajectories,
                                       hermite_position, hermite_velocity, integrate,
                                       mechanical_energy, pancake_indices, read_trajectories,
                                       sample_ensemble, trajectory_summary, write_summary)
from clocked_delivery.fields import (CPModel, GMModeModel, Geometry2D, LatticeParams,
                                     PotentialStack)
from clocked_delivery.units import CS_MASS, GHZ, KB, KHZ_UM3, NM, UK, UM, Level

CP = CPModel(2.6 * KHZ_UM3, 5.2 * KHZ_UM3)


def single(y, z, vy, vz, level=0):
    one = lambda v: np.array([float(v)])
    return Ensemble(one(y), one(z), one(vy), one(vz), np.array([level]), np.array([0]), np.array([0]))


# -- interpolant

def test_hermite_reproduces_quintic():
    rng = np.random.default_rng(0)
    c = rng.normal(size=6)
    p = np.polynomial.Polynomial(c)
    dp, ddp = p.deriv(), p.deriv(2)
    t0, h = 0.3, 0.7
    args = (p(t0), dp(t0), ddp(t0), p(t0 + h), dp(t0 + h), ddp(t0 + h))
    s = np.linspace(0, 1, 11)
    assert np.allclose(hermite_position(s, h, *args), p(t0 + s * h), rtol=1e-12, atol=1e-12)
    assert np.allclose(hermite_velocity(s, h, *args), dp(t0 + s * h), rtol=1e-12, atol=1e-12)


# -- sampling

def test_pancakes_below_launch():
    stack = PotentialStack()
    spec = EnsembleSpec()
    n = pancake_indices(spec, stack)
    z = n * np.pi / stack.lattice.k
    assert np.all(z < spec.launch_z) and np.all(np.diff(n) == -1)
    assert z[0] > spec.launch_z - 1.5 * stack.lattice.spacing


def test_sample_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(temperature=-1e-6)
    with pytest.raises(ValueError):
        EnsembleSpec(atoms_per_pancake=0)
    with pytest.raises(ValueError):
        sample_ensemble(EnsembleSpec(depth=300 * UK), PotentialStack())


def test_sample_warns_outside_range():
    with pytest.warns(UserWarning):
        sample_ensemble(EnsembleSpec(temperature=300e-6, atoms_per_pancake=10, pancakes=1), PotentialStack())


def test_cold_limit_at_well_minimum():
    stack = PotentialStack()
    spec = EnsembleSpec(temperature=1e-18, atoms_per_pancake=50, pancakes=2)
    with pytest.warns(UserWarning):
        e = sample_ensemble(spec, stack)
    zc = pancake_indices(spec, stack) * np.pi / stack.lattice.k
    assert np.allclose(e.z, np.repeat(zc, 50), atol=1e-3 * NM)
    assert np.all(np.abs(e.y) < 1e-2 * NM)
    assert np.allclose(e.vz, -stack.lattice.speed, atol=1e-6) and np.all(np.abs(e.vy) < 1e-6)


def test_equipartition():
    stack = PotentialStack()
    spec = EnsembleSpec(temperature=50e-6, atoms_per_pancake=20000, pancakes=5)
    e = sample_ensemble(spec, stack)
    kt = KB * spec.temperature
    for v in (e.vy, e.vz + stack.lattice.speed):
        ke = 0.5 * CS_MASS * v**2
        se = ke.std() / np.sqrt(len(ke))
        assert abs(ke.mean() - 0.5 * kt) < 3 * se


def test_positions_follow_boltzmann_in_harmonic_limit():
    stack = PotentialStack()
    spec = EnsembleSpec(temperature=20e-6, atoms_per_pancake=20000, pancakes=1)
    e = sample_ensemble(spec, stack)
    lat = stack.lattice
    zc = pancake_indices(spec, stack)[0] * np.pi / lat.k
    sig_z = np.sqrt(KB * spec.temperature / (2 * lat.depth)) / lat.k
    sig_y = lat.waist * np.sqrt(KB * spec.temperature / (4 * lat.depth))
    # anharmonic corrections are a few percent at kT/U0 = 0.04
    assert np.std(e.z - zc) == pytest.approx(sig_z, rel=0.05)
    assert np.std(e.y) == pytest.approx(sig_y, rel=0.05)


def test_sampling_deterministic_and_prefix_consistent():
    stack = PotentialStack()
    a = sample_ensemble(EnsembleSpec(atoms_per_pancake=100, pancakes=3, seed=4), stack)
    b = sample_ensemble(EnsembleSpec(atoms_per_pancake=100, pancakes=3, seed=4), stack)
    c = sample_ensemble(EnsembleSpec(atoms_per_pancake=200, pancakes=3, seed=4), stack)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.vy, b.vy)
    for j in range(3):
        assert np.array_equal(a.z[a.pancake == j], c.z[c.pancake == j][:100])
        assert np.array_equal(a.vz[a.pancake == j], c.vz[c.pancake == j][:100])


# -- integration

def test_free_flight_straight_line():
    s = PotentialStack(lattice=None)
    tr = integrate(single(1e-6, 55e-6, 0.0, -0.51), s, 0.0, 100e-6)
    assert tr.final.status[0] == "alive"
    assert abs(tr.final.z[0] - (55e-6 - 0.51 * 100e-6)) < 1 * NM
    ok = np.isfinite(tr.z[0])
    assert np.all(np.abs(tr.z[0][ok] - (55e-6 - 0.51 * tr.times[ok])) < 1 * NM)


def test_harmonic_period():
    # a static lattice well is harmonic near its bottom; use a tiny amplitude
    lat = LatticeParams(f_chirp=0.0, depth=400 * UK)
    s = PotentialStack(lattice=lat)
    kz = 2 * lat.depth * lat.k**2
    period = 2 * np.pi * np.sqrt(CS_MASS / kz)
    z0 = 40 * np.pi / lat.k
    amp = 1e-4 * lat.spacing
    tr = integrate(single(0.0, z0 + amp, 0.0, 0.0), s, 0.0, 5.2 * period,
                   IntegratorOptions(cadence=period / 2000))
    z = tr.z[0] - z0
    # upward zero crossings of the displacement
    i = np.flatnonzero((z[:-1] < 0) & (z[1:] >= 0))
    tc = tr.times[i] - z[i] * (tr.times[i + 1] - tr.times[i]) / (z[i + 1] - z[i])
    measured = np.diff(tc).mean()
    assert measured == pytest.approx(period, rel=1e-4)


def test_crash_on_front_face():
    s = PotentialStack(lattice=None)
    tr = integrate(single(275 * NM, 1e-6, 0.0, -0.51), s, 0.0, 10e-6)
    assert tr.final.status[0] == Status.CRASHED.value
    assert abs(tr.final.z[0] - 100 * NM) <= 0.1 * NM
    assert tr.final.t[0] == pytest.approx((1e-6 - 100 * NM) / 0.51, abs=0.1 * NM / 0.51)
    # samples stop at the crash
    ok = np.isfinite(tr.z[0])
    assert tr.times[ok].max() <= tr.final.t[0]


def test_exit_domain():
    s = PotentialStack(lattice=None)
    tr = integrate(single(0.0, -9e-6, 0.0, -1.0), s, 0.0, 10e-6)
    assert tr.final.status[0] == Status.EXITED.value
    assert tr.final.z[0] == pytest.approx(-10e-6, abs=0.1 * NM)


def test_starting_inside_is_crashed():
    s = PotentialStack(lattice=None)
    tr = integrate(single(275 * NM, 0.0, 0.0, 0.0), s, 0.0, 1e-6)
    assert tr.final.status[0] == Status.CRASHED.value


def test_step_underflow_marks_failed():
    s = PotentialStack(lattice=None)
    opts = IntegratorOptions(h_min=1.0, h_init=1e-3, rtol=1e-30, atol=1e-300)
    tr = integrate(single(0.0, 1e-6, 0.0, -0.1), PotentialStack(lattice=LatticeParams(f_chirp=0)), 0.0, 1e-6, opts)
    assert tr.final.status[0] == Status.FAILED.value


def test_integrate_rejects_bad_interval():
    with pytest.raises(ValueError):
        integrate(single(0, 1e-6, 0, 0), PotentialStack(lattice=None), 1.0, 1.0)


def static_stack():
    gms = (GMModeModel(detuning=60 * GHZ, power=2e-4, profile="surface", decay_length=100 * NM),)
    return PotentialStack(lattice=LatticeParams(f_chirp=0.0), gms=gms, cp=CP)


def test_energy_conservation_static():
    s = static_stack()
    e = sample_ensemble(EnsembleSpec(atoms_per_pancake=100, pancakes=2, launch_z=3 * UM), s)
    e0 = mechanical_energy(s, e, 0.0)
    tr = integrate(e, s, 0.0, 10e-6, IntegratorOptions(static_time=0.0))
    alive = tr.final.status == "alive"
    e1 = mechanical_energy(s, tr.final, 0.0)
    drift = np.abs(e1 - e0)[alive] / np.abs(e0[alive])
    assert drift.max() < 1e-6


def test_galilean_transport():
    lat = LatticeParams(f_chirp=1.2e6)
    s = PotentialStack(lattice=lat)
    spec = EnsembleSpec(temperature=1e-9, atoms_per_pancake=1, pancakes=1, launch_z=50 * UM)
    with pytest.warns(UserWarning):
        e = sample_ensemble(spec, s)
    tr = integrate(e, s, 0.0, 40 * lat.period)
    v = (tr.final.z[0] - e.z[0]) / (40 * lat.period)
    assert -v == pytest.approx(lat.speed, rel=1e-3)


def test_determinism_and_monotone_alive_count():
    s = PotentialStack(cp=CP)
    spec = EnsembleSpec(atoms_per_pancake=40, pancakes=1, launch_z=3 * UM, seed=9)
    e = sample_ensemble(spec, s)
    a = integrate(e, s, 0.0, 8e-6)
    b = integrate(sample_ensemble(spec, s), s, 0.0, 8e-6)
    assert np.array_equal(a.z, b.z, equal_nan=True)
    assert np.array_equal(a.final.t, b.final.t)
    alive = a.alive_mask().sum(axis=0)
    assert np.all(np.diff(alive) <= 0)


# -- classification and export

def traj(y, z, status=Status.ALIVE):
    t = np.arange(len(y)) * 1e-8
    return Trajectory(0, t, np.asarray(y, float), np.asarray(z, float), 0 * t, 0 * t, status)


def test_classify_predicates():
    g = Geometry2D()
    zs = np.linspace(1e-6, -1e-6, 50)
    assert classify_trajectory(traj(0 * zs, zs), g) is TrajectoryClass.CENTER
    assert classify_trajectory(traj(0 * zs + 1e-6, zs), g) is TrajectoryClass.SIDES
    zc = np.linspace(1e-6, 100 * NM, 50)
    assert classify_trajectory(traj(0 * zc + 275 * NM, zc, Status.CRASHED), g) is TrajectoryClass.OTHER


def test_export_roundtrip(tmp_path):
    s = PotentialStack(cp=CP)
    e = sample_ensemble(EnsembleSpec(atoms_per_pancake=10, pancakes=1, launch_z=2 * UM), s)
    ts = integrate(e, s, 0.0, 3e-6)
    n = export_trajectories(ts, tmp_path / "t.csv", s.geometry)
    assert n == sum(len(tr.t) for tr in ts)
    back = read_trajectories(tmp_path / "t.csv")
    for a, b in zip(ts, back):
        for f in ("t", "y", "z", "vy", "vz"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        assert a.status == b.status
        assert np.all(np.diff(a.t) > 0)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == n + 1
    summ = trajectory_summary(ts, s.geometry)
    assert sum(summ["classes"].values()) == 10
    write_summary(summ, tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text())["atoms"] == 10
    assert list(classify_all(ts, s.geometry)) == [classify_trajectory(tr, s.geometry).value for tr in ts]


def test_export_empty(tmp_path):
    assert export_trajectories([], tmp_path / "e.csv") == 0
    assert (tmp_path / "e.csv").read_text().strip() == "atom_id,t_s,y_m,z_m,vy_m_s,vz_m_s,status,class"
