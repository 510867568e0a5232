import numpy as np
import pytest

from clocked_delivery.dynamics import Ensemble, IntegratorOptions, LEVELS, integrate
from clocked_delivery.errors import InsideDielectricError, NoTrapMinimumError
from clocked_delivery.trapping import (
    CaptureConfig, basin_barrier, capture_monte_carlo, default_trap, energy_grid, enumerate_capture,
    find_trap_minimum, minimax_barrier, trap_potential,
)
from clocked_delivery.units import CESIUM, MK, NM, NS, TWO_PI, Level


@pytest.fixture(scope="module")
def trap():
    return default_trap()


@pytest.fixture(scope="module")
def capture(trap):
    return capture_monte_carlo(trap, CaptureConfig(n_atoms=400, seed=1))


class Harmonic:
    """U = 1/2 m (wy^2 (y-y0)^2 + wz^2 (z-z0)^2)."""
    m = CESIUM.mass
    wy, wz = TWO_PI * 300e3, TWO_PI * 500e3
    y0, z0 = 13 * NM, -7 * NM
    box = (-300 * NM, 300 * NM, -300 * NM, 300 * NM)

    def energy(self, y, z, level=None):
        return 0.5 * self.m * (self.wy**2 * (y - self.y0) ** 2 + self.wz**2 * (z - self.z0) ** 2)

    def gradient(self, y, z, level=None):
        return self.m * self.wy**2 * (y - self.y0), self.m * self.wz**2 * (z - self.z0)


def test_harmonic_exact():
    h = Harmonic()
    r = find_trap_minimum(h, Level.F3, start=(80 * NM, 60 * NM), tol=1e-9)
    np.testing.assert_allclose(r.position, [h.y0, h.z0], rtol=0, atol=1e-6 * NM)
    np.testing.assert_allclose(r.frequencies, [300e3, 500e3], rtol=1e-6)
    # barrier to the box edge nearest in energy: y edge at 300 nm
    e_edge = h.energy(np.array([h.box[0], h.box[1]]), h.z0).min()
    assert r.depth == pytest.approx(e_edge, rel=0.05)


def test_red_only_minimum_at_intensity_peak(trap):
    red = default_trap(blue_peak=0.0, cp=False)
    r = find_trap_minimum(red, Level.F3, start=(30 * NM, 40 * NM), depth=False)
    np.testing.assert_allclose(r.position, red.red.center, atol=0.01 * NM)


def test_blue_only_repulsive_towards_walls():
    blue = default_trap(red_peak=0.0, cp=False)
    y = np.linspace(0, 110 * NM, 12)
    u = blue.energy(y, 0.0 * y)
    assert np.all(np.diff(u) > 0) and np.all(u > 0)


def test_default_has_gap_minimum(trap):
    r = find_trap_minimum(trap, Level.F3, start=(20 * NM, 30 * NM))
    assert np.all(np.linalg.eigvalsh(r.hessian) > 0)
    assert trap.geometry.in_gap(*r.position)
    assert abs(r.position[0]) < 1e-3 * NM      # symmetry plane
    assert r.depth > 0


def test_inside_dielectric_raises(trap):
    with pytest.raises(InsideDielectricError):
        trap_potential((200 * NM, 0.0), Level.F3, trap)


def test_depth_matches_dense_grid_oracle(trap):
    r = find_trap_minimum(trap, Level.F3)
    ys, zs, U, allowed = energy_grid(trap, Level.F3, step=1 * NM)
    seed = np.unravel_index(np.argmin(np.where(allowed, U, np.inf)), U.shape)
    depth = minimax_barrier(U, allowed, seed) - U[seed]
    assert r.depth == pytest.approx(depth, rel=0.01)


def test_flood_equals_minimax_on_random_landscape():
    rng = np.random.default_rng(0)
    U = rng.normal(size=(40, 30))
    allowed = rng.uniform(size=U.shape) > 0.1
    seed = (20, 15)
    allowed[seed] = True
    s, _ = basin_barrier(U, allowed, seed)
    assert s == max(minimax_barrier(U, allowed, seed), U[seed])


def test_no_minimum_reported():
    class Slope:
        box = (-1e-7, 1e-7, -1e-7, 1e-7)

        def energy(self, y, z, level=None):
            return 1e-27 * y / NM

        def gradient(self, y, z, level=None):
            return np.full(np.shape(y), 1e-27 / NM), np.zeros(np.shape(z))

    with pytest.raises(NoTrapMinimumError):
        find_trap_minimum(Slope(), max_iter=20)


def test_beta_zero_exact(trap):
    r = capture_monte_carlo(trap, CaptureConfig(n_atoms=200, beta=0.0))
    assert r.captured == 0


def test_infinite_barrier_all_pumped_gives_beta(trap):
    cfg = CaptureConfig(n_atoms=2000, beta=0.5, barrier=np.inf, window=(-np.inf, np.inf), trigger_time=0.0)
    r = capture_monte_carlo(trap, cfg)
    s = np.sqrt(0.25 / 2000)
    assert abs(r.fraction - 0.5) < 3 * s


def test_capture_matches_enumeration_oracle(trap, capture):
    p = enumerate_capture(trap, capture)
    expect = capture.config.beta * p.mean()
    s = np.sqrt(expect * (1 - expect) / capture.n)
    assert abs(capture.fraction - expect) < 3 * s


def test_energy_bookkeeping(trap, capture):
    i = np.flatnonzero(capture.outcome == "captured")[:20]
    m = CESIUM.mass
    vr = capture.config.recoil
    vy = capture.vy[i] + vr * np.cos(capture.kick_angle[i])
    vz = capture.vz[i] + vr * np.sin(capture.kick_angle[i])
    u4 = trap.energy(capture.y[i], capture.z[i], Level.F4)
    u3 = trap.energy(capture.y[i], capture.z[i], Level.F3)
    e4 = 0.5 * m * (capture.vy[i] ** 2 + capture.vz[i] ** 2) + u4
    np.testing.assert_allclose(capture.energy_f3[i], e4 + (u3 - u4) + 0.5 * m * (vy**2 + vz**2)
                               - 0.5 * m * (capture.vy[i] ** 2 + capture.vz[i] ** 2), rtol=1e-12)


def test_captured_stay_bound(trap, capture):
    i = np.flatnonzero(capture.outcome == "captured")[:60]
    vr = capture.config.recoil
    n = len(i)
    ens = Ensemble(capture.y[i], capture.z[i], capture.vy[i] + vr * np.cos(capture.kick_angle[i]),
                   capture.vz[i] + vr * np.sin(capture.kick_angle[i]), np.full(n, LEVELS.index(Level.F3)),
                   np.arange(n), np.zeros(n, int))
    t_trap = 1 / capture.minimum.frequencies.min()
    res = integrate(ens, trap.stack, 0.0, 10 * t_trap, IntegratorOptions(h_max=2 * NS, cadence=20 * NS))
    assert np.all(res.final.status == "alive")
    assert np.nanmax(np.abs(res.z)) < 600 * NM


def test_capture_non_increasing_in_temperature(trap):
    f = [capture_monte_carlo(trap, CaptureConfig(n_atoms=400, temperature=T, seed=3)).fraction
         for T in (5e-6, 50e-6, 500e-6)]
    s = np.sqrt(0.25 / 400)
    assert f[1] <= f[0] + 2 * s and f[2] <= f[1] + 2 * s
    assert f[2] < f[0]


def test_report_json(tmp_path, capture):
    capture.write_json(tmp_path / "c.json")
    import json
    d = json.loads((tmp_path / "c.json").read_text())
    assert sum(d["counts"].values()) == capture.n
    lo, hi = d["ci95"]
    assert lo <= d["capture_fraction"] <= hi
