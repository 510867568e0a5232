"""Stage functions chaining the modules into the full clocked-delivery run."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import analysis, clocking, dynamics, optics, trapping
from .config import RunConfig
from .fields import CPModel, Domain, Geometry2D, GMModeModel, LatticeParams, PotentialStack, import_field_grid
from .units import GAMMA0, GHZ, KHZ_UM3, MHZ, MK, NM, NS, UK, UM, UM2, UW


def n_threads() -> int:
    v = os.environ.get("CLOCKED_DELIVERY_THREADS")
    return max(1, int(v)) if v else (os.cpu_count() or 1)


# -- builders

def build_geometry(cfg: RunConfig) -> Geometry2D:
    g = cfg.geometry
    return Geometry2D(g.gap_nm * NM, g.beam_width_nm * NM, g.thickness_nm * NM, g.unit_cell_nm * NM, g.cells)


def build_lattice(cfg: RunConfig) -> LatticeParams:
    c = cfg.lattice
    return LatticeParams(depth=c.depth_uK * UK, waist=c.waist_um * UM, f_chirp=c.f_chirp_hz,
                         detuning=c.detuning_ghz * GHZ,
                         wavelength=None if c.wavelength_nm is None else c.wavelength_nm * NM,
                         phase=c.phase, excited_ratio=c.excited_ratio)


def build_gm(c) -> GMModeModel:
    grid = import_field_grid(c.grid_file) if c.profile == "grid" else None
    return GMModeModel(c.detuning_ghz * GHZ, c.power_uw * UW, c.mode_area_um2 * UM2, c.polarization,
                       c.decay_length_nm * NM, c.contrast, c.profile,
                       (c.center_nm[0] * NM, c.center_nm[1] * NM), c.waist_y_nm * NM, c.waist_z_nm * NM,
                       grid, c.excited_ratio, (c.f3_scale, c.f4_scale), c.name)


def build_stack(cfg: RunConfig, cp: Optional[bool] = None) -> PotentialStack:
    c = cfg.cp
    use_cp = c.enabled if cp is None else cp
    cpm = CPModel(c.c3_ground_khz_um3 * KHZ_UM3, c.c3_excited_khz_um3 * KHZ_UM3, mode=c.mode) if use_cp else None
    d = cfg.domain
    return PotentialStack(build_geometry(cfg), build_lattice(cfg), tuple(build_gm(g) for g in cfg.gm), cpm,
                          domain=Domain(d.y_half_um * UM, d.z_min_um * UM, d.z_max_um * UM))


def build_probe(cfg: RunConfig) -> optics.ProbeConfig:
    p = cfg.probe
    det = np.linspace(p.det_min_mhz, p.det_max_mhz, p.n_det) * MHZ
    gp = GAMMA0 if p.gamma_prime_mhz is None else p.gamma_prime_mhz * MHZ
    g = cfg.geometry
    return optics.ProbeConfig(polarization=p.polarization, detunings=tuple(det),
                              gamma_1d_peak=p.gamma_1d_peak_mhz * MHZ, gamma_prime=gp, n_eff=p.n_eff,
                              unit_cell=g.unit_cell_nm * NM, cells=g.cells, profile=p.profile,
                              decay_length=p.decay_length_nm * NM, contrast=p.contrast,
                              coupling_cutoff=p.coupling_cutoff)


def build_ensemble_spec(cfg: RunConfig) -> dynamics.EnsembleSpec:
    e = cfg.ensemble
    return dynamics.EnsembleSpec(e.atoms_per_pancake, e.pancakes, e.temperature_uK * 1e-6, e.launch_z_um * UM,
                                 cfg.seed)


def build_trap(cfg: RunConfig) -> trapping.TwoColorTrap:
    c = cfg.capture
    return trapping.default_trap(c.blue_peak_mK * MK, c.red_peak_mK * MK, cp=c.cp, geometry=build_geometry(cfg),
                                 blue_detuning=c.blue_detuning_ghz * GHZ, red_detuning=c.red_detuning_ghz * GHZ,
                                 f3_scale=c.f3_scale, f4_scale=c.f4_scale)


def build_capture(cfg: RunConfig, lattice: LatticeParams) -> trapping.CaptureConfig:
    c = cfg.capture
    return trapping.CaptureConfig(trigger_time=c.trigger_ns * NS,
                                  window=None if c.window_mhz is None else (c.window_mhz[0] * MHZ,
                                                                            c.window_mhz[1] * MHZ),
                                  beta=c.beta, barrier=None if c.barrier_mK is None else c.barrier_mK * MK,
                                  n_atoms=c.n_atoms, temperature=c.temperature_uK * 1e-6,
                                  start_z=c.start_z_nm * NM, speed=lattice.speed, seed=cfg.seed)


# -- stages

@dataclass
class TimeWindow:
    """Whole lattice periods around the pancake arrivals at the device."""

    start: float
    stop: float
    period: float
    phase_time: float      # a time at which an antinode sits at z = 0

    @property
    def n_periods(self) -> int:
        return int(round((self.stop - self.start) / self.period))

    def sync(self, offset: float = 0.0) -> np.ndarray:
        return self.start + self.period * np.arange(self.n_periods + 1) + offset


def arrival_window(stack: PotentialStack, spec: dynamics.EnsembleSpec) -> TimeWindow:
    lat = stack.lattice
    ns = dynamics.pancake_indices(spec, stack)
    t_first = lat.antinode_time(int(ns.min()))
    t_last = lat.antinode_time(int(ns.max()))
    start = t_first - lat.period
    while start < 0:
        start += lat.period
    return TimeWindow(start, t_last + 2 * lat.period, lat.period, t_first)


@dataclass
class TrajectoryStage:
    stack: PotentialStack
    spec: dynamics.EnsembleSpec
    window: TimeWindow
    trajectories: dynamics.TrajectorySet
    summary: dict


def run_trajectories(cfg: RunConfig, cp: Optional[bool] = None, cadence: Optional[float] = None) -> TrajectoryStage:
    """Sample the ensemble and integrate through the arrival window.

    Samples start at the window; with ``cadence=None`` they are placed at the
    centres of half clock bins so every folded bin gets equal weight.
    """
    stack = build_stack(cfg, cp)
    spec = build_ensemble_spec(cfg)
    win = arrival_window(stack, spec)
    if cadence is None:
        cadence = win.period / (2 * cfg.clocking.n_bins)
    ic = cfg.integrator
    opts = dynamics.IntegratorOptions(rtol=ic.rtol, atol=ic.atol, h_max=ic.h_max_ns * NS, cadence=cadence,
                                      record_from=win.start + 0.5 * cadence, crash_tol=ic.crash_tol_nm * NM)
    ens = dynamics.sample_ensemble(spec, stack)
    ts = dynamics.integrate(ens, stack, 0.0, win.stop, opts)
    summary = dynamics.trajectory_summary(ts, stack.geometry)
    summary["centre_per_pancake"] = summary["classes"].get("center", 0) / spec.pancakes
    return TrajectoryStage(stack, spec, win, ts, summary)


def run_spectrum(cfg: RunConfig, traj: TrajectoryStage) -> optics.SpectrumResult:
    return optics.spectrum_grid(traj.trajectories, build_probe(cfg), traj.stack, seed=cfg.seed)


@dataclass
class ClockStage:
    ideal: clocking.ClockedSpectrum        # noise-free fold of the simulated spectrum
    noisy: clocking.ClockedSpectrum        # from Poisson tags, with offset applied
    alignment: dict
    streams: Optional[list] = None


def ideal_clocked(cfg: RunConfig, spec: optics.SpectrumResult, win: TimeWindow) -> clocking.ClockedSpectrum:
    return clocking.clocked_from_samples(spec.times, spec.T, spec.detunings, win.sync(), cfg.clocking.n_bins,
                                         win.period)


def poisson_floor(ideal: clocking.ClockedSpectrum, rate: float, n_periods: int) -> np.ndarray:
    """Expected shot-noise sigma of the projection per bin for the given exposure."""
    nr = rate * ideal.bin_width * n_periods
    T = np.clip(ideal.T, 1e-12, None)
    return np.sqrt((T**2 * (1 / (T * nr) + 1 / nr)).sum(axis=0))


def run_clockfold(cfg: RunConfig, spec: optics.SpectrumResult, win: TimeWindow) -> ClockStage:
    c = cfg.clocking
    ideal = ideal_clocked(cfg, spec, win)
    period = win.period
    duration = c.n_periods * period
    sync = clocking.SyncConfig(period, c.sync_offset_ns * NS, c.jitter_ns * NS)
    # true-time bin b of the ideal profile covers [b w, (b+1) w) after an antinode at z = 0
    phase = win.start
    mid = len(spec.detunings) // 2

    def one(i):
        prof = clocking.periodic_profile(np.nan_to_num(ideal.T[i], nan=1.0), period, phase)
        fr = dict(fringe_dt=period / (4 * c.n_bins), fringe_peak=phase, fringe_contrast=c.fringe_contrast) \
            if (i == mid and c.align == "xcorr") else {}
        a = clocking.simulate_counts(prof, c.rate_cps, duration, np.random.default_rng([cfg.seed, 1, i]),
                                     sync, c.dark_cps, t_start=phase, **fr)
        r = clocking.simulate_counts(1.0, c.rate_cps, duration, np.random.default_rng([cfg.seed, 2, i]),
                                     sync, c.dark_cps, t_start=phase)
        return a, r

    with ThreadPoolExecutor(n_threads()) as ex:
        streams = list(ex.map(one, range(len(spec.detunings))))
    ha = [clocking.fold(a.probe, a.sync, c.n_bins, period) for a, _ in streams]
    hr = [clocking.fold(r.probe, r.sync, c.n_bins, period) for _, r in streams]
    noisy = clocking.clocked_from_histograms(spec.detunings, ha, hr)
    info = {"method": c.align, "device_offset_ns": c.device_offset_ns, "extra_offset_ns": c.extra_offset_ns}
    off = 0.0
    if c.align == "min_od":
        off = clocking.align_min_od(noisy, None if c.smooth_ns is None else c.smooth_ns * NS)
        info["min_od_offset_ns"] = off / NS
    elif c.align == "xcorr":
        off = clocking.align_xcorr(streams[mid][0], c.n_bins, period=period)
        info["xcorr_offset_ns"] = off / NS
    total = off + (c.device_offset_ns + c.extra_offset_ns) * NS
    noisy = noisy.with_absolute_offset(total)
    info["applied_offset_ns"] = noisy.offset / NS
    return ClockStage(ideal, noisy, info, streams if c.write_tags else None)


def run_fit(cfg: RunConfig, clk: ClockStage) -> analysis.FitSeries:
    f = cfg.fit
    return analysis.fit_timeseries(clk.noisy, f.combine_bins, f.warm_start, max_iter=f.max_iter)


def run_capture(cfg: RunConfig) -> trapping.CaptureResult:
    trap = build_trap(cfg)
    return trapping.capture_monte_carlo(trap, build_capture(cfg, build_lattice(cfg)))


def write_projection_csv(file, ideal: clocking.ClockedSpectrum, noisy: clocking.ClockedSpectrum,
                         header: str = "") -> None:
    pi = ideal.projection(aligned=False)
    pn = noisy.projection(aligned=False)
    sn = noisy.projection_sigma(aligned=False)
    with open(file, "w") as fh:
        fh.write(header)
        fh.write("t_ns,projection_ideal,projection_folded,sigma_folded\n")
        for t, a, b, s in zip(ideal.times, pi, pn, sn):
            fh.write("%.6f,%.10g,%.10g,%.10g\n" % (t / NS, a, b, s))
