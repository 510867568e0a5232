"""Synthetic photon time tags, folding against lattice sync markers, alignment.

Folded (clocked) time of a tag is t - tau_i with tau_i the last sync marker
before it. A ClockedSpectrum keeps the folded data untouched and carries a
timing offset; the aligned time of a folded bin is t_folded + offset, and
views roll the bins by the nearest whole number of bins.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import BinningMismatchError, NoSignalError

DEFAULT_BINS = 50


def wrap_offset(offset: float, period: float) -> float:
    """Map an offset into (-period/2, period/2]."""
    return float(0.5 * period - np.mod(0.5 * period - offset, period))


# -- tag streams

@dataclass
class TimeTagStream:
    probe: np.ndarray                    # s, sorted
    sync: np.ndarray                     # s, sorted
    fringe_t: Optional[np.ndarray] = None
    fringe_v: Optional[np.ndarray] = None

    def __post_init__(self):
        self.probe = np.asarray(self.probe, dtype=float)
        self.sync = np.asarray(self.sync, dtype=float)
        if np.any(np.diff(self.probe) < 0) or np.any(np.diff(self.sync) <= 0):
            raise ValueError("tag and sync streams must be sorted")

    def shifted(self, dt: float) -> "TimeTagStream":
        ft = None if self.fringe_t is None else self.fringe_t + dt
        return TimeTagStream(self.probe + dt, self.sync + dt, ft, self.fringe_v)


@dataclass(frozen=True)
class SyncConfig:
    period: float = 1 / 1.2e6
    offset: float = 0.0          # marker time relative to the true lattice phase
    jitter: float = 0.0          # Gaussian sigma


def periodic_profile(values, period: float, phase: float = 0.0) -> Callable:
    """Piecewise-constant periodic function from per-bin values over one period.

    Bin b covers true times [phase + b w, phase + (b + 1) w) modulo the period.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)

    def f(t):
        b = np.floor(np.mod(np.asarray(t) - phase, period) / period * n).astype(int)
        return values[np.minimum(b, n - 1)]

    f.bound = float(values.max()) if n else 0.0
    return f


def sync_markers(duration: float, cfg: SyncConfig, rng=None, t_start: float = 0.0) -> np.ndarray:
    n = int(np.floor(duration / cfg.period + 1e-9)) + 1
    s = t_start + np.arange(n) * cfg.period + cfg.offset
    if cfg.jitter > 0:
        s = s + (rng or np.random.default_rng()).normal(0.0, cfg.jitter, n)
        s = np.sort(s)
    return s


def fringe_waveform(t, period: float, t_peak: float = 0.0, contrast: float = 0.7, amplitude: float = 1.0):
    """Lattice fringe: amplitude * [1 + contrast cos(2 pi (t - t_peak) / period)]."""
    return amplitude * (1.0 + contrast * np.cos(2 * np.pi * (np.asarray(t) - t_peak) / period))


def simulate_counts(T: Union[float, Callable, np.ndarray], rate: float, duration: float, rng,
                    sync: SyncConfig = SyncConfig(), dark_rate: float = 0.0, t_start: float = 0.0,
                    bound: Optional[float] = None, fringe_dt: Optional[float] = None,
                    fringe_peak: float = 0.0, fringe_contrast: float = 0.7) -> TimeTagStream:
    """Probe tags from an inhomogeneous Poisson process by thinning.

    ``T`` is a constant, a per-bin array over one lattice period (true time,
    periodic), or a vectorised callable of absolute time; callables need an
    upper ``bound`` unless they carry a ``bound`` attribute.
    """
    if rate < 0 or dark_rate < 0:
        raise ValueError("rates must be >= 0")
    if np.isscalar(T):
        val = float(T)
        fun = lambda t: np.full(np.shape(t), val)
        tmax = val
    elif callable(T):
        fun = T
        tmax = bound if bound is not None else getattr(T, "bound", None)
        if tmax is None:
            raise ValueError("callable transmission needs an upper bound")
    else:
        fun = periodic_profile(T, sync.period)
        tmax = fun.bound
    if tmax < 0:
        raise ValueError("transmission must be >= 0")
    lam = rate * tmax + dark_rate
    if lam > 0:
        n = rng.poisson(lam * duration)
        cand = np.sort(t_start + rng.uniform(0.0, duration, n))
        keep = rng.uniform(0.0, lam, n) < rate * fun(cand) + dark_rate
        tags = cand[keep]
    else:
        tags = np.array([])
    markers = sync_markers(duration, sync, rng, t_start)
    ft = fv = None
    if fringe_dt:
        ft = t_start + np.arange(0.0, duration, fringe_dt)
        fv = fringe_waveform(ft, sync.period, fringe_peak, fringe_contrast)
    return TimeTagStream(tags, markers, ft, fv)


def write_tags(stream: TimeTagStream, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("channel", "time_ns"))
        rows = [("probe", t) for t in stream.probe] + [("sync", t) for t in stream.sync]
        rows.sort(key=lambda r: r[1])
        for ch, t in rows:
            w.writerow((ch, "%.17g" % (t * 1e9)))


def read_tags(file) -> TimeTagStream:
    probe, sync = [], []
    with open(file, newline="") as fh:
        r = csv.reader(ln for ln in fh if not ln.startswith("#"))
        if tuple(next(r)) != ("channel", "time_ns"):
            raise ValueError("not a tag file")
        for ch, t in r:
            (probe if ch == "probe" else sync).append(float(t) * 1e-9)
    return TimeTagStream(np.array(probe), np.array(sync))


# -- folding

@dataclass
class ClockedHistogram:
    edges: np.ndarray     # over [0, period)
    counts: np.ndarray
    n_periods: int
    dropped: int = 0

    @property
    def period(self) -> float:
        return float(self.edges[-1])

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def bin_width(self) -> float:
        return self.period / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def _fold_times(t, sync, period):
    i = np.searchsorted(sync, t, side="right") - 1
    ok = (i >= 0) & (i < len(sync) - 1)
    dt = np.where(ok, t - sync[np.clip(i, 0, len(sync) - 1)], 0.0)
    return dt, ok


def fold(tags, sync, n_bins: int = DEFAULT_BINS, period: Optional[float] = None) -> ClockedHistogram:
    """Histogram of t - tau_i for tags inside covered periods [tau_i, tau_{i+1})."""
    tags = np.asarray(tags, dtype=float)
    sync = np.asarray(sync, dtype=float)
    if len(sync) < 2:
        raise ValueError("folding needs at least two sync markers")
    if period is None:
        period = (sync[-1] - sync[0]) / (len(sync) - 1)
    dt, ok = _fold_times(tags, sync, period)
    b = np.minimum((dt[ok] / period * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    edges = np.linspace(0.0, period, n_bins + 1)
    return ClockedHistogram(edges, counts, len(sync) - 1, int((~ok).sum()))


def fold_samples(times, values, sync, n_bins: int = DEFAULT_BINS, period: Optional[float] = None):
    """Per-bin mean of a sampled waveform (values may carry trailing axes)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sync = np.asarray(sync, dtype=float)
    if period is None:
        period = (sync[-1] - sync[0]) / (len(sync) - 1)
    dt, ok = _fold_times(times, sync, period)
    b = np.minimum((dt[ok] / period * n_bins).astype(int), n_bins - 1)
    n = np.bincount(b, minlength=n_bins)
    v = values[ok]
    flat = v.reshape(len(v), -1)
    sums = np.stack([np.bincount(b, weights=flat[:, j], minlength=n_bins) for j in range(flat.shape[1])], axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / n[:, None]
    return mean.reshape((n_bins,) + values.shape[1:]), n


@dataclass
class NormalizedBins:
    ratio: np.ndarray
    sigma: np.ndarray
    valid: np.ndarray


def normalize(hist_atoms: ClockedHistogram, hist_ref: ClockedHistogram) -> NormalizedBins:
    """Per-period count ratio with Poisson errors ratio * sqrt(1/n_a + 1/n_r).

    Bins with no reference counts are flagged invalid (ratio NaN). An empty
    atom bin gets ratio 0 and the error of a single count.
    """
    if hist_atoms.n_bins != hist_ref.n_bins or not np.allclose(hist_atoms.edges, hist_ref.edges,
                                                                 rtol=1e-9, atol=0):
        raise BinningMismatchError("histograms use different binning")
    na = hist_atoms.counts.astype(float)
    nr = hist_ref.counts.astype(float)
    scale = hist_ref.n_periods / hist_atoms.n_periods
    valid = nr > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(valid, na / nr * scale, np.nan)
        sig = np.where(na > 0, ratio * np.sqrt(1 / na + 1 / nr), scale / nr)
    sig = np.where(valid, sig, np.nan)
    return NormalizedBins(ratio, sig, valid)


# -- clocked spectra

@dataclass
class ClockedSpectrum:
    """Normalised transmission on (detuning x folded-time bin).

    ``T`` and ``sigma`` are stored in the folded frame; ``offset`` is applied
    only in views (``aligned``), so offsets compose exactly.
    """

    detunings: np.ndarray
    period: float
    T: np.ndarray                       # (n_det, n_bins)
    sigma: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None   # atom-run counts per cell
    valid: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        self.T = np.atleast_2d(np.asarray(self.T, dtype=float))
        self.detunings = np.asarray(self.detunings, dtype=float)
        if self.valid is None:
            self.valid = np.isfinite(self.T)
        if self.T.shape[0] != len(self.detunings):
            raise ValueError("T rows must match the detuning grid")

    @property
    def n_bins(self) -> int:
        return self.T.shape[1]

    @property
    def bin_width(self) -> float:
        return self.period / self.n_bins

    @property
    def times(self) -> np.ndarray:
        """Bin centres in [0, period)."""
        return (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def shift_bins(self) -> int:
        return int(np.round(self.offset / self.bin_width))

    def with_offset(self, delta: float) -> "ClockedSpectrum":
        return replace(self, offset=wrap_offset(self.offset + delta, self.period))

    def with_absolute_offset(self, offset: float) -> "ClockedSpectrum":
        return replace(self, offset=wrap_offset(offset, self.period))

    def _view(self, a):
        return None if a is None else np.roll(a, self.shift_bins, axis=-1)

    def aligned(self):
        """(T, sigma, counts, valid) with the offset applied."""
        return self._view(self.T), self._view(self.sigma), self._view(self.counts), self._view(self.valid)

    def projection(self, aligned: bool = True) -> np.ndarray:
        """Sum over detunings of (1 - T), skipping invalid cells."""
        T = self._view(self.T) if aligned else self.T
        v = self._view(self.valid) if aligned else self.valid
        return np.where(v, 1.0 - T, 0.0).sum(axis=0)

    def projection_sigma(self, aligned: bool = True) -> Optional[np.ndarray]:
        if self.sigma is None:
            return None
        s = self._view(self.sigma) if aligned else self.sigma
        v = self._view(self.valid) if aligned else self.valid
        return np.sqrt((np.where(v, s, 0.0) ** 2).sum(axis=0))

    def combine_bins(self, k: int) -> "ClockedSpectrum":
        """Merge groups of k adjacent (aligned) bins; T is count-weighted if counts exist.

        Bins beyond the last full group are dropped; the result's ``period``
        is kept, so its bin times are not those of the merged groups.
        """
        T, sig, cnt, val = self.aligned()
        nb = self.n_bins // k
        if nb < 1:
            raise ValueError("combine factor exceeds bin count")
        sl = slice(0, nb * k)
        sh = (T.shape[0], nb, k)
        v = val[:, sl].reshape(sh)
        tw = np.where(v, T[:, sl].reshape(sh), 0.0)
        if cnt is not None:
            # weight by reference exposure n_a / T so the merge equals pooled counts
            with np.errstate(invalid="ignore", divide="ignore"):
                w = np.where(v & (tw > 0), cnt[:, sl].reshape(sh) / tw, 0.0)
            w = np.where(v & ~(w > 0), 1.0, w)
        else:
            w = v.astype(float)
        wsum = w.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            Tm = (w * tw).sum(axis=-1) / wsum
            sm = None
            if sig is not None:
                sm = np.sqrt((w**2 * np.where(v, sig[:, sl].reshape(sh), 0.0) ** 2).sum(axis=-1)) / wsum
        cm = None if cnt is None else np.where(v, cnt[:, sl].reshape(sh), 0).sum(axis=-1)
        return ClockedSpectrum(self.detunings, self.period, Tm, sm, cm, wsum > 0, 0.0)

    def write_csv(self, file, aligned: bool = True) -> None:
        from .optics import write_spectrum_csv
        T = self._view(self.T) if aligned else self.T
        v = self._view(self.valid) if aligned else self.valid
        write_spectrum_csv(file, self.times, self.detunings, np.where(v, T, np.nan).T)


def clocked_from_histograms(detunings, atoms: list, refs: list, offset: float = 0.0) -> ClockedSpectrum:
    rows = [normalize(a, r) for a, r in zip(atoms, refs)]
    return ClockedSpectrum(np.asarray(detunings), atoms[0].period,
                           np.array([r.ratio for r in rows]), np.array([r.sigma for r in rows]),
                           np.array([a.counts for a in atoms]), np.array([r.valid for r in rows]), offset)


def clocked_from_samples(times, T, detunings, sync, n_bins: int = DEFAULT_BINS,
                         period: Optional[float] = None) -> ClockedSpectrum:
    """Noise-free clocked spectrum by folding sampled T(t, Delta) (rows = times)."""
    mean, n = fold_samples(times, T, sync, n_bins, period)
    if period is None:
        period = (sync[-1] - sync[0]) / (len(sync) - 1)
    return ClockedSpectrum(np.asarray(detunings), period, mean.T, None, None,
                           np.broadcast_to(n > 0, mean.T.shape).copy())


# -- alignment

def _harmonics(p, n_harm):
    c = np.fft.rfft(p)
    c[n_harm + 1:] = 0
    return c


def _gaussian_harmonics(p, sigma_bins):
    """rfft coefficients of p circularly convolved with a Gaussian (sigma in bins)."""
    c = np.fft.rfft(p)
    k = np.arange(len(c))
    return c * np.exp(-0.5 * (2 * np.pi * k * sigma_bins / len(p)) ** 2)


def _eval_series(c, n, s):
    """Evaluate the real series with rfft coefficients c (length-n signal) at bin coordinates s."""
    k = np.arange(len(c))
    w = np.where((k == 0) | ((n % 2 == 0) & (k == n // 2)), 1.0, 2.0)
    return (w[None, :] * (c[None, :] * np.exp(2j * np.pi * np.outer(s, k) / n))).real.sum(axis=1) / n


def _series_extremum(c, n, find="min", oversample=40):
    s = np.arange(n * oversample) / oversample
    v = _eval_series(c, n, s)
    i = int(np.argmin(v) if find == "min" else np.argmax(v))
    # parabolic refinement on the fine grid
    vm, v0, vp = v[i - 1], v[i], v[(i + 1) % len(v)]
    den = vm - 2 * v0 + vp
    frac = 0.5 * (vm - vp) / den if den != 0 else 0.0
    return (s[i] + frac / oversample) % n, v


def align_min_od(spectrum: ClockedSpectrum, smooth: Optional[float] = None, rel_tol: float = 1e-9) -> float:
    """Absolute offset putting the minimum of sum(1 - T) at clocked time 0.

    The projection is circularly smoothed with a Gaussian of width ``smooth``
    (default period/16) before locating its minimum; a positive kernel keeps
    shot noise from picking the bin without adding spurious extrema.
    Returned in (-period/2, period/2].
    """
    p = spectrum.projection(aligned=False)
    n = len(p)
    if not np.all(np.isfinite(p)) or np.ptp(p) <= rel_tol * (1.0 + np.abs(p).max()):
        raise NoSignalError("projection is flat; no atomic signal to align on")
    sig_b = (spectrum.period / 16 if smooth is None else smooth) / spectrum.bin_width
    c = _gaussian_harmonics(p, sig_b)
    s_min, v = _series_extremum(c, n, "min")
    sp = spectrum.projection_sigma(aligned=False)
    if sp is not None:
        kern = np.fft.irfft(_gaussian_harmonics(np.eye(n)[0], sig_b), n)
        noise = np.sqrt(np.mean(sp**2) * np.sum(kern**2))
        if np.ptp(v) < 3 * noise:
            raise NoSignalError("projection modulation is below the shot-noise floor")
    t_min = (s_min + 0.5) * spectrum.bin_width
    return wrap_offset(-t_min, spectrum.period)


def align_xcorr(stream: TimeTagStream, n_bins: int = DEFAULT_BINS, min_contrast: float = 0.1,
                n_harm: int = 5, period: Optional[float] = None) -> float:
    """Absolute offset from correlating folded probe counts with the fringe.

    The fringe, folded with the same markers, is used as a template centred on
    its own maximum; the template position of highest correlation with the
    counts is moved to clocked time 0.
    """
    if stream.fringe_t is None or len(stream.fringe_t) == 0:
        raise ValueError("stream carries no fringe waveform")
    ft = stream.fringe_t
    step = np.median(np.diff(ft)) if len(ft) > 1 else np.inf
    lo = max(stream.sync[0], stream.probe[0]) if len(stream.probe) else stream.sync[0]
    hi = min(stream.sync[-1], stream.probe[-1]) if len(stream.probe) else stream.sync[-1]
    if ft[0] > lo + step or ft[-1] < hi - step:
        raise ValueError("fringe does not cover the tag span")
    h = fold(stream.probe, stream.sync, n_bins, period)
    f, nf = fold_samples(stream.fringe_t, stream.fringe_v, stream.sync, n_bins, period)
    if np.any(nf == 0):
        raise ValueError("fringe does not cover the tag span")
    contrast = (f.max() - f.min()) / (f.max() + f.min())
    if not contrast >= min_contrast:
        raise NoSignalError(f"fringe contrast {contrast:.3g} below threshold {min_contrast}")
    counts = h.counts.astype(float)
    if counts.sum() == 0:
        raise NoSignalError("no probe counts")
    n = n_bins
    p_f, _ = _series_extremum(_harmonics(f, n_harm), n, "max")
    H = _harmonics(counts - counts.mean(), n_harm)
    F = _harmonics(f - f.mean(), n_harm)
    # template centred on its own peak: F_c[k] = F[k] exp(2 pi i k p_f / n)
    Fc = F * np.exp(2j * np.pi * np.arange(len(F)) * p_f / n)
    s_peak, corr = _series_extremum(H * np.conj(Fc), n, "max")
    if np.ptp(corr) == 0:
        raise NoSignalError("counts are uncorrelated with the fringe")
    t_peak = (s_peak + 0.5) * h.bin_width
    return wrap_offset(-t_peak, h.period)
