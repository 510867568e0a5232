"""Effective-model fits of clocked transmission spectra.

Model, with delta = Delta_p - Delta_AC:

    T = |(delta + i G'/2) / ((delta + J) + i (G' + G_eff)/2)|^2

Fits use a small bounded Levenberg-Marquardt solver with an analytic
Jacobian; parameters are handled internally in units of 2 pi x MHz.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clocking import ClockedSpectrum
from .units import GAMMA0, MHZ

NAMES = ("gamma_eff", "j", "gamma_prime", "delta_ac")
FIT_COLUMNS = ("t_ns", "Geff_MHz", "sigma_Geff_MHz", "J_MHz", "sigma_J_MHz", "Gp_MHz", "sigma_Gp_MHz",
               "dAC_MHz", "sigma_dAC_MHz", "redchi2", "status")


def default_bounds(gamma0: float = GAMMA0):
    lo = np.array([0.0, -100 * MHZ, gamma0, -100 * MHZ])
    hi = np.array([100 * gamma0, 100 * MHZ, 100 * gamma0, 100 * MHZ])
    return lo, hi


@dataclass
class FitParams:
    gamma_eff: float
    j: float
    gamma_prime: float
    delta_ac: float
    sigma: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))
    cov: Optional[np.ndarray] = None
    chi2: float = np.nan
    redchi2: float = np.nan
    status: str = "ok"
    n_iter: int = 0
    t: float = np.nan

    @property
    def values(self) -> np.ndarray:
        return np.array([self.gamma_eff, self.j, self.gamma_prime, self.delta_ac])

    @classmethod
    def from_values(cls, v, **kw) -> "FitParams":
        return cls(*map(float, v), **kw)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def as_dict(self) -> dict:
        d = dict(zip(NAMES, self.values.tolist()))
        d.update({"sigma_" + n: float(s) for n, s in zip(NAMES, self.sigma)})
        d.update(chi2=self.chi2, redchi2=self.redchi2, status=self.status)
        return d


def _parts(delta_p, v):
    ge, j, gp, dac = v
    d = np.asarray(delta_p, dtype=float) - dac
    a = d**2 + 0.25 * gp**2
    g = gp + ge
    b = (d + j) ** 2 + 0.25 * g**2
    return d, a, b, g


def model_T(delta_p, params) -> np.ndarray:
    """Effective transmission; ``params`` is a FitParams or (G_eff, J, G', D_AC)."""
    v = params.values if isinstance(params, FitParams) else np.asarray(params, dtype=float)
    if v[2] + v[0] <= 0:
        raise ValueError("gamma_prime + gamma_eff must be positive")
    d, a, b, _ = _parts(delta_p, v)
    return a / b


def model_jacobian(delta_p, v) -> np.ndarray:
    """dT/d(G_eff, J, G', D_AC), shape (n, 4)."""
    j, gp = v[1], v[2]
    d, a, b, g = _parts(delta_p, v)
    q = a / b**2
    dge = -q * 0.5 * g
    dj = -q * 2 * (d + j)
    dgp = 0.5 * gp / b - q * 0.5 * g
    dd = 2 * d / b - q * 2 * (d + j)
    return np.stack([dge, dj, dgp, -dd], axis=-1)


def initial_guess(delta_p, T, gamma0: float = GAMMA0) -> np.ndarray:
    i = int(np.argmin(T))
    tmin = float(np.clip(T[i], 1e-4, 1.0))
    gp = gamma0
    return np.array([gp * (1 / np.sqrt(tmin) - 1), 0.0, gp, float(delta_p[i])])


def fit_slice(delta_p, T, sigma=None, init=None, bounds=None, max_iter: int = 200,
              tol: float = 1e-10, cond_max: float = 1e12) -> FitParams:
    """Weighted bounded Levenberg-Marquardt fit of one spectrum slice.

    ``sigma=None`` means unit weights, with the covariance rescaled by the
    reduced chi^2. Degenerate (rank deficient) fits get infinite sigma.
    """
    x_all = np.asarray(delta_p, dtype=float)
    y = np.asarray(T, dtype=float)
    absolute = sigma is not None
    s = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float)
    if len(x_all) < 5:
        raise ValueError("need at least 5 points")
    if not np.all(np.isfinite(s)) or np.any(s <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("data and sigma must be finite with sigma > 0")
    lo, hi = default_bounds() if bounds is None else map(np.asarray, bounds)
    scale = MHZ
    lo_s, hi_s = lo / scale, hi / scale
    v0 = initial_guess(x_all, y) if init is None else (init.values if isinstance(init, FitParams)
                                                      else np.asarray(init, float))
    p = np.clip(v0 / scale, lo_s, hi_s)
    w = 1.0 / s

    def resid(ps):
        return (model_T(x_all, ps * scale) - y) * w

    def jac(ps):
        return model_jacobian(x_all, ps * scale) * scale * w[:, None]

    r = resid(p)
    chi2 = float(r @ r)
    lam = 1e-3
    status = "maxiter"
    it = 0
    for it in range(1, max_iter + 1):
        Jm = jac(p)
        A = Jm.T @ Jm
        g = Jm.T @ r
        # free variables: not pinned at a bound with the gradient pushing outward
        pinned = ((p <= lo_s) & (g > 0)) | ((p >= hi_s) & (g < 0))
        improved = False
        while lam < 1e16:
            M = A + lam * np.diag(np.where(np.diag(A) > 0, np.diag(A), 1.0))
            step = np.zeros(4)
            free = ~pinned
            try:
                step[free] = -np.linalg.solve(M[np.ix_(free, free)], g[free])
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            pn = np.clip(p + step, lo_s, hi_s)
            rn = resid(pn)
            chin = float(rn @ rn)
            if chin <= chi2:
                dchi = chi2 - chin
                dp = np.max(np.abs(pn - p) / (np.abs(p) + 1e-3))
                p, r, chi2 = pn, rn, chin
                lam = max(lam / 10, 1e-12)
                improved = True
                break
            lam *= 10
        if not improved:
            status = "ok"
            break
        if dchi <= tol * max(chi2, 1e-30) or dp < 1e-12:
            status = "ok"
            break
    n, k = len(y), 4
    dof = max(n - k, 1)
    redchi2 = chi2 / dof
    Jm = jac(p)
    A = Jm.T @ Jm
    sig = np.full(4, np.inf)
    cov = None
    ev = np.linalg.eigvalsh(A)
    if ev.min() > ev.max() / cond_max and ev.max() > 0:
        cov = np.linalg.inv(A) * scale**2
        if not absolute:
            cov = cov * redchi2
        sig = np.sqrt(np.clip(np.diag(cov), 0, None))
        cov = 0.5 * (cov + cov.T)
    elif status == "ok":
        status = "degenerate"
    return FitParams.from_values(p * scale, sigma=sig, cov=cov, chi2=chi2, redchi2=redchi2,
                                 status=status, n_iter=it)


@dataclass
class FitSeries:
    times: np.ndarray
    fits: list

    def column(self, name: str) -> np.ndarray:
        i = NAMES.index(name)
        return np.array([f.values[i] if f is not None and f.status in ("ok", "degenerate") else np.nan
                         for f in self.fits])

    def sigma(self, name: str) -> np.ndarray:
        i = NAMES.index(name)
        return np.array([f.sigma[i] if f is not None and f.status in ("ok", "degenerate") else np.nan
                         for f in self.fits])

    def write_csv(self, file) -> None:
        write_fit_csv(file, self)


def _slice_data(det, T, sig, valid):
    m = valid & np.isfinite(T)
    if sig is not None:
        m &= np.isfinite(sig) & (sig > 0)
    return det[m], T[m], None if sig is None else sig[m]


def fit_timeseries(spectrum: ClockedSpectrum, combine_bins: int = 3, warm_start: bool = True,
                   **kw) -> FitSeries:
    """Fit each group of ``combine_bins`` aligned time bins.

    With ``warm_start`` each slice starts from the previous good fit (falling
    back to the data-driven guess on failure); otherwise every slice starts
    from the fit of the time-summed spectrum.
    """
    if combine_bins < 1:
        raise ValueError("combine_bins must be >= 1")
    comb = spectrum.combine_bins(combine_bins)
    det = comb.detunings
    # slice centres in the aligned frame; a trailing partial group is dropped
    t = (np.arange(comb.n_bins) + 0.5) * combine_bins * spectrum.bin_width
    shared = None
    if not warm_start:
        whole = spectrum.combine_bins(spectrum.n_bins)
        x, y, s = _slice_data(det, whole.T[:, 0], None if whole.sigma is None else whole.sigma[:, 0],
                              whole.valid[:, 0])
        shared = fit_slice(x, y, s, **kw) if len(x) >= 5 else None
    fits = []
    prev = None
    for b in range(comb.n_bins):
        x, y, s = _slice_data(det, comb.T[:, b], None if comb.sigma is None else comb.sigma[:, b],
                              comb.valid[:, b])
        if len(x) < 5:
            fits.append(FitParams(*(np.nan,) * 4, status="insufficient", t=t[b]))
            continue
        init = prev if warm_start else shared
        try:
            f = fit_slice(x, y, s, init=init if init is not None and init.ok else None, **kw)
            if warm_start and init is not None and not f.ok:
                f = fit_slice(x, y, s, **kw)
        except (ValueError, np.linalg.LinAlgError):
            f = FitParams(*(np.nan,) * 4, status="failed")
        f.t = t[b]
        fits.append(f)
        if f.ok:
            prev = f
    return FitSeries(t, fits)


def write_fit_csv(file, series: FitSeries) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for t, f in zip(series.times, series.fits):
            good = f.status in ("ok", "degenerate")
            row = ["%.6g" % (t * 1e9)]
            for v, s in zip(f.values, f.sigma):
                row += ["%.10g" % (v / MHZ if good else np.nan), "%.10g" % (s / MHZ if good else np.nan)]
            row += ["%.6g" % f.redchi2, f.status]
            w.writerow(row)


def read_fit_csv(file) -> list:
    with open(file, newline="") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
