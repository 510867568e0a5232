"""Run configuration: TOML file -> validated model -> SI-unit objects.

Fields carry their lab unit in the name (``_nm``, ``_uK``, ``_mhz``...);
``build_*`` helpers do the conversion. Validation collects every problem with
its dotted path before anything is computed.
"""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometryCfg(_Section):
    gap_nm: float = Field(250.0, gt=0)
    beam_width_nm: float = Field(300.0, gt=0)
    thickness_nm: float = Field(200.0, gt=0)
    unit_cell_nm: float = Field(370.0, gt=0)
    cells: int = Field(150, gt=0)


class DomainCfg(_Section):
    y_half_um: float = Field(25.0, gt=0)
    z_min_um: float = -10.0
    z_max_um: float = 60.0

    @model_validator(mode="after")
    def _order(self):
        if not self.z_max_um > self.z_min_um:
            raise ValueError("z_max_um must exceed z_min_um")
        return self


class LatticeCfg(_Section):
    depth_uK: float = Field(500.0, gt=0)
    waist_um: float = Field(60.0, gt=0)
    f_chirp_hz: float = Field(1.2e6, gt=0)
    detuning_ghz: float = -800.0
    wavelength_nm: Optional[float] = Field(None, gt=0)
    phase: float = 0.0
    excited_ratio: float = 1.0


class CPCfg(_Section):
    enabled: bool = True
    c3_ground_khz_um3: float = Field(2.6, gt=0)
    c3_excited_khz_um3: float = Field(5.2, gt=0)
    mode: Literal["nearest", "per_beam"] = "nearest"


class GMCfg(_Section):
    name: str = "gm"
    detuning_ghz: float
    power_uw: float = Field(0.0, ge=0)
    mode_area_um2: float = Field(10.0, gt=0)
    polarization: Literal["TE", "TM"] = "TM"
    profile: Literal["evanescent", "surface", "gaussian", "grid"] = "evanescent"
    grid_file: Optional[str] = None
    decay_length_nm: float = Field(100.0, gt=0)
    contrast: Optional[float] = Field(None, ge=0, le=1)
    center_nm: Tuple[float, float] = (0.0, 0.0)
    waist_y_nm: float = Field(200.0, gt=0)
    waist_z_nm: float = Field(150.0, gt=0)
    excited_ratio: float = 1.0
    f3_scale: float = 1.0
    f4_scale: float = 1.0


class EnsembleCfg(_Section):
    atoms_per_pancake: int = Field(500, gt=0)
    pancakes: int = Field(5, gt=0)
    temperature_uK: float = Field(100.0, gt=0)
    launch_z_um: float = 60.0


class IntegratorCfg(_Section):
    rtol: float = Field(1e-8, gt=0)
    atol: float = Field(1e-12, gt=0)
    h_max_ns: float = Field(20.0, gt=0)
    cadence_ns: float = Field(10.0, gt=0)
    crash_tol_nm: float = Field(0.1, gt=0)


class TrajectoriesCfg(_Section):
    export: bool = True
    export_stride: int = Field(5, ge=1)


class ProbeCfg(_Section):
    polarization: Literal["TE", "TM"] = "TM"
    det_min_mhz: float = -40.0
    det_max_mhz: float = 40.0
    n_det: int = Field(40, ge=1)
    gamma_1d_peak_mhz: float = Field(0.5, ge=0)
    gamma_prime_mhz: Optional[float] = Field(None, ge=0)
    n_eff: float = Field(1.7, gt=0)
    profile: Literal["evanescent", "surface", "gaussian"] = "evanescent"
    decay_length_nm: float = Field(150.0, gt=0)
    contrast: Optional[float] = Field(None, ge=0, le=1)
    coupling_cutoff: float = Field(1e-4, ge=0)


class ClockingCfg(_Section):
    n_bins: int = Field(50, ge=2)
    rate_cps: float = Field(1e6, ge=0)
    n_periods: int = Field(100_000, ge=1)
    dark_cps: float = Field(0.0, ge=0)
    sync_offset_ns: float = 0.0
    jitter_ns: float = Field(0.0, ge=0)
    device_offset_ns: float = 0.0
    extra_offset_ns: float = 0.0
    align: Literal["min_od", "xcorr", "none"] = "min_od"
    smooth_ns: Optional[float] = Field(None, gt=0)
    fringe_contrast: float = Field(0.7, ge=0, le=1)
    write_tags: bool = False


class FitCfg(_Section):
    combine_bins: int = Field(3, ge=1)
    warm_start: bool = True
    max_iter: int = Field(200, ge=1)


class CaptureCfg(_Section):
    enabled: bool = True
    n_atoms: int = Field(2000, gt=0)
    beta: float = Field(0.5, ge=0, le=1)
    trigger_ns: float = Field(1200.0, ge=0)
    temperature_uK: float = Field(10.0, ge=0)
    start_z_nm: float = 600.0
    blue_detuning_ghz: float = 60.0
    red_detuning_ghz: float = -600.0
    blue_peak_mK: float = Field(50.0, ge=0)
    red_peak_mK: float = Field(5.0, ge=0)
    f3_scale: float = Field(1.0, ge=0)
    f4_scale: float = Field(0.2, ge=0)
    cp: bool = True
    window_mhz: Optional[Tuple[float, float]] = None
    barrier_mK: Optional[float] = Field(None, gt=0)


class RunConfig(_Section):
    seed: int = Field(0, ge=0)
    output_dir: str = "out"
    geometry: GeometryCfg = GeometryCfg()
    domain: DomainCfg = DomainCfg()
    lattice: LatticeCfg = LatticeCfg()
    cp: CPCfg = CPCfg()
    gm: List[GMCfg] = []
    ensemble: EnsembleCfg = EnsembleCfg()
    integrator: IntegratorCfg = IntegratorCfg()
    trajectories: TrajectoriesCfg = TrajectoriesCfg()
    probe: ProbeCfg = ProbeCfg()
    clocking: ClockingCfg = ClockingCfg()
    fit: FitCfg = FitCfg()
    capture: CaptureCfg = CaptureCfg()


def _set_path(d: dict, path: str, value) -> None:
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        if isinstance(cur, list):
            cur = cur[int(k)]
        else:
            cur = cur.setdefault(k, {})
    if isinstance(cur, list):
        cur[int(keys[-1])] = value
    else:
        cur[keys[-1]] = value


def parse_override(item: str):
    """'a.b=v' -> ('a.b', v) with v parsed as a TOML value (bare words are strings)."""
    if "=" not in item:
        raise ConfigError([(item, "override must look like section.key=value")])
    path, raw = item.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return path.strip(), value


def load_config(path=None, overrides=(), **extra) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([(str(path), f"TOML syntax: {e}")]) from None
    for item in overrides:
        p, v = parse_override(item)
        try:
            _set_path(data, p, v)
        except (IndexError, ValueError, TypeError):
            raise ConfigError([(p, "no such list element")]) from None
    data.update({k: v for k, v in extra.items() if v is not None})
    return validate(data)


def validate(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        probs = [(".".join(str(x) for x in err["loc"]) or "<root>", err["msg"]) for err in e.errors()]
        raise ConfigError(probs) from None


def config_hash(cfg: RunConfig) -> str:
    """sha256 over the validated config minus where outputs go."""
    d = cfg.model_dump(mode="json", exclude={"output_dir"})
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def default_config_path() -> Path:
    return Path(__file__).resolve().parent / "data" / "default.toml"
