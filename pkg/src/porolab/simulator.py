"""Incompressible, immiscible oil-water flow on a 2-D grid (IMPES scheme).

The pressure equation -div(lambda_t(sw) K grad p) = q is solved implicitly
with a two-point flux approximation (harmonic-mean permeability, arithmetic
face mobility); saturation is advanced explicitly with upwind fractional
flow under a CFL-limited sub-step.  Water is injected at a fixed total rate
spread over the leftmost column; the rightmost column is held at a fixed
producer pressure, which anchors the elliptic system.

Units are internally consistent and dimensionless: permeability is a
mobility multiplier, the injection rate is expressed in pore volumes per
day, and the cell thickness in the collapsed direction is one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class ReservoirConfig:
    nx: int = 64
    nz: int = 64
    dx: float = 10.0
    dz: float = 10.0
    porosity: float = 0.3
    sw_init: float = 0.2
    mu_w: float = 1.0
    mu_o: float = 5.0
    swc: float = 0.2
    sor: float = 0.2
    corey_nw: float = 2.0
    corey_no: float = 2.0
    rho_w: float = 1.0
    rho_o: float = 1.0
    q_inj: float = 0.1          # pore volumes per day
    p_prod: float = 0.0
    total_days: int = 24
    substep_cfl: float = 0.5

    def __post_init__(self):
        if self.nx < 2 or self.nz < 1:
            raise ValueError(f"grid must be at least 2x1, got {self.nx}x{self.nz}")
        if not (0.0 <= self.swc and 0.0 <= self.sor and self.swc + self.sor < 1.0):
            raise ValueError("residual saturations must satisfy 0 <= swc, sor and swc + sor < 1")
        if not (self.swc <= self.sw_init <= 1.0 - self.sor):
            raise ValueError(f"sw_init {self.sw_init} outside [{self.swc}, {1.0 - self.sor}]")
        for name in ("dx", "dz", "porosity", "mu_w", "mu_o"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.substep_cfl <= 1.0):
            raise ValueError("substep_cfl must lie in (0, 1]")

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dz

    @property
    def pore_volume(self) -> float:
        return self.porosity * self.cell_volume * self.nx * self.nz


@dataclass
class SimState:
    p: np.ndarray
    sw: np.ndarray
    day: float


@dataclass
class TimeSeriesSample:
    """Permeability plus daily pressure/saturation snapshots (day 0..T)."""

    k: np.ndarray
    p_series: np.ndarray
    sw_series: np.ndarray
    water_injected: float = 0.0
    water_produced: float = 0.0
    extra: dict = field(default_factory=dict)


def relperm(sw, cfg: ReservoirConfig):
    """Corey relative permeabilities (k_rw, k_ro) of the water saturation."""
    sw = np.asarray(sw, dtype=np.float64)
    lo, hi = cfg.swc, 1.0 - cfg.sor
    if np.any(sw < lo - 1e-9) or np.any(sw > hi + 1e-9):
        raise ValueError(f"saturation outside [{lo}, {hi}]: range [{sw.min()}, {sw.max()}]")
    se = np.clip((sw - lo) / (hi - lo), 0.0, 1.0)
    return se ** cfg.corey_nw, (1.0 - se) ** cfg.corey_no


def total_mobility(sw, cfg: ReservoirConfig):
    krw, kro = relperm(sw, cfg)
    lam_w = krw / cfg.mu_w
    return lam_w, lam_w + kro / cfg.mu_o


def face_transmissibility(k: np.ndarray, cfg: ReservoirConfig):
    """Geometric two-point face coefficients (interior faces only).

    Returns (tx, tz) with tx[i, :] coupling cells (i, :) and (i+1, :).
    Outer boundary faces carry no flow and are not represented.
    """
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (cfg.nx, cfg.nz):
        raise ValueError(f"permeability shape {k.shape} != grid {(cfg.nx, cfg.nz)}")

    def _harmonic(a, b):
        s = a + b
        out = np.zeros_like(s)
        nz = s > 0
        out[nz] = 2.0 * a[nz] * b[nz] / s[nz]
        return out

    tx = _harmonic(k[:-1, :], k[1:, :]) * cfg.dz / cfg.dx
    tz = _harmonic(k[:, :-1], k[:, 1:]) * cfg.dx / cfg.dz
    return tx, tz


def _mobility_faces(tx, tz, sw, cfg: ReservoirConfig):
    """Total-mobility face coefficients (arithmetic face average)."""
    _, lam_t = total_mobility(sw, cfg)
    txm = tx * 0.5 * (lam_t[:-1, :] + lam_t[1:, :])
    tzm = tz * 0.5 * (lam_t[:, :-1] + lam_t[:, 1:])
    return txm, tzm


def _injection_rate(cfg: ReservoirConfig) -> float:
    return cfg.q_inj * cfg.pore_volume


def assemble_pressure(k: np.ndarray, sw: np.ndarray, cfg: ReservoirConfig):
    """Sparse SPD system (A, b) for the total-mobility pressure equation.

    Injector cells (leftmost column) contribute a uniform split of the total
    rate to b; producer cells (rightmost column) are eliminated symmetrically
    as Dirichlet rows p = p_prod.
    """
    tx, tz = face_transmissibility(k, cfg)
    txm, tzm = _mobility_faces(tx, tz, sw, cfg)
    return _assemble_from_faces(txm, tzm, cfg)


def _assemble_from_faces(txm, tzm, cfg: ReservoirConfig):
    nx, nz = cfg.nx, cfg.nz
    n = nx * nz
    diag = np.zeros((nx, nz))
    diag[:-1, :] += txm
    diag[1:, :] += txm
    if nz > 1:
        diag[:, :-1] += tzm
        diag[:, 1:] += tzm

    b = np.zeros((nx, nz))
    b[0, :] += _injection_rate(cfg) / nz

    # Dirichlet producer column: identity rows, symmetric elimination of the
    # coupling faces into the neighbours' right-hand side.
    off_x = -txm.copy()
    b[-2, :] += txm[-1, :] * cfg.p_prod
    off_x[-1, :] = 0.0
    diag[-1, :] = 1.0
    b[-1, :] = cfg.p_prod

    if np.any(diag <= 0.0):
        raise ValueError("degenerate permeability: cell with zero total mobility coupling")

    rows, cols, vals = [], [], []
    idx = np.arange(n).reshape(nx, nz)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    rows.append(idx[:-1, :].ravel())
    cols.append(idx[1:, :].ravel())
    vals.append(off_x.ravel())
    rows.append(idx[1:, :].ravel())
    cols.append(idx[:-1, :].ravel())
    vals.append(off_x.ravel())
    if nz > 1:
        off_z = -tzm
        off_z_masked = off_z.copy()
        off_z_masked[-1, :] = 0.0   # producer-producer couplings drop out
        rows.append(idx[:, :-1].ravel())
        cols.append(idx[:, 1:].ravel())
        vals.append(off_z_masked.ravel())
        rows.append(idx[:, 1:].ravel())
        cols.append(idx[:, :-1].ravel())
        vals.append(off_z_masked.ravel())
    a = sp.csr_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                     shape=(n, n))
    return a, b.ravel()


def solve_pressure(a, b, x0=None, rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Diagonally preconditioned conjugate gradients to ||Ax-b|| <= rtol ||b||."""
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    if maxiter is None:
        maxiter = max(1000, 20 * n)
    inv_diag = 1.0 / a.diagonal()
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).ravel().copy()
    r = b - a @ x
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    tol = rtol * bnorm
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol:
            return x
        ad = a @ d
        alpha = rz / (d @ ad)
        x += alpha * d
        r -= alpha * ad
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    if np.linalg.norm(r) <= tol:
        return x
    raise RuntimeError(f"pressure solve did not converge: residual {np.linalg.norm(r) / bnorm:.3e}")


def darcy_fluxes(p: np.ndarray, txm, tzm):
    """Total volumetric face fluxes, positive along increasing index."""
    fx = txm * (p[:-1, :] - p[1:, :])
    fz = tzm * (p[:, :-1] - p[:, 1:]) if tzm.size else np.zeros_like(tzm)
    return fx, fz


def producer_sink(fx, fz, cfg: ReservoirConfig) -> np.ndarray:
    """Signed net face inflow of each producer cell (= its well discharge)."""
    sink = fx[-1, :].copy()
    if cfg.nz > 1:
        sink[1:] += fz[-1, :]
        sink[:-1] -= fz[-1, :]
    return sink


def _cell_outflow(fx, fz, cfg: ReservoirConfig):
    """Total outgoing volumetric flux per cell plus well source magnitudes."""
    nx, nz = cfg.nx, cfg.nz
    out = np.zeros((nx, nz))
    out[:-1, :] += np.maximum(fx, 0.0)
    out[1:, :] += np.maximum(-fx, 0.0)
    if nz > 1:
        out[:, :-1] += np.maximum(fz, 0.0)
        out[:, 1:] += np.maximum(-fz, 0.0)
    src = np.zeros((nx, nz))
    src[0, :] = _injection_rate(cfg) / nz
    src[-1, :] += np.abs(producer_sink(fx, fz, cfg))
    return out, src


def stable_dt(fx, fz, cfg: ReservoirConfig, remaining: float) -> float:
    """CFL sub-step: substep_cfl * min phi V / (outflux + |source|), capped at ``remaining``."""
    out, src = _cell_outflow(fx, fz, cfg)
    denom = out + src
    pv_cell = cfg.porosity * cfg.cell_volume
    positive = denom > 0.0
    if not np.any(positive):
        return remaining
    dt = cfg.substep_cfl * pv_cell / denom[positive].max()
    return min(dt, remaining)


def update_saturation(sw: np.ndarray, fx, fz, dt: float, cfg: ReservoirConfig):
    """Explicit upwind fractional-flow transport over one sub-step.

    Returns (new sw, water volume produced during the step).  The injector
    source is pure water; each producer cell discharges its net volumetric
    inflow at its own fractional flow.
    """
    nx, nz = cfg.nx, cfg.nz
    out, src = _cell_outflow(fx, fz, cfg)
    pv_cell = cfg.porosity * cfg.cell_volume
    denom = out + src
    hard = np.where(denom > 0.0, pv_cell / np.where(denom > 0.0, denom, 1.0), np.inf)
    assert dt <= hard.min() * (1.0 + 1e-9), "CFL violation: dt exceeds the stability bound"

    lam_w, lam_t = total_mobility(sw, cfg)
    fw = lam_w / lam_t
    dv = np.zeros((nx, nz))  # net water volume gained per cell

    # upwind water flux through x-faces
    fw_up = np.where(fx >= 0.0, fw[:-1, :], fw[1:, :])
    wflux = fw_up * fx
    dv[:-1, :] -= wflux * dt
    dv[1:, :] += wflux * dt
    if nz > 1:
        fw_up = np.where(fz >= 0.0, fw[:, :-1], fw[:, 1:])
        wflux = fw_up * fz
        dv[:, :-1] -= wflux * dt
        dv[:, 1:] += wflux * dt

    dv[0, :] += (_injection_rate(cfg) / nz) * dt           # pure-water injector
    sink = producer_sink(fx, fz, cfg)                       # signed well discharge
    produced = fw[-1, :] * sink * dt
    dv[-1, :] -= produced

    sw_new = sw + dv / pv_cell
    lo, hi = cfg.swc, 1.0 - cfg.sor
    if sw_new.min() < lo - 1e-8 or sw_new.max() > hi + 1e-8:
        raise AssertionError(
            f"saturation bounds violated: [{sw_new.min():.6g}, {sw_new.max():.6g}]")
    np.clip(sw_new, lo, hi, out=sw_new)
    return sw_new, float(produced.sum())


def run_simulation(k: np.ndarray, cfg: ReservoirConfig) -> TimeSeriesSample:
    """IMPES time series: daily (p, sw) snapshots for days 0..total_days.

    Pressure is re-solved before every saturation sub-step (warm-started CG);
    sub-steps are CFL-limited and land exactly on day boundaries.  Snapshot 0
    is the initial saturation with its consistent pressure field.
    """
    nx, nz = cfg.nx, cfg.nz
    tx, tz = face_transmissibility(k, cfg)
    sw = np.full((nx, nz), cfg.sw_init, dtype=np.float64)

    txm, tzm = _mobility_faces(tx, tz, sw, cfg)
    a, b = _assemble_from_faces(txm, tzm, cfg)
    p = solve_pressure(a, b).reshape(nx, nz)

    days = cfg.total_days
    p_series = np.empty((days + 1, nx, nz))
    sw_series = np.empty((days + 1, nx, nz))
    p_series[0], sw_series[0] = p, sw

    injected = 0.0
    produced = 0.0
    rate = _injection_rate(cfg)
    for day in range(1, days + 1):
        t = 0.0
        while t < 1.0 - 1e-12:
            fx, fz = darcy_fluxes(p, txm, tzm)
            dt = stable_dt(fx, fz, cfg, remaining=1.0 - t)
            sw, prod = update_saturation(sw, fx, fz, dt, cfg)
            injected += rate * dt
            produced += prod
            t += dt
            txm, tzm = _mobility_faces(tx, tz, sw, cfg)
            a, b = _assemble_from_faces(txm, tzm, cfg)
            p = solve_pressure(a, b, x0=p.ravel()).reshape(nx, nz)
        p_series[day], sw_series[day] = p, sw

    return TimeSeriesSample(
        k=np.asarray(k, dtype=np.float64).copy(),
        p_series=p_series,
        sw_series=sw_series,
        water_injected=injected,
        water_produced=produced,
    )


def water_budget_error(sample: TimeSeriesSample, cfg: ReservoirConfig) -> float:
    """Relative closure error of the water mass budget over the whole run."""
    pv_cell = cfg.porosity * cfg.cell_volume
    stored = pv_cell * float(np.sum(sample.sw_series[-1] - sample.sw_series[0]))
    net = sample.water_injected - sample.water_produced
    scale = max(abs(sample.water_injected), abs(sample.water_produced), pv_cell)
    return abs(stored - net) / scale
