"""GNSS-independent position fusion and the position-based baseline detector.

A constant-velocity Kalman filter over the network-provided position, driven
by onboard acceleration, produces a fused position with per-axis uncertainty.
The GNSS position is deliberately excluded from the filter so the estimate is
unaffected by spoofing; speed and attitude rates only scale the process noise.
The baseline detector scores each sample by its normalized fused-vs-GNSS
residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import GeoPos, Trace, local_meters, offset_geopos

# Initial velocity uncertainty of the filter, m/s.
INITIAL_VELOCITY_STD = 10.0


@dataclass(frozen=True)
class FusionConfig:
    """Noise parameters of the fusion filter.

    process_noise is the acceleration-driven variance scale; net_meas_noise
    and initial_sigma are standard deviations in meters.
    """

    process_noise: float = 0.5
    net_meas_noise: float = 20.0
    initial_sigma: float = 50.0

    def __post_init__(self) -> None:
        for name in ("process_noise", "net_meas_noise", "initial_sigma"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class FusedEstimate:
    """Fused position with per-axis (north, east) standard deviations in meters."""

    mu: GeoPos
    sigma: tuple[float, float]

    def __post_init__(self) -> None:
        if not (self.sigma[0] > 0.0 and self.sigma[1] > 0.0):
            raise ValueError("sigma components must be strictly positive")


def fuse_trace(trace: Trace, cfg: FusionConfig) -> list[FusedEstimate]:
    """Run the fusion filter over one trace.

    State is (north, east, v_north, v_east) in a local tangent plane anchored
    at the trace's first network position.  Propagation uses the previous
    sample's acceleration as a control input over the elapsed interval, with
    process noise scaled up while the platform is fast or turning.  Output
    depends only on p_net, v, a, omega and t.
    """
    samples = trace.samples
    origin = samples[0].p_net

    x = np.zeros(4)
    n0, e0 = local_meters(origin, samples[0].p_net)
    x[0], x[1] = n0, e0
    p = np.diag(
        [
            cfg.initial_sigma**2,
            cfg.initial_sigma**2,
            INITIAL_VELOCITY_STD**2,
            INITIAL_VELOCITY_STD**2,
        ]
    )
    r = np.eye(2) * cfg.net_meas_noise**2
    eye4 = np.eye(4)

    out: list[FusedEstimate] = []
    prev = None
    for smp in samples:
        if prev is not None:
            dt = smp.t - prev.t
            f = eye4.copy()
            f[0, 2] = dt
            f[1, 3] = dt
            an, ae = prev.a[0], prev.a[1]
            x = f @ x
            x[0] += 0.5 * an * dt * dt
            x[1] += 0.5 * ae * dt * dt
            x[2] += an * dt
            x[3] += ae * dt
            # faster or turning platforms get a looser motion model
            q_scale = cfg.process_noise * (1.0 + float(np.linalg.norm(prev.omega)) + prev.v / 10.0)
            q2 = q_scale * np.array(
                [[dt**4 / 4.0, dt**3 / 2.0], [dt**3 / 2.0, dt**2]]
            )
            q = np.zeros((4, 4))
            q[np.ix_([0, 2], [0, 2])] = q2
            q[np.ix_([1, 3], [1, 3])] = q2
            p = f @ p @ f.T + q

        zn, ze = local_meters(origin, smp.p_net)
        innov = np.array([zn, ze]) - x[:2]
        s = p[:2, :2] + r
        k = p[:, :2] @ np.linalg.inv(s)
        x = x + k @ innov
        kh = np.zeros((4, 4))
        kh[:, :2] = k
        p = (eye4 - kh) @ p
        p = 0.5 * (p + p.T)

        out.append(
            FusedEstimate(
                mu=offset_geopos(origin, x[0], x[1]),
                sigma=(float(np.sqrt(p[0, 0])), float(np.sqrt(p[1, 1]))),
            )
        )
        prev = smp
    return out


def residual_norm_m(trace: Trace, fused: list[FusedEstimate]) -> np.ndarray:
    """Per-sample metric norm of (fused position - GNSS position)."""
    if len(fused) != len(trace.samples):
        raise ValueError("trace and fused estimate lengths differ")
    d = np.empty(len(fused))
    for i, (smp, est) in enumerate(zip(trace.samples, fused)):
        north, east = local_meters(smp.p_gnss, est.mu)
        d[i] = np.hypot(north, east)
    return d


def fit_cap_minmax(values: np.ndarray, percentile: float = 95.0) -> tuple[float, float, float]:
    """Fit the shared cleaning chain: percentile cap, then min/max of capped values.

    The percentile uses linear interpolation between order statistics.
    """
    values = np.asarray(values, dtype=np.float64)
    cap = float(np.percentile(values, percentile))
    capped = np.minimum(values, cap)
    return cap, float(capped.min()), float(capped.max())


def apply_cap_minmax(values: np.ndarray, cap: float, lo: float, hi: float) -> np.ndarray:
    """Cap then min-max scale to [0, 1]; a degenerate range maps everything to 0."""
    capped = np.minimum(np.asarray(values, dtype=np.float64), cap)
    if hi <= lo:
        return np.zeros_like(capped)
    return np.clip((capped - lo) / (hi - lo), 0.0, 1.0)


def pds_score(trace: Trace, fused: list[FusedEstimate]) -> np.ndarray:
    """Baseline detection score per sample: the trace's normalized residual.

    Residuals are capped at the trace's own 95th percentile and min-max scaled
    to [0, 1]; higher means more suspicious.  A trace whose residuals are all
    equal scores 0 everywhere.
    """
    d = residual_norm_m(trace, fused)
    cap, lo, hi = fit_cap_minmax(d)
    return apply_cap_minmax(d, cap, lo, hi)
