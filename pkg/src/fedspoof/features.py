"""36-element feature vectors: extraction, cleaning, normalization, windowing.

Each sample yields 4 position features (per-axis fused-vs-GNSS residual and
per-axis fusion uncertainty, meters) followed by the 32 signal statistics in
SIGNAL_SLOTS order.  Cleaning caps the position features at their training
95th percentile (applied to magnitude, sign preserved), replaces invalid
signal values with the minimum of their valid range, and min-max scales every
feature to [0, 1].  Normalization is fitted per client on local training data
only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import M_PER_DEG, SIGNAL_SLOTS, Trace
from .fusion import FusedEstimate

POSITION_FEATURES = ("res_lat_m", "res_lon_m", "sigma_lat_m", "sigma_lon_m")
FEATURE_NAMES = POSITION_FEATURES + SIGNAL_SLOTS
N_FEATURES = len(FEATURE_NAMES)
N_POSITION = len(POSITION_FEATURES)

#: Valid measurement range per signal property; invalid values are replaced
#: with the range minimum before scaling.
DEFAULT_VALID_RANGES = {
    "agc_db": (-100.0, 100.0),
    "cn0_ant_dbhz": (0.0, 64.0),
    "cn0_base_dbhz": (0.0, 64.0),
    "doppler_hz": (-10_000.0, 10_000.0),
}


def _slot_property(slot_name: str) -> str:
    for prop in DEFAULT_VALID_RANGES:
        if f"_{prop}_" in slot_name:
            return prop
    raise KeyError(f"no valid range for slot {slot_name!r}")


@dataclass(frozen=True)
class FeatureConfig:
    """Windowing and cleaning knobs for the feature pipeline."""

    window_len: int = 10
    stride: int = 1
    cap_percentile: float = 95.0
    valid_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_VALID_RANGES)
    )

    def __post_init__(self) -> None:
        if self.window_len < 1 or self.stride < 1:
            raise ValueError("window_len and stride must be >= 1")


@dataclass
class NormalizationState:
    """Per-feature cleaning parameters fitted on training data.

    caps hold the magnitude cap for the 4 position features (inf elsewhere),
    replacements the valid-range minimum for each signal slot, and lo/hi the
    post-cleaning min/max per feature.  Features with lo == hi are degenerate
    and normalize to 0.
    """

    caps: np.ndarray  # (36,)
    replacements: np.ndarray  # (32,)
    lo: np.ndarray  # (36,)
    hi: np.ndarray  # (36,)

    @property
    def degenerate(self) -> np.ndarray:
        return self.hi <= self.lo


def extract_raw(trace: Trace, fused: list[FusedEstimate]) -> np.ndarray:
    """Raw per-sample feature matrix (n, 36); NaN marks invalid signal slots.

    Position residuals are signed per-axis offsets (fused minus GNSS) in
    meters; uncertainties are the fusion sigmas.  Signal slots are copied
    verbatim, invalid values staying NaN for later replacement.
    """
    n = len(trace.samples)
    if len(fused) != n:
        raise ValueError("trace and fused estimate lengths differ")
    out = np.empty((n, N_FEATURES))
    lat_g = np.array([s.p_gnss.lat for s in trace.samples])
    lon_g = np.array([s.p_gnss.lon for s in trace.samples])
    lat_mu = np.array([f.mu.lat for f in fused])
    lon_mu = np.array([f.mu.lon for f in fused])
    out[:, 0] = (lat_mu - lat_g) * M_PER_DEG
    out[:, 1] = (lon_mu - lon_g) * M_PER_DEG * np.cos(np.radians(lat_g))
    out[:, 2] = [f.sigma[0] for f in fused]
    out[:, 3] = [f.sigma[1] for f in fused]
    out[:, N_POSITION:] = np.stack([s.signal.values for s in trace.samples])
    return out


def fit_normalization(
    raw: list[np.ndarray] | np.ndarray, cfg: FeatureConfig | None = None
) -> NormalizationState:
    """Fit cleaning parameters on pooled raw training features.

    Caps are empirical 95th percentiles of the position-feature magnitudes
    (linear interpolation between order statistics); min/max are taken after
    capping and invalid-value replacement.
    """
    cfg = cfg or FeatureConfig()
    mat = np.vstack(raw) if isinstance(raw, list) else np.asarray(raw, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != N_FEATURES or mat.shape[0] == 0:
        raise ValueError(f"expected non-empty (n, {N_FEATURES}) matrix")

    replacements = np.array(
        [cfg.valid_ranges[_slot_property(name)][0] for name in SIGNAL_SLOTS]
    )
    caps = np.full(N_FEATURES, np.inf)
    for j in range(N_POSITION):
        caps[j] = np.percentile(np.abs(mat[:, j]), cfg.cap_percentile)

    cleaned = _clean(mat, caps, replacements)
    return NormalizationState(
        caps=caps,
        replacements=replacements,
        lo=cleaned.min(axis=0),
        hi=cleaned.max(axis=0),
    )


def _clean(mat: np.ndarray, caps: np.ndarray, replacements: np.ndarray) -> np.ndarray:
    cleaned = np.array(mat, dtype=np.float64)
    for j, rep in enumerate(replacements, start=N_POSITION):
        col = cleaned[:, j]
        col[np.isnan(col)] = rep
    for j in range(N_POSITION):
        col = cleaned[:, j]
        cleaned[:, j] = np.sign(col) * np.minimum(np.abs(col), caps[j])
    return cleaned


def apply_normalization(raw: np.ndarray, state: NormalizationState) -> np.ndarray:
    """Normalize raw features to float32 values in [0, 1].

    Values outside the fitted range (test-time drift) clamp to the endpoints;
    degenerate features map to 0.
    """
    cleaned = _clean(np.atleast_2d(np.asarray(raw, dtype=np.float64)), state.caps, state.replacements)
    span = state.hi - state.lo
    ok = span > 0.0
    out = np.zeros_like(cleaned)
    out[:, ok] = (cleaned[:, ok] - state.lo[ok]) / span[ok]
    np.clip(out, 0.0, 1.0, out=out)
    return out.astype(np.float32)


def make_windows(
    features: np.ndarray,
    labels: np.ndarray,
    window_len: int,
    stride: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding windows over one trace's features.

    Returns (sequences, targets, last_index): sequences is (k, window_len, 36),
    the target is the label at each window's final timestep, and last_index
    maps windows back to sample positions.  A trace shorter than the window
    yields zero windows.  Windows never span trace boundaries because this
    operates on a single trace.
    """
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float32)
    n = features.shape[0]
    if labels.shape[0] != n:
        raise ValueError("features and labels lengths differ")
    if n < window_len:
        return (
            np.empty((0, window_len, features.shape[1]), dtype=np.float32),
            np.empty(0, dtype=np.float32),
            np.empty(0, dtype=np.int64),
        )
    last = np.arange(window_len - 1, n, stride, dtype=np.int64)
    seqs = np.stack([features[i - window_len + 1 : i + 1] for i in last])
    return seqs, labels[last], last


def save_normalization(state: NormalizationState, path: str) -> None:
    """Persist a fitted normalization as a plain-text sidecar."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("fedspoof-normalization v1\n")
        for j, name in enumerate(FEATURE_NAMES):
            rep = repr(float(state.replacements[j - N_POSITION])) if j >= N_POSITION else "na"
            fh.write(
                f"{name} cap={repr(float(state.caps[j]))} lo={repr(float(state.lo[j]))} "
                f"hi={repr(float(state.hi[j]))} replace={rep}\n"
            )


def load_normalization(path: str) -> NormalizationState:
    caps = np.empty(N_FEATURES)
    lo = np.empty(N_FEATURES)
    hi = np.empty(N_FEATURES)
    replacements = np.empty(len(SIGNAL_SLOTS))
    with open(path, "r", encoding="ascii") as fh:
        if fh.readline().strip() != "fedspoof-normalization v1":
            raise ValueError(f"unrecognized normalization file {path!r}")
        for j, line in enumerate(fh):
            name, *pairs = line.split()
            if j >= N_FEATURES or name != FEATURE_NAMES[j]:
                raise ValueError(f"unexpected feature line {j + 2} in {path!r}")
            kv = dict(p.split("=", 1) for p in pairs)
            caps[j] = float(kv["cap"])
            lo[j] = float(kv["lo"])
            hi[j] = float(kv["hi"])
            if j >= N_POSITION:
                replacements[j - N_POSITION] = float(kv["replace"])
    return NormalizationState(caps=caps, replacements=replacements, lo=lo, hi=hi)
