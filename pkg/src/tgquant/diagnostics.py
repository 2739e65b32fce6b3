"""Mechanism diagnostics and the boundary-heavy token protocol.

Everything here is read-only with respect to its inputs: reports are
computed from the pre-quantization activations plus the radii the
quantizer chose, and never feed back into quantization.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _fmt
from .errors import ConfigError, GridError, InvalidMask, ShapeError
from .quant_core import (
    GroupStatsTable,
    QuantConfig,
    group_std,
    kth_smallest,
    pad_to_groups,
    quantile_rank,
    step_size,
    zero_bin_fraction,
)

BOUNDARY = "boundary_heavy"
NON_BOUNDARY = "non_boundary"
EXCLUDED = "excluded"
ALL = "all"


@dataclass(frozen=True)
class BoundaryProtocolConfig:
    r_in: int = 1
    r_out: int = 2
    gamma_bdry: float = 0.5
    gamma_nonbdry: float = 0.0

    def __post_init__(self):
        if self.r_in < 0 or self.r_out < 0:
            raise ConfigError("band radii must be non-negative")
        if not 0 < self.gamma_bdry <= 1:
            raise ConfigError(f"gamma_bdry must be in (0, 1], got {self.gamma_bdry}")
        if not 0 <= self.gamma_nonbdry < 1:
            raise ConfigError(f"gamma_nonbdry must be in [0, 1), got {self.gamma_nonbdry}")
        if not self.gamma_nonbdry < self.gamma_bdry:
            raise ConfigError("gamma_nonbdry must be below gamma_bdry")


# ---------------------------------------------------------------------------
# scalar diagnostics


def global_clip_factor(X: np.ndarray, c: float, eps_std: float = 1e-12) -> float:
    """Clip radius normalized by the population std of the whole tensor."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise ShapeError("global_clip_factor needs a non-empty tensor")
    return float(c / (np.std(X) + eps_std))


def zero_bin_mass(a: np.ndarray, delta: float) -> float:
    """Fraction of entries with ``|a| <= delta / 2`` (inclusive)."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    return float(zero_bin_fraction(a, delta))


def lower_median(a: np.ndarray) -> np.ndarray:
    """Order statistic of rank ``ceil(n/2)`` along the last axis."""
    a = np.asarray(a)
    return kth_smallest(a, math.ceil(a.shape[-1] / 2))


def range_disparity(X: np.ndarray, eps_std: float = 1e-12) -> float:
    """Max magnitude over the median-over-tokens of per-token median magnitudes."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise ShapeError("range_disparity needs a non-empty tensor")
    mags = np.abs(X.reshape(-1, X.shape[-1]))
    denom = max(float(lower_median(lower_median(mags))), eps_std)
    return float(mags.max() / denom)


# ---------------------------------------------------------------------------
# boundary band and token occupancy


def _sliding_extreme(a: np.ndarray, r: int, axis: int, reduce) -> np.ndarray:
    if r == 0:
        return a
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    # edge padding keeps out-of-image pixels from influencing the result
    windows = np.lib.stride_tricks.sliding_window_view(np.pad(a, pad, mode="edge"), 2 * r + 1, axis=axis)
    return reduce(windows, axis=-1)


def dilate(mask: np.ndarray, r: int) -> np.ndarray:
    """Binary dilation with a ``(2r+1)``-square structuring element."""
    out = _sliding_extreme(np.asarray(mask, dtype=np.uint8), r, 0, np.max)
    return _sliding_extreme(out, r, 1, np.max)


def erode(mask: np.ndarray, r: int) -> np.ndarray:
    """Binary erosion with a ``(2r+1)``-square structuring element."""
    out = _sliding_extreme(np.asarray(mask, dtype=np.uint8), r, 0, np.min)
    return _sliding_extreme(out, r, 1, np.min)


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidMask(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise InvalidMask("mask must be binary (0/1)")
    return mask.astype(np.uint8)


def boundary_band(mask: np.ndarray, r_in: int, r_out: int) -> np.ndarray:
    """Ring ``dilate(M, r_out) AND NOT erode(M, r_in)`` as uint8."""
    mask = _check_mask(mask)
    if r_in < 0 or r_out < 0:
        raise ConfigError("band radii must be non-negative")
    return (dilate(mask, r_out) & (1 - erode(mask, r_in))).astype(np.uint8)


def token_occupancy(band: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Mean band coverage of each token's pixel patch; tokens in row-major grid order."""
    band = np.asarray(band, dtype=np.float64)
    h, w = grid
    if band.ndim != 2:
        raise ShapeError(f"band must be 2-D, got shape {band.shape}")
    H, W = band.shape
    if h < 1 or w < 1 or H % h or W % w:
        raise GridError(f"{H}x{W} band is not divisible into a {h}x{w} token grid")
    ph, pw = H // h, W // w
    return band.reshape(h, ph, w, pw).mean(axis=(1, 3)).reshape(-1)


def classify_tokens(pi: np.ndarray, cfg: BoundaryProtocolConfig = BoundaryProtocolConfig()) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    labels = np.full(pi.shape, EXCLUDED, dtype=object)
    labels[pi <= cfg.gamma_nonbdry] = NON_BOUNDARY
    labels[pi >= cfg.gamma_bdry] = BOUNDARY
    return labels


def labels_from_mask(mask: np.ndarray, grid: tuple[int, int], cfg: BoundaryProtocolConfig = BoundaryProtocolConfig()):
    band = boundary_band(mask, cfg.r_in, cfg.r_out)
    return classify_tokens(token_occupancy(band, grid), cfg)


# ---------------------------------------------------------------------------
# report


def summarize(values: np.ndarray) -> dict:
    """``{count, mean, p50, p95, max}`` with rank-``ceil(p*n)`` percentiles."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return {"count": 0, "mean": None, "p50": None, "p95": None, "max": None}
    return {
        "count": int(v.size),
        "mean": float(v.mean()),
        "p50": float(kth_smallest(v, quantile_rank(0.5, v.size))),
        "p95": float(kth_smallest(v, quantile_rank(0.95, v.size))),
        "max": float(v.max()),
    }


def _fraction(flags: np.ndarray, eligible: np.ndarray) -> float:
    n = int(eligible.sum())
    return float((flags & eligible).sum() / n) if n else 0.0


@dataclass
class DiagnosticsReport:
    layer: str
    scope: str
    tau: float
    zr: float
    c_g: float
    range_disparity: float
    delta: dict
    eta: dict
    rho0: dict
    c1_violation_pre: float
    c1_violation_post: float
    c2_violation_pre: float
    c2_violation_post: float
    rho0_over_zr_pre: float
    rho0_over_zr_post: float
    counts: dict
    by_class: dict = field(default_factory=dict)
    variant: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "variant": self.variant,
            "scope": self.scope,
            "thresholds": {"tau": self.tau, "zr": self.zr},
            "c_g": self.c_g,
            "range_disparity": self.range_disparity,
            "delta": self.delta,
            "eta": self.eta,
            "rho0": self.rho0,
            "c1_violation_pre": self.c1_violation_pre,
            "c1_violation_post": self.c1_violation_post,
            "c2_violation_pre": self.c2_violation_pre,
            "c2_violation_post": self.c2_violation_post,
            "rho0_over_zr_pre": self.rho0_over_zr_pre,
            "rho0_over_zr_post": self.rho0_over_zr_post,
            "counts": self.counts,
            "by_class": self.by_class,
        }

    def to_json(self) -> str:
        return _fmt.dumps(self.to_dict())

    def csv_row(self) -> dict:
        row = {
            "layer": self.layer,
            "variant": self.variant or "",
            "scope": self.scope,
            "c_g": self.c_g,
            "range_disparity": self.range_disparity,
        }
        for stat, v in self.delta.items():
            row[f"delta_{stat}"] = v
        for name, table in (("eta", self.eta), ("rho0", self.rho0)):
            for cls, summary in table.items():
                for stat, v in summary.items():
                    row[f"{name}_{cls}_{stat}"] = v
        for key in ("c1_violation_pre", "c1_violation_post", "c2_violation_pre", "c2_violation_post",
                    "rho0_over_zr_pre", "rho0_over_zr_post"):
            row[key] = getattr(self, key)
        for cls, n in self.counts.get("tokens", {}).items():
            row[f"tokens_{cls}"] = n
        return _fmt.round_sig(row)


def reports_to_csv(reports: Sequence[DiagnosticsReport]) -> str:
    rows = [r.csv_row() for r in reports]
    fieldnames: list[str] = []
    for row in rows:
        fieldnames.extend(k for k in row if k not in fieldnames)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def build_report(
    stats: GroupStatsTable,
    labels: Optional[Sequence[str]],
    X: np.ndarray,
    cfg: QuantConfig,
    *,
    tau: Optional[float] = None,
    zr: Optional[float] = None,
    layer: str = "layer",
    variant: Optional[str] = None,
) -> DiagnosticsReport:
    """Aggregate per-token-group diagnostics into a layer report.

    Violation checks use ``tau``/``zr`` (falling back to the config, then to
    the defaults 1.0/0.2) so naive variants can be scored against the same
    bounds. Pre-projection uses the step from ``c_base``, post-projection
    the step actually applied. Groups whose step sits on the ``eps_scale``
    floor are not eligible for C1/C2 checks and are counted separately.
    """
    if stats.scope == "channel":
        raise ShapeError("per-channel statistics have no token-group layout to report on")
    X = np.asarray(X)
    rows = X.reshape(-1, X.shape[-1]).astype(np.float64)
    groups, _ = pad_to_groups(rows, stats.group_size)
    n_tokens, n_groups = groups.shape[:2]
    if stats.shape != (n_tokens, n_groups):
        raise ShapeError(f"stats cover {stats.shape} groups but X has {(n_tokens, n_groups)}")
    if labels is None:
        labels = np.full(n_tokens, ALL, dtype=object)
    labels = np.asarray(labels, dtype=object)
    if labels.shape != (n_tokens,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n_tokens} tokens")

    tau = tau if tau is not None else (cfg.tau if cfg.tau is not None else 1.0)
    zr = zr if zr is not None else (cfg.zr if cfg.zr is not None else 0.2)
    q_max = cfg.q_max

    sigma = group_std(groups, cfg.eps_std)
    thr = kth_smallest(np.abs(groups), quantile_rank(zr, stats.group_size))
    delta_pre = step_size(stats.c_base, q_max, cfg.eps_scale)
    delta_post = np.asarray(stats.delta, dtype=np.float64)
    eligible_pre = stats.c_base / q_max >= cfg.eps_scale
    eligible_post = stats.c_final / q_max >= cfg.eps_scale

    c1_pre = delta_pre > tau * sigma
    c1_post = delta_post > tau * sigma
    c2_pre = delta_pre / 2.0 > thr
    c2_post = delta_post / 2.0 > thr
    rho0_pre = zero_bin_fraction(groups, delta_pre[..., None])
    rho0_post = zero_bin_fraction(groups, delta_post[..., None])
    eta_post = delta_post / sigma

    cell_labels = np.broadcast_to(labels[:, None], (n_tokens, n_groups))
    classes = [c for c in (BOUNDARY, NON_BOUNDARY, ALL) if (labels == c).any()]

    eta_summary, rho_summary, by_class = {}, {}, {}
    token_counts = {c: int((labels == c).sum()) for c in (BOUNDARY, NON_BOUNDARY, EXCLUDED, ALL)
                    if (labels == c).any()}
    for cls in classes:
        sel = cell_labels == cls
        eta_summary[cls] = summarize(eta_post[sel])
        rho_summary[cls] = summarize(rho0_post[sel])
        by_class[cls] = {
            "c1_violation_pre": _fraction(c1_pre, sel & eligible_pre),
            "c1_violation_post": _fraction(c1_post, sel & eligible_post),
            "c2_violation_pre": _fraction(c2_pre, sel & eligible_pre),
            "c2_violation_post": _fraction(c2_post, sel & eligible_post),
            "rho0_over_zr_pre": _fraction(rho0_pre > zr, sel),
            "rho0_over_zr_post": _fraction(rho0_post > zr, sel),
            "rho0_pooled": float(rho0_post[sel].mean()),
        }

    everything = np.ones_like(eligible_pre)
    return DiagnosticsReport(
        layer=layer,
        variant=variant,
        scope=stats.scope,
        tau=float(tau),
        zr=float(zr),
        c_g=global_clip_factor(rows, float(np.mean(stats.c_final)), cfg.eps_std),
        range_disparity=range_disparity(rows, cfg.eps_std),
        delta=summarize(delta_post),
        eta=eta_summary,
        rho0=rho_summary,
        c1_violation_pre=_fraction(c1_pre, eligible_pre),
        c1_violation_post=_fraction(c1_post, eligible_post),
        c2_violation_pre=_fraction(c2_pre, eligible_pre),
        c2_violation_post=_fraction(c2_post, eligible_post),
        rho0_over_zr_pre=_fraction(rho0_pre > zr, everything),
        rho0_over_zr_post=_fraction(rho0_post > zr, everything),
        counts={
            "tokens": token_counts,
            "groups": int(n_tokens * n_groups),
            "floored_pre": int((~eligible_pre).sum()),
            "floored_post": int((~eligible_post).sum()),
        },
        by_class=by_class,
    )
