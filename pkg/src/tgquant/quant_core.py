"""Activation quantizer: each token is split into channel groups, and each
group's symmetric QDQ radius is projected onto two range constraints.

All statistics and quantize-dequantize arithmetic run in float64; tensor
outputs are narrowed to float32 at the very end. Groups are processed as
``(..., g)`` arrays so the single-group helpers and the tensor path share
one implementation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, InvalidRadius, NonFiniteInput, ShapeError

MODES = ("per_tensor", "per_channel", "per_token_group")

# variant -> fields forced on top of the user config
VARIANTS: dict[str, dict] = {
    "naive_w4a4": {"mode": "per_tensor", "tau": None, "zr": None, "act_bits": 4, "weight_bits": 4},
    "per_tensor": {"mode": "per_tensor", "tau": None, "zr": None},
    "dstg_only": {"mode": "per_token_group", "tau": None, "zr": None},
    "dcrp_only": {"mode": "per_tensor"},
    "c1_only": {"mode": "per_tensor", "zr": None},
    "c2_only": {"mode": "per_tensor", "tau": None},
    "full": {"mode": "per_token_group"},
}


def signed_range(bits: int) -> tuple[int, int]:
    """Integer grid ``(q_min, q_max)`` of a signed ``bits``-bit quantizer."""
    return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1


@dataclass(frozen=True)
class QuantConfig:
    """Quantizer hyperparameters.

    ``tau`` bounds the step-to-dispersion ratio, ``zr`` bounds the zero-bin
    mass; setting either to ``None`` disables that constraint. ``percentile``
    switches the base radius from max-abs to a rank quantile of ``|x|``.
    """

    act_bits: int = 4
    weight_bits: int = 4
    group_size: int = 32
    tau: Optional[float] = 1.0
    zr: Optional[float] = 0.2
    percentile: Optional[float] = None
    mode: str = "per_token_group"
    eps_scale: float = 1e-8
    eps_std: float = 1e-12

    def __post_init__(self):
        if not 2 <= self.act_bits <= 8:
            raise ConfigError(f"act_bits must be in 2..8, got {self.act_bits}")
        if not 2 <= self.weight_bits <= 8:
            raise ConfigError(f"weight_bits must be in 2..8, got {self.weight_bits}")
        if self.group_size < 1:
            raise ConfigError(f"group_size must be >= 1, got {self.group_size}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.zr is not None and not 0 < self.zr < 1:
            raise ConfigError(f"zr must be in (0, 1), got {self.zr}")
        if self.percentile is not None and not 0 < self.percentile <= 1:
            raise ConfigError(f"percentile must be in (0, 1], got {self.percentile}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not (self.eps_scale > 0 and self.eps_std > 0):
            raise ConfigError("eps constants must be positive")

    @property
    def q_min(self) -> int:
        return signed_range(self.act_bits)[0]

    @property
    def q_max(self) -> int:
        return signed_range(self.act_bits)[1]

    def replace(self, **changes) -> "QuantConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "QuantConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def config_for_variant(variant: str, base: QuantConfig | None = None) -> QuantConfig:
    """Apply an ablation variant's forced settings on top of ``base``."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    return (base or QuantConfig()).replace(**VARIANTS[variant])


@dataclass(frozen=True)
class GroupStats:
    c_base: float
    c_tau: Optional[float]
    c_zr: Optional[float]
    c_final: float
    delta: float
    sigma: float
    eta: float
    rho0: float
    clipped_count: int
    group_index: tuple[int, int]


@dataclass
class GroupStatsTable:
    """Per-group statistics as parallel arrays of shape ``(rows, groups)``.

    ``scope`` tells how the radii were chosen: ``"token_group"`` (one radius
    per cell), ``"tensor"`` (one shared radius, measured per token-group
    cell) or ``"channel"`` (one row, one cell per channel). Absent
    constraint radii are stored as NaN.
    """

    scope: str
    group_size: int
    c_base: np.ndarray
    c_tau: np.ndarray
    c_zr: np.ndarray
    c_final: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    rho0: np.ndarray
    clipped: np.ndarray
    n_channels: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.c_final.shape

    def __len__(self) -> int:
        return self.c_final.size

    def __iter__(self) -> Iterator[GroupStats]:
        rows, cols = self.shape
        for t in range(rows):
            for k in range(cols):
                tau = float(self.c_tau[t, k])
                zr = float(self.c_zr[t, k])
                index = (-1, k) if self.scope == "channel" else (t, k)
                yield GroupStats(
                    c_base=float(self.c_base[t, k]),
                    c_tau=None if math.isnan(tau) else tau,
                    c_zr=None if math.isnan(zr) else zr,
                    c_final=float(self.c_final[t, k]),
                    delta=float(self.delta[t, k]),
                    sigma=float(self.sigma[t, k]),
                    eta=float(self.eta[t, k]),
                    rho0=float(self.rho0[t, k]),
                    clipped_count=int(self.clipped[t, k]),
                    group_index=index,
                )

    def records(self) -> list[GroupStats]:
        return list(self)


# ---------------------------------------------------------------------------
# scalar / single-group primitives


def round_half_even(x: float) -> int:
    """Nearest integer, exact halves to the even neighbour."""
    if not math.isfinite(x):
        raise NonFiniteInput(f"cannot round {x}")
    return int(np.rint(x))


def quantile_rank(p: float, n: int) -> int:
    """1-indexed rank ``ceil(p * n)`` clamped to ``[1, n]``.

    The product is rounded to 9 decimals first so that e.g. ``0.1 * 30``
    lands on rank 3 instead of 4.
    """
    k = math.ceil(round(p * n, 9))
    return min(max(k, 1), n)


def kth_smallest(a: np.ndarray, k: int) -> np.ndarray:
    """k-th smallest (1-indexed) along the last axis."""
    n = a.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"rank {k} outside 1..{n}")
    return np.partition(a, k - 1, axis=-1)[..., k - 1]


def base_radius(group: np.ndarray, p: Optional[float] = None) -> np.ndarray | float:
    """Max-abs radius, or the ``ceil(p*g)``-th smallest magnitude when ``p`` is set.

    Works on a single group or on a batch shaped ``(..., g)``.
    """
    mags = np.abs(np.asarray(group, dtype=np.float64))
    if p is None:
        out = mags.max(axis=-1)
    else:
        out = kth_smallest(mags, quantile_rank(p, mags.shape[-1]))
    return float(out) if out.ndim == 0 else out


def group_std(group: np.ndarray, eps_std: float = 1e-12) -> np.ndarray | float:
    """Population standard deviation plus ``eps_std``."""
    out = np.std(np.asarray(group, dtype=np.float64), axis=-1) + eps_std
    return float(out) if np.ndim(out) == 0 else out


def dstg_partition(x: np.ndarray, g: int) -> tuple[np.ndarray, int]:
    """Zero-pad a token vector to a multiple of ``g`` and split it into groups."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError("dstg_partition expects a non-empty 1-D token vector")
    if g < 1:
        raise ConfigError("group size must be >= 1")
    groups, pad = pad_to_groups(x[None, :], g)
    return groups[0], pad


def pad_to_groups(x2d: np.ndarray, g: int) -> tuple[np.ndarray, int]:
    """``(N, C)`` -> ``(N, K, g)`` with zero padding on the channel axis."""
    n, c = x2d.shape
    pad = -c % g
    if pad:
        x2d = np.concatenate([x2d, np.zeros((n, pad), dtype=x2d.dtype)], axis=1)
    return x2d.reshape(n, (c + pad) // g, g), pad


# ---------------------------------------------------------------------------
# batch kernels over (..., g)


def _shrink_to(c: np.ndarray, fits) -> np.ndarray:
    """Step ``c`` down by ulps until ``fits(c)`` holds everywhere.

    Closes the one-ulp gap left by computing a radius as ``q_max * bound`` and
    the step back as ``radius / q_max``.
    """
    c = np.array(c, dtype=np.float64, copy=True)
    bad = ~fits(c)
    for _ in range(64):
        if not bad.any():
            return c
        c[bad] = np.nextafter(c[bad], 0.0)
        bad = ~fits(c)
    raise ArithmeticError("radius guard did not converge")  # pragma: no cover


def constraint_radii(groups: np.ndarray, cfg: QuantConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C1/C2 radius caps for every group.

    Returns ``(c_tau, c_zr, thr)``; disabled caps are ``+inf`` and ``thr`` is
    the rank-``ceil(zr*g)`` magnitude (NaN when ``zr`` is off).
    """
    groups = np.asarray(groups, dtype=np.float64)
    q_max = float(cfg.q_max)
    lead = groups.shape[:-1]
    c_tau = np.full(lead, np.inf)
    c_zr = np.full(lead, np.inf)
    thr = np.full(lead, np.nan)
    if cfg.tau is not None:
        bound = cfg.tau * group_std(groups, cfg.eps_std)
        c_tau = _shrink_to(q_max * bound, lambda c: c / q_max <= bound)
    if cfg.zr is not None:
        thr = kth_smallest(np.abs(groups), quantile_rank(cfg.zr, groups.shape[-1]))
        c_zr = _shrink_to(2.0 * q_max * thr, lambda c: (c / q_max) / 2.0 <= thr)
    return c_tau, c_zr, thr


def step_size(c: np.ndarray | float, q_max: int, eps_scale: float = 1e-8):
    return np.maximum(np.asarray(c, dtype=np.float64) / float(q_max), eps_scale)


def qdq(x: np.ndarray, c, bits: int, eps_scale: float = 1e-8):
    """Clip to ``[-c, c]``, round to the signed grid, dequantize.

    ``c`` broadcasts against ``x`` (use a trailing singleton axis for
    per-group radii). Returns ``(q, x_hat, delta)`` in float64.
    """
    q_min, q_max = signed_range(bits)
    c = np.asarray(c, dtype=np.float64)
    delta = step_size(c, q_max, eps_scale)
    clipped = np.clip(x, -c, c)
    q = np.clip(np.rint(clipped / delta), q_min, q_max)
    return q, delta * q, delta


def zero_bin_fraction(x: np.ndarray, delta) -> np.ndarray:
    """Fraction of entries with ``|x| <= delta/2`` along the last axis."""
    return np.mean(np.abs(x) <= np.asarray(delta) / 2.0, axis=-1)


def project_groups(groups: np.ndarray, c_base: np.ndarray, cfg: QuantConfig) -> dict[str, np.ndarray]:
    """Project base radii onto the C1/C2 feasible interval and measure each group."""
    groups = np.asarray(groups, dtype=np.float64)
    c_tau, c_zr, thr = constraint_radii(groups, cfg)
    c_final = np.maximum(np.minimum(np.minimum(c_base, c_tau), c_zr), cfg.eps_scale)
    delta = step_size(c_final, cfg.q_max, cfg.eps_scale)
    sigma = np.std(groups, axis=-1)
    return {
        "c_base": np.asarray(c_base, dtype=np.float64),
        "c_tau": np.where(np.isinf(c_tau), np.nan, c_tau),
        "c_zr": np.where(np.isinf(c_zr), np.nan, c_zr),
        "c_final": c_final,
        "delta": delta,
        "sigma": sigma,
        "eta": delta / (sigma + cfg.eps_std),
        "rho0": zero_bin_fraction(groups, delta[..., None]),
        "clipped": np.sum(np.abs(groups) > c_final[..., None], axis=-1),
        "thr": thr,
    }


# ---------------------------------------------------------------------------
# single-group public API


def symmetric_qdq(x, c: float, bits: int, eps_scale: float = 1e-8):
    """Quantize-dequantize a vector with clip radius ``c``.

    Returns ``(q, x_hat, delta)`` with ``q`` as int64.
    """
    if not (math.isfinite(c) and c > 0):
        raise InvalidRadius(f"clip radius must be positive and finite, got {c}")
    if not 2 <= bits <= 8:
        raise ConfigError(f"bits must be in 2..8, got {bits}")
    x = np.asarray(x, dtype=np.float64)
    q, x_hat, delta = qdq(x, c, bits, eps_scale)
    return q.astype(np.int64), x_hat, float(delta)


def dcrp_project(c_base: float, group, cfg: QuantConfig, group_index: tuple[int, int] = (0, 0)) -> GroupStats:
    group = np.asarray(group, dtype=np.float64)
    if group.ndim != 1 or group.size == 0:
        raise ShapeError("dcrp_project expects a non-empty 1-D group")
    if not c_base > 0:
        raise InvalidRadius(f"base radius must be positive, got {c_base}")
    s = project_groups(group[None, :], np.array([c_base]), cfg)
    tau, zr = float(s["c_tau"][0]), float(s["c_zr"][0])
    return GroupStats(
        c_base=float(c_base),
        c_tau=None if math.isnan(tau) else tau,
        c_zr=None if math.isnan(zr) else zr,
        c_final=float(s["c_final"][0]),
        delta=float(s["delta"][0]),
        sigma=float(s["sigma"][0]),
        eta=float(s["eta"][0]),
        rho0=float(s["rho0"][0]),
        clipped_count=int(s["clipped"][0]),
        group_index=group_index,
    )


# ---------------------------------------------------------------------------
# tensor path


def _as_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim < 1 or X.size == 0:
        raise ShapeError("activation tensor must be non-empty")
    if X.dtype.kind != "f":
        raise ShapeError(f"activation tensor must be floating point, got {X.dtype}")
    if not np.isfinite(X).all():
        raise NonFiniteInput("activation tensor contains NaN or Inf")
    return X.reshape(-1, X.shape[-1]).astype(np.float64)


def _table(scope: str, cfg: QuantConfig, n_channels: int, s: dict) -> GroupStatsTable:
    return GroupStatsTable(
        scope=scope,
        group_size=cfg.group_size,
        n_channels=n_channels,
        **{k: s[k] for k in ("c_base", "c_tau", "c_zr", "c_final", "delta", "sigma", "eta", "rho0", "clipped")},
    )


def _shared_radius_table(rows: np.ndarray, cfg: QuantConfig, tensor_stats: dict) -> GroupStatsTable:
    """Measure every token-group under one tensor-wide radius."""
    groups, _ = pad_to_groups(rows, cfg.group_size)
    shape = groups.shape[:2]
    delta = np.full(shape, float(tensor_stats["delta"]))
    c_final = np.full(shape, float(tensor_stats["c_final"]))
    sigma = np.std(groups, axis=-1)
    s = {
        "c_base": np.full(shape, float(tensor_stats["c_base"])),
        "c_tau": np.full(shape, float(tensor_stats["c_tau"])),
        "c_zr": np.full(shape, float(tensor_stats["c_zr"])),
        "c_final": c_final,
        "delta": delta,
        "sigma": sigma,
        "eta": delta / (sigma + cfg.eps_std),
        "rho0": zero_bin_fraction(groups, delta[..., None]),
        "clipped": np.sum(np.abs(groups) > c_final[..., None], axis=-1),
    }
    return _table("tensor", cfg, rows.shape[1], s)


def tensor_radius(X: np.ndarray, cfg: QuantConfig) -> dict:
    """Projected per-tensor radius: the whole tensor treated as one group."""
    flat = _as_rows(X).reshape(1, -1)
    c_base = np.array([base_radius(flat[0], cfg.percentile)])
    s = project_groups(flat, c_base, cfg)
    return {k: v[0] for k, v in s.items()}


def quantize_activations(X: np.ndarray, cfg: QuantConfig) -> tuple[np.ndarray, GroupStatsTable]:
    """Simulated activation quantization along the last (channel) axis.

    Returns the float32 dequantized tensor (same shape as ``X``) and the
    per-group statistics table.
    """
    X = np.asarray(X)
    rows = _as_rows(X)
    n, c = rows.shape
    if cfg.mode == "per_token_group":
        groups, pad = pad_to_groups(rows, cfg.group_size)
        c_base = base_radius(groups, cfg.percentile)
        s = project_groups(groups, c_base, cfg)
        _, x_hat, _ = qdq(groups, s["c_final"][..., None], cfg.act_bits, cfg.eps_scale)
        out = x_hat.reshape(n, -1)[:, :c]
        table = _table("token_group", cfg, c, s)
    elif cfg.mode == "per_tensor":
        ts = tensor_radius(rows, cfg)
        _, out, _ = qdq(rows, ts["c_final"], cfg.act_bits, cfg.eps_scale)
        table = _shared_radius_table(rows, cfg, ts)
    else:
        # per channel: max-abs over all rows, no projection
        c_base = np.abs(rows).max(axis=0)
        c_final = np.maximum(c_base, cfg.eps_scale)
        _, out, delta = qdq(rows, c_final[None, :], cfg.act_bits, cfg.eps_scale)
        delta = delta.reshape(-1)
        sigma = np.std(rows, axis=0)
        s = {
            "c_base": c_base[None, :],
            "c_tau": np.full((1, c), np.nan),
            "c_zr": np.full((1, c), np.nan),
            "c_final": c_final[None, :],
            "delta": delta[None, :],
            "sigma": sigma[None, :],
            "eta": (delta / (sigma + cfg.eps_std))[None, :],
            "rho0": np.mean(np.abs(rows) <= delta / 2.0, axis=0)[None, :],
            "clipped": np.sum(np.abs(rows) > c_final, axis=0)[None, :],
        }
        table = _table("channel", cfg, c, s)
    return out.astype(np.float32).reshape(X.shape), table


def qdq_with_radii(X: np.ndarray, radii, cfg: QuantConfig) -> np.ndarray:
    """Quantize with frozen radii instead of online statistics.

    ``radii`` is either a scalar (one radius for the whole tensor) or an
    array of shape ``(rows, groups)`` matching the token-group layout.
    """
    X = np.asarray(X)
    rows = _as_rows(X)
    n, c = rows.shape
    radii = np.asarray(radii, dtype=np.float64)
    if radii.ndim == 0:
        if not radii > 0:
            raise InvalidRadius(f"radius must be positive, got {float(radii)}")
        _, out, _ = qdq(rows, radii, cfg.act_bits, cfg.eps_scale)
    else:
        groups, _ = pad_to_groups(rows, cfg.group_size)
        if radii.shape != groups.shape[:2]:
            raise ShapeError(f"radius table {radii.shape} does not match groups {groups.shape[:2]}")
        if not (radii > 0).all():
            raise InvalidRadius("radius table has non-positive entries")
        _, x_hat, _ = qdq(groups, radii[..., None], cfg.act_bits, cfg.eps_scale)
        out = x_hat.reshape(n, -1)[:, :c]
    return out.astype(np.float32).reshape(X.shape)
