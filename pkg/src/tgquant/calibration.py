"""Fixed offline-calibrated control: frozen per-layer per-tensor radii."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import _fmt
from .errors import EmptyCalibration, IoError, ParseError
from .quant_core import QuantConfig, tensor_radius

META_KEY = "_meta"


@dataclass(frozen=True)
class RadiusTable:
    """Frozen radii keyed by layer name. Serialized as ``{layer: radius}``;
    provenance lives under the reserved ``_meta`` key."""

    radii: dict
    sources: tuple = ()
    cfg: Optional[QuantConfig] = None
    mode: str = "per_tensor"
    extra: dict = field(default_factory=dict)

    def radius(self, layer: str) -> float:
        try:
            return self.radii[layer]
        except KeyError:
            raise KeyError(f"no calibrated radius for layer {layer!r}") from None

    def to_json(self) -> str:
        # radii keep full precision (shortest repr) so a reload is bit-exact
        doc = {name: float(r) for name, r in self.radii.items()}
        doc[META_KEY] = _fmt.round_sig({
            "mode": self.mode,
            "sources": list(self.sources),
            "config": self.cfg.to_dict() if self.cfg else None,
        })
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RadiusTable":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"radius table is not JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ParseError("radius table must be a JSON object")
        meta = doc.pop(META_KEY, {}) or {}
        radii = {}
        for name, value in doc.items():
            if not isinstance(value, (int, float)) or not value > 0:
                raise ParseError(f"radius for {name!r} must be a positive number")
            radii[name] = float(value)
        cfg = QuantConfig.from_dict(meta["config"]) if meta.get("config") else None
        return cls(radii, tuple(meta.get("sources", ())), cfg, meta.get("mode", "per_tensor"))

    def save(self, path: Union[str, os.PathLike]) -> None:
        try:
            Path(path).write_text(self.to_json())
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "RadiusTable":
        try:
            return cls.from_json(Path(path).read_text())
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc


def sample_radius(sample: np.ndarray, cfg: QuantConfig) -> float:
    """Projected per-tensor radius of one calibration sample."""
    return float(tensor_radius(sample, cfg)["c_final"])


def calibrate_fixed_radii(
    samples: Sequence[np.ndarray],
    cfg: QuantConfig,
    layer: str = "layer",
    sources: Sequence[str] | None = None,
) -> RadiusTable:
    """Max over samples of each sample's projected per-tensor radius."""
    samples = list(samples)
    if not samples:
        raise EmptyCalibration("calibration needs at least one sample")
    radius = max(sample_radius(s, cfg) for s in samples)
    radius = max(radius, cfg.eps_scale)
    if sources is None:
        sources = [f"sample{i}" for i in range(len(samples))]
    return RadiusTable({layer: radius}, tuple(sources), cfg)
