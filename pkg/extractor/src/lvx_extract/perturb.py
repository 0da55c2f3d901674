"""Seeded input perturbations applied to images before extraction.

Supported kinds: ``none``, ``gaussian:<sigma>`` (additive pixel noise)
and ``cutout:<n_holes>`` (square occlusions). Perturbations operate on
float images in [0, 1]; ``gaussian:0`` is canonicalized to ``none`` so
the two produce bit-identical output files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Perturbation:
    kind: str = "none"          # none | gaussian | cutout
    sigma: float = 0.0
    n_holes: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "cutout"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n_holes < 0:
            raise ValueError("n_holes must be >= 0")

    def describe(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian:{self.sigma:g}"
        if self.kind == "cutout":
            return f"cutout:{self.n_holes}"
        return "none"


def parse_perturbation(text: str) -> Perturbation:
    """Parse a CLI perturbation spec: none, gaussian:SIGMA, cutout:N.

    A Gaussian with sigma 0 and a cutout with 0 holes are no-ops and
    normalize to ``none``.
    """
    text = text.strip()
    if text == "none":
        return Perturbation()
    kind, sep, arg = text.partition(":")
    if not sep:
        raise ValueError(f"malformed perturbation spec {text!r}")
    if kind == "gaussian":
        sigma = float(arg)
        if sigma == 0.0:
            return Perturbation()
        return Perturbation(kind="gaussian", sigma=sigma)
    if kind == "cutout":
        n = int(arg)
        if n == 0:
            return Perturbation()
        return Perturbation(kind="cutout", n_holes=n)
    raise ValueError(f"unknown perturbation kind {kind!r}")


def apply_perturbation(image: np.ndarray, p: Perturbation,
                       rng: np.random.Generator) -> np.ndarray:
    """Perturb a float HxWxC image in [0, 1]. ``none`` returns the input
    object unchanged, so an unperturbed run is bit-for-bit reproducible."""
    if p.kind == "none":
        return image
    if p.kind == "gaussian":
        noisy = image + rng.normal(0.0, p.sigma, image.shape)
        return np.clip(noisy, 0.0, 1.0)
    # cutout: square holes with side = half the shorter image side
    out = image.copy()
    h, w = image.shape[:2]
    side = max(1, min(h, w) // 2)
    for _ in range(p.n_holes):
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        y0, y1 = max(0, cy - side // 2), min(h, cy + side // 2)
        x0, x1 = max(0, cx - side // 2), min(w, cx + side // 2)
        out[y0:y1, x0:x1] = 0.0
    return out
