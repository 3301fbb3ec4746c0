"""Seedable stochastic fracture-network generator.

Produces mixed networks: deterministic segments with known positions passed
through verbatim, plus stochastic fractures with power-law or fixed lengths,
uniform or multi-set orientations, and fixed or length-proportional
apertures.  Everything derives from one integer seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import FractureNetwork, GridError

logger = logging.getLogger(__name__)

APERTURE_MIN = 1e-4
APERTURE_MAX = 1.0


@dataclass
class GenSpec:
    """Stochastic network description.

    length: ('power', exponent, l_min, l_max) or ('fixed', value).
    orientation: ('uniform',) or ('sets', [(angle_deg, jitter_deg), ...]).
    aperture: ('fixed', a) or ('length', coefficient) with a = coeff * length
    clamped to [1e-4, 1] m.
    """

    seed: int = 0
    count: int = 0
    domain: tuple = (0.0, 0.0, 1000.0, 1000.0)
    length: tuple = ("power", 2.5, 10.0, 500.0)
    orientation: tuple = ("uniform",)
    aperture: tuple = ("fixed", 1e-3)
    deterministic: list = field(default_factory=list)  # rows [x1 y1 x2 y2 a]

    def validate(self):
        if self.count < 0:
            raise GridError("fracture count must be nonnegative")
        if self.length[0] == "power":
            _, expo, lmin, lmax = self.length
            if not lmin < lmax:
                raise GridError("power-law needs l_min < l_max")
            if expo <= 1:
                raise GridError("power-law exponent must exceed 1")
        elif self.length[0] != "fixed":
            raise GridError(f"unknown length distribution {self.length[0]!r}")
        if self.orientation[0] not in ("uniform", "sets"):
            raise GridError(f"unknown orientation rule {self.orientation[0]!r}")
        if self.aperture[0] not in ("fixed", "length"):
            raise GridError(f"unknown aperture rule {self.aperture[0]!r}")


def power_law_lengths(rng, n, exponent, l_min, l_max):
    """Inverse-transform sampling of a truncated power-law pdf ~ l^-exponent."""
    u = rng.random(n)
    a = 1.0 - exponent
    lo, hi = l_min**a, l_max**a
    return (lo + u * (hi - lo)) ** (1.0 / a)


def power_law_cdf(lengths, exponent, l_min, l_max):
    """Analytic CDF of the truncated power law (test oracle companion)."""
    a = 1.0 - exponent
    lo, hi = l_min**a, l_max**a
    x = np.clip(np.asarray(lengths, dtype=float), l_min, l_max)
    return (x**a - lo) / (hi - lo)


def _clip_segment(p1, p2, domain):
    """Liang-Barsky clipping of the segment to the domain rectangle."""
    x0, y0, x1, y1 = domain
    d = p2 - p1
    t0, t1 = 0.0, 1.0
    for pi, qi in (
        (-d[0], p1[0] - x0),
        (d[0], x1 - p1[0]),
        (-d[1], p1[1] - y0),
        (d[1], y1 - p1[1]),
    ):
        if pi == 0:
            if qi < 0:
                return None
            continue
        t = qi / pi
        if pi < 0:
            if t > t1:
                return None
            t0 = max(t0, t)
        else:
            if t < t0:
                return None
            t1 = min(t1, t)
    if t1 <= t0:
        return None
    return p1 + t0 * d, p1 + t1 * d


def generate(spec):
    """Generate a FractureNetwork; deterministic for a given seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    rows = []
    for row in spec.deterministic:
        rows.append([float(v) for v in row])

    n = spec.count
    if n:
        if spec.length[0] == "power":
            _, expo, lmin, lmax = spec.length
            lengths = power_law_lengths(rng, n, expo, lmin, lmax)
        else:
            lengths = np.full(n, float(spec.length[1]))

        if spec.orientation[0] == "uniform":
            angles = rng.uniform(0.0, np.pi, n)
        else:
            sets = spec.orientation[1]
            pick = rng.integers(0, len(sets), n)
            base = np.array([np.deg2rad(s[0]) for s in sets])
            jit = np.array([np.deg2rad(s[1]) for s in sets])
            angles = base[pick] + rng.normal(0.0, 1.0, n) * jit[pick]

        x0, y0, x1, y1 = spec.domain
        mx = rng.uniform(x0, x1, n)
        my = rng.uniform(y0, y1, n)

        if spec.aperture[0] == "fixed":
            aps = np.full(n, float(spec.aperture[1]))
        else:
            aps = np.clip(float(spec.aperture[1]) * lengths, APERTURE_MIN, APERTURE_MAX)

        half = 0.5 * lengths
        dx, dy = np.cos(angles) * half, np.sin(angles) * half
        dropped = 0
        for k in range(n):
            p1 = np.array([mx[k] - dx[k], my[k] - dy[k]])
            p2 = np.array([mx[k] + dx[k], my[k] + dy[k]])
            clipped = _clip_segment(p1, p2, spec.domain)
            if clipped is None or np.allclose(clipped[0], clipped[1]):
                dropped += 1
                continue
            a, b = clipped
            rows.append([a[0], a[1], b[0], b[1], float(aps[k])])
        if dropped:
            logger.warning("dropped %d zero-measure fractures after clipping", dropped)

    network = FractureNetwork(np.array(rows) if rows else np.zeros((0, 5)))
    network.validate_inside(spec.domain)
    return network
