"""Positional cross-match on the celestial sphere.

Separations use the haversine great-circle formula, which stays
numerically stable at arcsecond scales where the spherical law of cosines
loses everything to cancellation. Candidate pairs are pruned with a
declination band plus an RA window before the exact test, so matching a
small upload against a large catalog touches only a sliver of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RadiusOutOfRange

MAX_RADIUS_ARCMIN = 60.0

# Above this |dec| the RA window formula degenerates; scan the full ring.
POLAR_CAP_DEC = 89.9


@dataclass(frozen=True, slots=True)
class SkyPosition:
    """ra ∈ [0, 360), dec ∈ [-90, +90], degrees."""

    ra: float
    dec: float

    @classmethod
    def normalized(cls, ra: float, dec: float) -> "SkyPosition":
        if not (-90.0 <= dec <= 90.0):
            raise ValueError(f"dec {dec} outside [-90, 90]")
        return cls(ra % 360.0, dec)


def haversine_arcmin(ra1: float, dec1: float, ra2: float, dec2: float) -> float:
    """Angular separation in arcminutes between two degree positions."""
    p1, p2 = math.radians(dec1), math.radians(dec2)
    dphi = p2 - p1
    dlam = math.radians(ra2 - ra1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlam / 2.0) ** 2
    return math.degrees(2.0 * math.asin(min(1.0, math.sqrt(a)))) * 60.0


def _haversine_vec(ra1, dec1, ra2, dec2):
    p1, p2 = np.radians(dec1), np.radians(dec2)
    dphi = p2 - p1
    dlam = np.radians(ra2 - ra1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    return np.degrees(2.0 * np.arcsin(np.minimum(1.0, np.sqrt(a)))) * 60.0


def ra_window_deg(dec: float, radius_arcmin: float) -> float:
    """Half-width in RA of a cone of the given radius centered at dec.

    asin(sin r / cos dec) is exact for a spherical cap away from the poles;
    inside the polar cap the window is the whole ring.
    """
    r_deg = radius_arcmin / 60.0
    if abs(dec) + r_deg >= POLAR_CAP_DEC:
        return 180.0
    sin_r = math.sin(math.radians(r_deg))
    cos_d = math.cos(math.radians(dec))
    return math.degrees(math.asin(min(1.0, sin_r / cos_d)))


def check_radius(radius_arcmin: float) -> float:
    if not (0.0 < radius_arcmin <= MAX_RADIUS_ARCMIN):
        raise RadiusOutOfRange(
            f"radius must be in (0, {MAX_RADIUS_ARCMIN:g}] arcmin, got {radius_arcmin!r}"
        )
    return float(radius_arcmin)


def neighbors_pairs(uploads: list[tuple[int, float, float]],
                    catalog: list[tuple[int, float, float]],
                    radius_arcmin: float) -> list[tuple[int, int, float]]:
    """All (upload_id, catalog_id, dist_arcmin) pairs within the radius.

    Both inputs are (id, ra, dec) with degrees; RA wraparound at 0/360 is
    handled by circular RA distance inside the window test.
    """
    radius = check_radius(radius_arcmin)
    if not uploads or not catalog:
        return []
    r_deg = radius / 60.0

    cat = np.asarray(catalog, dtype=float)
    order = np.argsort(cat[:, 2], kind="stable")
    cat_id = cat[order, 0]
    cat_ra = cat[order, 1]
    cat_dec = cat[order, 2]

    pairs: list[tuple[int, int, float]] = []
    for my_id, ra, dec in uploads:
        ra = ra % 360.0
        lo = np.searchsorted(cat_dec, dec - r_deg, side="left")
        hi = np.searchsorted(cat_dec, dec + r_deg, side="right")
        if lo >= hi:
            continue
        window = ra_window_deg(dec, radius)
        band_ra = cat_ra[lo:hi]
        dra = np.abs((band_ra - ra + 180.0) % 360.0 - 180.0)
        near = dra <= window
        if not near.any():
            continue
        sel_ra = band_ra[near]
        sel_dec = cat_dec[lo:hi][near]
        sel_id = cat_id[lo:hi][near]
        dist = _haversine_vec(ra, dec, sel_ra, sel_dec)
        inside = dist <= radius
        for cid, d in zip(sel_id[inside], dist[inside]):
            pairs.append((int(my_id), int(cid), float(d)))
    return pairs
