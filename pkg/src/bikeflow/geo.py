"""Spherical geometry helpers on WGS84 coordinates."""

import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between two points given in degrees."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_array(lat, lon, lats, lons):
    """Vectorised :func:`haversine_m` from one point to many."""
    phi1 = np.radians(lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lons) - lon)
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def polyline_length_m(coords):
    """Length of a sequence of (lat, lon) pairs."""
    return sum(
        haversine_m(a[0], a[1], b[0], b[1]) for a, b in zip(coords, coords[1:])
    )


def unit_vectors(lats, lons):
    """Points on the unit sphere. Chord distance between them is monotone in
    great-circle distance, which makes a Euclidean k-d tree exact for
    nearest-neighbour queries."""
    phi = np.radians(np.asarray(lats, dtype=float))
    lmb = np.radians(np.asarray(lons, dtype=float))
    cos_phi = np.cos(phi)
    return np.column_stack((cos_phi * np.cos(lmb), cos_phi * np.sin(lmb), np.sin(phi)))


def offset_latlon(lat, lon, north_m, east_m):
    """Shift a point by a small local displacement in meters."""
    dlat = math.degrees(north_m / EARTH_RADIUS_M)
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
    return lat + dlat, lon + dlon


def _on_segment(py, px, ay, ax, by, bx, eps=1e-12):
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > eps:
        return False
    return min(ax, bx) - eps <= px <= max(ax, bx) + eps and min(ay, by) - eps <= py <= max(ay, by) + eps


def point_in_polygon(lat, lon, ring):
    """Even-odd ray casting in lat/lon space. Points on the boundary are inside.

    ``ring`` is a list of (lat, lon) vertices; closing the ring is optional.
    """
    n = len(ring)
    if n >= 2 and tuple(ring[0]) == tuple(ring[-1]):
        n -= 1
    inside = False
    j = n - 1
    for i in range(n):
        ay, ax = ring[i]
        by, bx = ring[j]
        if _on_segment(lat, lon, ay, ax, by, bx):
            return True
        if (ay > lat) != (by > lat):
            x_cross = ax + (lat - ay) * (bx - ax) / (by - ay)
            if lon < x_cross:
                inside = not inside
        j = i
    return inside
