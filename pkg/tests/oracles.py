"""Independent reference computations used by several test modules."""

import numpy as np

R = 6371.0


def grid_min_j(points, weights, lat_range, lon_range, step):
    """Exhaustive search of J over a lat/lon lattice, with s profiled out in closed form.

    For a fixed position, J(s) = sum (d_i - s w_i)^2 is a parabola in s whose
    minimum is at s = sum(d w) / sum(w^2).
    """
    lats = np.arange(lat_range[0], lat_range[1] + step / 2, step)
    lons = np.arange(lon_range[0], lon_range[1] + step / 2, step)
    glat, glon = np.meshgrid(np.radians(lats), np.radians(lons), indexing="ij")
    w = np.asarray(weights, dtype=float)
    d = np.empty(glat.shape + (len(points),))
    for k, p in enumerate(points):
        # spherical law of cosines, not the haversine used by the package
        c = (np.sin(glat) * np.sin(np.radians(p.lat))
             + np.cos(glat) * np.cos(np.radians(p.lat)) * np.cos(glon - np.radians(p.lon)))
        d[..., k] = R * np.arccos(np.clip(c, -1.0, 1.0))
    s = np.maximum(d @ w / (w @ w), 0.0)
    j = ((d - s[..., None] * w) ** 2).sum(axis=-1)
    i = np.unravel_index(np.argmin(j), j.shape)
    return float(j[i]), float(lats[i[0]]), float(lons[i[1]])
