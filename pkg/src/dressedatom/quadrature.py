"""Angular and radial quadrature rules shared by the photon grid and the FGR code."""

import numpy as np


def smoothstep(s):
    """Quintic switch: 0 for s <= 0, 1 for s >= 1, C^2 in between, monotone."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def smoothstep_derivative(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    out = np.zeros_like(s)
    si = s[inside]
    out[inside] = 30.0 * si**2 * (1.0 - si) ** 2
    return out


def _signed_permutations(v):
    pts = set()
    from itertools import permutations, product

    for p in permutations(v):
        for signs in product((1, -1), repeat=3):
            pts.add(tuple(s * c for s, c in zip(signs, p)))
    return sorted(pts)


def lebedev(order):
    """Lebedev-style direction sets with 6, 14 or 26 points.

    Returns (unit vectors (n, 3), weights summing to one). The 6-, 14- and
    26-point rules integrate spherical polynomials exactly up to degree 3, 5
    and 7 respectively.
    """
    axes = _signed_permutations((1.0, 0.0, 0.0))
    corners = [tuple(c / np.sqrt(3.0) for c in p) for p in _signed_permutations((1.0, 1.0, 1.0))]
    edges = [tuple(c / np.sqrt(2.0) for c in p) for p in _signed_permutations((1.0, 1.0, 0.0))]
    if order == 6:
        groups = [(axes, 1.0 / 6.0)]
    elif order == 14:
        groups = [(axes, 1.0 / 15.0), (corners, 3.0 / 40.0)]
    elif order == 26:
        groups = [(axes, 1.0 / 21.0), (edges, 4.0 / 105.0), (corners, 9.0 / 280.0)]
    else:
        raise ValueError(f"unsupported Lebedev order {order}; use 6, 14 or 26")
    dirs = np.array([p for pts, _ in groups for p in pts])
    weights = np.concatenate([np.full(len(pts), w) for pts, w in groups])
    return dirs, weights


def product_sphere(n_theta, n_phi=None):
    """Gauss-Legendre in cos(theta) times trapezoid in phi; weights sum to one."""
    n_phi = 2 * n_theta if n_phi is None else n_phi
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1.0 - ct**2)
    dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    weights = (wx[:, None] * np.full(n_phi, 1.0 / n_phi)[None, :]).reshape(-1) / 2.0
    return dirs, weights


def direction_set(spec):
    """Resolve a direction-set spec: an int Lebedev order or ('product', n_theta)."""
    if isinstance(spec, (int, np.integer)):
        return lebedev(int(spec))
    if isinstance(spec, str) and spec.startswith("lebedev"):
        return lebedev(int(spec[len("lebedev"):]))
    if isinstance(spec, (tuple, list)) and spec[0] == "product":
        return product_sphere(*spec[1:])
    raise ValueError(f"unknown direction set {spec!r}")


def gauss_panels(a, b, n_panels, n_per_panel=8, breakpoints=()):
    """Composite Gauss-Legendre nodes/weights on [a, b], panels refined around breakpoints."""
    edges = np.linspace(a, b, n_panels + 1)
    extra = [p for p in breakpoints if a < p < b]
    edges = np.unique(np.concatenate([edges, extra]))
    x, w = np.polynomial.legendre.leggauss(n_per_panel)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()
