"""Lorentz-model hyperbolic geometry.

Points of the hyperboloid L^Q are stored as ambient vectors of length Q+1
with ``<x, x>_L = -1`` and ``x[0] >= 1``. Every function broadcasts over
leading axes and works on ``torch.Tensor`` (differentiable) or NumPy input;
NumPy in gives NumPy out.
"""

from __future__ import annotations

import functools

import numpy as np
import torch

from .errors import DimensionError, DomainError

DTYPE = torch.float64

# exp/log maps switch to their first-order branch below this tangent norm
SMALL_NORM = 1e-12
_TINY = 1e-300


def _as_tensor(a):
    if isinstance(a, torch.Tensor):
        return a
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def _to_numpy(out):
    if isinstance(out, tuple):
        return tuple(_to_numpy(o) for o in out)
    if isinstance(out, torch.Tensor):
        arr = out.detach().numpy()
        return float(arr) if arr.ndim == 0 else arr
    return out


def interop(fn):
    """Accept NumPy/list arguments; return NumPy unless a tensor came in."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        torch_in = any(isinstance(a, torch.Tensor) for a in args)
        args = tuple(
            _as_tensor(a) if isinstance(a, (np.ndarray, list, tuple)) else a
            for a in args
        )
        out = fn(*args, **kwargs)
        return out if torch_in else _to_numpy(out)

    return wrapper


def safe_sqrt(v):
    return torch.sqrt(torch.clamp(v, min=_TINY))


def _check_pair(u, v):
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(
            f"ambient dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}"
        )
    if u.shape[-1] < 2:
        raise DimensionError("ambient vectors need length >= 2")


def _inner(u, v):
    return (u[..., 1:] * v[..., 1:]).sum(-1) - u[..., 0] * v[..., 0]


@interop
def minkowski_inner(u, v):
    """``-u0 v0 + sum_i ui vi`` over the last axis."""
    _check_pair(u, v)
    return _inner(u, v)


@interop
def origin(q: int):
    x = torch.zeros(q + 1, dtype=DTYPE)
    x[0] = 1.0
    return x


def _distance(x, y):
    diff = x - y
    sq = _inner(diff, diff)
    d = 2.0 * torch.asinh(0.5 * safe_sqrt(sq))
    return torch.where(sq > _TINY, d, torch.zeros_like(d))


@interop
def distance(x, y):
    """Geodesic distance ``arcosh(-<x, y>_L)``.

    Evaluated as ``2 asinh(|x - y|_L / 2)``, which equals the arcosh form
    on the hyperboloid but keeps full precision for nearby points and a
    finite gradient at coincidence.
    """
    _check_pair(x, y)
    return _distance(x, y)


def _pairwise_distance(X, Y):
    # (N, 1, D) - (1, M, D) keeps the difference form's precision
    return _distance(X[:, None, :], Y[None, :, :])


@interop
def pairwise_distance(X, Y=None):
    """Distance matrix between the rows of ``X`` and ``Y``."""
    Y = X if Y is None else Y
    _check_pair(X, Y)
    return _pairwise_distance(X, Y)


def _exp_map(x, u):
    n = safe_sqrt(_inner(u, u))
    full = torch.cosh(n)[..., None] * x + (torch.sinh(n) / n)[..., None] * u
    return torch.where((n < SMALL_NORM)[..., None], x + u, full)


@interop
def exp_map(x, u):
    _check_pair(x, u)
    return _exp_map(x, u)


def _log_map(x, y):
    a = _inner(x, y)
    w = y + a[..., None] * x
    d = _distance(x, y)
    wn = safe_sqrt(_inner(w, w))
    full = (d / wn)[..., None] * w
    return torch.where((d < SMALL_NORM)[..., None], w, full)


@interop
def log_map(x, y):
    """Tangent vector at ``x`` pointing to ``y`` with Lorentz norm ``dist(x, y)``.

    Uses ``(y + <x,y> x)`` rescaled, i.e. the component of ``y`` orthogonal
    to ``x``; near coincidence that component itself is returned.
    """
    _check_pair(x, y)
    return _log_map(x, y)


def _parallel_transport(x, y, v):
    coef = _inner(y, v) / (1.0 - _inner(x, y))
    return v + coef[..., None] * (x + y)


@interop
def parallel_transport(x, y, v):
    _check_pair(x, y)
    _check_pair(x, v)
    return _parallel_transport(x, y, v)


def _project_to_tangent(x, v):
    return v + _inner(x, v)[..., None] * x


@interop
def project_to_tangent(x, v):
    _check_pair(x, v)
    return _project_to_tangent(x, v)


def _lift(z):
    x0 = torch.sqrt(1.0 + (z * z).sum(-1, keepdim=True))
    return torch.cat([x0, z], dim=-1)


@interop
def lift(z):
    """Spatial coordinates -> hyperboloid point (time component recomputed)."""
    return _lift(z)


@interop
def reproject(x):
    return _lift(x[..., 1:])


def _to_poincare(x):
    return x[..., 1:] / (x[..., :1] + 1.0)


@interop
def to_poincare(x):
    return _to_poincare(x)


@interop
def from_poincare(y):
    sq = (y * y).sum(-1, keepdim=True)
    if bool(torch.any(sq >= 1.0)):
        raise DomainError("Poincare points must lie strictly inside the unit ball")
    return torch.cat([1.0 + sq, 2.0 * y], dim=-1) / (1.0 - sq)


@interop
def poincare_distance(a, b):
    num = 2.0 * ((a - b) ** 2).sum(-1)
    den = (1.0 - (a * a).sum(-1)) * (1.0 - (b * b).sum(-1))
    return torch.acosh(1.0 + num / den)


@interop
def geodesic(x, y, t):
    """Point(s) at fraction ``t`` of the way from ``x`` to ``y``.

    ``t`` may be a scalar or a 1-D array; for arrays the result has one
    row per entry.
    """
    tt = _as_tensor(t)
    if bool(torch.any((tt < 0.0) | (tt > 1.0))):
        raise DomainError(f"geodesic parameter outside [0, 1]: {t}")
    _check_pair(x, y)
    u = _log_map(x, y)
    if tt.ndim == 0:
        if float(tt) == 1.0:
            return y.clone()
        return _exp_map(x, tt * u)
    pts = _exp_map(x, tt[:, None] * u)
    return torch.where((tt == 1.0)[:, None], y.expand_as(pts), pts)


@interop
def tangent_basis(x):
    """Orthonormal basis of the tangent space at a single point ``x``.

    Built by transporting the canonical basis at the origin; rows are the
    basis vectors.
    """
    x = _as_tensor(x)
    q = x.shape[-1] - 1
    o = torch.zeros(q + 1, dtype=x.dtype)
    o[0] = 1.0
    e = torch.cat([torch.zeros(q, 1, dtype=x.dtype), torch.eye(q, dtype=x.dtype)], dim=1)
    return _parallel_transport(o, x, e)


@interop
def origin_tangent(v):
    """Embed ``v`` in R^Q as the tangent vector ``(0, v)`` at the origin."""
    v = _as_tensor(v)
    return torch.cat([torch.zeros_like(v[..., :1]), v], dim=-1)


@interop
def exp_origin(v):
    """``exp_map(origin, (0, v))`` for spatial tangent coordinates ``v``."""
    v = _as_tensor(v)
    o = torch.zeros(v.shape[-1] + 1, dtype=v.dtype)
    o[0] = 1.0
    return _exp_map(o, origin_tangent(v))


@interop
def frechet_mean(points, tol: float = 1e-9, max_iter: int = 100):
    """Karcher mean of the rows of ``points``.

    Returns ``(mean, iterations)``. Fixed-point iteration
    ``m <- exp_m(mean_i log_m(p_i))`` stopped when the update norm drops
    below ``tol``.
    """
    with torch.no_grad():
        m = points[0].clone()
        for it in range(1, max_iter + 1):
            step = _log_map(m.expand_as(points), points).mean(0)
            m = _lift(_exp_map(m, step)[1:])
            if float(safe_sqrt(_inner(step, step))) < tol:
                return m, it
    return m, max_iter


def is_on_manifold(x, tol: float = 1e-9) -> bool:
    x = _as_tensor(x)
    return bool(torch.all(torch.abs(_inner(x, x) + 1.0) <= tol * torch.clamp(x[..., 0] ** 2, min=1.0))) and bool(
        torch.all(x[..., 0] >= 1.0 - tol)
    )


def random_points(rng: np.random.Generator, n: int, q: int, scale: float = 1.0) -> np.ndarray:
    """Hyperboloid points from Gaussian spatial coordinates (test helper)."""
    z = rng.normal(scale=scale, size=(n, q))
    x0 = np.sqrt(1.0 + (z * z).sum(-1, keepdims=True))
    return np.concatenate([x0, z], axis=-1)
