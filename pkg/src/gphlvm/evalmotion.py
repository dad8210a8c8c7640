"""Evaluation and generation: stress reports, error matrices, geodesic
trajectories and the jerkiness score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DomainError, ValidationError
from .gplvm.losses import latent_distances
from .gplvm.model import GphlvmModel, decode
from .manifold import frechet_mean, geodesic

DEFAULT_STEPS = 100
DEFAULT_DT = 0.01


@dataclass(frozen=True)
class StressReport:
    """Squared graph-vs-latent distance errors over all point pairs.

    ``per_pair`` lists ``(i, j, squared_error)`` for ``i < j`` in row-major
    order; ``mean``/``std`` are the population statistics of the errors.
    """

    mean: float
    std: float
    per_pair: tuple

    @property
    def n_pairs(self) -> int:
        return len(self.per_pair)


@dataclass(frozen=True, eq=False)
class Trajectory:
    latent_path: np.ndarray
    decoded: np.ndarray
    class_path: tuple
    dt: float = DEFAULT_DT

    @property
    def steps(self) -> int:
        return self.latent_path.shape[0]


def _dist(X, geometry, Y=None):
    with torch.no_grad():
        Xt = torch.as_tensor(np.asarray(X, dtype=np.float64))
        Yt = None if Y is None else torch.as_tensor(np.asarray(Y, dtype=np.float64))
        return latent_distances(Xt, geometry, Yt).numpy()


def _points_and_classes(model: GphlvmModel, dataset, graph, extra):
    X = np.asarray(model.latents)
    classes = list(dataset.classes) if dataset is not None else list(model.classes)
    if len(classes) != X.shape[0]:
        raise ValidationError(f"dataset has {len(classes)} rows but the model has {X.shape[0]} latents")
    if extra:
        ex_pts, ex_cls = zip(*extra)
        ex = np.atleast_2d(np.asarray(ex_pts, dtype=np.float64))
        if ex.shape[1] != X.shape[1]:
            raise ValidationError(f"extra points need length {X.shape[1]}")
        X = np.vstack([X, ex])
        classes += [str(c) for c in ex_cls]
    graph = model.graph if graph is None else graph
    idx = graph.indices(classes)
    return X, graph.dist[np.ix_(idx, idx)]


def stress_report(model: GphlvmModel, dataset=None, graph=None, extra=None) -> StressReport:
    """Stress statistics over training latents plus optional ``extra``
    ``(latent, class)`` pairs."""
    X, G = _points_and_classes(model, dataset, graph, extra)
    D = _dist(X, model.geometry)
    iu = np.triu_indices(X.shape[0], k=1)
    sq = (G[iu] - D[iu]) ** 2
    per_pair = tuple((int(i), int(j), float(e)) for i, j, e in zip(iu[0], iu[1], sq))
    if sq.size == 0:
        return StressReport(0.0, 0.0, per_pair)
    return StressReport(float(sq.mean()), float(sq.std()), per_pair)


def error_matrix(model: GphlvmModel, dataset=None, graph=None) -> np.ndarray:
    """``|d_latent(x_i, x_j) - d_G(c_i, c_j)|`` for all training pairs."""
    X, G = _points_and_classes(model, dataset, graph, None)
    E = np.abs(_dist(X, model.geometry) - G)
    E = 0.5 * (E + E.T)
    np.fill_diagonal(E, 0.0)
    return E


def nearest_classes(model: GphlvmModel, points) -> tuple:
    """Class of the nearest training latent (exact scan) for each row of ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    D = _dist(pts, model.geometry, model.latents)
    return tuple(model.classes[int(k)] for k in np.argmin(D, axis=1))


def _resolve_endpoint(model, p):
    if isinstance(p, (int, np.integer)):
        if not 0 <= int(p) < model.n:
            raise ValidationError(f"training index {p} out of range [0, {model.n})")
        return np.asarray(model.latents[int(p)])
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (model.latents.shape[1],):
        raise ValidationError(f"endpoint needs length {model.latents.shape[1]}, got shape {p.shape}")
    return p


def interpolate(model: GphlvmModel, a, b, T: int = DEFAULT_STEPS, dt: float = DEFAULT_DT) -> Trajectory:
    """Decode ``T`` equispaced points along the geodesic from ``a`` to ``b``.

    ``a``/``b`` are latent points or training indices. The path is a
    straight line in the Euclidean model.
    """
    if T < 2:
        raise ValidationError("interpolation needs T >= 2")
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    a = _resolve_endpoint(model, a)
    b = _resolve_endpoint(model, b)
    t = np.linspace(0.0, 1.0, T)
    if model.geometry == "lorentz":
        path = np.asarray(geodesic(a, b, t))
    else:
        path = a[None, :] + t[:, None] * (b - a)[None, :]
    path[0], path[-1] = a, b
    mean, _ = decode(model, path)
    # batched and single-point decodes may differ in the last bit; pin the endpoints
    mean[0], mean[-1] = decode(model, a)[0], decode(model, b)[0]
    return Trajectory(path, mean, nearest_classes(model, path), float(dt))


def jerkiness(traj) -> float:
    """Mean squared third difference of the decoded path, divided by ``dt^6``.

    Each interior step uses ``y[i+3] - 3 y[i+2] + 3 y[i+1] - y[i]``
    (``T - 3`` terms, squared Euclidean norm over output dimensions).
    Accepts a :class:`Trajectory` or a ``(T, D)`` array with ``dt = 1``.
    """
    if isinstance(traj, Trajectory):
        Y, dt = np.asarray(traj.decoded), traj.dt
    else:
        Y, dt = np.asarray(traj, dtype=np.float64), 1.0
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] < 4:
        raise DomainError(f"jerkiness needs T >= 4 steps, got {Y.shape[0]}")
    third = Y[3:] - 3.0 * Y[2:-1] + 3.0 * Y[1:-2] - Y[:-3]
    return float(((third**2).sum(-1)).mean() / dt**6)


def class_centroids(model: GphlvmModel, dataset=None, classes=None) -> dict:
    """Frechet mean (arithmetic mean in the Euclidean model) of each class's latents.

    ``classes`` restricts the output to the given node ids; one without
    training points raises KeyError.
    """
    labels = list(dataset.classes) if dataset is not None else list(model.classes)
    X = np.asarray(model.latents)
    wanted = dict.fromkeys(labels) if classes is None else dict.fromkeys(classes)
    out = {}
    for c in wanted:
        rows = [k for k, ck in enumerate(labels) if ck == c]
        if not rows:
            raise KeyError(f"class {c!r} has no training points")
        pts = X[np.asarray(rows)]
        if model.geometry == "lorentz":
            out[c] = np.asarray(frechet_mean(pts)[0])
        else:
            out[c] = pts.mean(0)
    return out


def nearest_centroid(model: GphlvmModel, centroids: dict, points) -> tuple:
    """Class whose centroid is nearest to each row of ``points``."""
    names = list(centroids)
    C = np.stack([centroids[c] for c in names])
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    D = _dist(pts, model.geometry, C)
    return tuple(names[int(k)] for k in np.argmin(D, axis=1))
