"""Trained-model container, back-constraint map, decoding and serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import CapabilityError, CompatibilityError, DataIOError, ValidationError
from ..graphtax import TaxonomyGraph, graph_from_dict
from ..kernels import KernelSpec, cholesky_jitter, kernel_matrix, graph_kernel_matrix
from ..manifold import _lift, exp_origin
from .config import TrainConfig

MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class BackConstraint:
    """Kernel back-constraint map from (observation, class) to latent.

    ``W`` has shape (Q, N): one weight per latent coordinate and training
    point. The map is ``x~ = variance * (k_obs o k_graph) W^T`` followed by
    the exponential map at the origin (identity in the Euclidean model).
    """

    W: np.ndarray
    obs_lengthscale: float
    graph_lengthscale: float
    nu: float = 2.5
    variance: float = 2.0

    def obs_spec(self) -> KernelSpec:
        return KernelSpec("euclidean_se", lengthscale=self.obs_lengthscale, variance=1.0)

    def graph_spec(self) -> KernelSpec:
        return KernelSpec("graph_matern", lengthscale=self.graph_lengthscale, variance=1.0, nu=self.nu)

    def to_dict(self) -> dict:
        return {
            "W": np.asarray(self.W).tolist(),
            "obs_lengthscale": self.obs_lengthscale,
            "graph_lengthscale": self.graph_lengthscale,
            "nu": self.nu,
            "variance": self.variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackConstraint":
        return cls(np.asarray(d["W"], dtype=np.float64), d["obs_lengthscale"], d["graph_lengthscale"],
                   d["nu"], d["variance"])


@dataclass(frozen=True, eq=False)
class VariationalState:
    """Sparse variational parameters.

    ``Z`` are shared inducing inputs (ambient coordinates); ``q_u_mean`` (D, M)
    and ``q_u_tril`` (D, M, M) describe the whitened inducing posterior
    ``q(v_d) = N(m_d, L_d L_d^T)`` with ``u_d = chol(K_zz) v_d``;
    ``q_x_mean``/``q_x_std`` are the latent wrapped-normal (or Gaussian)
    means and per-axis standard deviations.
    """

    Z: np.ndarray
    q_u_mean: np.ndarray
    q_u_tril: np.ndarray
    q_x_mean: np.ndarray
    q_x_std: np.ndarray

    def to_dict(self, geometry: str) -> dict:
        return {
            "Z": _spatial(self.Z, geometry).tolist(),
            "q_u_mean": self.q_u_mean.tolist(),
            "q_u_tril": self.q_u_tril.tolist(),
            "q_x_mean": _spatial(self.q_x_mean, geometry).tolist(),
            "q_x_std": self.q_x_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, geometry: str) -> "VariationalState":
        arr = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        return cls(_unspatial(arr("Z"), geometry), arr("q_u_mean"), arr("q_u_tril"),
                   _unspatial(arr("q_x_mean"), geometry), arr("q_x_std"))


def _spatial(X, geometry):
    X = np.asarray(X)
    return X[:, 1:] if geometry == "lorentz" else X


def _unspatial(Z, geometry):
    if geometry == "lorentz":
        return _lift(torch.as_tensor(Z)).numpy()
    return Z


def relift(X, geometry):
    """Recompute the time coordinate so stored spatial coordinates determine the point."""
    return _unspatial(_spatial(X, geometry), geometry)


@dataclass(eq=False)
class GphlvmModel:
    """A trained (GP)LVM: latents, kernel, noise, training data and provenance."""

    geometry: str
    latent_dim: int
    latents: np.ndarray
    kernel: KernelSpec
    noise: np.ndarray
    prior_alpha: float
    observations: np.ndarray
    classes: tuple
    graph: TaxonomyGraph
    train_config: TrainConfig
    bc: BackConstraint | None = None
    variational: VariationalState | None = None
    jitter: float = 1e-6
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.observations.shape[0]
        if self.latents.shape[0] != N:
            raise ValidationError(f"{self.latents.shape[0]} latents for {N} observations")
        if np.any(np.asarray(self.noise) <= 0):
            raise ValidationError("noise variances must be > 0")

    @property
    def n(self) -> int:
        return self.latents.shape[0]

    @property
    def class_indices(self) -> np.ndarray:
        return self.graph.indices(self.classes)

    def kernel_between(self, A, B=None):
        return kernel_matrix(self.kernel, A, B)

    def to_dict(self) -> dict:
        return {
            "model_version": MODEL_VERSION,
            "geometry": self.geometry,
            "latent_dim": self.latent_dim,
            "kernel": self.kernel.to_dict(),
            "latents": _spatial(self.latents, self.geometry).tolist(),
            "noise": np.asarray(self.noise).tolist(),
            "prior_alpha": self.prior_alpha,
            "jitter": self.jitter,
            "observations": self.observations.tolist(),
            "classes": list(self.classes),
            "graph": self.graph.to_dict(),
            "bc": None if self.bc is None else self.bc.to_dict(),
            "variational": None if self.variational is None else self.variational.to_dict(self.geometry),
            "train_config": self.train_config.to_dict(),
            "history": self.history,
        }

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict()) + "\n")
        except OSError as exc:
            raise DataIOError(f"cannot write model {path}: {exc}") from exc


def model_from_dict(doc: dict) -> GphlvmModel:
    version = doc.get("model_version")
    if version != MODEL_VERSION:
        raise CompatibilityError(f"unsupported model_version {version!r}")
    try:
        geometry = doc["geometry"]
        latents = _unspatial(np.asarray(doc["latents"], dtype=np.float64), geometry)
        return GphlvmModel(
            geometry=geometry,
            latent_dim=int(doc["latent_dim"]),
            latents=latents,
            kernel=KernelSpec.from_dict(doc["kernel"]),
            noise=np.asarray(doc["noise"], dtype=np.float64),
            prior_alpha=float(doc["prior_alpha"]),
            observations=np.asarray(doc["observations"], dtype=np.float64),
            classes=tuple(doc["classes"]),
            graph=graph_from_dict(doc["graph"]),
            train_config=TrainConfig.from_dict(doc["train_config"]),
            bc=None if doc.get("bc") is None else BackConstraint.from_dict(doc["bc"]),
            variational=None if doc.get("variational") is None
            else VariationalState.from_dict(doc["variational"], geometry),
            jitter=float(doc.get("jitter", 1e-6)),
            history=doc.get("history", {}),
        )
    except (KeyError, TypeError) as exc:
        raise CompatibilityError(f"malformed model document: {exc}") from exc


def load_model(path) -> GphlvmModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read model {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CompatibilityError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(doc)


def bc_kernel(Y_a, cls_a, Y_b, cls_b, bc: BackConstraint, graph: TaxonomyGraph):
    """``variance * k_obs(Y_a, Y_b) * k_graph(c_a, c_b)`` (elementwise product)."""
    Ko = kernel_matrix(bc.obs_spec(), Y_a, Y_b)
    Kg_full = graph_kernel_matrix(graph, bc.graph_spec())
    Kg = Kg_full[torch.as_tensor(cls_a)][:, torch.as_tensor(cls_b)]
    return bc.variance * Ko * Kg


def _bc_map(K, W):
    # Row-wise elementwise reduction: a row's result does not depend on the
    # batch it is computed in, so encode_new reproduces training latents bitwise.
    return (K[:, None, :] * W[None, :, :]).sum(-1)


def _to_latent(xt, geometry):
    if geometry == "lorentz":
        return _lift(exp_origin(xt)[..., 1:])
    return xt


def back_constrain(W, Y, classes, bc: BackConstraint, graph: TaxonomyGraph, geometry: str = "lorentz"):
    """Latents ``x_n`` of the back-constraint map for training rows ``Y``.

    ``classes`` are node ids or graph indices. Differentiable in ``W``
    (a tensor of shape (Q, N)).
    """
    idx = _class_indices(classes, graph)
    W = torch.as_tensor(W)
    K = bc_kernel(Y, idx, Y, idx, bc, graph)
    return _to_latent(_bc_map(K, W), geometry)


def _class_indices(classes, graph):
    classes = list(classes)
    if classes and isinstance(classes[0], (int, np.integer)):
        return np.asarray(classes, dtype=np.int64)
    try:
        return graph.indices(classes)
    except KeyError as exc:
        raise ValidationError(str(exc.args[0])) from None


def encode_new(model: GphlvmModel, y_new, c_new):
    """Embed new observations with the trained back-constraint map.

    ``y_new`` is (D,) or (B, D); ``c_new`` a node id or a list of them.
    Returns latent points (ambient coordinates), NumPy.
    """
    if model.bc is None:
        raise CapabilityError("model has no back constraints; encode_new needs a bc_stress model")
    y = np.atleast_2d(np.asarray(y_new, dtype=np.float64))
    single = np.ndim(y_new) == 1
    cs = [c_new] if isinstance(c_new, str) else list(c_new)
    if len(cs) != y.shape[0]:
        raise ValidationError("one class per new observation required")
    if y.shape[1] != model.observations.shape[1]:
        raise CompatibilityError(f"expected {model.observations.shape[1]} features, got {y.shape[1]}")
    idx_new = _class_indices(cs, model.graph)
    with torch.no_grad():
        K = bc_kernel(y, idx_new, model.observations, model.class_indices, model.bc, model.graph)
        x = _to_latent(_bc_map(K, torch.as_tensor(model.bc.W)), model.geometry).numpy()
    return x[0] if single else x


def decode(model: GphlvmModel, x_star):
    """GP posterior predictive at latent point(s) ``x_star``.

    Returns ``(mean, var)`` with shape (D,) for one point or (T, D) for a
    batch; ``var`` is the variance of the latent function (noise excluded).
    """
    xs = np.asarray(x_star, dtype=np.float64)
    single = xs.ndim == 1
    xs = np.atleast_2d(xs)
    amb = model.latents.shape[1]
    if xs.shape[1] != amb:
        raise CompatibilityError(f"latent points need length {amb}, got {xs.shape[1]}")
    with torch.no_grad():
        if model.variational is not None:
            mean, var = _decode_variational(model, torch.as_tensor(xs))
        else:
            mean, var = _decode_exact(model, torch.as_tensor(xs))
    mean, var = mean.numpy(), var.numpy()
    return (mean[0], var[0]) if single else (mean, var)


def _decode_exact(model, xs):
    X = torch.as_tensor(model.latents)
    Y = torch.as_tensor(model.observations)
    K = kernel_matrix(model.kernel, X)
    K = 0.5 * (K + K.T)
    Ks = kernel_matrix(model.kernel, xs, X)
    var0 = model.kernel.variance
    eye = torch.eye(K.shape[0], dtype=K.dtype)
    # same diagonal regularization as the training objective
    K = K + model.jitter * var0 * eye
    means, variances = [], []
    for d, s2 in enumerate(np.asarray(model.noise)):
        L, _ = cholesky_jitter(K + float(s2) * eye, var0, 0.0)
        alpha = torch.cholesky_solve(Y[:, d : d + 1], L)
        V = torch.linalg.solve_triangular(L, Ks.T, upper=False)
        means.append((Ks @ alpha)[:, 0])
        variances.append(torch.clamp(var0 - (V**2).sum(0), min=0.0))
    return torch.stack(means, 1), torch.stack(variances, 1)


def _decode_variational(model, xs):
    vs = model.variational
    Z = torch.as_tensor(vs.Z)
    Kzz = kernel_matrix(model.kernel, Z)
    Kzz = 0.5 * (Kzz + Kzz.T)
    Lz, _ = cholesky_jitter(Kzz, model.kernel.variance, model.jitter)
    A = torch.linalg.solve_triangular(Lz, kernel_matrix(model.kernel, Z, xs), upper=False)
    m = torch.as_tensor(vs.q_u_mean)
    Lv = torch.as_tensor(vs.q_u_tril)
    mean = (m @ A).T
    LtA = Lv.transpose(-1, -2) @ A
    var = model.kernel.variance - (A**2).sum(0) + (LtA**2).sum(1)
    return mean, torch.clamp(var, min=0.0).T
