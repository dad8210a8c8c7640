"""Training configuration and per-taxonomy defaults."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

from ..errors import ValidationError

GEOMETRIES = ("lorentz", "euclidean")
MODES = ("map", "variational")
REGULARIZERS = ("none", "stress", "bc_stress", "distortion", "modified_distortion")
INITS = ("stress_min", "random")
LATENT_KERNELS = ("auto", "hyperbolic_l2_mc", "hyperbolic_l3", "hyperbolic_matern", "euclidean_se")

# Loss scale per (taxonomy, latent dim, regularizer); shared by both geometries.
_GAMMA = {
    ("bimanual", 2): {"stress": 1500.0, "bc_stress": 1000.0},
    ("bimanual", 3): {"stress": 6000.0, "bc_stress": 1200.0},
    ("grasp", 2): {"stress": 5500.0, "bc_stress": 2000.0},
    ("grasp", 3): {"stress": 6000.0, "bc_stress": 3000.0},
    ("support_pose", 2): {"stress": 7000.0, "bc_stress": 5000.0},
    ("support_pose", 3): {"stress": 10000.0, "bc_stress": 8000.0},
}
# (kappa on observations, kappa on the graph) for the back-constraint kernel
_BC_LENGTHSCALES = {"bimanual": (3.0, 1.5), "grasp": (1.8, 1.5), "support_pose": (2.0, 0.8)}
_RIEMANNIAN_LR = {"bimanual": 0.025, "grasp": 0.05, "support_pose": 0.05}
EUCLIDEAN_LR = 0.01
RIEMANNIAN_LR = 0.05


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    ``None`` fields are resolved by :meth:`resolved`: ``gamma`` from the
    builtin-taxonomy table (or 0 without a regularizer), ``lr`` from the
    geometry, back-constraint lengthscales from the taxonomy table.
    """

    geometry: str = "lorentz"
    latent_dim: int = 2
    mode: str = "map"
    regularizer: str = "none"
    gamma: float | None = None
    iterations: int = 1000
    lr: float | None = None
    seed: int = 0
    gamma_prior: tuple | None = None
    init: str = "stress_min"
    init_steps: int = 500
    init_lr: float = 0.1
    lambda1: float = 0.01
    lambda2: float = 10.0
    distortion_eps: float = 0.1
    prior_alpha: float = 1.0
    kernel: str = "auto"
    nu: float | None = None
    mc_samples: int = 3000
    mc_seed: int | None = None
    jitter: float = 1e-6
    bc_obs_lengthscale: float | None = None
    bc_graph_lengthscale: float | None = None
    bc_variance: float = 2.0
    bc_nu: float = 2.5
    num_inducing: int | None = None
    elbo_samples: int = 8
    kl_samples: int = 256
    q_init_std: float = 0.1
    taxonomy: str | None = None

    def __post_init__(self):
        _enum("geometry", self.geometry, GEOMETRIES)
        _enum("mode", self.mode, MODES)
        _enum("regularizer", self.regularizer, REGULARIZERS)
        _enum("init", self.init, INITS)
        _enum("kernel", self.kernel, LATENT_KERNELS)
        if self.gamma_prior is not None:
            gp = tuple(float(v) for v in self.gamma_prior)
            if len(gp) != 2 or min(gp) <= 0:
                raise ValidationError("gamma_prior must be (shape, rate) with both > 0")
            object.__setattr__(self, "gamma_prior", gp)
        if self.gamma is not None and not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if self.regularizer == "none" and self.gamma not in (None, 0, 0.0):
            raise ValidationError("gamma > 0 needs a regularizer")
        for name in ("latent_dim", "elbo_samples", "kl_samples"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        for name in ("iterations", "init_steps"):
            if int(getattr(self, name)) < 0:
                raise ValidationError(f"{name} must be >= 0")
        for name in ("init_lr", "prior_alpha", "bc_variance", "bc_nu", "q_init_std", "lambda1", "lambda2"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.lr is not None and not self.lr > 0:
            raise ValidationError("lr must be > 0")
        if self.distortion_eps < 0:
            raise ValidationError("distortion_eps must be >= 0")
        if self.num_inducing is not None and int(self.num_inducing) < 1:
            raise ValidationError("num_inducing must be >= 1")
        if self.regularizer == "bc_stress" and self.mode == "variational":
            raise ValidationError("back constraints are only supported with MAP training")
        if self.geometry == "euclidean" and self.kernel not in ("auto", "euclidean_se"):
            raise ValidationError(f"kernel {self.kernel!r} needs the lorentz geometry")
        if self.geometry == "lorentz" and self.kernel == "euclidean_se":
            raise ValidationError("euclidean_se needs the euclidean geometry")
        if self.geometry == "lorentz" and self.kernel in ("auto", "hyperbolic_matern") and self.latent_dim not in (2, 3):
            raise ValidationError(f"hyperbolic kernels exist for latent_dim 2 or 3, got {self.latent_dim}")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["gamma_prior"] is not None:
            d["gamma_prior"] = list(d["gamma_prior"])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**doc)

    def resolved(self) -> "TrainConfig":
        """Fill in every ``None`` default."""
        tax = self.taxonomy
        gamma = self.gamma
        if gamma is None:
            if self.regularizer == "none":
                gamma = 0.0
            elif self.regularizer in ("stress", "bc_stress") and (tax, self.latent_dim) in _GAMMA:
                gamma = _GAMMA[(tax, self.latent_dim)][self.regularizer]
            elif self.regularizer in ("distortion", "modified_distortion"):
                gamma = 50.0
            else:
                raise ValidationError(
                    "gamma is required for this taxonomy; pick one with the gamma-sweep command"
                )
        lr = self.lr
        if lr is None:
            lr = EUCLIDEAN_LR if self.geometry == "euclidean" else _RIEMANNIAN_LR.get(tax, RIEMANNIAN_LR)
        obs_ls, graph_ls = _BC_LENGTHSCALES.get(tax, (2.0, 1.5))
        gamma_prior = self.gamma_prior
        if gamma_prior is None and self.regularizer == "bc_stress":
            gamma_prior = (2.0, 2.0)
        return self.replace(
            gamma=float(gamma),
            lr=float(lr),
            gamma_prior=gamma_prior,
            mc_seed=self.seed if self.mc_seed is None else self.mc_seed,
            bc_obs_lengthscale=obs_ls if self.bc_obs_lengthscale is None else self.bc_obs_lengthscale,
            bc_graph_lengthscale=graph_ls if self.bc_graph_lengthscale is None else self.bc_graph_lengthscale,
        )

    def latent_kernel(self) -> str:
        if self.kernel != "auto":
            return self.kernel
        if self.geometry == "euclidean":
            return "euclidean_se"
        return "hyperbolic_l2_mc" if self.latent_dim == 2 else "hyperbolic_l3"


def _enum(name, value, allowed):
    if value not in allowed:
        raise ValidationError(f"{name} must be one of {allowed}, got {value!r}")
