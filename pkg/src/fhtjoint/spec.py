"""Model configuration: polynomial degrees, detection limits and priors."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

N_RANDOM = 2  # random intercept and slope per biomarker


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    ``psi_scale`` is the Half-Cauchy scale on the spread of the subject
    log-variances; it is not pinned down numerically by the model
    description and defaults to the random-effect scale.
    """

    beta_scale: float = 100.0
    re_scale: float = 2.5
    lkj_shape: float = 1.0
    gamma_scale: float = 100.0
    psi_scale: float = 2.5
    corr_rate_a: float = 0.1
    corr_rate_b: float = 0.1
    coef_scale: float = 100.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"prior hyperparameter {name} must be > 0")


@dataclass(frozen=True)
class ModelSpec:
    """Structure of the joint model.

    Parameters
    ----------
    degrees : tuple of int
        Number of fixed-effect polynomial terms ``m_q`` per biomarker
        (``m_q = 3`` means intercept, linear and quadratic).
    lod : tuple of float
        Detection limit per biomarker, ``-inf`` when not censored.
    n_covariates : int
        Number of baseline covariates entering the threshold regression.
    standardize_covariates : bool
        Centre and scale baseline covariates by their sample mean and SD
        before they enter the design row.
    """

    degrees: tuple
    lod: tuple
    n_covariates: int = 0
    priors: PriorConfig = field(default_factory=PriorConfig)
    standardize_covariates: bool = False

    def __post_init__(self):
        object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))
        object.__setattr__(self, "lod", tuple(float(v) for v in self.lod))
        if len(self.degrees) != len(self.lod):
            raise ValueError("degrees and lod must have one entry per biomarker")
        if self.Q not in (1, 2):
            raise ValueError("only Q = 1 or Q = 2 biomarkers are supported")
        if any(d < 1 for d in self.degrees):
            raise ValueError("each biomarker needs at least one fixed effect")
        if self.n_covariates < 0:
            raise ValueError("n_covariates must be >= 0")
        if any(np.isnan(v) or v == np.inf for v in self.lod):
            raise ValueError("detection limits must be finite or -inf")

    @property
    def Q(self) -> int:
        return len(self.degrees)

    @property
    def P(self) -> int:
        return N_RANDOM

    @property
    def n_coef(self) -> int:
        return 1 + self.P * self.Q + self.Q + self.n_covariates

    def coef_labels(self) -> list[str]:
        """Human-readable meaning of each design-row entry."""
        labels = ["intercept"]
        for q in range(1, self.Q + 1):
            labels += [f"b{q}_intercept", f"b{q}_slope", f"b{q}_variability"]
        labels += [f"z{k}" for k in range(1, self.n_covariates + 1)]
        return labels

    def to_dict(self) -> dict:
        return {
            "degrees": list(self.degrees),
            "lod": [v if np.isfinite(v) else None for v in self.lod],
            "n_covariates": self.n_covariates,
            "priors": asdict(self.priors),
            "standardize_covariates": self.standardize_covariates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            degrees=tuple(d["degrees"]),
            lod=tuple(-np.inf if v is None else v for v in d["lod"]),
            n_covariates=d.get("n_covariates", 0),
            priors=PriorConfig(**d.get("priors", {})),
            standardize_covariates=d.get("standardize_covariates", False),
        )
