"""Pipeline configuration shared by the library, CLI and study harness."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigurationError


@dataclass
class PipelineConfig:
    """All tunables of the train / predict / evaluate pipeline.

    ``n_clusters=None`` triggers forward-test selection of the cluster
    count.  ``omegas`` / ``kappas`` use ``None`` for the full-past /
    full-future conventions.
    """

    n_clusters: int | None = 3
    fve_threshold: float = 0.90
    ridge: float = 1e-6
    cv_folds: int = 10
    bandwidth_candidates: tuple[float, ...] | None = None
    tau_start: float = 8.0
    tau_end: float = 20.0
    tau_step: float = 0.25
    max_iterations: int = 50
    min_cluster_size: int = 4
    band_replicates: int = 500
    band_level: float = 0.95
    test_replicates: int = 200
    test_level: float = 0.05
    k_max: int = 4
    omegas: tuple[float | None, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, None)
    kappas: tuple[float | None, ...] = (1.0, 4.0, 8.0, None)
    methods: tuple[str, ...] = ("FP", "FMP_H", "FMP_S", "FPCP", "FPCP_H", "FPCP_S")
    seed: int = 0
    refit_gamma_per_tau: bool = False
    resample_gamma_in_bands: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.fve_threshold <= 1.0:
            raise ConfigurationError("fve_threshold must lie in (0, 1]")
        if self.n_clusters is not None and self.n_clusters < 1:
            raise ConfigurationError("n_clusters must be at least 1")
        if self.cv_folds < 2:
            raise ConfigurationError("cv_folds must be at least 2")
        if not 0.0 < self.band_level < 1.0:
            raise ConfigurationError("band_level must lie in (0, 1)")
        if not 0.0 < self.test_level < 1.0:
            raise ConfigurationError("test_level must lie in (0, 1)")
        if self.tau_step <= 0 or self.tau_end <= self.tau_start:
            raise ConfigurationError("tau grid must have positive step and span")

    @property
    def tau_grid(self) -> np.ndarray:
        n = int(round((self.tau_end - self.tau_start) / self.tau_step)) + 1
        return self.tau_start + self.tau_step * np.arange(n)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("omegas", "kappas", "methods", "bandwidth_candidates"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        for key in ("omegas", "kappas", "methods", "bandwidth_candidates"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Bandwidths:
    """Smoothing bandwidths of one fitted pattern model (for reuse)."""

    mean: float | None = None
    covariance: float | None = None
    diagonal: float | None = None
