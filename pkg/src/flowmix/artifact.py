"""Lossless persistence of fitted models.

The artifact is a JSON document whose floating-point payload is encoded
as hex-float strings (``float.hex``), so save/load round-trips reproduce
every numerical field bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from .classify import LogitCoefficients
from .config import Bandwidths, PipelineConfig
from .errors import ConfigurationError
from .fpca import ClusterModel
from .grids import TimeGrid
from .predict import MixtureModel, RegressionCoefficients

FORMAT_VERSION = 1


def _encode_array(arr) -> dict:
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape),
            "data": [float(x).hex() for x in arr.ravel()]}


def _decode_array(doc) -> np.ndarray:
    flat = np.array([float.fromhex(s) for s in doc["data"]])
    return flat.reshape(doc["shape"])


def _encode_cluster(model: ClusterModel) -> dict:
    return {
        "label": model.label,
        "mean": _encode_array(model.mean),
        "covariance": _encode_array(model.covariance),
        "eigenvalues": _encode_array(model.eigenvalues),
        "eigenfunctions": _encode_array(model.eigenfunctions),
        "num_components": model.num_components,
        "noise_variance": float(model.noise_variance).hex(),
        "fve_threshold": float(model.fve_threshold).hex(),
        "noise_clamped": model.noise_clamped,
        "bandwidths": {
            "mean": None if model.bandwidths.mean is None
            else float(model.bandwidths.mean).hex(),
            "covariance": None if model.bandwidths.covariance is None
            else float(model.bandwidths.covariance).hex(),
            "diagonal": None if model.bandwidths.diagonal is None
            else float(model.bandwidths.diagonal).hex(),
        },
    }


def _decode_cluster(doc, grid: TimeGrid) -> ClusterModel:
    bw = doc["bandwidths"]
    return ClusterModel(
        grid=grid,
        mean=_decode_array(doc["mean"]),
        covariance=_decode_array(doc["covariance"]),
        eigenvalues=_decode_array(doc["eigenvalues"]),
        eigenfunctions=_decode_array(doc["eigenfunctions"]),
        num_components=doc["num_components"],
        noise_variance=float.fromhex(doc["noise_variance"]),
        fve_threshold=float.fromhex(doc["fve_threshold"]),
        label=doc["label"],
        noise_clamped=doc["noise_clamped"],
        bandwidths=Bandwidths(
            mean=None if bw["mean"] is None else float.fromhex(bw["mean"]),
            covariance=None if bw["covariance"] is None
            else float.fromhex(bw["covariance"]),
            diagonal=None if bw["diagonal"] is None
            else float.fromhex(bw["diagonal"]),
        ),
    )


def _encode_gamma(gamma: LogitCoefficients) -> dict:
    return {
        "gamma": _encode_array(gamma.gamma),
        "n_classes": gamma.n_classes,
        "converged": gamma.converged,
        "separation_flag": gamma.separation_flag,
    }


def _decode_gamma(doc) -> LogitCoefficients:
    return LogitCoefficients(
        gamma=_decode_array(doc["gamma"]),
        n_classes=doc["n_classes"],
        converged=doc["converged"],
        separation_flag=doc["separation_flag"],
    )


def _encode_betas(betas: dict) -> list:
    out = []
    for key, rc in betas.items():
        out.append({
            "omega": "full" if key == "full" else float(key).hex(),
            "tau_grid": _encode_array(rc.tau_grid),
            "raw": [_encode_array(a) for a in rc.raw],
            "smoothed": [_encode_array(a) for a in rc.smoothed],
        })
    return out


def _decode_betas(docs) -> dict:
    out = {}
    for doc in docs:
        key = "full" if doc["omega"] == "full" else round(float.fromhex(doc["omega"]), 9)
        omega = None if key == "full" else key
        out[key] = RegressionCoefficients(
            tau_grid=_decode_array(doc["tau_grid"]),
            raw=[_decode_array(a) for a in doc["raw"]],
            smoothed=[_decode_array(a) for a in doc["smoothed"]],
            omega=omega,
        )
    return out


def save_artifact(path, mixture: MixtureModel, metadata: dict | None = None) -> None:
    """Write a fitted mixture to a versioned JSON artifact."""
    doc = {
        "format_version": FORMAT_VERSION,
        "grid": {
            "points": _encode_array(mixture.grid.points),
            "domain_end": float(mixture.grid.domain_end).hex(),
        },
        "clusters": [_encode_cluster(m) for m in mixture.clusters],
        "gamma": _encode_gamma(mixture.gamma),
        "betas": _encode_betas(mixture.betas),
        "tau_grid": _encode_array(mixture.tau_grid),
        "gamma_by_tau": None if mixture.gamma_by_tau is None else {
            float(k).hex(): _encode_gamma(v)
            for k, v in mixture.gamma_by_tau.items()
        },
        "training_distances": None if mixture.training_distances is None
        else _encode_array(mixture.training_distances),
        "training_labels": None if mixture.training_labels is None
        else [int(x) for x in mixture.training_labels],
        "config": mixture.config.to_dict(),
        "metadata": metadata or {},
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=1)
        handle.write("\n")


def load_artifact(path) -> MixtureModel:
    """Read a mixture back; numerical fields are restored exactly."""
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"unsupported artifact format version {doc.get('format_version')}"
        )
    grid = TimeGrid(_decode_array(doc["grid"]["points"]),
                    domain_end=float.fromhex(doc["grid"]["domain_end"]))
    gamma_by_tau = None
    if doc["gamma_by_tau"] is not None:
        gamma_by_tau = {
            round(float.fromhex(k), 9): _decode_gamma(v)
            for k, v in doc["gamma_by_tau"].items()
        }
    return MixtureModel(
        grid=grid,
        clusters=[_decode_cluster(c, grid) for c in doc["clusters"]],
        gamma=_decode_gamma(doc["gamma"]),
        betas=_decode_betas(doc["betas"]),
        tau_grid=_decode_array(doc["tau_grid"]),
        config=PipelineConfig.from_dict(doc["config"]),
        gamma_by_tau=gamma_by_tau,
        training_distances=None if doc["training_distances"] is None
        else _decode_array(doc["training_distances"]),
        training_labels=None if doc["training_labels"] is None
        else np.array(doc["training_labels"], dtype=int),
    )
