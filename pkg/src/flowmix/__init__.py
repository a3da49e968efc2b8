"""Functional mixture prediction for daily trajectory data.

The package learns distinct daily-trajectory patterns from historical
curves (clustering plus probabilistic classification) and dynamically
predicts the unobserved remainder of a partially observed curve with a
functional mixture prediction model, alongside a baseline that imputes
scores by Gaussian conditioning, evaluation metrics and a replicate-study
harness.
"""

from .grids import SampledCurve, Surface, TimeGrid, inner_product, uniform_grid
from .config import PipelineConfig

__all__ = [
    "SampledCurve",
    "Surface",
    "TimeGrid",
    "inner_product",
    "uniform_grid",
    "PipelineConfig",
]

__version__ = "0.1.0"
