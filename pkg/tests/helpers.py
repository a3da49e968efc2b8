import numpy as np

from flowmix.grids import SampledCurve


def make_curves(grid, values, ids=None):
    ids = ids if ids is not None else range(len(values))
    return [SampledCurve(grid, v, id=i) for v, i in zip(values, ids)]


def orthonormalize(rows, weights):
    """Gram-Schmidt under the quadrature inner product; rows are functions."""
    out = []
    for r in np.asarray(rows, dtype=float):
        v = r.copy()
        for b in out:
            v -= np.dot(weights, v * b) * b
        nrm = np.sqrt(np.dot(weights, v * v))
        if nrm < 1e-12:
            raise ValueError("rows are linearly dependent under quadrature")
        out.append(v / nrm)
    return np.array(out)
