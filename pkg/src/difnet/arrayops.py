"""Array helpers shared by the plain-numpy and tape-recorded execution paths.

Every function here accepts either an ``np.ndarray`` (possibly with leading
batch dimensions) or a tape variable from :mod:`difnet.autodiff` that exposes
the matching method.  Filter and network code should call these helpers
instead of numpy directly wherever gradients may need to flow.

Matrix-valued data uses the convention ``(..., rows, cols)``; vectors ride
along as ``(..., n, 1)`` columns so that ``@`` does all the work.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "mT",
    "sym",
    "sqrt",
    "atan2",
    "concat",
    "wrap_angle",
    "inv_spd",
    "asvalue",
    "SingularCovarianceError",
]

# Jitter ladder for symmetric-positive-definite inversion: start at
# 1e-12 * trace and escalate tenfold up to 1e-6 * trace before giving up.
_JITTER_START = 1e-12
_JITTER_STOP = 1e-6


class SingularCovarianceError(np.linalg.LinAlgError):
    """A covariance (or information) matrix could not be factorized as SPD."""


def asvalue(x):
    """Plain ndarray view of ``x`` (unwraps tape variables)."""
    return x.value if hasattr(x, "value") else np.asarray(x)


def _is_plain(x) -> bool:
    return not hasattr(x, "_difnet_var")


def mT(x):
    """Transpose of the trailing two axes."""
    if _is_plain(x):
        return np.swapaxes(x, -1, -2)
    return x.mT()


def sym(a):
    """Symmetric part ``(A + A^T) / 2`` of the trailing two axes."""
    return (a + mT(a)) * 0.5


def sqrt(x):
    if _is_plain(x):
        return np.sqrt(x)
    return x.sqrt()


def atan2(y, x):
    if _is_plain(y) and _is_plain(x):
        return np.arctan2(y, x)
    if _is_plain(y):
        # promote so the dispatch lands on the tape implementation
        y = x.lift_const(y)
    return y.atan2(x)


def concat(parts, axis: int = -1):
    parts = list(parts)
    if all(_is_plain(p) for p in parts):
        return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=axis)
    var = next(p for p in parts if not _is_plain(p))
    return var.concat_with(parts, axis)


def concat_rows(parts, axis: int = -2):
    """Concatenate matrix blocks, broadcasting constant 2-D blocks to the
    common batch shape first (mixed constant/batched stacks)."""
    parts = list(parts)
    ndim = max(np.ndim(asvalue(p)) for p in parts)
    if ndim > 2:
        batch = next(
            np.shape(asvalue(p))[:-2] for p in parts if np.ndim(asvalue(p)) == ndim
        )
        fixed = []
        for p in parts:
            if _is_plain(p) and np.ndim(p) < ndim:
                p = np.broadcast_to(p, batch + np.shape(p)[-2:])
            fixed.append(p)
        parts = fixed
    return concat(parts, axis=axis)


def wrap_angle(x):
    """Wrap angles into (-pi, pi].

    Piecewise-constant offset of 2*pi*k, so gradients pass through unchanged.
    """
    if _is_plain(x):
        return wrap_angle_value(np.asarray(x, dtype=float))
    return x.wrap_angle()


def wrap_angle_value(x: np.ndarray) -> np.ndarray:
    return x - 2.0 * np.pi * np.ceil((x - np.pi) / (2.0 * np.pi))


def inv_spd(a):
    """Inverse of a symmetric positive-definite matrix (batched).

    Symmetrizes first, then certifies positive-definiteness by Cholesky,
    adding jitter from the ladder if factorization fails.  Raises
    :class:`SingularCovarianceError` when the ladder is exhausted.
    """
    if _is_plain(a):
        return inv_spd_value(np.asarray(a, dtype=float))
    return a.inv_spd()


def inv_spd_value(a: np.ndarray) -> np.ndarray:
    return np.linalg.inv(_spd_prepare(a))


def inv_sym(a):
    """Symmetric inverse without the positive-definiteness certificate.

    Used on the learned-weight path, where an untrained network can make an
    information matrix indefinite: the inverse is still well defined almost
    everywhere, the resulting absurd estimates show up as loss (so gradients
    point away from the region) instead of aborting the whole batch.
    """
    if _is_plain(a):
        return inv_sym_value(np.asarray(a, dtype=float))
    return a.inv_sym()


def inv_sym_value(a: np.ndarray) -> np.ndarray:
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    n = a.shape[-1]
    eye = np.eye(n)
    trace = np.abs(np.trace(a, axis1=-2, axis2=-1))
    scale = np.maximum(trace, np.finfo(float).tiny)[..., None, None]
    level = 0.0
    while True:
        candidate = a if level == 0.0 else a + (level * scale) * eye
        try:
            return np.linalg.inv(candidate)
        except np.linalg.LinAlgError:
            if level == 0.0:
                level = _JITTER_START
            elif level >= _JITTER_STOP:
                raise SingularCovarianceError(
                    "matrix is singular even with jitter"
                ) from None
            else:
                level *= 10.0


def _spd_prepare(a: np.ndarray) -> np.ndarray:
    """Return a symmetrized, jittered-if-needed SPD version of ``a``."""
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    n = a.shape[-1]
    eye = np.eye(n)
    trace = np.abs(np.trace(a, axis1=-2, axis2=-1))
    scale = np.maximum(trace, np.finfo(float).tiny)[..., None, None]
    level = 0.0
    while True:
        candidate = a if level == 0.0 else a + (level * scale) * eye
        try:
            np.linalg.cholesky(candidate)
            return candidate
        except np.linalg.LinAlgError:
            if level == 0.0:
                level = _JITTER_START
            elif level >= _JITTER_STOP:
                raise SingularCovarianceError(
                    "matrix is not positive definite even with jitter "
                    f"{_JITTER_STOP:g} * trace"
                ) from None
            else:
                level *= 10.0
