"""Quadratic Q-function over the augmented vector ``z = [u; x; p; 1]``.

The feature vector holds the upper-triangular products ``z_i z_j``
(``i <= j``) in row-major order.  The factor 2 of the symmetric
off-diagonal entries lives in the weights, ``w_ij = 2 H_ij`` for ``i < j``,
so that ``w @ phi(z) == z @ H @ z``.  This is the only place the
convention is encoded; everything else goes through ``weights_to_H`` and
``H_to_weights``.
"""

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, NonConvexInControl

__all__ = [
    "H_UU_MIN",
    "GainMatrix",
    "augmented",
    "n_features",
    "features",
    "weights_to_H",
    "H_to_weights",
    "q_value",
    "greedy_gain",
    "policy_apply",
    "save_gain",
    "load_gain",
]

H_UU_MIN = 1e-10


def n_features(n_z):
    return n_z * (n_z + 1) // 2


def _n_z_from_weights(n_w):
    n_z = int(round((np.sqrt(8 * n_w + 1) - 1) / 2))
    if n_features(n_z) != n_w:
        raise DimensionError(f"{n_w} is not a triangular number of weights")
    return n_z


def augmented(x, u, p, offset=True):
    """Stack ``[u, x, p, 1]`` along the last axis (batched inputs allowed)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.ndim == 1 and u.ndim == 0:
        parts = [u[None], x, p]
        if offset:
            parts.append(np.ones(1))
        return np.concatenate(parts)
    # batch: x (N, n_x), u (N,), p (N, n_p)
    if x.ndim != 2 or u.ndim != 1 or p.ndim != 2:
        raise DimensionError("batched inputs need x (N, n_x), u (N,), p (N, n_p)")
    if not (x.shape[0] == u.shape[0] == p.shape[0]):
        raise DimensionError("batched inputs disagree in length")
    parts = [u[:, None], x, p]
    if offset:
        parts.append(np.ones((x.shape[0], 1)))
    return np.concatenate(parts, axis=1)


def _triu(n_z):
    return np.triu_indices(n_z)


def features(x, u, p, offset=True):
    """Quadratic features ``phi`` of ``z = [u, x, p, 1]``.

    Returns shape ``(n_w,)`` for a single sample or ``(N, n_w)`` for a batch.
    """
    z = augmented(x, u, p, offset)
    i, j = _triu(z.shape[-1])
    return z[..., i] * z[..., j]


def weights_to_H(w):
    """Symmetric matrix ``H`` with ``z @ H @ z == w @ phi(z)``."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise DimensionError("weights must be a flat vector")
    n_z = _n_z_from_weights(w.size)
    i, j = _triu(n_z)
    vals = np.where(i == j, w, 0.5 * w)
    H = np.zeros((n_z, n_z))
    H[i, j] = vals
    H[j, i] = vals
    return H


def H_to_weights(H):
    """Inverse of :func:`weights_to_H`; symmetric part of ``H`` is used.

    The round trip ``H_to_weights(weights_to_H(w))`` is bit-exact for
    normal floating-point weights.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionError("H must be square")
    i, j = _triu(H.shape[0])
    Hs = 0.5 * (H + H.T)
    return np.where(i == j, Hs[i, j], 2.0 * Hs[i, j])


def q_value(w, x, u, p, offset=True):
    """Approximate cost-to-go ``w @ phi(x, u, p)``."""
    phi = features(x, u, p, offset)
    w = np.asarray(w, dtype=float)
    if phi.shape[-1] != w.size:
        raise DimensionError(f"{w.size} weights for {phi.shape[-1]} features")
    return phi @ w


@dataclass(frozen=True)
class GainMatrix:
    """Affine feedback ``u = -(L_x @ x + L_ref @ p + L_off)``."""

    L_x: np.ndarray
    L_ref: np.ndarray
    L_off: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "L_x", np.asarray(self.L_x, dtype=float).reshape(-1))
        object.__setattr__(self, "L_ref", np.asarray(self.L_ref, dtype=float).reshape(-1))
        object.__setattr__(self, "L_off", float(self.L_off))

    @property
    def n_x(self):
        return self.L_x.size

    @property
    def n_p(self):
        return self.L_ref.size

    def as_array(self):
        return np.concatenate([self.L_x, self.L_ref, [self.L_off]])

    @classmethod
    def from_array(cls, L, n_x=4):
        L = np.asarray(L, dtype=float).reshape(-1)
        if L.size < n_x + 1:
            raise DimensionError(f"gain of length {L.size} is too short for n_x={n_x}")
        return cls(L[:n_x], L[n_x:-1], L[-1])

    @classmethod
    def zeros(cls, n_x=4, n_p=3):
        return cls(np.zeros(n_x), np.zeros(n_p), 0.0)


def greedy_gain(H, n_x=4, offset=True):
    """Closed-form minimiser of ``u -> z @ H @ z``.

    Setting the derivative in ``u`` to zero gives
    ``u* = -h_uu^-1 (h_ux x + h_up p + h_u1)``.

    Raises
    ------
    NonConvexInControl
        If ``h_uu <= 1e-10``.
    """
    H = np.asarray(H, dtype=float)
    n_z = H.shape[0]
    n_p = n_z - 1 - n_x - int(offset)
    if n_p < 0:
        raise DimensionError(f"H of size {n_z} cannot hold n_x={n_x}")
    h_uu = H[0, 0]
    if not h_uu > H_UU_MIN:
        raise NonConvexInControl(h_uu)
    row = H[0, 1:] / h_uu
    L_off = row[-1] if offset else 0.0
    return GainMatrix(row[:n_x], row[n_x : n_x + n_p], L_off)


def policy_apply(L, x, p):
    """Control ``-(L_x x + L_ref p + L_off)``; batched over leading axes."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return -(x @ L.L_x + p @ L.L_ref + L.L_off)


def gain_document(L, w, n_p, normalized):
    return {
        "n_p": int(n_p),
        "normalized": bool(normalized),
        "w": [float(v) for v in np.asarray(w, dtype=float)],
        "L": [float(v) for v in L.as_array()],
    }


def save_gain(path, L, w, n_p, normalized):
    """Write the gain/weights JSON document (fields ``n_p, normalized, w, L``)."""
    doc = gain_document(L, w, n_p, normalized)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_gain(path):
    """Read a gain document; returns ``(GainMatrix, w, n_p, normalized)``."""
    with open(path) as fh:
        doc = json.load(fh)
    missing = {"n_p", "normalized", "w", "L"} - set(doc)
    if missing:
        raise DimensionError(f"{path}: missing fields {sorted(missing)}")
    n_p = int(doc["n_p"])
    L = np.asarray(doc["L"], dtype=float)
    n_x = L.size - n_p - 1
    return GainMatrix.from_array(L, n_x), np.asarray(doc["w"], dtype=float), n_p, bool(doc["normalized"])
