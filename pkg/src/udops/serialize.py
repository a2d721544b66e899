"""Complex arrays as JSON: each entry is an ``[re, im]`` pair, matrices row-major."""

from __future__ import annotations

import numpy as np


def encode_matrix(m) -> list:
    a = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def decode_matrix(obj) -> np.ndarray:
    a = np.asarray(obj, dtype=float)
    if a.ndim != 3 or a.shape[2] != 2:
        raise ValueError(f"expected a matrix of [re, im] pairs, got array of shape {a.shape}")
    return a[..., 0] + 1j * a[..., 1]


def encode_vector(v) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=complex)]


def decode_vector(obj) -> np.ndarray:
    a = np.asarray(obj, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError(f"expected a vector of [re, im] pairs, got array of shape {a.shape}")
    return a[:, 0] + 1j * a[:, 1]
