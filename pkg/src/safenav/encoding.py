"""Axis-aligned sinusoidal positional encoding with an exact Jacobian.

A 3D point is lifted to ``[xi, sin(f_k xi), cos(f_k xi)]`` over octave-spaced
frequencies ``f_k = base_scale * 2**k``.  With the default 49 frequencies the
output width is 3 + 3*2*49 = 297.  The default base scale puts the top octave
at 128 rad/m (about a 5 cm wavelength); lower octaves decay geometrically and
contribute progressively less at desk scale, but keep the published width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_NUM_FREQUENCIES = 49
DEFAULT_BASE_SCALE = 2.0 ** -41  # rad/m; top octave 2**48 * base = 128 rad/m


@dataclass(frozen=True)
class FourierEncoding:
    num_frequencies: int = DEFAULT_NUM_FREQUENCIES
    base_scale: float = DEFAULT_BASE_SCALE

    def __post_init__(self):
        if self.num_frequencies < 1:
            raise ValueError("need at least one frequency")
        if self.base_scale <= 0.0:
            raise ValueError("base scale must be positive")

    @property
    def out_dim(self) -> int:
        return 3 + 6 * self.num_frequencies

    @property
    def frequencies(self) -> np.ndarray:
        return self.base_scale * np.exp2(np.arange(self.num_frequencies, dtype=float))

    def encode(self, xi: np.ndarray) -> np.ndarray:
        """Encode points (..., 3) to features (..., out_dim)."""
        xi = np.asarray(xi, dtype=float)
        scalar = xi.ndim == 1
        pts = np.atleast_2d(xi)
        args = pts[:, None, :] * self.frequencies[None, :, None]  # (N, F, 3)
        block = np.empty((pts.shape[0], self.num_frequencies, 2, 3))
        np.sin(args, out=block[:, :, 0, :])
        np.cos(args, out=block[:, :, 1, :])
        out = np.concatenate([pts, block.reshape(pts.shape[0], -1)], axis=1)
        return out[0] if scalar else out

    def encode_with_tangent(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Features (N, D) and Jacobian laid out as tangents (N, 3, D).

        ``tangent[n, t, j]`` is the derivative of feature j with respect to
        input coordinate t.  Each feature depends on a single coordinate, so
        the tangent tensor is filled axis by axis.
        """
        pts = np.atleast_2d(np.asarray(xi, dtype=float))
        n = pts.shape[0]
        f = self.frequencies
        args = pts[:, None, :] * f[None, :, None]
        sin = np.sin(args)
        cos = np.cos(args)
        feats = np.empty((n, self.out_dim))
        feats[:, :3] = pts
        block = np.empty((n, self.num_frequencies, 2, 3))
        block[:, :, 0, :] = sin
        block[:, :, 1, :] = cos
        feats[:, 3:] = block.reshape(n, -1)

        tang = np.zeros((n, 3, self.out_dim))
        tblock = np.zeros((n, 3, self.num_frequencies, 2, 3))
        for axis in range(3):
            tang[:, axis, axis] = 1.0
            tblock[:, axis, :, 0, axis] = f[None, :] * cos[:, :, axis]
            tblock[:, axis, :, 1, axis] = -f[None, :] * sin[:, :, axis]
        tang[:, :, 3:] = tblock.reshape(n, 3, -1)
        return feats, tang

    def jacobian(self, xi: np.ndarray) -> np.ndarray:
        """Dense Jacobian (N, out_dim, 3); convenience view of the tangents."""
        _, tang = self.encode_with_tangent(xi)
        return np.swapaxes(tang, 1, 2)
