"""Reproducible counter-based Gaussian noise.

Every normal draw is addressed by the key tuple (seed, replica, channel,
step, site).  The key is hashed into 64 uniform bits with SplitMix64 and
mapped through the inverse normal CDF, so a draw depends only on its key:
simulations are bitwise reproducible across runs and thread counts, and
site/step-addressable draws make replica- and site-level parallelism safe.

Channels keep independent streams apart: forward time steps, negative time
steps (the two-sided Brownian motion) and initial-condition sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

_U64 = np.uint64
_MASK = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# channel ids
CHANNEL_FORWARD = 0
CHANNEL_BACKWARD = 1
CHANNEL_INIT = 2

_AXIS_SALTS = (
    0xD1B54A32D192ED03,
    0xABC98388FB8FAC03,
    0x8CB92BA72F3D8DD7,
    0x9E3779B97F4A7C15,
    0xC2B2AE3D27D4EB4F,
    0x165667B19E3779F9,
)


def _mix_int(z: int) -> int:
    """SplitMix64 finalizer on a Python integer."""
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray, out: np.ndarray | None = None,
               tmp: np.ndarray | None = None) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over a uint64 array."""
    z = np.add(z, _U64(_GOLDEN), out=out)
    tmp = np.right_shift(z, _U64(30), out=tmp)
    np.bitwise_xor(z, tmp, out=z)
    np.multiply(z, _U64(_MIX1), out=z)
    np.right_shift(z, _U64(27), out=tmp)
    np.bitwise_xor(z, tmp, out=z)
    np.multiply(z, _U64(_MIX2), out=z)
    np.right_shift(z, _U64(31), out=tmp)
    np.bitwise_xor(z, tmp, out=z)
    return z


def _bits_to_uniform(z: np.ndarray) -> np.ndarray:
    # 53 mantissa bits, offset keeps the value strictly inside (0, 1)
    return (z >> _U64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def site_keys(coords: np.ndarray) -> np.ndarray:
    """Hash integer lattice coordinates (…, d) into per-site uint64 keys.

    Keys depend on the absolute coordinates, so overlapping windows of the
    same lattice see the same Brownian motions.
    """
    coords = np.asarray(coords, dtype=np.int64)
    d = coords.shape[-1]
    acc = np.zeros(coords.shape[:-1], dtype=np.uint64)
    for ax in range(d):
        salt = _U64(_AXIS_SALTS[ax % len(_AXIS_SALTS)])
        acc = _mix_array(np.bitwise_xor(acc, coords[..., ax].astype(np.uint64) * salt))
    return acc


@dataclass(frozen=True)
class NoiseSource:
    """Deterministic counter-based source of standard normals.

    The Brownian increment of B over [k*dt, (k+1)*dt] at a site is
    sqrt(dt) * increment(site, k); negative step indices draw from the
    backward channel, which realizes a Brownian motion on the full line.
    """

    seed: int
    replica: int = 0
    dt: float | None = None

    def with_replica(self, replica: int) -> "NoiseSource":
        return replace(self, replica=replica)

    def _stream_key(self, channel: int, step: int, replica: int | None = None) -> int:
        rep = self.replica if replica is None else replica
        k = _mix_int(self.seed & _MASK)
        k = _mix_int(k ^ ((rep * _GOLDEN) & _MASK))
        k = _mix_int(k ^ ((channel * _MIX1) & _MASK))
        return _mix_int(k ^ ((step * _MIX2) & _MASK))

    def _stream_keys(self, channel: int, step: int, replicas: np.ndarray) -> np.ndarray:
        """Vectorized _stream_key over an array of replica ids."""
        base = _mix_int(self.seed & _MASK)
        reps = np.asarray(replicas, dtype=np.uint64) * _U64(_GOLDEN)
        k = _mix_array(np.bitwise_xor(_U64(base), reps))
        k = _mix_array(np.bitwise_xor(k, _U64((channel * _MIX1) & _MASK)))
        return _mix_array(np.bitwise_xor(k, _U64((step * _MIX2) & _MASK)))

    @staticmethod
    def _split_step(step: int) -> tuple[int, int]:
        if step >= 0:
            return CHANNEL_FORWARD, step
        return CHANNEL_BACKWARD, -1 - step

    def raw_normals(
        self,
        keys: np.ndarray,
        step: int,
        channel: int | None = None,
        replicas: np.ndarray | None = None,
        out_bits: np.ndarray | None = None,
    ) -> np.ndarray:
        """Normals for every site key at one step.

        With `replicas` (shape (B,)) the result has shape (B, *keys.shape),
        one independent stream per replica id.
        """
        if channel is None:
            channel, step = self._split_step(step)
        tmp = None
        if out_bits is not None:
            if isinstance(out_bits, tuple):
                out_bits, tmp = out_bits
        if replicas is None:
            base = _U64(self._stream_key(channel, step))
            z = np.bitwise_xor(keys, base, out=out_bits)
            z = _mix_array(z, out=z, tmp=tmp)
        else:
            bases = self._stream_keys(channel, step, replicas)
            bases = bases.reshape((-1,) + (1,) * keys.ndim)
            z = np.bitwise_xor(keys[None, ...], bases, out=out_bits)
            z = _mix_array(z, out=z, tmp=tmp)
        return ndtri(_bits_to_uniform(z))

    def increment(self, site_key: int | np.ndarray, step: int) -> float | np.ndarray:
        """One standard normal per (site, step); scalar for a scalar key."""
        keys = np.asarray(site_key, dtype=np.uint64)
        g = self.raw_normals(np.atleast_1d(keys), step)
        return float(g[0]) if keys.ndim == 0 else g.reshape(keys.shape)

    def field_normals(self, keys: np.ndarray, tag: int = 0,
                      replicas: np.ndarray | None = None) -> np.ndarray:
        """Normals from the initial-condition channel, distinguished by tag."""
        return self.raw_normals(keys, tag, channel=CHANNEL_INIT, replicas=replicas)


def increment(src: NoiseSource, site_key, step: int):
    return src.increment(site_key, step)


def mean_subtracted(src: NoiseSource, keys: np.ndarray, step: int,
                    replicas: np.ndarray | None = None) -> np.ndarray:
    """Per-site increments minus their spatial average (sums to zero)."""
    if keys.size < 2:
        raise ValueError("mean subtraction needs at least two sites")
    g = src.raw_normals(keys, step, replicas=replicas)
    if replicas is None:
        g -= g.mean()
    else:
        axes = tuple(range(1, g.ndim))
        g -= g.mean(axis=axes, keepdims=True)
    return g
