"""Splittable 128-bit keys.

A key is a ``uint64`` array whose last axis has length 2. Arrays of keys with
leading axes are handled element-wise, so a whole grid of lanes can derive
children or draw numbers in one vectorized call.

Child derivation (``fold_in``) is a keyed mix of both 64-bit words with the
index, built from the SplitMix64 finalizer::

    a  = mix64(k0 ^ mix64(i + 0x9E3779B97F4A7C15))
    b  = mix64(k1 ^ mix64(a + i * 0xD1B54A32D192ED03 + 1))
    k' = (mix64(a ^ rotl(b, 29)), b)

It depends only on ``(key, index)``, never on call order. Bulk streams go
through numpy's Philox generator keyed with the full 128 bits.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_ODD = np.uint64(0xD1B54A32D192ED03)
_ROOT = (0x243F6A8885A308D3, 0x13198A2E03707344)
_UNIFORM_DOMAIN = np.uint64(0xA4093822299F31D0)
_INV53 = 1.0 / 9007199254740992.0


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _rotl(z: np.ndarray, r: int) -> np.ndarray:
    return (z << np.uint64(r)) | (z >> np.uint64(64 - r))


def as_key(key) -> np.ndarray:
    key = np.asarray(key, dtype=np.uint64)
    if key.shape[-1:] != (2,):
        raise ValueError(f"key must have trailing axis of length 2, got shape {key.shape}")
    return key


def key_from_seed(seed: int) -> np.ndarray:
    """Root key for an integer seed."""
    return fold_in(np.array(_ROOT, dtype=np.uint64), int(seed) & 0xFFFFFFFFFFFFFFFF)


def fold_in(key, index) -> np.ndarray:
    """Child key of ``key`` at ``index``; broadcasts over both arguments."""
    key = as_key(key)
    idx = np.asarray(index)
    if idx.dtype.kind == "i":
        idx = idx.astype(np.int64).view(np.uint64)
    idx = idx.astype(np.uint64, copy=False)
    with np.errstate(over="ignore"):
        k0 = np.atleast_1d(key[..., 0])
        k1 = np.atleast_1d(key[..., 1])
        i = np.atleast_1d(idx)
        a = _mix64(k0 ^ _mix64(i + _GOLDEN))
        b = _mix64(k1 ^ _mix64(a + i * _ODD + np.uint64(1)))
        c = _mix64(a ^ _rotl(b, 29))
        out = np.stack(np.broadcast_arrays(c, b), axis=-1)
    shape = np.broadcast_shapes(key.shape[:-1], idx.shape)
    return out.reshape(shape + (2,))


def split(key, n: int) -> np.ndarray:
    """``n`` children of a single key; ``split(k, n)[i] == fold_in(k, i)``."""
    key = as_key(key)
    if key.ndim != 1:
        raise ValueError("split expects a single key")
    return fold_in(key[None, :], np.arange(n, dtype=np.int64))


def key_to_int(key) -> int:
    key = as_key(key)
    return int(key[0]) | (int(key[1]) << 64)


def generator(key) -> np.random.Generator:
    """Philox-backed generator for bulk draws from a single key."""
    key = as_key(key)
    return np.random.Generator(np.random.Philox(key=key_to_int(key)))


def random_bits(keys) -> np.ndarray:
    """One 64-bit word per key."""
    keys = as_key(keys)
    with np.errstate(over="ignore"):
        k0 = np.atleast_1d(keys[..., 0])
        k1 = np.atleast_1d(keys[..., 1])
        out = _mix64(k0 ^ _mix64(k1 ^ _UNIFORM_DOMAIN))
    return out.reshape(keys.shape[:-1])


def uniform(keys) -> np.ndarray:
    """One float in [0, 1) per key, 53 bits of resolution."""
    return (random_bits(keys) >> np.uint64(11)).astype(np.float64) * _INV53


def normal(keys) -> np.ndarray:
    """One standard normal per key (Box-Muller on two derived uniforms)."""
    keys = as_key(keys)
    u1 = 1.0 - uniform(fold_in(keys, 0))
    u2 = uniform(fold_in(keys, 1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
