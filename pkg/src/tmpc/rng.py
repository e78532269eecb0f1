"""Counter-based uniform draws.

Entry ``(i, j)`` of a draw depends only on ``(seed, stream, i, j)``, so a
batch of N samples is a prefix of any larger batch and results do not depend
on how samples are split across workers.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def stream_key(seed: int, stream: int = 0) -> np.uint64:
    """Hash (seed, stream) into one 64-bit key."""
    a = _mix(np.array([int(seed) & _MASK64], dtype=np.uint64))
    b = _mix(np.array([(int(stream) * 0x632BE59BD9B4E019) & _MASK64], dtype=np.uint64) ^ a)
    return b[0]


def counter_uniform(seed: int, stream: int, n_rows: int, n_cols: int, low=0.0, high=1.0):
    """Uniform floats in [low, high) of shape (n_rows, n_cols)."""
    key = stream_key(seed, stream)
    counter = np.arange(n_rows * n_cols, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix(key + (counter + np.uint64(1)) * _GOLDEN)
    u = (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return (low + (high - low) * u).reshape(n_rows, n_cols)
