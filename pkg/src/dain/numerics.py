"""Dense float64 kernels, activations, and a portable seeded RNG.

Conventions used across the package:

* matrices are 2-D C-contiguous ``float64`` arrays, row-major;
* vectors are 1-D ``float64`` arrays;
* all public operations keep outputs free of NaN/Inf for finite inputs.

Random numbers never come from the platform default generator. The
generator here is SplitMix64: a 64-bit counter advanced by the odd
constant 0x9E3779B97F4A7C15, with the standard two-round multiply-xor
finalizer applied to every counter value. The sequence is a pure
function of ``(seed, stream_id)`` and is identical on every platform,
which is what makes training runs and splits reproducible bit for bit.
"""

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX_MUL1 = 0xBF58476D1CE4E5B9
_MIX_MUL2 = 0x94D049BB133111EB

# Conventional stream ids so one master seed can drive every stage of a
# run without the stages sharing a sequence.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_SPLIT = 3
STREAM_GRADCHECK = 4

_SIGMOID_LO = math.nextafter(0.0, 1.0)
_SIGMOID_HI = math.nextafter(1.0, 0.0)


def _mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit value."""
    z = ((z ^ (z >> 30)) * _MIX_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_MUL2) & _MASK64
    return z ^ (z >> 31)


class SeededRng:
    """SplitMix64 stream addressed by ``(seed, stream_id)``.

    Streams with the same seed but different stream ids start from
    unrelated counters (the seed and stream id are scrambled through the
    finalizer before mixing), so child streams spawned from one master
    seed can be used concurrently without coordination. A single stream
    instance is not thread-safe; give each worker its own child.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed & _MASK64
        self.stream_id = stream_id & _MASK64
        self._state = _mix64(_mix64(self.seed) ^ ((self.stream_id * _GAMMA + 1) & _MASK64))

    def child(self, stream_id: int) -> "SeededRng":
        """Derive an independent stream from the same master seed."""
        return SeededRng(self.seed, _mix64((self.stream_id * _GAMMA) ^ (stream_id & _MASK64)))

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def next_u64_array(self, n: int) -> np.ndarray:
        """Vectorized draw of ``n`` 64-bit values, identical to n calls
        of :meth:`next_u64`."""
        if n < 0:
            raise ValueError(f"cannot draw {n} values")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + steps * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_MUL1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_MUL2)
        z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GAMMA) & _MASK64
        return z

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def random_array(self, n: int) -> np.ndarray:
        return (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"randrange bound must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n).

        Implemented as an argsort of fresh 64-bit keys; key collisions
        (probability about n^2 / 2^64) fall back to index order, so the
        result is deterministic in every case.
        """
        return np.argsort(self.next_u64_array(n), kind="stable")

    def sample_without_replacement(self, pool: np.ndarray, k: int) -> np.ndarray:
        """Uniform k-subset of ``pool``, order randomized."""
        if k > pool.shape[0]:
            raise ValueError(f"cannot sample {k} of {pool.shape[0]} candidates")
        keys = self.next_u64_array(pool.shape[0])
        return pool[np.argsort(keys, kind="stable")[:k]]


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product ``m @ v`` with explicit dimension checks."""
    if m.ndim != 2 or v.ndim != 1:
        raise ValueError(f"matvec expects a matrix and a vector, got shapes {m.shape} and {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise ValueError(
            f"matvec dimension mismatch: matrix is {m.shape[0]}x{m.shape[1]}, "
            f"vector has length {v.shape[0]}"
        )
    return m @ v


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def relu_backward(v_pre: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Upstream gradient masked by the ReLU derivative.

    The subgradient at exactly 0 is taken to be 0.
    """
    if v_pre.shape != upstream.shape:
        raise ValueError(
            f"relu_backward length mismatch: pre-activation has shape {v_pre.shape}, "
            f"upstream has shape {upstream.shape}"
        )
    return np.where(v_pre > 0.0, upstream, 0.0)


def sigmoid(x: float) -> float:
    """Logistic function, overflow-safe, with output clamped into (0, 1).

    The positive and negative branches each evaluate exp on a
    non-positive argument, so no finite input overflows. Saturated
    results are nudged to the nearest float64 inside the open interval
    so downstream code can rely on 0 < result < 1.
    """
    if not math.isfinite(x):
        raise ValueError(f"sigmoid expects a finite input, got {x}")
    if x >= 0.0:
        out = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        out = e / (1.0 + e)
    return min(max(out, _SIGMOID_LO), _SIGMOID_HI)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Elementwise :func:`sigmoid`, bit-identical to the scalar path.

    libm and numpy's vectorized exp disagree in the last ulp for some
    inputs, so this goes through the scalar function instead of np.exp;
    sigmoid cost is negligible next to the surrounding matmuls.
    """
    return np.array([sigmoid(float(v)) for v in x], dtype=np.float64)


def glorot_uniform(rng: SeededRng, fan_in: int, fan_out: int) -> np.ndarray:
    """(fan_out, fan_in) matrix with entries uniform in [-b, b],
    b = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"glorot_uniform needs positive fans, got fan_in={fan_in}, fan_out={fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    u = rng.random_array(fan_out * fan_in)
    return (-bound + 2.0 * bound * u).reshape(fan_out, fan_in)


def assert_all_finite(a: np.ndarray, what: str) -> None:
    """Raise if the array carries NaN or Inf entries."""
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")
