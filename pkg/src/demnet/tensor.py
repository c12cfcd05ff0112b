"""Array construction helpers and the seeded random stream everything else uses.

Tensors are plain numpy arrays: row-major, float32 by default, float64 on
request for gradient checking. The helpers here only add the validation the
rest of the stack relies on (no zero/negative dimensions, explicit data must
match the shape product).

Random numbers come from a counter-based SplitMix64 stream so that the same
seed produces the same bits on every platform and every run. The generator is
small enough to specify completely:

    state(i)  = (seed + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64
    mix(z):     z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9  (mod 2**64)
                z ^= z >> 27;  z *= 0x94D049BB133111EB  (mod 2**64)
                z ^= z >> 31
    output(i) = mix(state(i))                    # i = 0, 1, 2, ...
    uniform(i)= (output(i) >> 11) * 2.0**-53     # float64 in [0, 1)

`RngState` is just (seed, position); drawing `count` values consumes outputs
position .. position+count-1 and advances the position. Because the state is
a pure function of (seed, index), draws are vectorised and independent of
batching: asking for 10 values twice equals asking for 20 once.

Derived streams: `derive_seed(root, salt)` returns `mix(root + salt * GAMMA)`,
i.e. the salt-th raw output of the root stream, which is the standard way to
spawn independent SplitMix64 streams. Pipeline stages use the fixed offsets in
`SEED_OFFSETS` (plain addition, so a root seed of 42 hands the SMOTE stage the
literal seed 42).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Tensor = np.ndarray

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64

# Stage offsets added to the root seed by the pipeline. SMOTE keeps the root
# seed unchanged (offset 0) so the documented default of 42 reaches it as-is.
SEED_OFFSETS = {"smote": 0, "split": 1, "init": 2, "shuffle": 3, "dropout": 4}


def stage_seed(root: int, stage: str) -> int:
    """Seed for a named pipeline stage: root + SEED_OFFSETS[stage] mod 2**64."""
    if stage not in SEED_OFFSETS:
        raise ValueError(f"unknown seed stage {stage!r}")
    return (int(root) + SEED_OFFSETS[stage]) % 2**64


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def derive_seed(root: int, salt: int) -> int:
    """Independent child seed: the salt-th raw SplitMix64 output of `root`."""
    z = (int(root) + int(salt) * int(_GAMMA)) % 2**64
    return int(_mix(np.array([z], dtype=np.uint64))[0])


@dataclass
class RngState:
    """Position-addressable SplitMix64 stream. Single-owner mutable: do not
    share one instance across threads; `clone()` for a lookahead copy."""

    seed: int
    position: int = field(default=0)

    def __post_init__(self):
        self.seed = int(self.seed) % 2**64

    def uniform(self, count: int) -> np.ndarray:
        """Next `count` float64 values in [0, 1); advances the position."""
        if count < 0:
            raise ValueError(f"count must be >= 0, got {count}")
        if count == 0:
            return np.empty(0, dtype=np.float64)
        idx = np.arange(self.position + 1, self.position + count + 1, dtype=np.uint64)
        z = _mix(_U64(self.seed) + idx * _GAMMA)
        self.position += count
        return (z >> _U64(11)).astype(np.float64) * 2.0**-53

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0,
                      dtype=np.float32) -> Tensor:
        """Tensor of uniforms in [lo, hi), computed in float64 then cast."""
        shape = validate_shape(shape)
        n = int(np.prod(shape))
        u = self.uniform(n)
        return (lo + (hi - lo) * u).reshape(shape).astype(dtype)

    def integers_below(self, n: int, count: int) -> np.ndarray:
        """`count` integers uniform over [0, n) as floor(u * n)."""
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        return np.minimum((self.uniform(count) * n).astype(np.int64), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n): for i = n-1 .. 1 swap i with
        j = floor(u * (i + 1)), drawing one uniform per step."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def clone(self) -> "RngState":
        return RngState(self.seed, self.position)


def validate_shape(shape) -> tuple[int, ...]:
    """Normalise and check a shape: non-empty, every dimension >= 1."""
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise ValueError("shape must have at least one dimension")
    for axis, d in enumerate(dims):
        if d < 1:
            raise ValueError(f"dimension {axis} must be >= 1, got {d}")
    return dims


def full(shape, value: float, dtype=np.float32) -> Tensor:
    """Tensor of the given shape filled with one value."""
    return np.full(validate_shape(shape), value, dtype=dtype)


def zeros(shape, dtype=np.float32) -> Tensor:
    return full(shape, 0.0, dtype=dtype)


def from_flat(shape, data, dtype=np.float32) -> Tensor:
    """Tensor from an explicit row-major sequence; length must match shape."""
    shape = validate_shape(shape)
    flat = np.asarray(data, dtype=dtype).reshape(-1)
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise ValueError(
            f"data length {flat.size} does not match shape {shape} "
            f"(expected {expected})")
    return flat.reshape(shape)


def uniform(shape, rng: RngState, lo: float = 0.0, hi: float = 1.0,
            dtype=np.float32) -> Tensor:
    """Seeded-uniform tensor; consumes the stream deterministically."""
    return rng.uniform_array(shape, lo, hi, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m,k] and b [k,n] with an explicit shape check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def he_uniform(shape, fan_in: int, rng: RngState, dtype=np.float32) -> Tensor:
    """He-style fan-in init: uniform in [-sqrt(6/fan_in), sqrt(6/fan_in))."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    limit = float(np.sqrt(6.0 / fan_in))
    return rng.uniform_array(shape, -limit, limit, dtype=dtype)
