"""Geometric single-path channel model for half-wavelength uniform linear arrays.

The link has exactly one propagation path, described by an angle of departure,
an angle of arrival and a complex fading coefficient.  Angles live on a finite
grid of ``n`` resolvable directions spaced uniformly in the sine domain, which
makes the grid responses mutually orthonormal; beam synthesis downstream
relies on that orthogonality.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "AngleGrid",
    "ChannelRealization",
    "MeasurementNoise",
    "steering_vector",
    "build_channel",
    "measure_block",
    "substream",
]

UNIT_NORM_TOL = 1e-9


def steering_vector(epsilon: float, n: int) -> np.ndarray:
    """Response of an n-element half-wavelength ULA to a plane wave at angle ``epsilon``.

    Element ``m`` carries phase ``pi * m * sin(epsilon)``; the vector is scaled
    by ``1/sqrt(n)`` so it always has unit Euclidean norm.
    """
    if n < 1:
        raise ValueError(f"antenna count must be at least 1, got {n}")
    phases = np.pi * np.sin(epsilon) * np.arange(n)
    return np.exp(1j * phases) / np.sqrt(n)


@dataclass(frozen=True)
class AngleGrid:
    """``n`` resolvable directions with uniform sine spacing.

    Grid point ``i`` sits at ``sin(angle_i) = (2 i - n) / n``, strictly
    increasing from -1.  Uniform spacing in the sine keeps the ``n`` array
    responses orthonormal; a grid uniform in the angle itself would alias
    directions with equal sines onto identical responses and the response
    matrix would lose rank.
    """

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"antenna count must be at least 1, got {self.n}")

    @cached_property
    def sines(self) -> np.ndarray:
        s = (2.0 * np.arange(self.n) - self.n) / self.n
        s.setflags(write=False)
        return s

    @cached_property
    def angles(self) -> np.ndarray:
        a = np.arcsin(self.sines)
        a.setflags(write=False)
        return a

    def angle(self, index: int) -> float:
        """Direction of grid point ``index`` in radians."""
        self._check_index(index)
        return float(self.angles[index])

    def response(self, index: int) -> np.ndarray:
        """Unit-norm array response of grid point ``index``."""
        self._check_index(index)
        return np.exp(1j * np.pi * self.sines[index] * np.arange(self.n)) / np.sqrt(self.n)

    @cached_property
    def response_matrix(self) -> np.ndarray:
        """n-by-n matrix whose column ``i`` is ``response(i)``; orthonormal columns."""
        u = np.exp(1j * np.pi * np.outer(np.arange(self.n), self.sines)) / np.sqrt(self.n)
        u.setflags(write=False)
        return u

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.n:
            raise ValueError(f"grid index {index} outside [0, {self.n})")


@dataclass(frozen=True)
class ChannelRealization:
    """Ground truth for one link: grid indices of the path angles plus the fading gain.

    ``theta`` indexes the angle of arrival (receive side) and ``phi`` the angle
    of departure (transmit side).
    """

    theta: int
    phi: int
    alpha: complex
    n: int

    def __post_init__(self):
        grid = AngleGrid(self.n)
        grid._check_index(self.theta)
        grid._check_index(self.phi)

    @cached_property
    def grid(self) -> AngleGrid:
        return AngleGrid(self.n)

    @cached_property
    def channel_matrix(self) -> np.ndarray:
        """Rank-one n-by-n channel ``alpha * u(theta) u(phi)^H``."""
        h = self.alpha * np.outer(self.grid.response(self.theta),
                                  self.grid.response(self.phi).conj())
        h.setflags(write=False)
        return h


def build_channel(realization: ChannelRealization) -> np.ndarray:
    """Channel matrix of a realization; rank one with Frobenius norm ``|alpha|``."""
    return realization.channel_matrix


@dataclass
class MeasurementNoise:
    """Circularly-symmetric complex AWGN source with per-sample variance ``n0``.

    Real and imaginary parts each carry variance ``n0 / 2``.  The stream is
    fully determined by ``seed``, so a fixed seed reproduces every draw.
    """

    n0: float
    seed: int | np.random.SeedSequence | np.random.Generator = 0

    def __post_init__(self):
        if self.n0 < 0:
            raise ValueError(f"noise variance must be nonnegative, got {self.n0}")
        self._rng = np.random.default_rng(self.seed)

    def draw(self, shape) -> np.ndarray:
        if self.n0 == 0:
            return np.zeros(shape, dtype=complex)
        parts = self._rng.normal(scale=np.sqrt(self.n0 / 2), size=(2, *shape))
        return parts[0] + 1j * parts[1]


def measure_block(
    h: np.ndarray,
    f: np.ndarray,
    w: np.ndarray,
    power: float,
    pilot: complex,
    noise: MeasurementNoise,
) -> np.ndarray:
    """One stage of pilot sounding: every combining column observes every beam.

    Returns the m-by-m block ``sqrt(power) * w^H h f * pilot + q`` where each
    of the m^2 slots receives an independent noise sample of variance
    ``noise.n0`` (a unit-norm combiner leaves the per-sample variance
    unchanged).  Beamforming columns ``f`` and combining columns ``w`` must be
    unit norm and the pilot must have unit magnitude.
    """
    n = h.shape[0]
    if h.shape != (n, n):
        raise ValueError(f"channel matrix must be square, got {h.shape}")
    if f.ndim != 2 or w.ndim != 2 or f.shape[0] != n or w.shape[0] != n:
        raise ValueError(
            f"beam matrices must have {n} rows, got {f.shape} and {w.shape}")
    if w.shape[1] != f.shape[1]:
        raise ValueError(
            f"beamforming and combining banks disagree: {f.shape[1]} vs {w.shape[1]} columns")
    for name, mat in (("beamforming", f), ("combining", w)):
        norms_sq = np.einsum("ij,ij->j", mat.conj(), mat).real
        # |norm^2 - 1| <= ~2 |norm - 1| near 1, so the squared check keeps the tolerance
        if np.any(np.abs(norms_sq - 1.0) > 2.0 * UNIT_NORM_TOL):
            raise ValueError(f"{name} columns must be unit norm (max squared-norm "
                             f"deviation {np.abs(norms_sq - 1.0).max():.3e})")
    if abs(abs(pilot) - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"pilot symbol must have unit magnitude, got |x| = {abs(pilot)}")
    if power <= 0:
        raise ValueError(f"transmit power must be positive, got {power}")
    signal = np.sqrt(power) * (w.conj().T @ h @ f) * pilot
    return signal + noise.draw(signal.shape)


def substream(master_seed: int, *key: int) -> np.random.SeedSequence:
    """Independent child stream for a ``(master seed, key...)`` tuple.

    Children with distinct keys are statistically independent and do not
    depend on creation order, so per-trial work can run in any order or in
    parallel without changing any result.
    """
    return np.random.SeedSequence(master_seed, spawn_key=tuple(key))
