"""
SNR-targeted Gaussian and Poisson corruption.

Both models are calibrated per vector: given a target SNR in dB,
the Gaussian standard deviation is

    σ_gsn = ‖y‖ / √N · 10^(-SNR/20)

with ``N`` the length of the corrupted vector, and the Poisson total
intensity is

    σ_psn = ‖y‖₁² / ‖y‖² · 10^(SNR/10),

each entry being drawn as ``Poisson(σ_psn · y_i / ‖y‖₁)``. Poisson outputs
are left as counts.
"""
from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from .enums import NoiseKind, to_enum
from .errors import DegenerateInput, InvalidArgument, ShapeMismatch
from .utils import chunked, derive_rng, parallel_map

if TYPE_CHECKING:
    from typing_extensions import Self

    from .phantom import PatternStack

__all__ = (
    'NoiseSpec',
    'measure_snr',
    'gaussian_sigma',
    'add_gaussian_noise',
    'poisson_scale',
    'poisson_expected',
    'add_poisson_noise',
    'corrupt',
    'corrupt_stack',
)

log = logging.getLogger(__name__)

class NoiseSpec:
    """One noise arm of an experiment.

    Attributes
    -----------
    kind: :class:`NoiseKind`
        The noise model.
    target_snr_db: :class:`float`
        Desired SNR in dB. Ignored for :attr:`NoiseKind.none`.
    seed: :class:`int`
        Base seed. Patterns of a stack use streams derived from it and
        their probe index.
    """

    __slots__ = ('kind', 'target_snr_db', 'seed')

    def __init__(self, kind: NoiseKind = NoiseKind.none, target_snr_db: float = math.inf, seed: int = 0):
        self.kind = to_enum(NoiseKind, kind)
        self.target_snr_db = float(target_snr_db)
        self.seed = int(seed)
        if self.kind is not NoiseKind.none and math.isnan(self.target_snr_db):
            raise InvalidArgument('target SNR must be a number')

    def __repr__(self) -> str:
        return f'<NoiseSpec kind={self.kind} target_snr_db={self.target_snr_db} seed={self.seed}>'

    def __eq__(self, other) -> bool:
        return isinstance(other, NoiseSpec) and (self.kind, self.target_snr_db, self.seed) == (other.kind, other.target_snr_db, other.seed)

    def __hash__(self) -> int:
        return hash((self.kind, self.target_snr_db, self.seed))

    def with_seed(self, seed: int) -> Self:
        return type(self)(self.kind, self.target_snr_db, seed)

def _vector(y) -> np.ndarray:
    return np.asarray(y, dtype=np.float64).reshape(-1)

def measure_snr(reference, corrupted) -> float:
    """``20·log10(‖u‖ / ‖u − v‖)`` in dB.

    Returns :data:`math.inf` when the vectors are identical.

    Raises
    -------
    ShapeMismatch
        The vectors differ in length.
    DegenerateInput
        The reference is the zero vector.
    """
    u, v = _vector(reference), _vector(corrupted)
    if u.size != v.size:
        raise ShapeMismatch('SNR operands differ in length', expected=u.size, received=v.size)
    signal = float(np.linalg.norm(u))
    if signal == 0.0:
        raise DegenerateInput('SNR is undefined for a zero reference')
    error = float(np.linalg.norm(u - v))
    if error == 0.0:
        return math.inf
    return 20.0 * math.log10(signal / error)

def gaussian_sigma(y, target_snr_db: float) -> float:
    """The per-entry standard deviation reaching ``target_snr_db`` on ``y`` in expectation."""
    y = _vector(y)
    norm = float(np.linalg.norm(y))
    if norm == 0.0:
        raise DegenerateInput('cannot calibrate Gaussian noise on a zero vector')
    return norm / math.sqrt(y.size) * 10.0 ** (-target_snr_db / 20.0)

def add_gaussian_noise(y, spec: NoiseSpec, *, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Return ``y + η`` with ``η`` i.i.d. zero-mean Gaussian of std :func:`gaussian_sigma`.

    ``rng`` overrides the generator seeded from ``spec.seed``.
    """
    if spec.kind is not NoiseKind.gaussian:
        raise InvalidArgument(f'expected a gaussian noise spec, got {spec.kind}')
    y = _vector(y)
    sigma = gaussian_sigma(y, spec.target_snr_db)
    if rng is None:
        rng = derive_rng(spec.seed)
    if sigma == 0.0:
        return y.copy()
    return y + rng.normal(0.0, sigma, size=y.size)

def _check_intensities(y: np.ndarray) -> float:
    if np.any(y < 0):
        raise DegenerateInput('Poisson noise needs nonnegative intensities')
    total = float(y.sum())
    if total == 0.0:
        raise DegenerateInput('cannot calibrate Poisson noise on a zero vector')
    return total

def poisson_scale(y, target_snr_db: float) -> float:
    """``σ_psn``, the total expected count reaching ``target_snr_db`` on ``y``.

    The value is invariant to rescaling ``y``.
    """
    y = _vector(y)
    l1 = _check_intensities(y)
    return l1 * l1 / float(np.dot(y, y)) * 10.0 ** (target_snr_db / 10.0)

def poisson_expected(y, target_snr_db: float) -> np.ndarray:
    """The expected counts ``σ_psn · y / ‖y‖₁``; the reference for measuring Poisson SNR."""
    y = _vector(y)
    l1 = _check_intensities(y)
    return poisson_scale(y, target_snr_db) * y / l1

def add_poisson_noise(y, spec: NoiseSpec, *, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw counts ``Poisson(σ_psn · y_i / ‖y‖₁)`` for every entry of ``y``."""
    if spec.kind is not NoiseKind.poisson:
        raise InvalidArgument(f'expected a poisson noise spec, got {spec.kind}')
    lam = poisson_expected(y, spec.target_snr_db)
    if rng is None:
        rng = derive_rng(spec.seed)
    return rng.poisson(lam).astype(np.float64)

def corrupt(y, spec: NoiseSpec, *, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, float]:
    """Corrupt ``y`` according to ``spec``.

    Returns the noisy vector and its measured SNR: against ``y`` for
    Gaussian noise, against the expected counts for Poisson noise and
    :data:`math.inf` without noise.
    """
    y = _vector(y)
    if spec.kind is NoiseKind.gaussian:
        noisy = add_gaussian_noise(y, spec, rng=rng)
        return noisy, measure_snr(y, noisy)
    if spec.kind is NoiseKind.poisson:
        noisy = add_poisson_noise(y, spec, rng=rng)
        return noisy, measure_snr(poisson_expected(y, spec.target_snr_db), noisy)
    return y.copy(), math.inf

def corrupt_stack(stack: PatternStack, spec: NoiseSpec) -> Tuple[PatternStack, float]:
    """Corrupt every pattern of ``stack``.

    Pattern ``l`` uses the stream derived from ``(spec.seed, l)``, so the
    result does not depend on the worker count or on which other
    positions were sampled.

    Returns the corrupted stack and the mean measured SNR in dB
    (:data:`math.inf` for a noiseless spec or an empty stack).
    """
    if spec.kind is NoiseKind.none or len(stack) == 0:
        return stack, math.inf

    sampled = stack.mask.sampled
    out = np.empty(stack.data.shape, dtype=stack.data.dtype)
    snrs = np.empty(len(stack))

    def work(rows: slice) -> None:
        for i in range(rows.start, rows.stop):
            noisy, snr = corrupt(stack.data[i], spec, rng=derive_rng(spec.seed, int(sampled[i])))
            out[i] = noisy
            snrs[i] = snr

    parallel_map(work, list(chunked(len(stack), 256)))
    finite = snrs[np.isfinite(snrs)]
    mean_snr = float(finite.mean()) if finite.size else math.inf
    log.debug(f'Corrupted {len(stack)} patterns with {spec}; mean measured SNR {mean_snr:.3f} dB.')
    return stack.with_data(out), mean_snr
