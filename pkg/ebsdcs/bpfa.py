"""
Patch-based beta-process factor analysis (BPFA) for map inpainting.

A map is cut into every overlapping ``H_op × W_op`` patch. Each patch
``x_p`` is modelled as ``D (u_p ⊙ w_p) + n_p`` with

    d_k ~ N(0, γ_d⁻¹ I)        w_pk ~ N(0, γ_w⁻¹)        n_p ~ N(0, γ_n⁻¹ I)
    u_pk ~ Bernoulli(π_k)      π_k ~ Beta(a/K, b(K-1)/K)

and only the observed entries ``Ω_p`` of each patch enter the likelihood.
Fitting is online EM on mini-batches of patches; no step raises the
penalised negative log posterior

    J = γ_n/2 · SSR - n_obs/2 · log γ_n
        + Σ_active (γ_w w²/2 - ½ log(γ_w / 2π))
        + γ_d/2 · ‖D‖²
        - Σ_k [(a/K + S_k) log π_k + (b(K-1)/K + N - S_k) log(1 - π_k)]

where ``S_k`` counts the patches of the batch using atom ``k``. Atoms are
kept at unit norm, which fixes the scale shared by ``d_k`` and ``w_pk`` and
makes the ``γ_d`` term a constant. Codes are grown greedily up to ``s``
atoms per patch and replace the previous code only where they cost less;
learned atoms replace the old ones only where they lower ``J``. With
``π_k`` clipped to ``[1/K, ½]`` and ``γ_n`` to at least the inverse data
variance, ``J`` never increases within a batch.

Multi-channel maps are coded with channel-stacked patches: entry
``(c, dy, dx)`` of a patch sits at ``(c·H_op + dy)·W_op + dx``.
"""
from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .abc import Map
from .enums import InitScheme, MapKind, to_enum
from .errors import DegenerateInput, InvalidArgument, ShapeMismatch
from .grid import ProbeGrid, SampleMask
from .maps import RgbMap, ScalarMap, denormalize_map, normalize_map
from .sampling import effective_rate
from .utils import derive_rng

if TYPE_CHECKING:
    from typing_extensions import Self

    from .types.config import BpfaParams as BpfaParamsPayload

__all__ = (
    'PATCH_SHAPES',
    'PatchGeometry',
    'PatchSet',
    'BpfaParams',
    'BpfaModel',
    'select_patch_shape',
    'extract_patches',
    'bpfa_fit',
    'bpfa_objective',
    'reconstruct',
    'inpaint',
)

log = logging.getLogger(__name__)

# Sampling rate -> (band contrast, IPF) patch side.
PATCH_SHAPES = {
    0.01: ((27, 27), (23, 23)),
    0.05: ((16, 16), (14, 14)),
    0.10: ((10, 10), (13, 13)),
    0.15: ((8, 8), (11, 11)),
    0.20: ((8, 8), (11, 11)),
    0.25: ((6, 6), (9, 9)),
}

_PRECISION_MAX = 1e10
_PRECISION_MIN = 1e-12
# Keeps ½·log(γ_w/2π) <= 0, so a weight is only switched on for a real gain.
_GAMMA_W_MAX = 2 * math.pi

def select_patch_shape(rate: float, map_kind: Union[MapKind, str]) -> Tuple[int, int]:
    """The tabulated patch shape for the listed rate nearest to ``rate``.

    Ties go to the smaller listed rate, which has the larger patch.

    Raises
    -------
    InvalidArgument
        ``rate`` is not in ``(0, 1]``.
    """
    if not 0.0 < rate <= 1.0:
        raise InvalidArgument(f'sampling rate must lie in (0, 1], not {rate}')
    map_kind = to_enum(MapKind, map_kind)
    nearest = min(PATCH_SHAPES, key=lambda listed: (abs(listed - rate), listed))
    band_contrast, ipf = PATCH_SHAPES[nearest]
    return ipf if map_kind is MapKind.ipf else band_contrast

class PatchGeometry:
    """How a map is cut into overlapping patches.

    Attributes
    -----------
    patch_h: :class:`int`
        Patch rows ``H_op``.
    patch_w: :class:`int`
        Patch columns ``W_op``.
    channels: :class:`int`
        1 for scalar maps, 3 for RGB maps.
    map_h: :class:`int`
        Map rows ``H_p``.
    map_w: :class:`int`
        Map columns ``W_p``.
    """

    __slots__ = ('patch_h', 'patch_w', 'channels', 'map_h', 'map_w')

    def __init__(self, patch_h: int, patch_w: int, channels: int, map_h: int, map_w: int):
        if patch_h < 1 or patch_w < 1:
            raise InvalidArgument(f'patches must be at least 1x1, not {patch_h}x{patch_w}')
        if channels not in (1, 3):
            raise InvalidArgument(f'maps have 1 or 3 channels, not {channels}')
        if patch_h > map_h or patch_w > map_w:
            raise ShapeMismatch('patch does not fit inside the map', expected=(map_h, map_w), received=(patch_h, patch_w))
        self.patch_h = int(patch_h)
        self.patch_w = int(patch_w)
        self.channels = int(channels)
        self.map_h = int(map_h)
        self.map_w = int(map_w)

    @classmethod
    def for_map(cls, map: Map, patch_shape: Tuple[int, int]) -> Self:
        return cls(patch_shape[0], patch_shape[1], map.n_channels, *map.grid.shape)

    def __repr__(self) -> str:
        return (
            f'<PatchGeometry patch={self.patch_h}x{self.patch_w}x{self.channels} '
            f'map={self.map_h}x{self.map_w} n_patches={self.n_patches}>'
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, PatchGeometry) and self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def _key(self):
        return (self.patch_h, self.patch_w, self.channels, self.map_h, self.map_w)

    @property
    def patch_len(self) -> int:
        """``N_op = H_op · W_op · channels``."""
        return self.patch_h * self.patch_w * self.channels

    @property
    def rows(self) -> int:
        return self.map_h - self.patch_h + 1

    @property
    def cols(self) -> int:
        return self.map_w - self.patch_w + 1

    @property
    def n_patches(self) -> int:
        """``(H_p - H_op + 1) · (W_p - W_op + 1)``."""
        return self.rows * self.cols

class PatchSet:
    """The observed entries of every patch of a map.

    Attributes
    -----------
    geometry: :class:`PatchGeometry`
        How the patches were cut.
    values: :class:`numpy.ndarray`
        ``(n_patches, N_op)`` values, 0 where unobserved.
    observed: :class:`numpy.ndarray`
        ``(n_patches, N_op)`` boolean, the ``Ω_p`` of every patch.
    """

    __slots__ = ('geometry', 'values', 'observed')

    def __init__(self, geometry: PatchGeometry, values: np.ndarray, observed: np.ndarray):
        shape = (geometry.n_patches, geometry.patch_len)
        values = np.asarray(values, dtype=np.float64)
        observed = np.asarray(observed, dtype=bool)
        if values.shape != shape or observed.shape != shape:
            raise ShapeMismatch('patch arrays do not match the geometry', expected=shape, received=(values.shape, observed.shape))
        if not np.all(np.isfinite(values)):
            raise InvalidArgument('patch values must be finite')
        values = np.where(observed, values, 0.0)
        values.setflags(write=False)
        observed.setflags(write=False)
        self.geometry = geometry
        self.values = values
        self.observed = observed

    def __repr__(self) -> str:
        return f'<PatchSet {self.geometry!r} observed={int(self.observed.sum())}>'

    def __len__(self) -> int:
        return self.geometry.n_patches

    def omega(self, p: int) -> np.ndarray:
        """``Ω_p``: the observed entry indices of patch ``p``."""
        return np.flatnonzero(self.observed[p])

def _patch_matrix(image: np.ndarray, geom: PatchGeometry) -> np.ndarray:
    # (C, H, W) -> (C, rows, cols, h, w) -> (rows·cols, C·h·w)
    windows = sliding_window_view(image, (geom.patch_h, geom.patch_w), axis=(1, 2))
    return windows.transpose(1, 2, 0, 3, 4).reshape(geom.n_patches, geom.patch_len)

def extract_patches(map: Map, mask: SampleMask, geom: PatchGeometry) -> PatchSet:
    """Cut every overlapping patch of ``map``, row-major by top-left corner.

    ``Ω_p`` holds the entries of patch ``p`` whose probe position is sampled,
    in every channel.

    Raises
    -------
    ShapeMismatch
        The geometry does not match the map, or the patch is larger than it.
    """
    map._require_grid(mask, 'mask')
    if (geom.map_h, geom.map_w, geom.channels) != (*map.grid.shape, map.n_channels):
        raise ShapeMismatch(
            'patch geometry belongs to another map',
            expected=(*map.grid.shape, map.n_channels),
            received=(geom.map_h, geom.map_w, geom.channels),
        )

    image = map.data.reshape(map.n_channels, *map.grid.shape)
    selected = np.broadcast_to(mask.as_boolean().reshape(1, *map.grid.shape), image.shape)
    return PatchSet(geom, _patch_matrix(image, geom), _patch_matrix(selected, geom))

class BpfaParams:
    """Settings of :func:`bpfa_fit`.

    Parameters
    -----------
    K: :class:`int`
        Dictionary atoms. Defaults to 25.
    s: :class:`int`
        Most atoms a patch may use. Defaults to 4.
    batch_size: :class:`int`
        Patches per EM batch. Defaults to 1024.
    epochs: :class:`int`
        Passes over the patches. Defaults to 1.
    em_iters_per_batch: :class:`int`
        EM iterations on each batch. Defaults to 3.
    seed: :class:`int`
        Seed of the initialisation, the batch order and the atom order.
    init: :class:`InitScheme`
        How atoms start. Defaults to :attr:`InitScheme.gaussian`.
    a: :class:`float`
        First Beta hyperparameter. Defaults to 1.
    b: :class:`float`
        Second Beta hyperparameter. Defaults to 1.
    """

    __slots__ = ('K', 's', 'batch_size', 'epochs', 'em_iters_per_batch', 'seed', 'init', 'a', 'b')

    def __init__(
        self,
        *,
        K: int = 25,
        s: int = 4,
        batch_size: int = 1024,
        epochs: int = 1,
        em_iters_per_batch: int = 3,
        seed: int = 0,
        init: Union[InitScheme, str] = InitScheme.gaussian,
        a: float = 1.0,
        b: float = 1.0,
    ):
        if K < 1 or s < 1 or batch_size < 1:
            raise InvalidArgument(f'K, s and batch_size must be at least 1, got K={K} s={s} batch_size={batch_size}')
        if epochs < 1 or em_iters_per_batch < 1:
            raise InvalidArgument('epochs and em_iters_per_batch must be at least 1')
        if a <= 0 or b <= 0:
            raise InvalidArgument(f'Beta hyperparameters must be positive, got a={a} b={b}')
        self.K = int(K)
        self.s = int(s)
        self.batch_size = int(batch_size)
        self.epochs = int(epochs)
        self.em_iters_per_batch = int(em_iters_per_batch)
        self.seed = int(seed)
        self.init = to_enum(InitScheme, init)
        self.a = float(a)
        self.b = float(b)

    def __repr__(self) -> str:
        return (
            f'<BpfaParams K={self.K} s={self.s} batch_size={self.batch_size} epochs={self.epochs} '
            f'em_iters_per_batch={self.em_iters_per_batch} seed={self.seed} init={self.init}>'
        )

    def with_seed(self, seed: int) -> Self:
        data = self.to_dict()
        data['seed'] = seed
        return type(self).from_dict(data)

    def to_dict(self) -> BpfaParamsPayload:
        data = {name: getattr(self, name) for name in self.__slots__}
        data['init'] = str(self.init)
        return data  # type: ignore

    @classmethod
    def from_dict(cls, data: BpfaParamsPayload) -> Self:
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise InvalidArgument(f'unknown BPFA parameters: {", ".join(sorted(unknown))}')
        return cls(**data)

class BpfaModel:
    """A fitted BPFA model. Arrays are read-only.

    Attributes
    -----------
    D: :class:`numpy.ndarray`
        ``(N_op, K)`` dictionary, atoms as columns.
    w: :class:`numpy.ndarray`
        ``(N_patch, K)`` weights, 0 where the atom is unused.
    u: :class:`numpy.ndarray`
        ``(N_patch, K)`` boolean atom usage.
    pi: :class:`numpy.ndarray`
        ``(K,)`` atom probabilities in ``(0, 1)``.
    gamma_d: :class:`float`
        Atom precision.
    gamma_w: :class:`float`
        Weight precision.
    gamma_n: :class:`float`
        Noise precision.
    a: :class:`float`
        First Beta hyperparameter.
    b: :class:`float`
        Second Beta hyperparameter.
    fitted: :class:`numpy.ndarray`
        ``(N_patch,)`` boolean, patches that had at least one observed entry.
        Only these take part in overlap averaging.
    history: List[List[:class:`float`]]
        Objective before and after every EM iteration, one list per batch.
    """

    __slots__ = ('D', 'w', 'u', 'pi', 'gamma_d', 'gamma_w', 'gamma_n', 'a', 'b', 'fitted', 'history')

    def __init__(
        self,
        *,
        D: np.ndarray,
        w: np.ndarray,
        u: np.ndarray,
        pi: np.ndarray,
        gamma_d: float,
        gamma_w: float,
        gamma_n: float,
        a: float = 1.0,
        b: float = 1.0,
        fitted: Optional[np.ndarray] = None,
        history: Sequence[Sequence[float]] = (),
    ):
        D = np.array(D, dtype=np.float64, ndmin=2)
        w = np.array(w, dtype=np.float64, ndmin=2)
        u = np.array(u, dtype=bool, ndmin=2)
        pi = np.array(pi, dtype=np.float64).reshape(-1)
        K = D.shape[1]
        if w.shape != u.shape or w.shape[1] != K or pi.size != K:
            raise ShapeMismatch('model arrays disagree on the atom count', expected=K, received=(w.shape, u.shape, pi.size))
        if np.any(pi <= 0) or np.any(pi >= 1):
            raise InvalidArgument('atom probabilities must lie in (0, 1)')
        if min(gamma_d, gamma_w, gamma_n) <= 0:
            raise InvalidArgument('precisions must be positive')
        fitted = np.ones(w.shape[0], dtype=bool) if fitted is None else np.array(fitted, dtype=bool).reshape(-1)
        if fitted.size != w.shape[0]:
            raise ShapeMismatch('one fitted flag per patch is required', expected=w.shape[0], received=fitted.size)

        w = np.where(u, w, 0.0)
        for array in (D, w, u, pi, fitted):
            array.setflags(write=False)
        self.D = D
        self.w = w
        self.u = u
        self.pi = pi
        self.gamma_d = float(gamma_d)
        self.gamma_w = float(gamma_w)
        self.gamma_n = float(gamma_n)
        self.a = float(a)
        self.b = float(b)
        self.fitted = fitted
        self.history = [list(h) for h in history]

    def __repr__(self) -> str:
        return f'<BpfaModel N_op={self.patch_len} K={self.K} patches={self.n_patches} gamma_n={self.gamma_n:.6g}>'

    @property
    def K(self) -> int:
        return int(self.D.shape[1])

    @property
    def patch_len(self) -> int:
        return int(self.D.shape[0])

    @property
    def n_patches(self) -> int:
        return int(self.w.shape[0])

    @property
    def alpha(self) -> np.ndarray:
        """``u ⊙ w``, the sparse codes."""
        return self.w * self.u

    def predict(self) -> np.ndarray:
        """``(N_patch, N_op)`` patch estimates ``D α_p``."""
        return self.alpha @ self.D.T

    def permuted(self, order: Sequence[int]) -> BpfaModel:
        """The same model with its atoms reordered."""
        order = np.asarray(order)
        return BpfaModel(
            D=self.D[:, order],
            w=self.w[:, order],
            u=self.u[:, order],
            pi=self.pi[order],
            gamma_d=self.gamma_d,
            gamma_w=self.gamma_w,
            gamma_n=self.gamma_n,
            a=self.a,
            b=self.b,
            fitted=self.fitted,
            history=self.history,
        )

class _State:
    """Mutable EM state shared by all batches of a fit.

    Precisions are in the units of the rescaled fit values, whose observed
    root mean square is 1.
    """

    __slots__ = ('D', 'pi', 'gamma_d', 'gamma_w', 'gamma_n', 'a', 'b', 's', 'pi_bounds', 'noise_bounds')

    def __init__(self, D, pi, gamma_d, gamma_w, gamma_n, a, b, s, pi_bounds, noise_bounds):
        self.D = D
        self.pi = pi
        self.gamma_d = gamma_d
        self.gamma_w = gamma_w
        self.gamma_n = gamma_n
        self.a = a
        self.b = b
        self.s = s
        self.pi_bounds = pi_bounds
        self.noise_bounds = noise_bounds

def _residual(z: np.ndarray, m: np.ndarray, w: np.ndarray, u: np.ndarray, D: np.ndarray) -> np.ndarray:
    return (z - (w * u) @ D.T) * m

def bpfa_objective(
    z: np.ndarray,
    observed: np.ndarray,
    w: np.ndarray,
    u: np.ndarray,
    D: np.ndarray,
    pi: np.ndarray,
    gamma_d: float,
    gamma_w: float,
    gamma_n: float,
    a: float = 1.0,
    b: float = 1.0,
) -> float:
    """The penalised negative log posterior minimised by the EM steps."""
    m = np.asarray(observed, dtype=np.float64)
    u = np.asarray(u, dtype=bool)
    K = D.shape[1]
    N = z.shape[0]
    r = _residual(z, m, w, u, D)
    ssr = float(np.sum(r * r))
    n_obs = float(m.sum())
    active = w[u]
    usage = u.sum(axis=0)

    value = 0.5 * gamma_n * ssr - 0.5 * n_obs * math.log(gamma_n)
    value += 0.5 * gamma_w * float(np.sum(active * active)) - 0.5 * active.size * math.log(gamma_w / (2 * math.pi))
    value += 0.5 * gamma_d * float(np.sum(D * D))
    value -= float(np.sum((a / K + usage) * np.log(pi) + (b * (K - 1) / K + N - usage) * np.log1p(-pi)))
    return value

def _objective(z, m, w, u, state: _State) -> float:
    return bpfa_objective(z, m, w, u, state.D, state.pi, state.gamma_d, state.gamma_w, state.gamma_n, state.a, state.b)

def _patch_costs(z, m, w, u, state: _State) -> np.ndarray:
    """The part of ``J`` that belongs to each patch's code."""
    r = _residual(z, m, w, u, state.D)
    logit = np.log(state.pi) - np.log1p(-state.pi)
    penalty = 0.5 * math.log(state.gamma_w / (2 * math.pi))
    prior = np.where(u, 0.5 * state.gamma_w * w * w - penalty - logit, 0.0)
    return 0.5 * state.gamma_n * np.sum(r * r, axis=1) + prior.sum(axis=1)

def _greedy_codes(z, m, state: _State) -> Tuple[np.ndarray, np.ndarray]:
    """Grow each patch's support one atom at a time, refitting its weights.

    An atom joins when it lowers the patch's cost, i.e. when
    ``logit π_k + ½ log(γ_w/2π) + μ²/2v > 0`` against the current residual,
    and the best such atom joins first. Growth stops at ``s`` atoms.
    """
    D = state.D
    B, K = z.shape[0], D.shape[1]
    w = np.zeros((B, K))
    u = np.zeros((B, K), dtype=bool)
    support = np.zeros((B, min(state.s, K)), dtype=np.int64)
    rows = np.arange(B)
    growing = np.ones(B, dtype=bool)

    dd = m @ (D * D)
    v = 1.0 / (state.gamma_w + state.gamma_n * dd)
    base = np.log(state.pi) - np.log1p(-state.pi) + 0.5 * math.log(state.gamma_w / (2 * math.pi))
    r = z * m

    for t in range(support.shape[1]):
        mu = v * state.gamma_n * (r @ D)
        score = base + mu * mu / (2 * v)
        score[u] = -np.inf
        best = np.argmax(score, axis=1)
        growing &= score[rows, best] > 0
        if not growing.any():
            break

        idx = rows[growing]
        support[idx, t] = best[idx]
        u[idx, best[idx]] = True
        chosen = support[idx, :t + 1]
        atoms = D.T[chosen]
        masked = atoms * m[idx][:, None, :]
        gram = state.gamma_n * (masked @ atoms.transpose(0, 2, 1)) + state.gamma_w * np.eye(t + 1)
        rhs = state.gamma_n * (masked @ z[idx][:, :, None])
        coef = np.linalg.solve(gram, rhs)[:, :, 0]
        w[idx[:, None], chosen] = coef
        r[idx] = (z[idx] - np.einsum('na,nap->np', coef, atoms)) * m[idx]
    return w, u

def _code(z, m, w, u, state: _State) -> None:
    """Re-code every patch and keep whichever code costs less, in place."""
    new_w, new_u = _greedy_codes(z, m, state)
    better = _patch_costs(z, m, new_w, new_u, state) < _patch_costs(z, m, w, u, state)
    w[better] = new_w[better]
    u[better] = new_u[better]

def _learn_atoms(z, m, w, u, D) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Masked least squares for the used atoms, rescaled to unit norm.

    Each detector entry of the used atoms is solved jointly; entries no
    patch observes stay where they were. The atom norms move into the
    weights, so ``D (u ⊙ w)`` is unchanged by the rescaling.
    """
    used = np.flatnonzero(u.any(axis=0))
    if not used.size:
        return None
    codes = np.where(u, w, 0.0)[:, used]
    B, U = codes.shape
    gram = (m.T @ (codes[:, :, None] * codes[:, None, :]).reshape(B, U * U)).reshape(-1, U, U)
    ridge = 1e-9 * np.trace(gram, axis1=1, axis2=2) / U + 1e-12
    diagonal = np.arange(U)
    gram[:, diagonal, diagonal] += ridge[:, None]
    rhs = (m * z).T @ codes + ridge[:, None] * D[:, used]
    atoms = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]

    norms = np.linalg.norm(atoms, axis=0)
    keep = norms > 0
    D = D.copy()
    w = w.copy()
    D[:, used[keep]] = atoms[:, keep] / norms[keep]
    w[:, used[keep]] *= norms[keep]
    return D, w

def _hyper(z, m, w, u, D, state: _State) -> Tuple[np.ndarray, float, float]:
    """Clipped closed-form minimisers of ``J`` for ``π``, ``γ_n`` and ``γ_w``."""
    K = D.shape[1]
    N = z.shape[0]
    usage = u.sum(axis=0)
    a_k = state.a / K
    b_k = state.b * (K - 1) / K
    pi = np.clip((a_k + usage) / (a_k + b_k + N), *state.pi_bounds)

    r = _residual(z, m, w, u, D)
    ssr = float(np.sum(r * r))
    n_obs = float(m.sum())
    low, high = state.noise_bounds
    best = high if ssr * high <= n_obs else min(max(n_obs / ssr, low), high)
    # Half a step towards the optimum in log γ_n; J is convex in log γ_n.
    gamma_n = math.sqrt(state.gamma_n * best)

    gamma_w = state.gamma_w
    active = w[u]
    if active.size:
        energy = float(np.sum(active * active))
        gamma_w = _GAMMA_W_MAX if energy * _GAMMA_W_MAX <= active.size else max(active.size / energy, _PRECISION_MIN)
    return pi, gamma_n, gamma_w

def _update_model(z, m, w, u, state: _State) -> None:
    """Dictionary then hyperparameter step, in place.

    The learned atoms are kept only when they give a lower ``J`` than the
    hyperparameter step on the old atoms alone.
    """
    pi, gamma_n, gamma_w = _hyper(z, m, w, u, state.D, state)
    kept = bpfa_objective(z, m, w, u, state.D, pi, state.gamma_d, gamma_w, gamma_n, state.a, state.b)

    learned = _learn_atoms(z, m, w, u, state.D)
    if learned is not None:
        D, new_w = learned
        moved = _hyper(z, m, new_w, u, D, state)
        if bpfa_objective(z, m, new_w, u, D, moved[0], state.gamma_d, moved[2], moved[1], state.a, state.b) < kept:
            state.D = D
            w[...] = new_w
            pi, gamma_n, gamma_w = moved

    state.pi = pi
    state.gamma_n = gamma_n
    state.gamma_w = gamma_w

def _init_state(patches: PatchSet, rows: np.ndarray, params: BpfaParams, scale: float) -> _State:
    rng = derive_rng(params.seed)
    geom = patches.geometry
    P = geom.patch_len
    K = params.K
    D = rng.normal(0.0, 1.0, size=(P, K))

    n_const = min(geom.channels, K)
    if params.init is InitScheme.data:
        complete = rows[patches.observed[rows].all(axis=1)]
        norms = np.linalg.norm(patches.values[complete], axis=1)
        complete = complete[norms > 0]
        if complete.size:
            chosen = rng.choice(complete, size=min(K - n_const, complete.size), replace=False)
            D[:, K - len(chosen):] = patches.values[chosen].T

    # One constant atom per channel.
    plane = geom.patch_h * geom.patch_w
    for c in range(n_const):
        D[:, c] = 0.0
        D[c * plane:(c + 1) * plane, c] = 1.0
    D /= np.linalg.norm(D, axis=0)

    z = patches.values[rows][patches.observed[rows]] / scale
    variance = float(np.var(z))
    # Noise is taken to lie between the data's own spread and 1% of it.
    low = 1.0 / variance if variance > 0 else 1.0
    low = min(low, _PRECISION_MAX)
    gamma_n = min(100.0 * low, _PRECISION_MAX) if variance > 0 else _PRECISION_MAX
    gamma_w = min(1.0 / P, _GAMMA_W_MAX)
    pi_low = min(1.0 / K, 0.5)
    log.debug(f'BPFA init: {n_const} constant atoms, gamma_n={gamma_n:.4g}, gamma_w={gamma_w:.4g}.')
    return _State(D, np.full(K, 0.5), float(P), gamma_w, gamma_n, params.a, params.b, params.s, (pi_low, 0.5), (low, _PRECISION_MAX))

def bpfa_fit(patches: PatchSet, params: Optional[BpfaParams] = None) -> BpfaModel:
    """Fit a BPFA model to the observed entries of ``patches`` by online EM.

    Patches are shuffled once per epoch and split into batches of
    ``batch_size``; the dictionary, atom probabilities and precisions carry
    over from batch to batch. After the last batch, every patch is coded
    once more against the final dictionary. Patches without observed
    entries are left unused.

    Values are divided by their observed root mean square while fitting;
    the returned weights and precisions are in the units of ``patches``
    and :attr:`BpfaModel.history` holds the objective of the rescaled fit.

    Raises
    -------
    DegenerateInput
        No patch has an observed entry.
    """
    params = params or BpfaParams()
    n_patches = len(patches)
    fitted = patches.observed.any(axis=1)
    rows = np.flatnonzero(fitted)
    if rows.size == 0:
        raise DegenerateInput('BPFA needs at least one observed value')

    rms = math.sqrt(float(np.mean(np.square(patches.values[patches.observed]))))
    scale = rms if rms > 0 else 1.0
    state = _init_state(patches, rows, params, scale)
    w = np.zeros((n_patches, params.K))
    u = np.zeros((n_patches, params.K), dtype=bool)
    history: List[List[float]] = []

    for epoch in range(params.epochs):
        order = derive_rng(params.seed, 1, epoch).permutation(rows)
        batches = [order[i:i + params.batch_size] for i in range(0, order.size, params.batch_size)]
        for number, batch in enumerate(batches):
            z = patches.values[batch] / scale
            m = patches.observed[batch].astype(np.float64)
            wb, ub = w[batch], u[batch]

            trace = [_objective(z, m, wb, ub, state)]
            for _ in range(params.em_iters_per_batch):
                _code(z, m, wb, ub, state)
                _update_model(z, m, wb, ub, state)
                trace.append(_objective(z, m, wb, ub, state))

            w[batch], u[batch] = wb, ub
            history.append(trace)
            log.debug(f'BPFA epoch {epoch} batch {number}: objective {trace[0]:.6g} -> {trace[-1]:.6g}, gamma_n={state.gamma_n:.4g}.')

    for start in range(0, rows.size, params.batch_size):
        batch = rows[start:start + params.batch_size]
        z = patches.values[batch] / scale
        m = patches.observed[batch].astype(np.float64)
        wb, ub = w[batch], u[batch]
        _code(z, m, wb, ub, state)
        w[batch], u[batch] = wb, ub

    return BpfaModel(
        D=state.D,
        w=w * scale,
        u=u,
        pi=state.pi,
        gamma_d=state.gamma_d,
        gamma_w=state.gamma_w / scale ** 2,
        gamma_n=state.gamma_n / scale ** 2,
        a=state.a,
        b=state.b,
        fitted=fitted,
        history=history,
    )

def reconstruct(
    model: BpfaModel,
    geom: PatchGeometry,
    grid: ProbeGrid,
    *,
    value_range: Optional[Tuple[float, float]] = None,
) -> Map:
    """Reassemble a map from the model's patch estimates.

    Each pixel is the average of the estimates of every fitted patch covering
    it; a pixel no fitted patch covers falls back to all covering patches.
    Values are clipped to ``value_range``, which defaults to ``[0, 1]`` for
    RGB maps and no clipping for scalar maps.
    """
    if model.patch_len != geom.patch_len or model.n_patches != geom.n_patches:
        raise ShapeMismatch(
            'model does not match the patch geometry',
            expected=(geom.n_patches, geom.patch_len),
            received=(model.n_patches, model.patch_len),
        )
    if grid.shape != (geom.map_h, geom.map_w):
        raise ShapeMismatch('grid does not match the patch geometry', expected=(geom.map_h, geom.map_w), received=grid.shape)

    estimates = model.predict().reshape(geom.rows, geom.cols, geom.channels, geom.patch_h, geom.patch_w)
    weight = model.fitted.astype(np.float64).reshape(geom.rows, geom.cols)

    total = np.zeros((geom.channels, geom.map_h, geom.map_w))
    count = np.zeros((geom.map_h, geom.map_w))
    plain_total = np.zeros_like(total)
    plain_count = np.zeros_like(count)
    for dy in range(geom.patch_h):
        for dx in range(geom.patch_w):
            window = (slice(dy, dy + geom.rows), slice(dx, dx + geom.cols))
            piece = np.moveaxis(estimates[:, :, :, dy, dx], -1, 0)
            total[(slice(None), *window)] += piece * weight
            count[window] += weight
            plain_total[(slice(None), *window)] += piece
            plain_count[window] += 1.0

    covered = count > 0
    image = np.where(covered, total / np.where(covered, count, 1.0), plain_total / plain_count)
    if value_range is None and geom.channels == 3:
        value_range = (0.0, 1.0)
    if value_range is not None:
        image = np.clip(image, *value_range)

    flat = image.reshape(geom.channels, -1)
    return ScalarMap(grid, flat[0]) if geom.channels == 1 else RgbMap(grid, flat)

def inpaint(
    map: Map,
    mask: SampleMask,
    params: Optional[BpfaParams] = None,
    geom: Optional[PatchGeometry] = None,
    *,
    reimpose: bool = False,
) -> Map:
    """Recover a full map from its values at the sampled positions of ``mask``.

    Scalar maps are normalized to ``[0, 255]`` over their sampled values
    before fitting and mapped back afterwards. When ``geom`` is omitted the
    tabulated patch shape for the mask's effective rate is used, shrunk to
    fit the map. The output is the model reconstruction everywhere unless
    ``reimpose`` copies the sampled values back.

    Raises
    -------
    DegenerateInput
        ``mask`` samples nothing.
    """
    map._require_grid(mask, 'mask')
    if mask.count == 0:
        raise DegenerateInput('cannot inpaint a map with no sampled positions')
    params = params or BpfaParams()
    scalar = map.n_channels == 1

    if geom is None:
        kind = MapKind.band_contrast if scalar else MapKind.ipf
        h, w = select_patch_shape(effective_rate(mask), kind)
        geom = PatchGeometry(min(h, map.grid.height), min(w, map.grid.width), map.n_channels, *map.grid.shape)

    selected = mask.as_boolean()
    record = None
    work = map
    if scalar:
        observed = map.data[0, selected]
        filled = np.where(selected, map.data[0], observed.mean())
        work, record = normalize_map(ScalarMap(map.grid, filled))

    log.debug(f'Inpainting {map!r} from {mask.count} samples with {geom!r}.')
    model = bpfa_fit(extract_patches(work, mask, geom), params)
    out = reconstruct(model, geom, map.grid, value_range=(record.target_lo, record.target_hi) if record else None)
    if record is not None:
        out = denormalize_map(out, record)
    if reimpose:
        out = out.with_data(np.where(selected[None, :], map.data, out.data))
    return out
