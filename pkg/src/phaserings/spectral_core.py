"""Modal machinery for fields radiated by circular apertures.

A source of radius ``a`` is expanded in azimuthal harmonics
``f(rho', phi') = sum_l f_l(rho') exp(j l phi')`` and each radial profile
is mapped to the corresponding spectrum profile by a first-kind Bessel
operator,

    F_l(k') = integral_0^a f_l(rho') J_l(k' rho') rho' d rho'.

The discretized operators, their singular systems, and the packed
coefficient layout used by the retrieval steps all live here.  Units are
chosen so that all lengths are in wavelengths unless stated otherwise.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import jv

from .errors import (
    DegenerateOperator,
    IndexMismatch,
    SigmaUnderflow,
    UndersampledRing,
)

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_FLOOR = 1e-6


@dataclasses.dataclass(frozen=True)
class ApertureGeometry:
    """Circular aperture of given radius, with its visible-space bound.

    Attributes
    ----------
    radius : float
        Aperture radius ``a``.
    wavelength : float
        Operating wavelength, default 1 so lengths read in wavelengths.
    """

    radius: float
    wavelength: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")

    @property
    def beta(self) -> float:
        """Free-space wavenumber, also the visible-space radius."""
        return 2.0 * math.pi / self.wavelength


@dataclasses.dataclass(frozen=True)
class RadialGrid:
    """Quadrature grid on the aperture radius.

    ``weights`` absorb the polar measure, i.e. they integrate
    ``g(rho') rho' d rho'`` over ``[0, a]``, so ``weights.sum()`` equals
    ``a**2 / 2`` up to roundoff.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be 1-D and matching")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size

    @classmethod
    def gauss_legendre(cls, geom: ApertureGeometry, nodes_per_wavelength: int = 12):
        """Composite Gauss-Legendre rule, one panel per wavelength of radius.

        Twelve nodes per wavelength keep the Bessel kernels, which
        oscillate on the wavelength scale for k' near beta, integrated
        close to machine accuracy.
        """
        n_panels = max(1, math.ceil(geom.radius / geom.wavelength))
        x, w = leggauss(max(2, nodes_per_wavelength))
        edges = np.linspace(0.0, geom.radius, n_panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        plain = (half[:, None] * w[None, :]).ravel()
        return cls(nodes=nodes, weights=plain * nodes)


@dataclasses.dataclass(frozen=True)
class SpectralRadialGrid:
    """Radial nodes covering the visible spectrum ``0 <= k' <= beta``."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("need at least two spectral nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if nodes[0] < 0:
            raise ValueError("nodes must be nonnegative")
        object.__setattr__(self, "nodes", nodes)

    def __len__(self):
        return self.nodes.size

    @classmethod
    def uniform(cls, geom: ApertureGeometry, oversampling: int = 4):
        """Uniform grid from 0 to beta with step ``pi / (2 a oversampling)``.

        The base step ``pi / (2 a)`` is the finest scale on which the
        visible spectrum of a radius-``a`` source varies; the default
        fourfold refinement keeps trapezoid sums on the grid accurate
        enough for the norm and projection work done downstream.
        """
        if oversampling < 1:
            raise ValueError("oversampling must be >= 1")
        step = math.pi / (2.0 * geom.radius * oversampling)
        n = int(round(geom.beta / step)) + 1
        return cls(nodes=np.linspace(0.0, geom.beta, n))

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights times the polar measure ``k'``."""
        return trapezoid_weights(self.nodes) * self.nodes


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for irregular 1-D nodes."""
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def truncation_orders(geom: ApertureGeometry) -> tuple[int, dict[int, int]]:
    """Azimuthal cutoff and per-order radial mode counts.

    The spectrum of a radius-``a`` source carries about ``2a`` degrees of
    freedom per wavelength of circumference, which truncates the harmonic
    index at ``L = ceil(beta a)``.  Within harmonic ``l`` the number of
    well-conditioned radial modes shrinks roughly linearly,
    ``N_l = N_0 - |l| / pi`` with ``N_0 = 2 a / lambda``, rounded half up
    and floored at one.

    Returns
    -------
    (L, counts) : tuple
        ``counts[l]`` gives ``N_l`` for every ``l`` in ``[-L, L]``.
    """
    beta_a = geom.beta * geom.radius
    L = int(math.ceil(beta_a))
    n0 = 2.0 * geom.radius / geom.wavelength
    counts = {}
    for ell in range(-L, L + 1):
        n_ell = int(math.floor(n0 - abs(ell) / math.pi + 0.5))
        counts[ell] = max(1, n_ell)
    return L, counts


def build_modal_operator(
    ell: int, rgrid: RadialGrid, sgrid: SpectralRadialGrid
) -> np.ndarray:
    """Discretize the order-``ell`` radial radiation operator.

    Returns the real matrix ``A`` with ``A[i, j] = J_ell(k_i rho_j) w_j``
    where ``w_j`` are the measure-inclusive weights of ``rgrid``, so that
    ``A @ f`` evaluates the spectrum profile of samples ``f`` at every
    node of ``sgrid``.
    """
    kr = np.outer(sgrid.nodes, rgrid.nodes)
    return jv(ell, kr) * rgrid.weights[None, :]


@dataclasses.dataclass(frozen=True)
class ModalSvd:
    """Singular system of one discretized radial operator.

    ``u`` columns sample the spectrum-side functions on the spectral
    grid, ``v`` columns the aperture-side functions on the radial grid.
    Both families are orthonormal under the measure-weighted quadrature
    inner products of their grids.  ``sigma`` stores the full computed
    spectrum for diagnostics; only the leading ``count`` triplets are
    retained as basis.
    """

    order: int
    sigma: np.ndarray
    u: np.ndarray
    v: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 1 or self.count > self.u.shape[1]:
            raise ValueError("retained count out of range")


def compute_svd(
    ell: int,
    operator: np.ndarray,
    rgrid: RadialGrid,
    sgrid: SpectralRadialGrid,
    n_max: int,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> ModalSvd:
    """Weighted SVD of one radial operator.

    The factorization is computed on the symmetrized matrix
    ``diag(sqrt(W_k)) A diag(1 / sqrt(W_rho))`` so the singular vectors
    come out orthonormal under the grid inner products.  The spectrum
    side is then re-evaluated as ``u = A v / sigma``, which stays exact
    at ``k' = 0`` where the quadrature weight vanishes.

    Parameters
    ----------
    n_max : int
        Cap on the retained basis size, normally the truncation count
        ``N_l`` of the geometry.
    sigma_floor : float
        Relative floor below which trailing singular values are dropped.
    """
    w_r = rgrid.weights
    w_k = sgrid.weights
    # operator columns already carry w_r once; rebalance to sqrt(w_r).
    sym = (np.sqrt(w_k)[:, None] * operator) / np.sqrt(w_r)[None, :]
    try:
        _, sigma, vt = np.linalg.svd(sym, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DegenerateOperator(f"SVD failed for order {ell}") from exc
    if not np.isfinite(sigma).all() or sigma[0] <= 0:
        raise DegenerateOperator(f"no usable singular values at order {ell}")

    above = int(np.count_nonzero(sigma >= sigma_floor * sigma[0]))
    count = max(1, min(n_max, above))
    keep = min(sigma.size, max(count, n_max) + 5)

    v = vt[:keep].T / np.sqrt(w_r)[:, None]
    # Fix an overall sign per column so results do not depend on the
    # LAPACK driver: largest-magnitude component of v made positive.
    peak = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[peak, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    v = v * signs[None, :]
    u = (operator @ v) / sigma[:keep][None, :]
    return ModalSvd(order=ell, sigma=sigma, u=u, v=v, count=count)


class OperatorCache:
    """Caches the per-order Bessel operator matrices for one grid pair."""

    def __init__(self, geom: ApertureGeometry, rgrid: RadialGrid, sgrid: SpectralRadialGrid):
        self.geom = geom
        self.rgrid = rgrid
        self.sgrid = sgrid
        self._matrices: dict[int, np.ndarray] = {}

    def operator(self, ell: int) -> np.ndarray:
        mat = self._matrices.get(ell)
        if mat is None:
            mat = build_modal_operator(ell, self.rgrid, self.sgrid)
            self._matrices[ell] = mat
        return mat


@dataclasses.dataclass(frozen=True)
class ModeLayout:
    """Packing order of the coefficient vector: ``l`` ascending, then n."""

    orders: tuple[tuple[int, int], ...]

    @classmethod
    def from_counts(cls, counts: dict[int, int]):
        items = tuple(sorted(counts.items()))
        return cls(orders=items)

    @property
    def size(self) -> int:
        return sum(n for _, n in self.orders)

    def slices(self) -> dict[int, slice]:
        out = {}
        start = 0
        for ell, n in self.orders:
            out[ell] = slice(start, start + n)
            start += n
        return out

    def index(self, ell: int, n: int) -> int:
        """Flat index of mode ``(l, n)`` with ``n`` counted from one."""
        start = 0
        for order, count in self.orders:
            if order == ell:
                if not 1 <= n <= count:
                    raise IndexMismatch(f"mode n={n} out of range for order {ell}")
                return start + n - 1
            start += count
        raise IndexMismatch(f"order {ell} not in layout")


@dataclasses.dataclass
class ModalCoefficients:
    """Packed complex coefficients of the retained modal expansion."""

    layout: ModeLayout
    vec: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=complex)
        if vec.ndim != 1 or vec.size != self.layout.size:
            raise IndexMismatch(
                f"coefficient vector has size {vec.size}, layout wants {self.layout.size}"
            )
        self.vec = vec

    @classmethod
    def zeros(cls, layout: ModeLayout):
        return cls(layout=layout, vec=np.zeros(layout.size, dtype=complex))

    def get(self, ell: int, n: int) -> complex:
        return self.vec[self.layout.index(ell, n)]

    def set(self, ell: int, n: int, value: complex):
        self.vec[self.layout.index(ell, n)] = value

    def block(self, ell: int) -> np.ndarray:
        return self.vec[self.layout.slices()[ell]]


class ModalBasis:
    """Retained singular systems for every harmonic order of a geometry."""

    def __init__(
        self,
        geom: ApertureGeometry,
        rgrid: RadialGrid,
        sgrid: SpectralRadialGrid,
        svds: dict[int, ModalSvd],
        sigma_floor: float,
    ):
        self.geom = geom
        self.rgrid = rgrid
        self.sgrid = sgrid
        self.svds = svds
        self.sigma_floor = sigma_floor
        self.max_order, self.counts = truncation_orders(geom)
        retained = {ell: svds[ell].count for ell in svds}
        self.layout = ModeLayout.from_counts(retained)
        self.sigma_max = max(svds[ell].sigma[0] for ell in svds)

    @classmethod
    def build(
        cls,
        geom: ApertureGeometry,
        rgrid: RadialGrid | None = None,
        sgrid: SpectralRadialGrid | None = None,
        sigma_floor: float = DEFAULT_SIGMA_FLOOR,
        threads: int | None = None,
    ):
        """Assemble the basis for all orders ``|l| <= L``.

        The per-order factorizations are independent; ``threads``
        parallelizes them without changing any result bitwise.
        """
        rgrid = rgrid or RadialGrid.gauss_legendre(geom)
        sgrid = sgrid or SpectralRadialGrid.uniform(geom)
        L, counts = truncation_orders(geom)
        cache = OperatorCache(geom, rgrid, sgrid)

        def factor(ell: int) -> tuple[int, ModalSvd]:
            return ell, compute_svd(
                ell, cache.operator(ell), rgrid, sgrid, counts[ell], sigma_floor
            )

        orders = range(-L, L + 1)
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                svds = dict(pool.map(factor, orders))
        else:
            svds = dict(factor(ell) for ell in orders)
        logger.info(
            "modal basis built: L=%d, modes=%d", L, sum(s.count for s in svds.values())
        )
        return cls(geom, rgrid, sgrid, svds, sigma_floor)

    def retained_u(self, ell: int) -> np.ndarray:
        s = self.svds[ell]
        return s.u[:, : s.count]

    def retained_v(self, ell: int) -> np.ndarray:
        s = self.svds[ell]
        return s.v[:, : s.count]

    def retained_sigma(self, ell: int) -> np.ndarray:
        s = self.svds[ell]
        return s.sigma[: s.count]

    def u_at(self, ell: int, k: np.ndarray) -> np.ndarray:
        """Spectrum-side basis functions evaluated at arbitrary radii.

        Uses ``u(k') = A(k') v / sigma`` which extends the grid samples
        consistently to any ``k'``.
        """
        k = np.atleast_1d(np.asarray(k, dtype=float))
        s = self.svds[ell]
        kernel = jv(ell, np.outer(k, self.rgrid.nodes)) * self.rgrid.weights[None, :]
        return (kernel @ s.v[:, : s.count]) / s.sigma[: s.count][None, :]


@dataclasses.dataclass
class PolarSpectrumGrid:
    """Spectrum samples on a polar grid of rings and azimuths."""

    k: np.ndarray
    phi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.values = np.asarray(self.values)
        if self.values.shape != (self.k.size, self.phi.size):
            raise ValueError("values must be shaped (n_rings, n_azimuths)")

    @property
    def ring_weights(self) -> np.ndarray:
        return trapezoid_weights(self.k) * self.k


@dataclasses.dataclass
class ApertureFieldMap:
    """Aperture field samples on the radial quadrature grid and azimuths."""

    rgrid: RadialGrid
    phi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.values = np.asarray(self.values)
        if self.values.shape != (len(self.rgrid), self.phi.size):
            raise ValueError("values must be shaped (n_radii, n_azimuths)")


def azimuth_grid(n: int) -> np.ndarray:
    """Uniform azimuths ``2 pi m / n`` for ``m = 0 .. n-1``."""
    return 2.0 * math.pi * np.arange(n) / n


def default_azimuth_count(geom: ApertureGeometry) -> int:
    """Power of two comfortably above the power-pattern Nyquist rate.

    The squared field on the outermost ring is a trigonometric
    polynomial of order ``2 L``, which needs ``4 L + 1`` samples.
    """
    L, _ = truncation_orders(geom)
    n = 1
    while n < 4 * L + 2:
        n *= 2
    return n


def _is_canonical_azimuths(phi: np.ndarray) -> bool:
    n = phi.size
    return bool(np.allclose(phi, azimuth_grid(n), rtol=0, atol=1e-12))


def harmonics_to_azimuths(coeffs: np.ndarray, orders: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Evaluate ``sum_l c_l exp(j l phi)`` rows on the given azimuths.

    ``coeffs`` has one row per ring and one column per entry of
    ``orders``.  Uses an FFT when ``phi`` is the canonical uniform grid
    and falls back to a direct matrix product otherwise.
    """
    coeffs = np.atleast_2d(coeffs)
    orders = np.asarray(orders, dtype=int)
    n = phi.size
    if _is_canonical_azimuths(phi) and n > 2 * np.abs(orders).max():
        buf = np.zeros((coeffs.shape[0], n), dtype=complex)
        np.add.at(buf, (slice(None), np.mod(orders, n)), coeffs)
        return np.fft.ifft(buf, axis=1) * n
    return coeffs @ np.exp(1j * np.outer(orders, phi))


def decompose_azimuthal(
    grid: PolarSpectrumGrid,
    geom: ApertureGeometry | None = None,
    max_order: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Azimuthal Fourier coefficients of every ring.

    Requires the canonical uniform azimuth grid.  When ``geom`` is given
    each ring is checked against its own Nyquist rate
    ``2 ceil(k' a) + 1`` and ``UndersampledRing`` is raised on failure.

    Returns
    -------
    (orders, coeffs) : tuple
        ``orders`` runs from ``-L`` to ``L``; ``coeffs[i, m]`` is the
        coefficient of ``exp(j orders[m] phi)`` on ring ``i``.
    """
    n = grid.phi.size
    if not _is_canonical_azimuths(grid.phi):
        raise ValueError("azimuthal decomposition needs the canonical uniform grid")
    if geom is not None:
        need = 2 * np.ceil(grid.k * geom.radius - 1e-9).astype(int) + 1
        bad = np.nonzero(need > n)[0]
        if bad.size:
            raise UndersampledRing(
                f"ring k'={grid.k[bad[0]]:.4f} needs {need[bad[0]]} azimuth samples, grid has {n}"
            )
    half = (n - 1) // 2
    L = half if max_order is None else min(max_order, half)
    spec = np.fft.fft(grid.values, axis=1) / n
    orders = np.arange(-L, L + 1)
    return orders, spec[:, np.mod(orders, n)]


def synthesize_spectrum(
    coeffs: ModalCoefficients,
    basis: ModalBasis,
    k: np.ndarray | None = None,
    phi: np.ndarray | int | None = None,
) -> PolarSpectrumGrid:
    """Evaluate the modal expansion on a polar spectrum grid.

    Defaults to the spectral grid of the basis and the canonical azimuth
    count of its geometry.
    """
    if coeffs.layout != basis.layout:
        raise IndexMismatch("coefficient layout does not match basis")
    if phi is None:
        phi = azimuth_grid(default_azimuth_count(basis.geom))
    elif isinstance(phi, int):
        phi = azimuth_grid(phi)
    else:
        phi = np.asarray(phi, dtype=float)

    on_grid = k is None
    k_arr = basis.sgrid.nodes if on_grid else np.atleast_1d(np.asarray(k, dtype=float))
    orders = np.array([ell for ell, _ in basis.layout.orders])
    profiles = np.empty((k_arr.size, orders.size), dtype=complex)
    for m, ell in enumerate(orders):
        b = coeffs.block(ell)
        if on_grid:
            profiles[:, m] = basis.retained_u(ell) @ b
        else:
            profiles[:, m] = basis.u_at(ell, k_arr) @ b
    values = harmonics_to_azimuths(profiles, orders, phi)
    return PolarSpectrumGrid(k=k_arr, phi=phi, values=values)


def project_source(
    coeffs: ModalCoefficients,
    basis: ModalBasis,
    phi: np.ndarray | int | None = None,
) -> ApertureFieldMap:
    """Back-project modal coefficients to the aperture field.

    Raises ``SigmaUnderflow`` when any retained singular value sits below
    the configured floor relative to the global maximum, since dividing
    by it would amplify noise beyond the basis design assumptions.
    """
    if coeffs.layout != basis.layout:
        raise IndexMismatch("coefficient layout does not match basis")
    if phi is None:
        phi = azimuth_grid(default_azimuth_count(basis.geom))
    elif isinstance(phi, int):
        phi = azimuth_grid(phi)
    else:
        phi = np.asarray(phi, dtype=float)

    floor = basis.sigma_floor * basis.sigma_max
    orders = np.array([ell for ell, _ in basis.layout.orders])
    profiles = np.empty((len(basis.rgrid), orders.size), dtype=complex)
    for m, ell in enumerate(orders):
        sigma = basis.retained_sigma(ell)
        if np.any(sigma < floor):
            raise SigmaUnderflow(
                f"order {ell} retains sigma below {floor:.3e}; cannot invert stably"
            )
        profiles[:, m] = basis.retained_v(ell) @ (coeffs.block(ell) / sigma)
    values = harmonics_to_azimuths(profiles, orders, phi)
    return ApertureFieldMap(rgrid=basis.rgrid, phi=phi, values=values)
