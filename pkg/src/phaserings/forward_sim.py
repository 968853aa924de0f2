"""Reflector-aperture source models and simulated power measurements.

The aperture field of an axially fed parabolic reflector is modelled by
a taper raised to the exponent that realizes a prescribed edge
attenuation, together with the spherical-wave path phase of a feed
displaced from the focus.  Surface deformations enter as an extra
aperture phase proportional to the local axial offset of the surface,
and an optional multiplicative amplitude perturbation.

All lengths are in wavelengths.  The far field is sampled on the polar
spectrum grid of the modal machinery and only its squared magnitude,
plus a couple of complex anchor samples, is handed to the retrieval.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from .errors import GridMismatch
from .spectral_core import (
    ApertureFieldMap,
    ApertureGeometry,
    OperatorCache,
    PolarSpectrumGrid,
    RadialGrid,
    SpectralRadialGrid,
    azimuth_grid,
    default_azimuth_count,
    harmonics_to_azimuths,
    trapezoid_weights,
)

logger = logging.getLogger(__name__)

# aperture harmonics below this fraction of the strongest one carry no
# information worth radiating
NEGLIGIBLE_HARMONIC = 1e-14


@dataclasses.dataclass(frozen=True)
class ReflectorConfig:
    """Parabolic reflector illumination model.

    Attributes
    ----------
    geom : ApertureGeometry
        Aperture radius and wavelength.
    focal_length : float
        Focal length of the paraboloid, in wavelengths.
    kappa : float
        Axial feed displacement as a fraction of the focal length; it
        controls the quadratic defocus phase across the aperture.
    taper_db : float
        Edge attenuation of the illumination in dB.
    """

    geom: ApertureGeometry
    focal_length: float
    kappa: float = 0.5
    taper_db: float = 12.0

    def __post_init__(self):
        if self.focal_length <= 0:
            raise ValueError("focal length must be positive")
        if self.taper_db < 0:
            raise ValueError("taper must be an attenuation, in dB >= 0")

    @property
    def taper_exponent(self) -> float:
        """Exponent gamma such that the edge sits taper_db below center."""
        a = self.geom.radius
        edge = 1.0 + (a / (2.0 * self.focal_length)) ** 2
        return self.taper_db / (20.0 * math.log10(edge))


@dataclasses.dataclass(frozen=True)
class SmoothMap:
    """Band-limited real map on the unit disk, sum of a few harmonics.

    Each term is ``Re(c s^(|m| + 2q) exp(j m phi))`` with ``s`` the
    normalized radius, so every term is smooth through the origin.  The
    common ``scale`` is chosen at construction so the extremum over a
    fixed dense probe grid equals the requested bound.
    """

    azimuthal: tuple[int, ...]
    radial: tuple[int, ...]
    amplitudes: tuple[complex, ...]
    scale: float
    bound: float

    def __call__(self, s: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Evaluate on the outer product of radii ``s`` (in [0,1]) and azimuths."""
        s = np.asarray(s, dtype=float)
        phi = np.asarray(phi, dtype=float)
        out = np.zeros((s.size, phi.size))
        for m, q, c in zip(self.azimuthal, self.radial, self.amplitudes):
            radial = s ** (abs(m) + 2 * q)
            out += np.real(c * np.exp(1j * m * phi))[None, :] * radial[:, None]
        return out * self.scale


_PROBE_S = np.linspace(0.0, 1.0, 121)
_PROBE_PHI = azimuth_grid(256)


def random_smooth_map(bound: float, harmonics: int, seed: int) -> SmoothMap:
    """Draw a reproducible smooth map with extremum equal to ``bound``.

    ``harmonics = 0`` degenerates to the constant map of value ``bound``.
    """
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    if harmonics == 0:
        return SmoothMap(
            azimuthal=(0,), radial=(0,), amplitudes=(1.0 + 0j,), scale=bound, bound=bound
        )
    rng = np.random.default_rng(seed)
    ms = rng.integers(0, 5, size=harmonics)
    qs = rng.integers(0, 3, size=harmonics)
    amps = rng.normal(size=harmonics) + 1j * rng.normal(size=harmonics)
    raw = SmoothMap(
        azimuthal=tuple(int(m) for m in ms),
        radial=tuple(int(q) for q in qs),
        amplitudes=tuple(complex(c) for c in amps),
        scale=1.0,
        bound=bound,
    )
    peak = np.max(np.abs(raw(_PROBE_S, _PROBE_PHI)))
    return dataclasses.replace(raw, scale=bound / peak)


@dataclasses.dataclass(frozen=True)
class DeformationMap:
    """Surface offset map ``delta`` plus amplitude perturbation map ``C``.

    ``delta`` is the axial surface deviation in wavelengths; ``C`` scales
    the aperture amplitude as ``1 + C``.  Either may be None for zero.
    """

    delta: SmoothMap | None = None
    amplitude: SmoothMap | None = None


def nominal_aperture(
    cfg: ReflectorConfig,
    rgrid: RadialGrid | None = None,
    phi: np.ndarray | int | None = None,
) -> ApertureFieldMap:
    """Aperture field of the undeformed, axially defocused reflector."""
    geom = cfg.geom
    rgrid = rgrid or RadialGrid.gauss_legendre(geom)
    if phi is None:
        phi = azimuth_grid(default_azimuth_count(geom))
    elif isinstance(phi, int):
        phi = azimuth_grid(phi)
    rho = rgrid.nodes
    fl = cfg.focal_length
    amp = (1.0 + (rho / (2.0 * fl)) ** 2) ** (-cfg.taper_exponent)
    phase = geom.beta * (2.0 * fl + cfg.kappa * (4.0 * fl**2 - rho**2) / (4.0 * fl))
    radial = amp * np.exp(1j * phase)
    values = np.repeat(radial[:, None], phi.size, axis=1)
    return ApertureFieldMap(rgrid=rgrid, phi=phi, values=values)


def deformation_phase(
    d: DeformationMap, cfg: ReflectorConfig, rho: np.ndarray, phi: np.ndarray
) -> np.ndarray:
    """Aperture phase offset of the surface map on the given grid.

    A surface point moved by ``delta`` along the axis changes the ray
    path by twice the projection on the local normal, which on the
    aperture plane works out to ``8 FL^2 beta delta / (4 FL^2 + rho^2)``.
    """
    if d.delta is None:
        return np.zeros((rho.size, phi.size))
    fl = cfg.focal_length
    delta = d.delta(rho / cfg.geom.radius, phi)
    return 8.0 * fl**2 * cfg.geom.beta * delta / (4.0 * fl**2 + rho[:, None] ** 2)


def apply_deformation(
    f: ApertureFieldMap, d: DeformationMap, cfg: ReflectorConfig
) -> ApertureFieldMap:
    """Imprint the deformation on an aperture field."""
    phase = deformation_phase(d, cfg, f.rgrid.nodes, f.phi)
    gain = 1.0
    if d.amplitude is not None:
        gain = 1.0 + d.amplitude(f.rgrid.nodes / cfg.geom.radius, f.phi)
    values = f.values * gain * np.exp(1j * phase)
    return ApertureFieldMap(rgrid=f.rgrid, phi=f.phi, values=values)


def radiate(
    f: ApertureFieldMap,
    geom: ApertureGeometry,
    sgrid: SpectralRadialGrid | None = None,
    phi_out: np.ndarray | int | None = None,
    cache: OperatorCache | None = None,
) -> PolarSpectrumGrid:
    """Far-field spectrum of an aperture field on the polar grid.

    The source is decomposed azimuthally by FFT, each harmonic is pushed
    through its Bessel radial operator, and the harmonics are
    re-assembled on the output azimuths.  Harmonics whose amplitude is
    negligible relative to the strongest one are skipped.
    """
    sgrid = sgrid or (cache.sgrid if cache is not None else SpectralRadialGrid.uniform(geom))
    if cache is None:
        cache = OperatorCache(geom, f.rgrid, sgrid)
    if phi_out is None:
        phi_out = azimuth_grid(default_azimuth_count(geom))
    elif isinstance(phi_out, int):
        phi_out = azimuth_grid(phi_out)

    n = f.phi.size
    if not np.allclose(f.phi, azimuth_grid(n), rtol=0, atol=1e-12):
        raise GridMismatch("radiate needs the canonical uniform azimuth grid")
    f_harm = np.fft.fft(f.values, axis=1) / n
    mags = np.max(np.abs(f_harm), axis=0)
    keep_tol = NEGLIGIBLE_HARMONIC * mags.max()
    half = (n - 1) // 2

    orders = [ell for ell in range(-half, half + 1) if mags[ell % n] > keep_tol]
    profiles = np.zeros((len(sgrid), len(orders)), dtype=complex)
    for col, ell in enumerate(orders):
        profiles[:, col] = cache.operator(ell) @ f_harm[:, ell % n]
    values = harmonics_to_azimuths(profiles, np.array(orders, dtype=int), phi_out)
    return PolarSpectrumGrid(k=sgrid.nodes, phi=phi_out, values=values)


@dataclasses.dataclass(frozen=True)
class NoiseSpec:
    """Additive magnitude noise at a prescribed grid-wide SNR."""

    snr_db: float
    seed: int = 0


@dataclasses.dataclass(frozen=True)
class AnchorPoint:
    """One point of the spectrum where the complex field is known."""

    k: float
    phi: float
    value: complex


@dataclasses.dataclass
class Measurements:
    """Squared-magnitude data handed to the retrieval, plus anchors."""

    power: PolarSpectrumGrid
    anchors: tuple[AnchorPoint, ...] = ()
    snr_db: float | None = None
    seed: int | None = None
    sigma: float = 0.0

    def __post_init__(self):
        if np.any(self.power.values < 0):
            raise ValueError("squared magnitudes cannot be negative")


def measure_power(
    F: PolarSpectrumGrid,
    noise: NoiseSpec | None = None,
    anchors: tuple[AnchorPoint, ...] = (),
) -> Measurements:
    """Square the field magnitude, optionally after adding magnitude noise.

    The noise is zero-mean Gaussian, independent per sample, with the
    variance set from the grid-wide signal-to-noise ratio
    ``sum |F|^2 / (N sigma^2)``.  Anchor values are carried through
    untouched; they model the few reference samples measured coherently.
    """
    mag = np.abs(F.values)
    sigma = 0.0
    if noise is not None:
        n_samples = mag.size
        snr_lin = 10.0 ** (noise.snr_db / 10.0)
        sigma = math.sqrt(float(np.sum(mag**2)) / (n_samples * snr_lin))
        rng = np.random.default_rng(noise.seed)
        mag = mag + rng.normal(0.0, sigma, size=mag.shape)
    power = PolarSpectrumGrid(k=F.k, phi=F.phi, values=mag**2)
    return Measurements(
        power=power,
        anchors=anchors,
        snr_db=None if noise is None else noise.snr_db,
        seed=None if noise is None else noise.seed,
        sigma=sigma,
    )


def select_anchors(
    F: PolarSpectrumGrid,
    ring_radii: np.ndarray,
    diameter_azimuths: np.ndarray,
    pairs: int = 1,
    guard: float = 0.05,
) -> tuple[AnchorPoint, ...]:
    """Pick anchor pairs on ring and diameter crossings away from nulls.

    Walks the candidate rings from the smallest up and returns, for each
    of the first ``pairs`` diameters, the two opposite crossing points of
    the first ring where both field magnitudes clear ``guard`` times the
    ring maximum.
    """
    k_idx = {float(k): int(np.argmin(np.abs(F.k - k))) for k in ring_radii}
    n = F.phi.size
    out: list[AnchorPoint] = []
    for phid in diameter_azimuths[:pairs]:
        m = int(round(phid / (2 * math.pi) * n)) % n
        m_op = (m + n // 2) % n
        chosen = None
        for kq in ring_radii:
            i = k_idx[float(kq)]
            ring_peak = np.max(np.abs(F.values[i]))
            va, vb = F.values[i, m], F.values[i, m_op]
            if min(abs(va), abs(vb)) >= guard * ring_peak:
                chosen = (kq, i, m, m_op, va, vb)
                break
        if chosen is None:
            raise ValueError("no ring offers anchor points clear of nulls")
        kq, i, m, m_op, va, vb = chosen
        out.append(AnchorPoint(k=float(F.k[i]), phi=float(F.phi[m]), value=complex(va)))
        out.append(AnchorPoint(k=float(F.k[i]), phi=float(F.phi[m_op]), value=complex(vb)))
    return tuple(out)


def conjugate_reflect_spectrum(grid: PolarSpectrumGrid) -> PolarSpectrumGrid:
    """The spectrum of the conjugated, reflected source: conj(F(k, -phi)).

    This is the partner of every solution under squared-magnitude data;
    it shares the power map of the original exactly.
    """
    n = grid.phi.size
    if not np.allclose(grid.phi, azimuth_grid(n), rtol=0, atol=1e-12):
        raise GridMismatch("conjugate reflection needs the canonical azimuth grid")
    idx = (-np.arange(n)) % n
    return PolarSpectrumGrid(k=grid.k, phi=grid.phi, values=np.conj(grid.values[:, idx]))


def conjugate_reflect_source(f: ApertureFieldMap) -> ApertureFieldMap:
    """Conjugate the aperture field and mirror its azimuth."""
    n = f.phi.size
    if not np.allclose(f.phi, azimuth_grid(n), rtol=0, atol=1e-12):
        raise GridMismatch("conjugate reflection needs the canonical azimuth grid")
    idx = (-np.arange(n)) % n
    return ApertureFieldMap(rgrid=f.rgrid, phi=f.phi, values=np.conj(f.values[:, idx]))


def _aligned_nmse(ref: np.ndarray, rec: np.ndarray, w: np.ndarray, align: bool) -> float:
    den = float(np.sum(w * np.abs(ref) ** 2))
    if den == 0:
        raise ValueError("reference field has no energy")
    if align:
        inner = complex(np.sum(w * np.conj(ref) * rec))
        num = float(np.sum(w * np.abs(rec) ** 2)) + den - 2.0 * abs(inner)
    else:
        num = float(np.sum(w * np.abs(rec - ref) ** 2))
    return max(num, 0.0) / den


def _pick_branch(ref, rec, w, flip):
    """Return rec or its flipped partner, whichever matches ref better."""
    direct = _aligned_nmse(ref, rec, w, True)
    other = _aligned_nmse(ref, flip, w, True)
    return (rec, direct) if direct <= other else (flip, other)


def nmse_rf(
    ref: PolarSpectrumGrid,
    rec: PolarSpectrumGrid,
    align: bool = True,
    resolve_conjugate: bool = False,
) -> float:
    """Normalized mean square error between spectra, phase aligned.

    The global phase is the one unavoidable ambiguity of power-only
    data; alignment picks the phase minimizing the error analytically.
    With ``resolve_conjugate`` the conjugate-reflected branch is also
    tried, for pipelines that did not anchor it away.
    """
    if ref.k.shape != rec.k.shape or not np.allclose(ref.k, rec.k, rtol=0, atol=1e-9):
        raise GridMismatch("ring radii differ")
    if ref.phi.shape != rec.phi.shape or not np.allclose(ref.phi, rec.phi, rtol=0, atol=1e-12):
        raise GridMismatch("azimuth grids differ")
    w = ref.ring_weights[:, None] * np.ones_like(ref.phi)[None, :]
    if resolve_conjugate:
        flipped = conjugate_reflect_spectrum(rec).values
        _, err = _pick_branch(ref.values, rec.values, w, flipped)
        return err
    return _aligned_nmse(ref.values, rec.values, w, align)


def nmse_af(
    ref: ApertureFieldMap,
    rec: ApertureFieldMap,
    align: bool = True,
    resolve_conjugate: bool = False,
) -> float:
    """Normalized mean square error between aperture fields."""
    if len(ref.rgrid) != len(rec.rgrid) or not np.allclose(
        ref.rgrid.nodes, rec.rgrid.nodes, rtol=0, atol=1e-12
    ):
        raise GridMismatch("radial grids differ")
    if ref.phi.shape != rec.phi.shape or not np.allclose(ref.phi, rec.phi, rtol=0, atol=1e-12):
        raise GridMismatch("azimuth grids differ")
    w = ref.rgrid.weights[:, None] * np.ones_like(ref.phi)[None, :]
    if resolve_conjugate:
        flipped = conjugate_reflect_source(rec).values
        _, err = _pick_branch(ref.values, rec.values, w, flipped)
        return err
    return _aligned_nmse(ref.values, rec.values, w, align)
