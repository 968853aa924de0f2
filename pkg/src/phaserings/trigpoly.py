"""Power cuts along rings and diameters of a sampled pattern.

A pattern radiated by a finite circular source, restricted to a centered
ring or to a full diameter of the spectral plane, is a trigonometric
polynomial in the natural cut coordinate, so its squared magnitude is one
of doubled order.  This module extracts such cuts from a stored polar
measurement grid, estimates the order actually present in the data, and
fits the Hermitian coefficient sequence of the power polynomial that the
factorization stage consumes.

Cut coordinate conventions:

* ring cuts use the azimuth itself, sampled uniformly on [0, 2*pi);
* diameter cuts map the signed radial coordinate onto one period through
  u = pi * k / k_max, so the half-line at the cut azimuth covers (0, pi]
  and the opposite half-line covers [-pi, 0).  The two visible-edge
  points of a diameter are identified by this periodization; the model
  error that identification introduces is the caller's to budget.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridMismatch, IllConditioned, UndersampledSource
from .forward_sim import Measurements
from .spectral_core import ApertureGeometry, PolarSpectrumGrid, azimuth_grid

__all__ = [
    "Cut1D",
    "Diameter",
    "FieldCoeffs1D",
    "PowerCoeffs",
    "Ring",
    "diameter_order",
    "estimate_order_from_data",
    "fit_power_coeffs",
    "fit_with_guard",
    "power_coeffs_of_field",
    "ring_order",
    "sample_cut",
    "write_cut_csv",
]


@dataclass(frozen=True)
class Ring:
    """Cut at a constant radial coordinate; the cut variable is azimuth."""

    radius: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.radius) or self.radius < 0.0:
            raise ValueError("ring radius must be finite and nonnegative")


@dataclass(frozen=True)
class Diameter:
    """Cut through the origin at a fixed azimuth.

    The positive half of the cut coordinate runs along ``azimuth``, the
    negative half along ``azimuth + pi``.
    """

    azimuth: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.azimuth):
            raise ValueError("diameter azimuth must be finite")


@dataclass(frozen=True)
class Cut1D:
    """Sampled squared magnitude along one ring or diameter.

    ``order`` is the a-priori trigonometric order of the underlying field
    along the cut, not of the power samples; the power content extends to
    twice that.  ``noise_db`` carries the SNR of the parent measurement
    when there is one, so order estimation can pick its thresholding rule.
    """

    kind: Ring | Diameter
    u: np.ndarray
    power: np.ndarray
    order: int
    noise_db: float | None = None

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float)
        power = np.asarray(self.power, dtype=float)
        if u.ndim != 1 or power.shape != u.shape:
            raise ValueError("cut coordinate and power must be 1-D and congruent")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(power))):
            raise ValueError("cut samples must be finite")
        if self.order < 0:
            raise ValueError("cut order must be nonnegative")
        # Interpolated noisy cuts may undershoot zero slightly; anything
        # worse than a few percent of the peak is corrupt input.
        peak = float(power.max(initial=0.0))
        if power.size and float(power.min()) < -0.05 * max(peak, 1e-300):
            raise ValueError("power samples are substantially negative")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "power", power)

    @property
    def is_uniform(self) -> bool:
        """True when the samples tile one full period uniformly."""
        return _uniform_step(self.u) is not None


@dataclass(frozen=True)
class PowerCoeffs:
    """Hermitian coefficient sequence of a fitted power polynomial.

    ``values[i]`` holds the coefficient of exp(1j * p * u) with
    p = i - 2 * order, so the array spans p in [-2 * order, 2 * order].
    """

    order: int
    values: np.ndarray
    residual: float = 0.0
    residual_rel: float = 0.0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (4 * self.order + 1,):
            raise ValueError("coefficient count must be 4 * order + 1")
        object.__setattr__(self, "values", values)

    def coeff(self, p: int) -> complex:
        """Coefficient of exp(1j * p * u)."""
        if abs(p) > 2 * self.order:
            return 0.0 + 0.0j
        return complex(self.values[p + 2 * self.order])

    def eval(self, u: np.ndarray) -> np.ndarray:
        """Evaluate the power polynomial; real by Hermitian symmetry."""
        u = np.asarray(u, dtype=float)
        p = np.arange(1, 2 * self.order + 1)
        pos = self.values[2 * self.order + 1 :]
        phases = np.exp(1j * np.multiply.outer(u, p))
        return self.values[2 * self.order].real + 2.0 * (phases @ pos).real


@dataclass(frozen=True)
class FieldCoeffs1D:
    """Complex coefficient sequence of a field along one cut.

    ``values[i]`` is the coefficient of exp(1j * m * u) with
    m = i - order.
    """

    order: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (2 * self.order + 1,):
            raise ValueError("coefficient count must be 2 * order + 1")
        object.__setattr__(self, "values", values)

    def coeff(self, m: int) -> complex:
        if abs(m) > self.order:
            return 0.0 + 0.0j
        return complex(self.values[m + self.order])

    def eval(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        m = np.arange(-self.order, self.order + 1)
        return np.exp(1j * np.multiply.outer(u, m)) @ self.values

    def rotated(self, unit: complex) -> "FieldCoeffs1D":
        """Same field multiplied by a constant (normally unit modulus)."""
        return FieldCoeffs1D(self.order, self.values * unit)

    def shifted(self, steps: int) -> "FieldCoeffs1D":
        """Field multiplied by exp(1j * steps * u); support must fit."""
        if steps == 0:
            return self
        moved = np.roll(self.values, steps)
        cleared = moved.copy()
        if steps > 0:
            cleared[:steps] = 0.0
            spilled = self.values[-steps:]
        else:
            cleared[steps:] = 0.0
            spilled = self.values[:-steps]
        if np.any(spilled != 0.0):
            raise ValueError("shift pushes support outside the stored span")
        return FieldCoeffs1D(self.order, cleared)


def ring_order(radius: float, geom: ApertureGeometry) -> int:
    """Field order along a centered ring at the given radial coordinate.

    On that ring the radial basis functions of azimuthal index beyond
    radius * source_radius are evanescent, so the field is a
    trigonometric polynomial of this order for any source the geometry
    supports.
    """
    if radius < 0.0 or radius > geom.beta * (1.0 + 1e-12):
        raise ValueError("ring radius outside the visible interval")
    return int(np.ceil(radius * geom.radius - 1e-9))


def diameter_order(geom: ApertureGeometry) -> int:
    """Field order along any full diameter in the periodic cut coordinate."""
    return int(np.ceil(2.0 * geom.radius / geom.wavelength - 1e-9))


def estimate_order_from_data(cut: Cut1D, *, energy_tol: float = 1e-6) -> int:
    """Smallest even power order consistent with the sampled cut.

    Noiseless cuts keep the smallest even order whose discarded spectral
    energy falls below ``energy_tol`` of the total.  Noisy cuts instead
    threshold coefficient magnitudes at three times the median of the
    upper half of the spectrum, a crude per-cut noise floor.
    """
    if _uniform_step(cut.u) is None:
        raise GridMismatch("order estimation needs uniform periodic samples")
    n = cut.power.size
    coeff = np.fft.fft(cut.power) / n
    half = n // 2
    mags = np.zeros(half + 1)
    energy = np.zeros(half + 1)
    mags[0] = abs(coeff[0])
    energy[0] = abs(coeff[0]) ** 2
    for p in range(1, half + 1):
        terms = {p % n, (-p) % n}
        mags[p] = max(abs(coeff[t]) for t in terms)
        energy[p] = sum(abs(coeff[t]) ** 2 for t in terms)
    if cut.noise_db is not None:
        floor = 3.0 * float(np.median(mags[half // 2 :]))
        significant = np.nonzero(mags > floor)[0]
        top = int(significant.max(initial=0))
        return top + (top % 2)
    total = float(energy.sum())
    if total == 0.0:
        return 0
    tail = np.concatenate([np.cumsum(energy[::-1])[::-1][1:], [0.0]])
    for doubled in range(0, half + 2, 2):
        if doubled >= half or tail[doubled] < energy_tol * total:
            return min(doubled, half + half % 2)
    return half + half % 2


def sample_cut(
    meas: Measurements,
    kind: Ring | Diameter,
    geom: ApertureGeometry,
    *,
    density: int | None = None,
) -> Cut1D:
    """Extract one cut from a stored polar measurement grid.

    Stored rings are returned verbatim; anything else is reached by
    band-limited interpolation, trigonometric in azimuth and Dirichlet
    (periodic sampling series) along diameters.  ``density`` overrides
    the sample count along the cut.
    """
    grid = meas.power
    if isinstance(kind, Ring):
        return _sample_ring(grid, kind, geom, density, meas.snr_db)
    if isinstance(kind, Diameter):
        return _sample_diameter(grid, kind, geom, density, meas.snr_db)
    raise TypeError("cut kind must be Ring or Diameter")


def fit_power_coeffs(cut: Cut1D, order: int | None = None) -> PowerCoeffs:
    """Least-squares Hermitian power coefficients of one cut.

    Uniform full-period samples go through an FFT projection, which is
    the exact least-squares solution there; scattered samples fall back
    to a real-structured normal system.  Hermitian symmetry is enforced
    by construction in both paths.
    """
    p_field = cut.order if order is None else int(order)
    if p_field < 0:
        raise ValueError("fit order must be nonnegative")
    n_coeff = 4 * p_field + 1
    n = cut.u.size
    if n < n_coeff:
        raise UndersampledSource(
            f"cut has {n} samples, fitting order {p_field} needs {n_coeff}"
        )
    if cut.is_uniform:
        values = _fit_uniform(cut.u, cut.power, p_field)
    else:
        values = _fit_scattered(cut.u, cut.power, p_field)
    fitted = PowerCoeffs(order=p_field, values=values)
    synth = fitted.eval(cut.u)
    residual = float(np.max(np.abs(synth - cut.power), initial=0.0))
    peak = float(np.max(cut.power, initial=0.0))
    rel = residual / peak if peak > 0.0 else 0.0
    return PowerCoeffs(
        order=p_field, values=values, residual=residual, residual_rel=rel
    )


def fit_with_guard(
    cut: Cut1D,
    base_order: int,
    *,
    step: int = 2,
    max_extra: int = 8,
    residual_tol: float = 1e-6,
) -> PowerCoeffs:
    """Fit at ``base_order``, extending in steps while it clearly helps.

    The order grows by ``step`` whenever the relative residual exceeds
    ``residual_tol`` and the previous extension at least halved it, up to
    ``max_extra`` beyond the base.  Cuts that are not exactly
    trigonometric (diameters of a hard-edged source) plateau; the best
    fit reached is returned rather than an error.
    """
    best = fit_power_coeffs(cut, base_order)
    extra = 0
    previous = best.residual_rel
    while best.residual_rel > residual_tol and extra < max_extra:
        extra = min(extra + step, max_extra)
        trial = fit_power_coeffs(cut, base_order + extra)
        if trial.residual_rel < best.residual_rel:
            best = trial
        if trial.residual_rel > 0.5 * previous:
            break
        previous = trial.residual_rel
    return best


def power_coeffs_of_field(field: FieldCoeffs1D) -> PowerCoeffs:
    """Exact power coefficients of a known field: its autocorrelation."""
    values = np.convolve(field.values, np.conj(field.values)[::-1])
    return PowerCoeffs(order=field.order, values=values)


def write_cut_csv(cut: Cut1D, coeffs: PowerCoeffs | None, path: str | Path) -> None:
    """Dump one cut (and optionally its fit) for offline inspection."""
    fitted = coeffs.eval(cut.u) if coeffs is not None else None
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["u", "power", "fitted"])
        for i in range(cut.u.size):
            row = [repr(float(cut.u[i])), repr(float(cut.power[i]))]
            row.append(repr(float(fitted[i])) if fitted is not None else "")
            writer.writerow(row)


def _uniform_step(u: np.ndarray) -> float | None:
    """Step size if ``u`` tiles one period uniformly, else None."""
    if u.size < 2:
        return None
    steps = np.diff(u)
    step = steps[0]
    if step <= 0.0 or not np.allclose(steps, step, rtol=0.0, atol=1e-9):
        return None
    if abs(step * u.size - 2.0 * np.pi) > 1e-6:
        return None
    return float(step)


def _fit_uniform(u: np.ndarray, power: np.ndarray, p_field: int) -> np.ndarray:
    n = u.size
    spectrum = np.fft.fft(power) / n
    p = np.arange(-2 * p_field, 2 * p_field + 1)
    raw = spectrum[p % n] * np.exp(-1j * p * u[0])
    return 0.5 * (raw + np.conj(raw[::-1]))


def _fit_scattered(u: np.ndarray, power: np.ndarray, p_field: int) -> np.ndarray:
    doubled = 2 * p_field
    p = np.arange(1, doubled + 1)
    arg = np.multiply.outer(u, p)
    design = np.concatenate(
        [np.ones((u.size, 1)), 2.0 * np.cos(arg), -2.0 * np.sin(arg)], axis=1
    )
    solution, _, rank, singular = np.linalg.lstsq(design, power, rcond=None)
    if rank < design.shape[1] or singular[0] > 1e12 * max(singular[-1], 1e-300):
        raise IllConditioned("cut sample geometry does not determine the fit")
    values = np.zeros(2 * doubled + 1, dtype=complex)
    values[doubled] = solution[0]
    positive = solution[1 : doubled + 1] + 1j * solution[doubled + 1 :]
    values[doubled + 1 :] = positive
    values[:doubled] = np.conj(positive[::-1])
    return values


def _canonical_polar(grid: PolarSpectrumGrid) -> tuple[int, int]:
    """Validate the uniform polar layout the interpolators assume."""
    k = grid.k
    n_phi = grid.phi.size
    radial = k.size
    if radial < 2 or n_phi % 2:
        raise GridMismatch("interpolation needs an even azimuth count")
    step = k[-1] / (radial - 1)
    if k[0] != 0.0 or not np.allclose(np.diff(k), step, rtol=0.0, atol=1e-9):
        raise GridMismatch("radial nodes must be uniform from zero")
    expected = azimuth_grid(n_phi)
    if not np.allclose(grid.phi, expected, rtol=0.0, atol=1e-9):
        raise GridMismatch("azimuth nodes must be the canonical uniform grid")
    return radial, n_phi


def _periodized_diameters(grid: PolarSpectrumGrid) -> np.ndarray:
    """Stack all diameters as rows of one periodic sequence per column.

    Row t corresponds to u = -pi + pi * t / (radial - 1); column j pairs
    azimuth j (positive u) with azimuth j + n/2 (negative u).  The
    positive-edge point u = +pi is the same periodic node as -pi and is
    dropped.
    """
    radial, n_phi = _canonical_polar(grid)
    m = 2 * (radial - 1)
    half = n_phi // 2
    seq = np.empty((m, half), dtype=float)
    seq[radial - 1 :, :] = grid.values[: radial - 1, :half].real
    seq[: radial - 1, :] = grid.values[radial - 1 : 0 : -1, half:].real
    return seq


def _eval_periodic(seq: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of real periodic columns.

    ``positions`` are fractional row indices; returns one row per
    position.  Exact for sequences band-limited below the row count.
    """
    m = seq.shape[0]
    spectrum = np.fft.rfft(seq, axis=0)
    if m % 2 == 0:
        spectrum[-1] *= 0.5
    freqs = np.arange(spectrum.shape[0])
    phases = np.exp(2j * np.pi * np.multiply.outer(positions, freqs) / m)
    partial = phases @ spectrum
    return (2.0 * partial.real - spectrum[0].real[None, :]) / m


def _resample_ring_row(row: np.ndarray, density: int) -> np.ndarray:
    """Trigonometric resampling of one real ring row onto ``density``."""
    n = row.size
    if density == n:
        return row.copy()
    spectrum = np.fft.rfft(row)
    if n % 2 == 0:
        spectrum = spectrum.copy()
        spectrum[-1] *= 0.5
    keep = min(spectrum.size - 1, (density - 1) // 2)
    freqs = np.arange(keep + 1)
    phases = np.exp(2j * np.pi * np.multiply.outer(np.arange(density), freqs) / density)
    partial = phases @ spectrum[: keep + 1]
    return (2.0 * partial.real - spectrum[0].real) / n


def _sample_ring(
    grid: PolarSpectrumGrid,
    kind: Ring,
    geom: ApertureGeometry,
    density: int | None,
    noise_db: float | None,
) -> Cut1D:
    order = ring_order(kind.radius, geom)
    need = 4 * order + 1
    n_phi = grid.phi.size
    if n_phi < need:
        raise UndersampledSource(
            f"stored azimuth count {n_phi} is below the ring requirement {need}"
        )
    n_out = n_phi if density is None else int(density)
    if n_out < need:
        raise UndersampledSource(
            f"requested density {n_out} is below the ring requirement {need}"
        )
    hit = np.nonzero(np.abs(grid.k - kind.radius) <= 1e-9 * max(geom.beta, 1.0))[0]
    if hit.size:
        row = grid.values[hit[0]].real.astype(float)
    else:
        radial, _ = _canonical_polar(grid)
        seq = _periodized_diameters(grid)
        span = grid.k[-1]
        position = (kind.radius / span + 1.0) * (radial - 1)
        halves = _eval_periodic(seq, np.array([position, 2.0 * (radial - 1) - position]))
        row = np.concatenate([halves[0], halves[1]])
    if n_out != row.size:
        row = _resample_ring_row(row, n_out)
    return Cut1D(
        kind=kind,
        u=azimuth_grid(n_out),
        power=row,
        order=order,
        noise_db=noise_db,
    )


def _sample_diameter(
    grid: PolarSpectrumGrid,
    kind: Diameter,
    geom: ApertureGeometry,
    density: int | None,
    noise_db: float | None,
) -> Cut1D:
    radial, n_phi = _canonical_polar(grid)
    order = diameter_order(geom)
    need = 4 * order + 1
    m = 2 * (radial - 1)
    if m < need:
        raise UndersampledSource(
            f"stored radial count supports {m} diameter samples, need {need}"
        )
    n_out = m if density is None else int(density)
    if n_out < need:
        raise UndersampledSource(
            f"requested density {n_out} is below the diameter requirement {need}"
        )
    step = 2.0 * np.pi / n_phi
    slot = kind.azimuth / step
    n_half = n_phi // 2
    if abs(slot - round(slot)) <= 1e-9:
        j1 = int(round(slot)) % n_phi
        j2 = (j1 + n_half) % n_phi
        seq_full = np.empty(m, dtype=float)
        seq_full[radial - 1 :] = grid.values[: radial - 1, j1].real
        seq_full[: radial - 1] = grid.values[radial - 1 : 0 : -1, j2].real
    else:
        spectrum = np.fft.fft(grid.values.real.astype(float), axis=1) / n_phi
        freqs = np.fft.fftfreq(n_phi, d=1.0 / n_phi)
        at = np.exp(1j * np.multiply.outer(freqs, [kind.azimuth, kind.azimuth + np.pi]))
        both = (spectrum @ at).real
        seq_full = np.empty(m, dtype=float)
        seq_full[radial - 1 :] = both[: radial - 1, 0]
        seq_full[: radial - 1] = both[radial - 1 : 0 : -1, 1]
    if n_out != m:
        seq_full = _eval_periodic(
            seq_full[:, None], np.arange(n_out) * (m / n_out)
        )[:, 0]
    u = -np.pi + 2.0 * np.pi * np.arange(n_out) / n_out
    return Cut1D(kind=kind, u=u, power=seq_full, order=order, noise_db=noise_db)
