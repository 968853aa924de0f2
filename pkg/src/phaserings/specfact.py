"""1-D spectral factorization of fitted power cuts.

The squared magnitude of a trigonometric field polynomial factors over
its zeros, which arrive in conjugate-reciprocal couples; choosing one
member per couple is exactly the residual 1-D phase ambiguity.  This
module finds the couples, rebuilds candidate fields from membership
selections, walks the selection space under progressively stronger
pruning rules, and follows zero trajectories from ring to ring so that
choices made on one ring keep pruning the next.

Couples whose members sit very close to zero and infinity come from
coefficient tails at the trim level rather than from field structure.
Flipping such a couple multiplies the field by a near-constant unit
factor, so the enumeration can freeze them (see ``flip_impact``) instead
of doubling the candidate count for nothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations, product
from math import log
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyCandidateSet, PairingFailure, TrackLost
from .trigpoly import FieldCoeffs1D, PowerCoeffs

__all__ = [
    "CandidateField1D",
    "CandidateMode",
    "TrackContext",
    "ZeroPairing",
    "ZeroTrack",
    "chordal",
    "enumerate_candidates",
    "factorize_power",
    "flip_impact",
    "pair_zeros",
    "reconstruct_from_selection",
    "roots_of_power_poly",
    "track_zeros",
    "write_zero_csv",
]

_TINY = 1e-300


def chordal(z: complex, w: complex) -> float:
    """Riemann-sphere chordal distance; tame for huge moduli."""
    return 2.0 * abs(z - w) / np.sqrt((1.0 + abs(z) ** 2) * (1.0 + abs(w) ** 2))


class CandidateMode:
    """Enumeration regimes, from exhaustive to continuation-guided."""

    ALL = "all"
    BALANCED = "balanced"
    TRACKED = "tracked"


@dataclass(frozen=True)
class ZeroPairing:
    """Conjugate-reciprocal couples of one power polynomial.

    ``pairs`` holds (inner, outer) members with the inner modulus never
    above the outer.  ``unit_zeros`` are collapsed double roots on the
    unit circle, which carry no flip freedom.  ``log_scale`` is the log
    magnitude of the trimmed leading power coefficient; together with a
    selection it fixes the candidate amplitude.
    """

    pairs: tuple[tuple[complex, complex], ...]
    unit_zeros: tuple[complex, ...]
    log_scale: float = 0.0
    residuals: tuple[float, ...] = ()

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))

    @property
    def field_zero_count(self) -> int:
        return len(self.pairs) + len(self.unit_zeros)

    def impacts(self, samples: int = 256) -> np.ndarray:
        """Flip impact of every couple, in phase radians."""
        return np.array([flip_impact(z_in, samples=samples) for z_in, _ in self.pairs])


@dataclass(frozen=True)
class CandidateField1D:
    """One admissible field along a cut: a selection plus its coefficients."""

    selection: tuple[bool, ...]
    coeffs: FieldCoeffs1D
    phase_ref: complex = 1.0 + 0.0j
    branch: int | None = None

    def eval(self, u: np.ndarray) -> np.ndarray:
        return self.coeffs.eval(u)

    def rotated(self, unit: complex) -> "CandidateField1D":
        return CandidateField1D(
            selection=self.selection,
            coeffs=self.coeffs.rotated(unit),
            phase_ref=self.phase_ref * unit,
            branch=self.branch,
        )


@dataclass(frozen=True)
class TrackContext:
    """What a new ring inherits from the previous one.

    ``parents`` are surviving (branch id, selection) pairs on the
    previous ring; ``matched`` maps each new couple to its previous
    index, or None for a birth.
    """

    parents: tuple[tuple[int, tuple[bool, ...]], ...]
    matched: tuple[int | None, ...]


@dataclass(frozen=True)
class ZeroTrack:
    """Zero trajectories over a sweep of rings.

    ``correspondences[i][j]`` gives, for couple j of ring i, the couple
    index on ring i - 1 it continues, or None for a birth.  ``lineages``
    assigns a stable id to every couple so trajectories can be plotted.
    Crossings are only observable when a ring catches a couple inside
    the unit tie tolerance, so the recorded events are those the sweep
    actually saw.
    """

    rings: tuple[float, ...]
    pairings: tuple[ZeroPairing, ...]
    correspondences: tuple[tuple[int | None, ...], ...]
    lineages: tuple[tuple[int, ...], ...]
    births: tuple[tuple[int, int], ...]
    crossings: tuple[tuple[int, int], ...]

    @property
    def latest(self) -> ZeroPairing:
        return self.pairings[-1]


def roots_of_power_poly(
    coeffs: PowerCoeffs,
    order: int | None = None,
    *,
    trim_rel: float = 1e-12,
    polish: bool = True,
) -> np.ndarray:
    """All zeros of the power polynomial, after trimming dead leading terms.

    The Hermitian sequence is trimmed symmetrically where its magnitude
    falls below ``trim_rel`` of the peak, which silently deflates an
    overstated order; a sequence with no content beyond the constant term
    has no zeros.  Root accuracy near and far from the unit circle is
    restored by a few polishing steps on the polynomial or on its
    coefficient reversal, whichever is well conditioned for that root.
    """
    ascending, _ = _trimmed(coeffs, trim_rel)
    degree = ascending.size - 1
    if degree == 0:
        return np.zeros(0, dtype=complex)
    roots = np.roots(ascending[::-1])
    if polish:
        roots = _polish(roots, ascending)
    if order is not None and degree > 4 * order:
        raise PairingFailure(
            f"power content spans degree {degree}, above the stated order {order}"
        )
    return roots


def pair_zeros(
    roots: np.ndarray,
    pair_tol: float = 1e-6,
    *,
    leading_mag: float | None = None,
) -> ZeroPairing:
    """Couple the roots across the unit circle.

    Roots are split into an inner and an outer half by modulus, then
    matched one-to-one by minimizing the total chordal distance between
    each outer root and the reflection of an inner one.  Couples whose
    members coincide on the circle within ``pair_tol`` collapse into
    unit zeros.  The reported per-couple residual is
    ``|inner * conj(outer) - 1|``; acceptance, however, is judged on the
    chordal mismatch, which stays meaningful for couples far from the
    circle.
    """
    roots = np.asarray(roots, dtype=complex)
    if roots.size % 2:
        raise PairingFailure(f"odd root count {roots.size} cannot be coupled")
    half = roots.size // 2
    log_scale = 0.0 if leading_mag is None else log(max(leading_mag, _TINY))
    if half == 0:
        return ZeroPairing(pairs=(), unit_zeros=(), log_scale=log_scale)
    by_modulus = roots[np.argsort(np.abs(roots), kind="stable")]
    inner, outer = by_modulus[:half], by_modulus[half:]
    reflected = 1.0 / np.conj(np.where(np.abs(inner) < _TINY, _TINY, inner))
    cost = np.empty((half, half))
    for i in range(half):
        for j in range(half):
            cost[i, j] = chordal(reflected[i], outer[j])
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(rows, kind="stable")
    pairs: list[tuple[complex, complex]] = []
    units: list[complex] = []
    residuals: list[float] = []
    for i in order:
        z_in, z_out = inner[rows[i]], outer[cols[i]]
        mismatch = cost[rows[i], cols[i]]
        if (
            abs(abs(z_in) - 1.0) < pair_tol
            and abs(abs(z_out) - 1.0) < pair_tol
            and chordal(z_in, z_out) < 2.0 * pair_tol
        ):
            mean = 0.5 * (z_in + z_out)
            units.append(mean / abs(mean))
            continue
        if mismatch > pair_tol:
            raise PairingFailure(
                f"couple ({z_in:.6g}, {z_out:.6g}) mismatches by {mismatch:.3g}"
            )
        pairs.append((complex(z_in), complex(z_out)))
        residuals.append(float(abs(z_in * np.conj(z_out) - 1.0)))
    keys = np.lexsort(
        (
            [abs(z) for z, _ in pairs],
            [np.angle(z) for z, _ in pairs],
        )
    )
    pairs = [pairs[i] for i in keys]
    residuals = [residuals[i] for i in keys]
    units.sort(key=np.angle)
    return ZeroPairing(
        pairs=tuple(pairs),
        unit_zeros=tuple(units),
        log_scale=log_scale,
        residuals=tuple(residuals),
    )


def factorize_power(
    coeffs: PowerCoeffs,
    pair_tol: float = 1e-6,
    *,
    trim_rel: float = 1e-12,
) -> ZeroPairing:
    """Root-find and couple one fitted power polynomial, scale included."""
    ascending, _ = _trimmed(coeffs, trim_rel)
    roots = roots_of_power_poly(coeffs, trim_rel=trim_rel)
    return pair_zeros(roots, pair_tol, leading_mag=float(abs(ascending[-1])))


def flip_impact(z_in: complex, *, samples: int = 256) -> float:
    """Field change from flipping one couple, as residual phase swing.

    Flipping multiplies the field by the unit-modulus ratio of the two
    couple factors.  Its phase always winds once around the circle; the
    winding amounts to an index shift that reconstruction re-centers
    away, so what discriminates candidates is only the swing around that
    linear trend.  Couples born of coefficient tails near zero and
    infinity swing by next to nothing.
    """
    r = abs(z_in)
    if r < _TINY:
        return 0.0
    u = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    e = np.exp(1j * u)
    z_out = 1.0 / np.conj(z_in)
    phase = np.unwrap(np.angle((e - z_out) / (e - z_in)))
    closing = np.angle(
        (1.0 - z_out) / (1.0 - z_in) / np.exp(1j * (phase[-1] % (2.0 * np.pi)))
    )
    winding = np.round((phase[-1] + closing - phase[0]) / (2.0 * np.pi))
    detrended = phase - winding * u
    return float(detrended.max() - detrended.min())


def reconstruct_from_selection(
    pairing: ZeroPairing, selection: tuple[bool, ...]
) -> FieldCoeffs1D:
    """Field coefficients of one membership selection.

    A True bit takes the outer member of the couple.  The expanded
    product is centered in the Laurent sense (odd supports lean one slot
    low) and scaled so its squared magnitude reproduces the fitted power;
    the global phase is a convention, largest coefficient real positive,
    until a caller pins it to data.
    """
    if len(selection) != len(pairing.pairs):
        raise ValueError("selection length must match the couple count")
    zeros = [pair[1] if bit else pair[0] for pair, bit in zip(pairing.pairs, selection)]
    zeros.extend(pairing.unit_zeros)
    count = len(zeros)
    if count == 0:
        amplitude = float(np.exp(0.5 * pairing.log_scale))
        return FieldCoeffs1D(0, np.array([amplitude], dtype=complex))
    log_amp = 0.5 * (
        pairing.log_scale - sum(log(max(abs(z), _TINY)) for z in zeros)
    )
    ascending = np.poly(zeros)[::-1] * np.exp(log_amp)
    low = -(count // 2)
    order = max(count + low, -low)
    values = np.zeros(2 * order + 1, dtype=complex)
    values[low + order : low + order + count + 1] = ascending
    anchor = values[np.argmax(np.abs(values))]
    if abs(anchor) > 0.0:
        values = values * np.conj(anchor) / abs(anchor)
    return FieldCoeffs1D(order, values)


def enumerate_candidates(
    pairing: ZeroPairing,
    mode: str,
    *,
    inside_target: int | None = None,
    track: TrackContext | None = None,
    freeze_impact: float | None = None,
) -> list[CandidateField1D]:
    """Admissible fields of one cut under the requested pruning regime.

    ``all`` walks every selection; ``balanced`` keeps those with exactly
    ``inside_target`` inner members chosen (default: half the field
    zeros, the generic count for a spectrum free of interior nulls);
    ``tracked`` extends the surviving previous-ring branches through a
    ``TrackContext``, doubling only at births.  With ``freeze_impact``
    set, couples whose flip swings the field by less than that are
    pinned in alternation rather than enumerated.
    """
    n = len(pairing.pairs)
    frozen: dict[int, bool] = {}
    if freeze_impact is not None and n:
        impacts = pairing.impacts()
        rank = 0
        for i in range(n):
            if impacts[i] < freeze_impact:
                frozen[i] = bool(rank % 2)
                rank += 1
    free = [i for i in range(n) if i not in frozen]

    selections: list[tuple[bool, ...]]
    branches: dict[tuple[bool, ...], int] = {}
    if mode == CandidateMode.ALL:
        selections = [
            _assemble(n, free, bits, frozen) for bits in product((False, True), repeat=len(free))
        ]
    elif mode == CandidateMode.BALANCED:
        target = (
            pairing.field_zero_count // 2 if inside_target is None else inside_target
        )
        quota = target - sum(1 for bit in frozen.values() if not bit)
        if quota < 0 or quota > len(free):
            raise EmptyCandidateSet(
                f"no selection reaches {target} inner zeros with {n} couples"
            )
        selections = []
        for chosen in combinations(free, quota):
            inside = set(chosen)
            bits = tuple(i not in inside for i in free)
            selections.append(_assemble(n, free, bits, frozen))
    elif mode == CandidateMode.TRACKED:
        if track is None or not track.parents:
            raise EmptyCandidateSet("tracked enumeration requires surviving parents")
        if len(track.matched) != n:
            raise ValueError("track context does not cover the couple count")
        births = [i for i in free if track.matched[i] is None]
        seen: dict[tuple[bool, ...], int] = {}
        for branch_id, parent in track.parents:
            base = {}
            for i in range(n):
                if i in frozen:
                    base[i] = frozen[i]
                elif track.matched[i] is not None:
                    base[i] = parent[track.matched[i]]
            for bits in product((False, True), repeat=len(births)):
                full = dict(base)
                full.update(dict(zip(births, bits)))
                sel = tuple(full[i] for i in range(n))
                if sel not in seen:
                    seen[sel] = branch_id
        selections = list(seen)
        branches = seen
    else:
        raise ValueError(f"unknown enumeration mode {mode!r}")

    if not selections:
        raise EmptyCandidateSet("no admissible selection")
    selections = sorted(set(selections))
    return [
        CandidateField1D(
            selection=sel,
            coeffs=reconstruct_from_selection(pairing, sel),
            branch=branches.get(sel),
        )
        for sel in selections
    ]


def track_zeros(
    prev: ZeroTrack | None,
    pairing: ZeroPairing,
    ring: float,
    *,
    track_tol: float | None = None,
    significant_impact: float = 1e-8,
) -> ZeroTrack:
    """Extend zero trajectories by one ring.

    Couples and unit zeros are matched to the previous ring by chordal
    distance, Hungarian-optimal, with matches worse than ``track_tol``
    rejected into births and deaths.  Losing a couple whose flip matters
    (impact at or above ``significant_impact``) means the sweep is too
    coarse; that raises so the caller can refine the spacing or fall
    back to a blinder enumeration mode.
    """
    reps_new = [z for z, _ in pairing.pairs] + list(pairing.unit_zeros)
    n_pairs_new = len(pairing.pairs)
    if prev is None:
        lineage = tuple(range(len(reps_new)))
        return ZeroTrack(
            rings=(ring,),
            pairings=(pairing,),
            correspondences=((None,) * len(reps_new),),
            lineages=(lineage,),
            births=(),
            crossings=(),
        )

    before = prev.latest
    reps_old = [z for z, _ in before.pairs] + list(before.unit_zeros)
    n_pairs_old = len(before.pairs)
    impacts_old = list(before.impacts()) + [np.inf] * len(before.unit_zeros)
    impacts_new = list(pairing.impacts()) + [np.inf] * len(pairing.unit_zeros)

    if track_tol is None:
        track_tol = _default_track_tol(reps_old, impacts_old, significant_impact)

    matched_new: list[int | None] = [None] * len(reps_new)
    if reps_old and reps_new:
        cost = np.empty((len(reps_old), len(reps_new)))
        for i, z_old in enumerate(reps_old):
            for j, z_new in enumerate(reps_new):
                cost[i, j] = chordal(z_old, z_new)
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] <= track_tol:
                matched_new[j] = int(i)

    lost = set(range(len(reps_old))) - {m for m in matched_new if m is not None}
    for i in lost:
        if impacts_old[i] >= significant_impact:
            raise TrackLost(
                f"couple near {reps_old[i]:.4g} lost between rings "
                f"{prev.rings[-1]:.6g} and {ring:.6g}"
            )
    for j, source in enumerate(matched_new):
        if source is None and impacts_new[j] >= significant_impact and reps_old:
            nearest = min(chordal(reps_new[j], z) for z in reps_old)
            if nearest > 10.0 * track_tol:
                continue  # genuinely new structure, a legitimate birth
            raise TrackLost(
                f"significant couple near {reps_new[j]:.4g} appeared within "
                f"{nearest:.3g} of existing structure; spacing too coarse"
            )

    ring_pos = len(prev.rings)
    old_lineage = prev.lineages[-1]
    next_id = max((i for lin in prev.lineages for i in lin), default=-1) + 1
    lineage = []
    births = list(prev.births)
    crossings = list(prev.crossings)
    for j, source in enumerate(matched_new):
        if source is None:
            lineage.append(next_id)
            next_id += 1
            births.append((ring_pos, j))
        else:
            lineage.append(old_lineage[source])
            was_pair = source < n_pairs_old
            is_pair = j < n_pairs_new
            if was_pair != is_pair:
                crossings.append((ring_pos, j))
    return ZeroTrack(
        rings=prev.rings + (ring,),
        pairings=prev.pairings + (pairing,),
        correspondences=prev.correspondences + (tuple(matched_new),),
        lineages=prev.lineages + (tuple(lineage),),
        births=tuple(births),
        crossings=tuple(crossings),
    )


def write_zero_csv(track: ZeroTrack, path: str | Path) -> None:
    """Dump every tracked zero for trajectory plots."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["ring_index", "ring", "re", "im", "modulus", "branch"])
        for i, (ring, pairing) in enumerate(zip(track.rings, track.pairings)):
            lineage = track.lineages[i]
            members: list[tuple[complex, int]] = []
            for j, (z_in, z_out) in enumerate(pairing.pairs):
                members.append((z_in, lineage[j]))
                members.append((z_out, lineage[j]))
            offset = len(pairing.pairs)
            for j, z in enumerate(pairing.unit_zeros):
                members.append((z, lineage[offset + j]))
            for z, branch in members:
                writer.writerow(
                    [i, repr(ring), repr(z.real), repr(z.imag), repr(abs(z)), branch]
                )


def _assemble(
    n: int, free: list[int], bits: tuple[bool, ...], frozen: dict[int, bool]
) -> tuple[bool, ...]:
    out = [False] * n
    for i, bit in zip(free, bits):
        out[i] = bit
    for i, bit in frozen.items():
        out[i] = bit
    return tuple(out)


def _trimmed(coeffs: PowerCoeffs, trim_rel: float) -> tuple[np.ndarray, int]:
    """Ascending coefficient array after symmetric dead-edge trimming."""
    values = coeffs.values
    doubled = 2 * coeffs.order
    peak = float(np.max(np.abs(values), initial=0.0))
    if peak == 0.0:
        return np.zeros(1, dtype=complex), 0
    span = 0
    for q in range(doubled, 0, -1):
        edge = max(abs(values[q + doubled]), abs(values[doubled - q]))
        if edge >= trim_rel * peak:
            span = q
            break
    return values[doubled - span : doubled + span + 1], span


def _polish(roots: np.ndarray, ascending: np.ndarray) -> np.ndarray:
    reversed_coeffs = ascending[::-1]
    polished = np.empty_like(roots)
    for i, z in enumerate(roots):
        if abs(z) <= 1.0:
            polished[i] = _newton(z, ascending)
        else:
            w = _newton(1.0 / z, reversed_coeffs)
            polished[i] = 1.0 / w if abs(w) > _TINY else z
    return polished


def _newton(z: complex, ascending: np.ndarray, steps: int = 3) -> complex:
    for _ in range(steps):
        value = np.polynomial.polynomial.polyval(z, ascending)
        slope = np.polynomial.polynomial.polyval(
            z, np.polynomial.polynomial.polyder(ascending)
        )
        if abs(slope) < _TINY:
            break
        step = value / slope
        if not np.isfinite(step):
            break
        z_next = z - step
        if abs(z_next - z) < 1e-15 * (1.0 + abs(z)):
            z = z_next
            break
        z = z_next
    return z


def _default_track_tol(
    reps: list[complex], impacts: list[float], significant: float
) -> float:
    anchors = [z for z, imp in zip(reps, impacts) if imp >= significant]
    if len(anchors) < 2:
        return 0.5
    gaps = [
        chordal(anchors[i], anchors[j])
        for i in range(len(anchors))
        for j in range(i + 1, len(anchors))
    ]
    return 0.5 * min(gaps)
