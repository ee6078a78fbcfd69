"""Contour-evolution annotation noise.

An annotator is modelled by a bias sequence along the object contour: a few
equally spaced control pixels get i.i.d. Gaussian offsets, a low-degree
polynomial is fitted through them, and every contour pixel is then pushed
along its outward normal by the polynomial's value at its index. A federation
draws one such annotator per client.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import geometry
from .errors import (
    ContourTooShort,
    DegreeTooHigh,
    DuplicateIndices,
    SingularSystem,
)

log = logging.getLogger(__name__)

DEFAULT_DEGREE = 5


@dataclass(frozen=True)
class CemParams:
    """One annotator: mean bias ``mu`` and spread ``sigma`` in pixels.

    ``mu`` is the preference term (positive draws objects larger), ``sigma``
    the randomness along the contour. ``l_sub=None`` picks
    ``max(8, ceil(l / 25))`` control pixels for a contour of length ``l``.
    """

    mu: float
    sigma: float
    l_sub: int | None = None
    degree_p: int = DEFAULT_DEGREE

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.degree_p < 0:
            raise ValueError("degree_p must be >= 0")
        if self.l_sub is not None and self.degree_p > self.l_sub - 1:
            raise DegreeTooHigh(f"degree {self.degree_p} needs l_sub >= {self.degree_p + 1}")

    def control_count(self, contour_len: int) -> int:
        if self.l_sub is not None:
            return self.l_sub
        return max(8, math.ceil(contour_len / 25))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class HeteroNoiseParams:
    mu_max: float
    mu_min: float
    sigma_max: float
    p_d: float

    def __post_init__(self):
        if not self.mu_min < 0 < self.mu_max:
            raise ValueError("need mu_min < 0 < mu_max")
        if self.sigma_max <= 0:
            raise ValueError("sigma_max must be > 0")
        if not 0.0 <= self.p_d <= 1.0:
            raise ValueError("p_d must lie in [0, 1]")


@dataclass
class BiasPolynomial:
    """Least-squares polynomial in a rescaled abscissa ``x = (u - center) / scale``."""

    coeffs: np.ndarray  # a_0..a_p in the rescaled basis
    center: float
    scale: float

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, u):
        x = (np.asarray(u, dtype=float) - self.center) / self.scale
        return np.polynomial.polynomial.polyval(x, self.coeffs)


def fit_bias_polynomial(indices, samples, degree_p: int) -> BiasPolynomial:
    """Fit a degree-``degree_p`` polynomial to ``(indices, samples)``.

    Solved by SVD least squares on the Vandermonde matrix of the indices
    mapped to [-1, 1]; this is the unique minimiser of the normal equations.
    """
    u = np.asarray(indices, dtype=float)
    v = np.asarray(samples, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("indices and samples must be 1-D of equal length")
    if len(np.unique(u)) != len(u):
        raise DuplicateIndices("control indices must be distinct")
    if degree_p > len(u) - 1:
        raise DegreeTooHigh(f"degree {degree_p} needs at least {degree_p + 1} samples")
    lo, hi = u.min(), u.max()
    center = 0.5 * (lo + hi)
    scale = 0.5 * (hi - lo) if hi > lo else 1.0
    x = (u - center) / scale
    vander = np.polynomial.polynomial.polyvander(x, degree_p)
    coeffs, _, rank, _ = np.linalg.lstsq(vander, v, rcond=None)
    if rank < degree_p + 1:
        raise SingularSystem("moment matrix is singular")
    return BiasPolynomial(coeffs=coeffs, center=center, scale=scale)


def control_indices(contour_len: int, l_sub: int, degree_p: int) -> np.ndarray:
    """Equally spaced 1-based indices including both ends of the contour."""
    if contour_len < degree_p + 1:
        raise ContourTooShort(f"contour of {contour_len} pixels is too short for degree {degree_p}")
    n = l_sub
    while True:
        if n == 1:
            idx = np.array([1])
        else:
            k = np.arange(n)
            idx = np.unique(np.floor(1 + k * (contour_len - 1) / (n - 1)).astype(int))
        if len(idx) >= degree_p + 1 or n >= contour_len:
            return idx
        n += 1


def generate_bias(contour_len: int, params: CemParams, rng) -> np.ndarray:
    """Bias in pixels for contour indices ``1..contour_len`` (positive = outward)."""
    l_sub = params.control_count(contour_len)
    if contour_len < l_sub or l_sub < params.degree_p + 1:
        raise ContourTooShort(
            f"contour of {contour_len} pixels cannot host {l_sub} control points "
            f"of a degree-{params.degree_p} fit"
        )
    idx = control_indices(contour_len, l_sub, params.degree_p)
    samples = rng.normal(params.mu, params.sigma, size=len(idx))
    poly = fit_bias_polynomial(idx, samples, params.degree_p)
    return poly(np.arange(1, contour_len + 1))


def bias_variance(contour_len: int, l_sub: int, degree_p: int, sigma: float) -> np.ndarray:
    """Closed-form per-index variance of the fitted bias.

    Each fitted value is a fixed linear combination ``beta_j . v`` of the
    i.i.d. control samples, so its variance is ``sigma**2 * sum(beta_j**2)``.
    """
    idx = control_indices(contour_len, l_sub, degree_p).astype(float)
    lo, hi = idx.min(), idx.max()
    center, scale = 0.5 * (lo + hi), 0.5 * (hi - lo)
    fit_v = np.polynomial.polynomial.polyvander((idx - center) / scale, degree_p)
    all_u = (np.arange(1, contour_len + 1) - center) / scale
    eval_v = np.polynomial.polynomial.polyvander(all_u, degree_p)
    beta = eval_v @ np.linalg.pinv(fit_v)
    return sigma**2 * np.sum(beta**2, axis=1)


@dataclass
class CemResult:
    noisy_mask: np.ndarray
    noise_map: np.ndarray
    dropped: int = 0  # components erased by a large inward bias
    untouched: int = 0  # components too small to trace, copied through


def _collapsed(points, moved, bias, component) -> bool:
    """True when the inward bias pushed the contour through its own object.

    Such a polygon can keep its orientation (every point lands past the far
    side), so the test counts inward-moving points that end up outside the
    original component.
    """
    if np.sign(geometry.polygon_signed_area(moved)) != np.sign(
        geometry.polygon_signed_area(points)
    ):
        return True
    inward = bias < 0
    if not inward.any():
        return False
    h, w = component.shape
    rc = np.rint(moved[inward]).astype(int)
    ok = (rc[:, 0] >= 0) & (rc[:, 0] < h) & (rc[:, 1] >= 0) & (rc[:, 1] < w)
    landed = np.zeros(len(rc), dtype=bool)
    landed[ok] = component[rc[ok, 0], rc[ok, 1]]
    return (~landed).sum() > 0.5 * len(bias)


def apply_cem(mask, params: CemParams, rng, window: int = 5) -> CemResult:
    """Corrupt ``mask`` by evolving each component's contour.

    Components are processed in tracing order with the same ``rng``. A
    component whose evolved polygon collapses (empty fill or reversed
    orientation) is removed from the annotation.
    """
    m = geometry.as_mask(mask)
    noisy = np.zeros_like(m)
    dropped = untouched = 0
    if not m.any():
        return CemResult(noisy_mask=noisy, noise_map=noisy.copy())
    labels, _ = geometry.label_components(m)
    sdf = geometry.signed_distance(m) if not m.all() else None
    traced = np.zeros_like(m)
    for contour in geometry.trace_contours(m, drop_degenerate=True):
        r, c = contour.points[0]
        component = labels == labels[r, c]
        traced |= component
        try:
            bias = generate_bias(len(contour), params, rng)
        except ContourTooShort:
            noisy |= component
            untouched += 1
            continue
        contour = geometry.compute_normals(contour, m, window=window, sdf=sdf)
        moved = contour.points + bias[:, None] * contour.normals
        filled = geometry.rasterize_polygon(moved, *m.shape)
        if _collapsed(contour.points, moved, bias, component) or not filled.any():
            dropped += 1
            continue
        noisy |= filled
    # components below the tracer's minimum size are copied through
    small = m & ~traced
    if small.any():
        noisy |= small
        untouched += int(geometry.label_components(small)[1])
    if dropped:
        log.debug("%d component(s) annihilated by inward bias", dropped)
    return CemResult(noisy_mask=noisy, noise_map=m ^ noisy, dropped=dropped, untouched=untouched)


def assign_client_cems(
    num_clients: int,
    params: HeteroNoiseParams,
    rng,
    l_sub: int | None = None,
    degree_p: int = DEFAULT_DEGREE,
) -> list[CemParams]:
    """Draw one annotator per client.

    With probability ``p_d`` the mean bias is ``U(0, mu_max)``, otherwise
    ``U(mu_min, 0)``; the spread is ``U(sigma_max / 2, sigma_max)``.
    """
    if num_clients < 1:
        raise ValueError("need at least one client")
    out = []
    for _ in range(num_clients):
        if rng.random() < params.p_d:
            mu = rng.uniform(0.0, params.mu_max)
        else:
            mu = rng.uniform(params.mu_min, 0.0)
        sigma = rng.uniform(params.sigma_max / 2, params.sigma_max)
        out.append(CemParams(mu=float(mu), sigma=float(sigma), l_sub=l_sub, degree_p=degree_p))
    return out


@dataclass
class PdnReport:
    inside_rate: float
    outside_rate: float
    locus_ratio: float | None  # None when no distance level carries noise
    locus_level: float | None
    no_noise: bool
    condition1: bool
    condition2: bool | None  # None: not applicable (sigma == 0)

    @property
    def rate_ratio(self) -> float:
        if self.outside_rate == 0:
            return math.inf if self.inside_rate > 0 else 0.0
        return self.inside_rate / self.outside_rate


def verify_pdn(
    params: CemParams,
    mask,
    trials: int,
    epsilon: float,
    rng,
    min_loci: int = 8,
    freq_range: tuple[float, float] = (0.05, 0.95),
    locus_threshold: float = 1.2,
) -> PdnReport:
    """Monte Carlo check of the two pixel-dependence conditions.

    Condition 1 compares the noise rate within ``epsilon`` of the clean
    contour against the rate elsewhere. Condition 2 groups pixels by exact
    signed distance and reports, over levels with at least ``min_loci``
    pixels and a mean noise frequency inside ``freq_range``, the largest
    max/min ratio of Laplace-smoothed per-pixel frequencies.
    """
    if trials < 100:
        raise ValueError("verify_pdn needs at least 100 trials")
    m = geometry.as_mask(mask)
    sdf = geometry.signed_distance(m)
    counts = np.zeros(m.shape, dtype=np.int64)
    for _ in range(trials):
        counts += apply_cem(m, params, rng).noise_map
    freq = counts / trials
    near = np.abs(sdf) < epsilon
    inside = float(freq[near].mean())
    outside = float(freq[~near].mean()) if (~near).any() else 0.0
    no_noise = not counts.any()

    best_ratio = best_level = None
    levels = np.round(sdf, 9)
    smoothed = (counts + 1) / (trials + 2)
    for level in np.unique(levels):
        sel = levels == level
        if sel.sum() < min_loci:
            continue
        mean = freq[sel].mean()
        if not freq_range[0] <= mean <= freq_range[1]:
            continue
        ratio = float(smoothed[sel].max() / smoothed[sel].min())
        if best_ratio is None or ratio > best_ratio:
            best_ratio, best_level = ratio, float(level)

    cond2 = None
    if params.sigma > 0:
        cond2 = best_ratio is not None and best_ratio > locus_threshold
    return PdnReport(
        inside_rate=inside,
        outside_rate=outside,
        locus_ratio=best_ratio,
        locus_level=best_level,
        no_noise=no_noise,
        condition1=inside > outside,
        condition2=cond2,
    )
