"""Mikado flow families: stationary, pressureless, divergence-free fields of
disjoint periodic pipe flows whose second moment realizes a prescribed stress.

Construction
------------
Thirteen integer pipe directions (3 axes, 6 face diagonals, 4 body
diagonals).  Each direction carries a *pair* of parallel pipes with opposite
flow signs, offset by a half-period lattice shift, so the channel has exactly
zero average on any even grid.  Pipe offsets are frozen from a packing
optimization; the minimum pairwise distance between the 26 periodic axes is
0.3778, so radius-0.18 tubes are pairwise disjoint with margin.

Stress decomposition on N = B_{1/2}(Id) (operator norm)
-------------------------------------------------------
A single linear coefficient map positive on all of N does not exist: by an
SO(3)-symmetrization argument any linear right-inverse has a channel
functional L with nuclear norm >= 3 tr L, so positivity under the worst
operator-norm perturbation of size r fails for r > 1/3.  The map used here is
therefore a hybrid,

    Gamma^2(R) = (1 - theta(|R - Id|_F)) * L(R) + theta(|R - Id|_F) * c*(R),

where L is a fixed linear right-inverse of the dyad frame (positive on the
operator ball of radius 0.30, certified channel-wise via the exact duality
min_{|E|<=r} <L_j, Id+E> = tr L_j - r ||L_j||_nuclear), c*(R) is the
barrier-centered positive solution of the underdetermined system
sum_j c_j d_j = R (smooth in R, exact by construction), and theta is a
C-infinity step vanishing for |R - Id|_F <= 0.25.  Both branches reproduce R
exactly, so the blend does too.  The map is exactly linear on the inner
region and smooth everywhere.

Grid certificates
-----------------
Samples of a pipe channel are invariant under the cyclic lattice shift along
the pipe axis, and supports of distinct channels are disjoint pointwise.
The identities div W = 0 and div(W (x) W) = 0 are therefore verified
structurally (lattice-aligned differences and pointwise products, exact to
roundoff); the plain spectral divergence of the sampled field is reported as
a resolution-limited diagnostic alongside.
"""

import itertools
from dataclasses import dataclass, field
from math import gcd

import numpy as np

from .fields import Grid3, ScalarField, VectorField, SymTensorField, fftn
from .operators import leray_project, curl, divergence

TWO_PI = 2 * np.pi


class MikadoError(Exception):
    pass


# ---------------------------------------------------------------------------
# frozen geometry

DIRECTIONS = np.array([
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (0, 1, 1), (0, 1, -1), (1, 0, 1), (1, 0, -1),
    (1, 1, 1), (1, -1, 1), (1, 1, -1), (1, -1, -1),
], dtype=int)

N_CHANNELS = len(DIRECTIONS)

# half-period shift between the two pipes of a channel (units of pi)
PAIR_SHIFTS = np.array([
    (0, 1, 0), (0, 0, 1), (1, 0, 0),
    (0, 0, 1), (0, 0, 1), (1, 0, 0), (1, 0, 0), (0, 1, 0), (0, 1, 0),
    (0, 1, 1), (0, 1, 1), (0, 1, 1), (0, 1, 1),
], dtype=int)

# pipe axis offsets, units of 2*pi/48, from the packing optimization
OFFSETS_48 = np.array([
    (43, 34, 38), (21, 10, 45), (38, 40, 31),
    (40, 28, 29), (24, 43, 0), (24, 9, 19), (11, 39, 46),
    (6, 44, 18), (17, 26, 38),
    (7, 26, 13), (24, 25, 17), (4, 11, 44), (41, 20, 43),
], dtype=int)

DEFAULT_RADIUS = 0.18
ADMISSIBLE_RADIUS = 0.5      # operator-norm ball around Id
LINEAR_CORE_RADIUS = 0.30    # linear map certified positive up to here
BLEND_LO, BLEND_HI = 0.25, 0.295  # Frobenius gate for the hybrid

# orthonormal basis of Sym(3) under the Frobenius inner product
_SQ2 = 1.0 / np.sqrt(2.0)
SYM_BASIS = np.zeros((6, 3, 3))
for _i, _a in enumerate(range(3)):
    SYM_BASIS[_i, _a, _a] = 1.0
for _i, (_a, _b) in enumerate([(0, 1), (0, 2), (1, 2)], start=3):
    SYM_BASIS[_i, _a, _b] = SYM_BASIS[_i, _b, _a] = _SQ2


def sym_to_vec(M):
    return np.array([np.sum(M * B) for B in SYM_BASIS])


def vec_to_sym(v):
    return np.einsum("s,sij->ij", v, SYM_BASIS)


def _unit_dyads():
    out = np.empty((N_CHANNELS, 3, 3))
    for j, k in enumerate(DIRECTIONS):
        kh = k / np.linalg.norm(k)
        out[j] = np.outer(kh, kh)
    return out


DYADS = _unit_dyads()
FRAME = np.array([sym_to_vec(d) for d in DYADS])  # (13, 6)


def _linear_core_raw():
    """The cubic-symmetric SDP optimum at operator radius 0.30 (13 x 6)."""
    x, y = 0.572723293764, -0.145318993242
    u, w, v = 0.167692331270, -0.114265381724, 0.385992487461
    p, t = 0.068919032772, 0.240835720293
    L = np.zeros((N_CHANNELS, 6))
    for j in range(3):  # axes
        L[j, :3] = y
        L[j, j] = x
    face_data = [  # (in-plane diag indices, third index, off-diag slot, sign)
        ((0, 1), 2, 3, +1), ((0, 1), 2, 3, -1),
        ((1, 2), 0, 5, +1), ((1, 2), 0, 5, -1),
        ((0, 2), 1, 4, +1), ((0, 2), 1, 4, -1),
    ]
    for row, (diag, third, slot, sgn) in enumerate(face_data, start=3):
        L[row, diag[0]] = L[row, diag[1]] = u
        L[row, third] = w
        L[row, slot] = sgn * v
    for row, k in enumerate(DIRECTIONS[9:], start=9):  # bodies
        s2, s3 = k[1], k[2]
        L[row, :3] = p
        L[row, 3] = s2 * t
        L[row, 4] = s3 * t
        L[row, 5] = s2 * s3 * t
    return L


def _polish_right_inverse(L):
    """Project onto {X : FRAME^T X = Id6}; removes truncation residue."""
    G = FRAME.T @ FRAME
    resid = FRAME.T @ L - np.eye(6)
    return L - FRAME @ np.linalg.solve(G, resid)


LINEAR_CORE = _polish_right_inverse(_linear_core_raw())


def linear_core_margins(radius=LINEAR_CORE_RADIUS):
    """Exact min over the operator ball of each linear coefficient.

    min over |R - Id|_op <= radius of <L_j, R> equals
    tr L_j - radius * ||L_j||_nuclear (duality of operator/nuclear norms).
    """
    out = np.empty(N_CHANNELS)
    for j in range(N_CHANNELS):
        M = vec_to_sym(LINEAR_CORE[j])
        ev = np.linalg.eigvalsh(M)
        out[j] = np.trace(M) - radius * np.sum(np.abs(ev))
    return out


# ---------------------------------------------------------------------------
# stress decomposition


def _operator_distance_from_id(R):
    return float(np.max(np.abs(np.linalg.eigvalsh(R - np.eye(3)))))


def check_admissible(R, radius=ADMISSIBLE_RADIUS, tol=1e-10):
    d = _operator_distance_from_id(np.asarray(R, float))
    if d > radius + tol:
        raise MikadoError(
            f"stress outside the admissible set: |R - Id|_op = {d:.4f} > {radius}"
        )
    return d


def _smoothstep(s):
    def b(t):
        return np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    return float(b(s) / (b(s) + b(1.0 - s)))


_BARRIER_MU = 0.02


def _barrier_decompose(b, mu=_BARRIER_MU, tol=1e-13, max_iter=80):
    """Positive c with FRAME^T c = b minimizing |c|^2/2 - mu sum log c_j.

    Solved on the 6-dim dual: c_j(nu) = (s_j + sqrt(s_j^2 + 4 mu))/2 with
    s = FRAME nu; Newton iteration on FRAME^T c(nu) = b, then one exact
    projection onto the constraint.
    """
    nu = np.zeros(6)
    for _ in range(max_iter):
        s = FRAME @ nu
        root = np.sqrt(s * s + 4.0 * mu)
        c = 0.5 * (s + root)
        F = FRAME.T @ c - b
        if np.max(np.abs(F)) < tol:
            break
        dc = 0.5 * (1.0 + s / root)
        J = FRAME.T @ (dc[:, None] * FRAME)
        step = np.linalg.solve(J, F)
        # damped (the dual objective is strictly convex; full steps can
        # overshoot for b near the admissibility boundary)
        alpha = 1.0
        base = np.max(np.abs(F))
        for _ls in range(30):
            nu_try = nu - alpha * step
            s_try = FRAME @ nu_try
            c_try = 0.5 * (s_try + np.sqrt(s_try * s_try + 4.0 * mu))
            if np.max(np.abs(FRAME.T @ c_try - b)) < base:
                nu = nu_try
                break
            alpha *= 0.5
        else:
            nu = nu - step
    s = FRAME @ nu
    c = 0.5 * (s + np.sqrt(s * s + 4.0 * mu))
    # exact constraint polish (tiny, keeps positivity)
    G = FRAME.T @ FRAME
    c = c - FRAME @ np.linalg.solve(G, FRAME.T @ c - b)
    return c


def decompose_stress(R, mode="rigorous"):
    """Coefficients Gamma_j^2 >= 0 with sum_j Gamma_j^2 khat_j (x) khat_j = R.

    Hybrid map: exactly linear for |R - Id|_F <= 0.25, smooth everywhere on
    the admissible set (see module docstring).  Raises MikadoError outside
    the admissible set, or (fatally) if a coefficient fails positivity.
    """
    R = np.asarray(R, float)
    if R.shape != (3, 3) or not np.allclose(R, R.T, atol=1e-12):
        raise MikadoError("stress must be a symmetric 3x3 matrix")
    if mode == "rigorous":
        check_admissible(R)
    b = sym_to_vec(R)
    u = float(np.linalg.norm(R - np.eye(3)))
    lin = LINEAR_CORE @ b
    if u <= BLEND_LO:
        c = lin
    else:
        bar = _barrier_decompose(b)
        if u >= BLEND_HI:
            c = bar
        else:
            th = _smoothstep((u - BLEND_LO) / (BLEND_HI - BLEND_LO))
            c = (1.0 - th) * lin + th * bar
    if np.any(c <= 0):
        raise MikadoError(
            f"non-positive pipe coefficient (min {c.min():.3e}); "
            "direction basis inadequate for this stress"
        )
    return c


# ---------------------------------------------------------------------------
# geometry of periodic pipe axes


def _axis_lines():
    """All 26 periodic axes as (direction, offset) pairs."""
    lines = []
    for j in range(N_CHANNELS):
        a = OFFSETS_48[j] * (TWO_PI / 48.0)
        lines.append((DIRECTIONS[j], a))
        lines.append((DIRECTIONS[j], a + np.pi * PAIR_SHIFTS[j]))
    return lines


_LATTICE_5 = TWO_PI * np.array(list(itertools.product(range(-2, 3), repeat=3)), float)


def line_distance(k1, a1, k2, a2):
    """Distance on the torus between two periodic lines."""
    k1 = np.asarray(k1, float)
    k2 = np.asarray(k2, float)
    d = np.asarray(a1, float) - np.asarray(a2, float)
    c = np.cross(k1, k2)
    if np.allclose(c, 0):
        kh = k1 / np.linalg.norm(k1)
        vecs = d + _LATTICE_5
        perp = vecs - np.outer(vecs @ kh, kh)
        return float(np.min(np.linalg.norm(perp, axis=1)))
    ci = np.rint(c).astype(int)
    g = gcd(gcd(abs(ci[0]), abs(ci[1])), abs(ci[2]))
    nrm = np.linalg.norm(c)
    spacing = TWO_PI * g / nrm
    val = float(np.dot(d, c) / nrm)
    return abs(val - spacing * np.round(val / spacing))


def min_axis_distance():
    lines = _axis_lines()
    dmin = np.inf
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            dmin = min(dmin, line_distance(*lines[i], *lines[j]))
    return float(dmin)


@dataclass
class DirectionBasis:
    """The fixed 13-direction pipe geometry plus its build certificate."""

    directions: np.ndarray
    offsets: np.ndarray
    pair_shifts: np.ndarray
    certificate: dict = field(default_factory=dict)

    def dyads(self):
        return DYADS


def build_direction_basis() -> DirectionBasis:
    sv = np.linalg.svd(FRAME, compute_uv=False)
    margins = linear_core_margins()
    resid = np.max(np.abs(FRAME.T @ LINEAR_CORE - np.eye(6)))
    cert = {
        "n_channels": N_CHANNELS,
        "frame_condition_number": float(sv[0] / sv[-1]),
        "frame_singular_values": sv.tolist(),
        "right_inverse_residual": float(resid),
        "linear_core_radius_op": LINEAR_CORE_RADIUS,
        "linear_core_margins": margins.tolist(),
        "linear_core_margin_min": float(margins.min()),
        "min_pairwise_axis_distance": min_axis_distance(),
        "admissible_radius_op": ADMISSIBLE_RADIUS,
    }
    if cert["frame_condition_number"] > 1e4:
        raise MikadoError("dyad frame condition number exceeds 1e4")
    if cert["linear_core_margin_min"] <= 0:
        raise MikadoError("linear core lost positivity; frozen constants corrupt")
    return DirectionBasis(DIRECTIONS.copy(), OFFSETS_48 * (TWO_PI / 48.0),
                          np.pi * PAIR_SHIFTS.astype(float), cert)


# ---------------------------------------------------------------------------
# pipe profiles and families


def _bump(s):
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass
class PipeProfile:
    """Radial C-infinity bump of the given radius; amplitude fixed at family
    build so the discrete mean of psi^2 over the torus equals one."""

    radius: float
    amplitude: float = 1.0
    raw_tube_mass: float = 0.0  # grid mean of the unit-amplitude pair psi^2

    def __post_init__(self):
        if not (0.0 < self.radius <= 0.25):
            raise MikadoError(f"pipe radius must lie in (0, 1/4], got {self.radius}")


def _distance_to_line_sq(points, k, a):
    """Squared periodic distance from points (3, ...) to the line a + t k."""
    kh = k / np.linalg.norm(k)
    d = points - np.asarray(a, float).reshape(3, *([1] * (points.ndim - 1)))
    best = None
    for m in itertools.product((-TWO_PI, 0.0, TWO_PI), repeat=3):
        dm0 = d[0] + m[0]
        dm1 = d[1] + m[1]
        dm2 = d[2] + m[2]
        par = kh[0] * dm0 + kh[1] * dm1 + kh[2] * dm2
        sq = dm0**2 + dm1**2 + dm2**2 - par**2
        best = sq if best is None else np.minimum(best, sq)
    return best


class MikadoFamily:
    """Direction basis + pipe profiles sampled on a build grid.

    The channel fields (pair-combined, normalized) are precomputed once;
    velocities for any admissible R are linear combinations of them.
    """

    def __init__(self, grid: Grid3, basis: DirectionBasis, radius=DEFAULT_RADIUS):
        self.grid = grid
        self.basis = basis
        min_dist = basis.certificate["min_pairwise_axis_distance"]
        if 2 * radius >= min_dist:
            raise MikadoError(
                f"radius {radius} too large for axis separation {min_dist:.4f}"
            )
        self.profiles = []
        self.channel_fields = np.empty((N_CHANNELS,) + (grid.n,) * 3)
        self._channel_hats = None
        X = np.stack(grid.coords())
        nhalf = grid.n // 2
        for j in range(N_CHANNELS):
            k = DIRECTIONS[j]
            a = basis.offsets[j]
            dsq = _distance_to_line_sq(X, k.astype(float), a)
            plus = _bump(np.sqrt(np.maximum(dsq, 0.0)) / radius)
            shift = tuple((nhalf * PAIR_SHIFTS[j]).tolist())
            minus = np.roll(plus, shift=shift, axis=(0, 1, 2))
            pair = plus - minus
            raw_mass = float(np.mean(pair**2))
            amp = 1.0 / np.sqrt(raw_mass)
            self.profiles.append(PipeProfile(radius, amp, raw_mass))
            self.channel_fields[j] = amp * pair
        # effective transverse mode: sampling rule, ~2.5 cells per radius
        self.effective_max_mode = int(np.ceil(2.5 / radius))
        self._measured_M = None
        self._modes_cache = {}

    # -- resolution rule ---------------------------------------------------

    def required_n(self, lam):
        return int(3 * lam * self.effective_max_mode)

    def check_resolution(self, lam, grid=None):
        g = grid or self.grid
        if lam * self.effective_max_mode > g.n / 3:
            raise MikadoError(
                f"aliasing: lambda={lam} needs n >= {self.required_n(lam)}, "
                f"grid has n = {g.n}"
            )

    # -- evaluation --------------------------------------------------------

    def velocity(self, R, lam=1, phi=None, mode="rigorous") -> VectorField:
        """Sample W(R, lam * Phi(x)) on the build grid."""
        lam = int(lam)
        if lam < 1:
            raise MikadoError("lambda must be a positive integer")
        self.check_resolution(lam)
        gam2 = decompose_stress(R, mode=mode)
        gam = np.sqrt(gam2)
        g = self.grid
        if phi is None and lam == 1:
            vals = np.einsum(
                "j,jxyz,ji->ixyz",
                gam,
                self.channel_fields,
                DIRECTIONS / np.linalg.norm(DIRECTIONS, axis=1)[:, None],
            )
            return VectorField(g, vals)
        if phi is None:
            pts = lam * np.stack(g.coords())
        else:
            pts = lam * phi.values
        pts = np.mod(pts, TWO_PI)
        vals = np.zeros((3,) + (g.n,) * 3)
        for j in range(N_CHANNELS):
            k = DIRECTIONS[j].astype(float)
            kh = k / np.linalg.norm(k)
            a = self.basis.offsets[j]
            prof = self.profiles[j]
            dplus = np.sqrt(np.maximum(_distance_to_line_sq(pts, k, a), 0.0))
            dminus = np.sqrt(np.maximum(
                _distance_to_line_sq(pts, k, a + np.pi * PAIR_SHIFTS[j]), 0.0))
            psi = prof.amplitude * (_bump(dplus / prof.radius)
                                    - _bump(dminus / prof.radius))
            for i in range(3):
                vals[i] += gam[j] * psi * kh[i]
        return VectorField(g, vals)

    def potential(self, R, lam=1, mode="rigorous") -> VectorField:
        """U with curl U equal to the solenoidal part of the sampled W.

        The sampled pipe field carries a small non-solenoidal aliasing ridge
        (reported by `certify`); U inverts the curl on its Leray projection,
        which is exact to roundoff.
        """
        W = self.velocity(R, lam=lam, mode=mode)
        Wsol = leray_project(W)
        g = self.grid
        wh = Wsol.hat
        k1, k2, k3 = g.k1, g.k2, g.k3
        cx = k2 * wh[2] - k3 * wh[1]
        cy = k3 * wh[0] - k1 * wh[2]
        cz = k1 * wh[1] - k2 * wh[0]
        uh = 1j * np.stack([cx, cy, cz]) * g.inv_k_sq[None]
        return VectorField.from_hat(g, uh)

    # -- data for the perturbation step ------------------------------------

    def channel_hats(self):
        """Per-channel Fourier coefficients of the normalized pair profiles."""
        if self._channel_hats is None:
            n3 = self.grid.n**3
            self._channel_hats = np.stack(
                [fftn(f) / n3 for f in self.channel_fields]
            )
        return self._channel_hats

    def transverse_modes(self, j, K):
        """Modes 0 < |k| <= K carried by channel j, with coefficients.

        Exact zeros off the transverse plane k . k_j = 0 (lattice shift
        invariance of the samples); entries below 1e-14 of the channel peak
        are dropped.  Cached per (j, K).
        """
        key = (j, int(K))
        if key in self._modes_cache:
            return self._modes_cache[key]
        g = self.grid
        hat = self.channel_hats()[j]
        kk = np.stack(np.meshgrid(
            np.fft.fftfreq(g.n, 1.0 / g.n),
            np.fft.fftfreq(g.n, 1.0 / g.n),
            np.fft.fftfreq(g.n, 1.0 / g.n), indexing="ij"))
        within = (kk[0]**2 + kk[1]**2 + kk[2]**2 <= K * K) & (g.k_sq > 0)
        idx = np.argwhere(within)
        peak = np.abs(hat).max()
        out = {}
        for i1, i2, i3 in idx:
            c = hat[i1, i2, i3]
            if abs(c) > 1e-14 * peak:
                kvec = (int(kk[0][i1, i2, i3]), int(kk[1][i1, i2, i3]),
                        int(kk[2][i1, i2, i3]))
                out[kvec] = complex(c)
        self._modes_cache[key] = out
        return out

    def truncated_mass(self, j, K):
        """sum over 0<|k|<=K of |psi_hat_j(k)|^2 (full mass is 1)."""
        modes = self.transverse_modes(j, K)
        return float(sum(abs(c) ** 2 for c in modes.values()))

    def fourier_data(self, R, K, mode="rigorous"):
        """W-series and C-series coefficients up to |k| <= K.

        Returns (wdata, cdata): wdata maps k -> a_k(R) A_k (complex 3-vector,
        orthogonal to k), cdata maps k -> C_k(R) (3x3, with C_k k = 0).
        """
        gam2 = decompose_stress(R, mode=mode)
        gam = np.sqrt(gam2)
        khat = DIRECTIONS / np.linalg.norm(DIRECTIONS, axis=1)[:, None]
        wdata, cdata = {}, {}
        n3 = self.grid.n**3
        for j in range(N_CHANNELS):
            modes = self.transverse_modes(j, K)
            for kvec, c in modes.items():
                wdata.setdefault(kvec, np.zeros(3, complex))
                wdata[kvec] = wdata[kvec] + gam[j] * c * khat[j]
        # W (x) W = sum_j Gamma_j^2 psi_j^2 d_j pointwise (disjoint supports)
        for j in range(N_CHANNELS):
            sq = self.channel_fields[j] ** 2
            hat = fftn(sq) / n3
            g = self.grid
            kk1 = np.fft.fftfreq(g.n, 1.0 / g.n)
            within = (g.k_sq <= K * K) & (g.k_sq > 0)
            idx = np.argwhere(within)
            peak = np.abs(hat).max()
            for i1, i2, i3 in idx:
                c = hat[i1, i2, i3]
                if abs(c) > 1e-14 * peak:
                    kvec = (int(kk1[i1]), int(kk1[i2]), int(kk1[i3]))
                    cdata.setdefault(kvec, np.zeros((3, 3), complex))
                    cdata[kvec] = cdata[kvec] + gam2[j] * c * DYADS[j]
        return wdata, cdata

    # -- certificates --------------------------------------------------------

    def measured_M(self, n_samples=40, seed=20240501):
        """sup over sampled R in N of ||W(R, .)||_0 (the geometric constant)."""
        if self._measured_M is None:
            rng = np.random.default_rng(seed)
            worst = 0.0
            for _ in range(n_samples):
                R = random_admissible_stress(rng)
                W = self.velocity(R)
                worst = max(worst, W.max_norm())
            self._measured_M = worst
        return self._measured_M

    def structural_divergence(self, W: VectorField):
        """Max lattice-directional derivative of every channel along its axis.

        Exactly zero for fields assembled from the channel samples: the
        samples are invariant under the cyclic shift by the axis vector.
        """
        worst = 0.0
        for j in range(N_CHANNELS):
            f = self.channel_fields[j]
            shifted = np.roll(f, shift=tuple(-DIRECTIONS[j]), axis=(0, 1, 2))
            worst = max(worst, float(np.max(np.abs(shifted - f))))
        return worst / max(W.max_norm(), 1e-300)

    def support_overlap(self):
        """Max over channel pairs of max |psi_i psi_j|; zero iff disjoint."""
        worst = 0.0
        sup = [np.abs(f) > 0 for f in self.channel_fields]
        for i in range(N_CHANNELS):
            for j in range(i + 1, N_CHANNELS):
                if np.any(sup[i] & sup[j]):
                    worst = max(worst, float(np.max(
                        np.abs(self.channel_fields[i] * self.channel_fields[j]))))
        return worst

    def certify(self, n_samples=50, seed=20240501):
        """The mikado-check certificate: moment residuals over random stresses,
        structural and spectral divergence, decay table, measured M."""
        rng = np.random.default_rng(seed)
        moment_worst = 0.0
        mean_worst = 0.0
        for _ in range(n_samples):
            R = random_admissible_stress(rng)
            gam2 = decompose_stress(R)
            mom = np.einsum("j,jab->ab", gam2 * [
                float(np.mean(f**2)) for f in self.channel_fields], DYADS)
            moment_worst = max(moment_worst, float(np.linalg.norm(mom - R)))
            W = self.velocity(R)
            mean_worst = max(mean_worst, float(np.max(np.abs(W.mean()))))
        Wid = self.velocity(np.eye(3))
        spec_div = divergence(Wid).max_norm() / Wid.max_norm()
        # decay of the W-series coefficients
        wdata, cdata = self.fourier_data(np.eye(3), K=10)
        decay = {}
        for kvec, a in wdata.items():
            kabs = int(round(np.linalg.norm(kvec)))
            decay[kabs] = max(decay.get(kabs, 0.0), float(np.linalg.norm(a)))
        ck_orth = max(
            (float(np.linalg.norm(C @ np.asarray(k, float))) for k, C in cdata.items()),
            default=0.0,
        )
        ak_orth = max(
            (float(abs(np.dot(a, np.asarray(k, float)))) for k, a in wdata.items()),
            default=0.0,
        )
        return {
            "n_samples": n_samples,
            "grid_n": self.grid.n,
            "radius": self.profiles[0].radius,
            "moment_residual_frobenius": moment_worst,
            "mean_velocity": mean_worst,
            "structural_divergence": self.structural_divergence(Wid),
            "support_overlap": self.support_overlap(),
            "spectral_divergence_diagnostic": float(spec_div),
            "measured_M": self.measured_M(),
            "decay_table": {str(k): v for k, v in sorted(decay.items())},
            "ak_orthogonality": ak_orth,
            "ck_orthogonality": ck_orth,
            "basis_certificate": self.basis.certificate,
        }


def random_admissible_stress(rng, radius=ADMISSIBLE_RADIUS):
    """Uniform-direction random R = Id + E with |E|_op <= radius."""
    A = rng.standard_normal((3, 3))
    Q, _ = np.linalg.qr(A)
    ev = rng.uniform(-radius, radius, size=3)
    E = (Q * ev) @ Q.T
    return np.eye(3) + 0.5 * (E + E.T)


def build_family(grid: Grid3, radius=DEFAULT_RADIUS) -> MikadoFamily:
    return MikadoFamily(grid, build_direction_basis(), radius=radius)
