"""Operator toolkit on periodic fields: spectral calculus, Leray projection,
the order minus-one inverse divergence, mollification, Hoelder and H^-1 norm
estimators, and oscillatory integrals.

Inverse divergence: for a vector field v let u solve Lap u = v - mean(v) with
mean(u) = 0 and let P be the Leray projection.  Then

    Rv = (1/4)(grad Pu + (grad Pu)^T) + (3/4)(grad u + (grad u)^T)
         - (1/2)(div u) Id

is symmetric, trace-free, and div Rv = v - mean(v).

H^-1 realization: after removing the mean,
    ||f||_{H^-1}^2 = (2*pi)^3 sum_{k != 0} |f_hat(k)|^2 / |k|^2
under the coefficient convention of `fields`.  For mean-zero fields this is
the spectral realization of the dual-norm definition; the two definitions are
equivalent with a normalization constant that is documented, not asserted.
"""

from dataclasses import dataclass
import itertools

import numpy as np

from .fields import (
    Grid3,
    ScalarField,
    VectorField,
    SymTensorField,
    fftn,
    ifftn,
    displacement,
)


# ---------------------------------------------------------------------------
# basic spectral calculus


def derivative(f: ScalarField, axis: int, order: int = 1) -> ScalarField:
    """Spectral d^order/dx_axis^order, exact for band-limited fields."""
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    if order < 1:
        raise ValueError("order must be a positive integer")
    g = f.grid
    k = g.k_axis(axis)
    mult = (1j * k) ** order
    if order % 2 == 1:
        # kill the unpaired Nyquist column so the result stays real
        mult = np.where(np.abs(k) == g.n // 2, 0.0, mult)
    return ScalarField.from_hat(g, f.hat * mult)


def gradient(f: ScalarField) -> VectorField:
    return VectorField.from_components(
        derivative(f, 1), derivative(f, 2), derivative(f, 3)
    )


def divergence(v: VectorField) -> ScalarField:
    return (
        derivative(v.component(0), 1)
        + derivative(v.component(1), 2)
        + derivative(v.component(2), 3)
    )


def curl(v: VectorField) -> VectorField:
    d = derivative
    c1 = d(v.component(2), 2) - d(v.component(1), 3)
    c2 = d(v.component(0), 3) - d(v.component(2), 1)
    c3 = d(v.component(1), 1) - d(v.component(0), 2)
    return VectorField.from_components(c1, c2, c3)


def tensor_divergence(T: SymTensorField) -> VectorField:
    """Row-wise divergence (div T)_i = d_j T_ij."""
    d = derivative
    r1 = d(T.entry(0, 0), 1) + d(T.entry(0, 1), 2) + d(T.entry(0, 2), 3)
    r2 = d(T.entry(1, 0), 1) + d(T.entry(1, 1), 2) + d(T.entry(1, 2), 3)
    r3 = d(T.entry(2, 0), 1) + d(T.entry(2, 1), 2) + d(T.entry(2, 2), 3)
    return VectorField.from_components(r1, r2, r3)


def dealias(f):
    """2/3-rule truncation, applied to every nonlinear product in the package."""
    g = f.grid
    if f.ncomp is None:
        return type(f).from_hat(g, f.hat * g.dealias_mask)
    return type(f).from_hat(g, f.hat * g.dealias_mask[None])


def leray_project(v: VectorField) -> VectorField:
    """Projection onto divergence-free fields with zero average.

    Mode-wise v_hat(k) -> (Id - k k^T/|k|^2) v_hat(k), k=0 mode dropped.
    Unpaired Nyquist planes are dropped as well so that the spectral
    divergence of the result vanishes identically for any input.
    """
    g = v.grid
    vh = v.hat
    kdotv = g.k1 * vh[0] + g.k2 * vh[1] + g.k3 * vh[2]
    factor = kdotv * g.inv_k_sq
    nyq = g.n // 2
    keep = (np.abs(g.k1) != nyq) & (np.abs(g.k2) != nyq) & (np.abs(g.k3) != nyq)
    out = np.stack([vh[0] - g.k1 * factor, vh[1] - g.k2 * factor, vh[2] - g.k3 * factor])
    out *= keep[None]
    out[:, 0, 0, 0] = 0.0
    return VectorField.from_hat(g, out)


def solve_poisson(f: ScalarField) -> ScalarField:
    """u with Lap u = f - mean(f), mean(u) = 0."""
    g = f.grid
    return ScalarField.from_hat(g, -f.hat * g.inv_k_sq)


def inverse_divergence(v: VectorField) -> SymTensorField:
    g = v.grid
    uh = -v.hat * g.inv_k_sq[None]
    uh[:, 0, 0, 0] = 0.0
    u = VectorField.from_hat(g, uh)
    pu = leray_project(u)

    def sym_grad(w):
        d = derivative
        comps = np.stack([
            d(w.component(0), 1).values,
            0.5 * (d(w.component(0), 2).values + d(w.component(1), 1).values),
            0.5 * (d(w.component(0), 3).values + d(w.component(2), 1).values),
            d(w.component(1), 2).values,
            0.5 * (d(w.component(1), 3).values + d(w.component(2), 2).values),
            d(w.component(2), 3).values,
        ])
        return comps

    su = sym_grad(u)
    spu = sym_grad(pu)
    divu = divergence(u).values
    comps = 0.5 * spu + 1.5 * su
    for dix in (0, 3, 5):
        comps[dix] -= 0.5 * divu
    return SymTensorField(g, comps)


# ---------------------------------------------------------------------------
# mollification


def _bump(s):
    """exp(-1/(1-s^2)) on |s|<1, extended by zero; C-infinity."""
    s = np.asarray(s, float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si * si))
    return out


# fixed Gauss-Legendre rule for all kernel quadratures (deterministic)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(256)
_GL_R = 0.5 * (_GL_NODES + 1.0)          # nodes on [0, 1]
_GL_W = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class Mollifier:
    """Compactly supported, non-negative, symmetric kernel with unit integral.

    The profile is the standard radial bump c*exp(-1/(1-|x/ell|^2)) on
    |x| < ell, with c fixed by quadrature.  Mollification acts spectrally
    through the kernel's Fourier multiplier m(|k| ell), itself computed by
    the same fixed quadrature rule.
    """

    ell: float

    def __post_init__(self):
        if not (0.0 < self.ell < np.pi):
            raise ValueError(f"mollifier scale must be in (0, pi), got {self.ell}")

    @staticmethod
    def _radial_moment():
        # int_0^1 bump(r) r^2 dr
        return float(np.sum(_GL_W * _bump(_GL_R) * _GL_R**2))

    def normalization(self):
        """c with 4*pi*c*ell^3*int bump r^2 dr = 1."""
        return 1.0 / (4.0 * np.pi * self.ell**3 * self._radial_moment())

    def multiplier(self, kabs):
        """Fourier multiplier m(k) = int phi_ell(y) exp(-i k.y) dy at |k|=kabs.

        Radial kernel: m = 4*pi*c*ell^3 int_0^1 bump(r) r^2 sinc(|k| ell r) dr.
        """
        kabs = np.atleast_1d(np.asarray(kabs, float))
        arg = np.outer(kabs, _GL_R) * self.ell
        sinc = np.where(np.abs(arg) < 1e-12, 1.0 - arg**2 / 6.0, np.sin(arg) / np.where(arg == 0, 1, arg))
        integ = sinc @ (_GL_W * _bump(_GL_R) * _GL_R**2)
        return integ / self._radial_moment()

    def multiplier_field(self, grid: Grid3):
        ksq = grid.k_sq
        uniq, inv = np.unique(ksq.ravel(), return_inverse=True)
        vals = self.multiplier(np.sqrt(uniq))
        return vals[inv].reshape(ksq.shape)

    def check_unit_mass(self):
        """|int phi - 1| recomputed with an independent refinement (halved rule)."""
        nodes, weights = np.polynomial.legendre.leggauss(512)
        r = 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        mass = 4.0 * np.pi * self.normalization() * self.ell**3 * float(np.sum(w * _bump(r) * r**2))
        return abs(mass - 1.0)


def mollify(f, ell: float):
    """Periodic convolution with the scaled kernel; same field type back."""
    mol = Mollifier(ell)
    g = f.grid
    mult = mol.multiplier_field(g)
    if f.ncomp is None:
        return type(f).from_hat(g, f.hat * mult)
    return type(f).from_hat(g, f.hat * mult[None])


def mollify_commutator(f: ScalarField, g: ScalarField, ell: float) -> ScalarField:
    """(fg)*phi_ell - (f*phi_ell)(g*phi_ell), the quadratic mollification error."""
    prod = ScalarField(f.grid, f.values * g.values)
    a = mollify(prod, ell)
    fl = mollify(f, ell)
    gl = mollify(g, ell)
    return ScalarField(f.grid, a.values - fl.values * gl.values)


# ---------------------------------------------------------------------------
# norm estimators


def _multi_indices(r):
    out = []
    for combo in itertools.combinations_with_replacement((1, 2, 3), r):
        theta = [combo.count(1), combo.count(2), combo.count(3)]
        out.append(tuple(theta))
    return out


def _apply_multi(f: ScalarField, theta):
    out = f
    for axis, o in enumerate(theta, start=1):
        if o:
            out = derivative(out, axis, o)
    return out


_OFFSET_DIRS = np.array([
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
])


def _frac_seminorm(values, grid: Grid3, alpha: float):
    """max over the dyadic offset ladder of |f(x+h)-f(x)| / |h|^alpha.

    Offsets h = dx * 2^j * dir, dir an axis or body diagonal, restricted to
    |h| <= 1 so that the estimator is exactly monotone in alpha.
    """
    best = 0.0
    jmax = max(int(np.log2(grid.n / 4)), 0)
    for d in _OFFSET_DIRS:
        dlen = np.linalg.norm(d)
        for j in range(jmax + 1):
            s = 2**j
            h = grid.dx * s * dlen
            if h > 1.0:
                break
            shifted = np.roll(values, shift=tuple(-s * d), axis=(0, 1, 2))
            diff = np.max(np.abs(shifted - values))
            best = max(best, diff / h**alpha)
    return best


def holder_norm(f, r: int = 0, alpha: float = 0.0) -> float:
    """Grid estimator of ||f||_{r+alpha}.

    Sum over derivative orders j <= r of max over multi-indices |theta| = j of
    ||D^theta f||_0, plus (for alpha > 0) the fractional seminorm of the
    order-r derivatives over the dyadic offset ladder.
    """
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    if r < 0:
        raise ValueError("r must be a non-negative integer")
    comps = [f] if f.ncomp is None else [f.component(i) if isinstance(f, VectorField)
                                         else ScalarField(f.grid, f.values[i])
                                         for i in range(f.ncomp)]
    total = 0.0
    top_derivs = []
    for j in range(r + 1):
        level = 0.0
        for theta in _multi_indices(j):
            mags = []
            for c in comps:
                df = _apply_multi(c, theta)
                mags.append(df.max_norm())
                if j == r:
                    top_derivs.append(df)
            level = max(level, max(mags))
        total += level
    if alpha > 0.0:
        semi = 0.0
        for df in top_derivs:
            semi = max(semi, _frac_seminorm(df.values, f.grid, alpha))
        total += semi
    return total


@dataclass
class NormReport:
    value: float
    order: float
    band_limit: float
    trusted: bool


def holder_norm_report(f, r: int = 0, alpha: float = 0.0) -> NormReport:
    """holder_norm plus a resolution-trust flag (band limit vs n/3)."""
    val = holder_norm(f, r, alpha)
    bl = f.band_limit()
    return NormReport(value=val, order=r + alpha, band_limit=bl,
                      trusted=bool(bl <= f.grid.n / 3))


def h_minus1_norm(f) -> float:
    """Spectral H^-1 norm of f - mean(f); see module docstring for convention."""
    g = f.grid
    if f.ncomp is None:
        hats = [f.hat]
    else:
        hats = [f.hat[i] for i in range(f.ncomp)]
    acc = 0.0
    for h in hats:
        mag2 = (h.real**2 + h.imag**2) * g.inv_k_sq
        acc += float(mag2.sum())
    return float(np.sqrt((2 * np.pi) ** 3 * acc))


# ---------------------------------------------------------------------------
# oscillatory integrals


def flow_gradient(phi: VectorField):
    """grad Phi as (n,n,n,3,3), from the periodic displacement Phi - x."""
    disp = displacement(phi)
    g = phi.grid
    G = np.empty((g.n, g.n, g.n, 3, 3))
    for i in range(3):
        ci = disp.component(i)
        for j in range(3):
            G[..., i, j] = derivative(ci, j + 1).values
        G[..., i, i] += 1.0
    return G


def min_singular_value(G):
    """Pointwise smallest singular value of a (n,n,n,3,3) matrix field."""
    # eigenvalues of G^T G, smallest; svd on 3x3 blocks is vectorized by numpy
    GtG = np.einsum("...ki,...kj->...ij", G, G)
    w = np.linalg.eigvalsh(GtG)
    return float(np.sqrt(max(w[..., 0].min(), 0.0)))


def oscillatory_integral(a: ScalarField, phi: VectorField, kvec) -> complex:
    """Trapezoidal quadrature of int a(x) exp(i k.Phi(x)) dx over the torus.

    phi carries the full coordinate map (components = coordinate functions,
    displacement periodic).  Rejects phases whose gradient degenerates on
    the grid.
    """
    kvec = np.asarray(kvec, float)
    G = flow_gradient(phi)
    smin = min_singular_value(G)
    if smin < 1e-6:
        raise ValueError(f"phase gradient degenerate: min singular value {smin:.3e}")
    phase = np.einsum("i,i...->...", kvec, phi.values)
    integrand = a.values * np.exp(1j * phase)
    return complex(integrand.sum() * a.grid.dx**3)
