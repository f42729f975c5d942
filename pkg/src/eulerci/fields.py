"""Periodic fields on the 2pi 3-torus with cached spectral representation.

Conventions (documented once, used everywhere):

* grid points x_j = 2*pi*j/n, j = 0..n-1 per axis, samples row-major over
  (x1, x2, x3);
* spectral coefficients are *Fourier coefficients* under the convention
  f_hat(k) = (2*pi)^-3 int f exp(-i k.x) dx, realized discretely as
  fftn(values)/n^3.  Parseval then reads
  (2*pi)^-3 int |f|^2 = sum_k |f_hat(k)|^2  (exact for band-limited f);
* wavenumbers are integers, fftfreq layout, Nyquist column n/2 stored as
  -n/2.
"""

import numpy as np
import scipy.fft as sfft

_WORKERS = 1  # fixed reduction order; raised only via cli --threads


def set_fft_workers(w: int):
    global _WORKERS
    _WORKERS = max(1, int(w))


def fftn(a):
    return sfft.fftn(a, workers=_WORKERS)


def ifftn(a):
    return sfft.ifftn(a, workers=_WORKERS)


class Grid3:
    """Uniform n^3 grid on [0, 2pi)^3, n even, n >= 8."""

    def __init__(self, n: int):
        n = int(n)
        if n % 2 != 0 or n < 8:
            raise ValueError(f"grid size must be even and >= 8, got {n}")
        self.n = n
        self.dx = 2 * np.pi / n
        self.x = 2 * np.pi * np.arange(n) / n
        k = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers
        self.k1 = k.reshape(n, 1, 1)
        self.k2 = k.reshape(1, n, 1)
        self.k3 = k.reshape(1, 1, n)
        self.k_sq = self.k1**2 + self.k2**2 + self.k3**2
        inv = np.zeros_like(self.k_sq)
        nz = self.k_sq > 0
        inv[nz] = 1.0 / self.k_sq[nz]
        self.inv_k_sq = inv  # zero at k=0
        cut = n / 3.0
        self.dealias_mask = (
            (np.abs(self.k1) <= cut)
            & (np.abs(self.k2) <= cut)
            & (np.abs(self.k3) <= cut)
        )
        self._coords = None

    def coords(self):
        if self._coords is None:
            X1, X2, X3 = np.meshgrid(self.x, self.x, self.x, indexing="ij")
            self._coords = (X1, X2, X3)
        return self._coords

    def k_axis(self, axis: int):
        return (self.k1, self.k2, self.k3)[axis - 1]

    def __eq__(self, other):
        return isinstance(other, Grid3) and other.n == self.n

    def __hash__(self):
        return hash(("Grid3", self.n))

    def __repr__(self):
        return f"Grid3(n={self.n})"


class _Field:
    """Shared plumbing: values array with a lazily cached fftn."""

    ncomp = None  # leading components, None for scalar

    def __init__(self, grid: Grid3, values):
        values = np.asarray(values, dtype=np.float64)
        shape = (grid.n,) * 3 if self.ncomp is None else (self.ncomp,) + (grid.n,) * 3
        if values.shape != shape:
            raise ValueError(f"expected shape {shape}, got {values.shape}")
        self.grid = grid
        self.values = values
        self._hat = None

    @property
    def hat(self):
        """Fourier coefficients, fftn(values)/n^3 per component."""
        if self._hat is None:
            n3 = self.grid.n**3
            if self.ncomp is None:
                self._hat = fftn(self.values) / n3
            else:
                self._hat = np.stack([fftn(c) for c in self.values]) / n3
        return self._hat

    @classmethod
    def from_hat(cls, grid, hat):
        n3 = grid.n**3
        if cls.ncomp is None:
            vals = ifftn(hat * n3).real
        else:
            vals = np.stack([ifftn(c * n3).real for c in hat])
        out = cls(grid, vals)
        return out

    def copy(self):
        return type(self)(self.grid, self.values.copy())

    def max_norm(self):
        return float(np.max(np.abs(self.values)))

    def mean(self):
        """Component-wise average over the torus."""
        if self.ncomp is None:
            return float(self.values.mean())
        return self.values.mean(axis=(1, 2, 3))

    def l2_norm(self):
        """sqrt( int |f|^2 dx ) by trapezoidal (= spectral) quadrature."""
        return float(np.sqrt(self.values.astype(np.float64).ravel().dot(self.values.ravel()) * self.grid.dx**3))

    def band_limit(self, rel_tol=1e-10):
        """Largest |k|_inf carrying a coefficient above rel_tol * max|coeff|."""
        h = self.hat if self.ncomp is None else self.hat.reshape(self.ncomp, -1)
        mag = np.abs(h)
        thresh = rel_tol * mag.max()
        kinf = np.maximum(
            np.abs(self.grid.k1), np.maximum(np.abs(self.grid.k2), np.abs(self.grid.k3))
        )
        if self.ncomp is None:
            mask = mag > thresh
            return float(kinf[mask].max()) if mask.any() else 0.0
        mask = (mag > thresh).reshape(self.ncomp, *kinf.shape).any(axis=0)
        return float(kinf[mask].max()) if mask.any() else 0.0

    def __add__(self, other):
        return type(self)(self.grid, self.values + other.values)

    def __sub__(self, other):
        return type(self)(self.grid, self.values - other.values)

    def __mul__(self, c):
        return type(self)(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.values)


class ScalarField(_Field):
    ncomp = None

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n,) * 3))

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full((grid.n,) * 3, float(c)))


class VectorField(_Field):
    ncomp = 3

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((3, grid.n, grid.n, grid.n)))

    @classmethod
    def from_components(cls, f1, f2, f3):
        if not (f1.grid == f2.grid == f3.grid):
            raise ValueError("components live on different grids")
        return cls(f1.grid, np.stack([f1.values, f2.values, f3.values]))

    def component(self, i):
        return ScalarField(self.grid, self.values[i])

    def dot(self, other):
        """Pointwise v.w as a ScalarField."""
        return ScalarField(self.grid, np.einsum("i...,i...->...", self.values, other.values))

    def norm_sq_field(self):
        return ScalarField(self.grid, np.einsum("i...,i...->...", self.values, self.values))

    def outer(self, other):
        """Symmetric part of v (x) w as a SymTensorField."""
        v, w = self.values, other.values
        comps = np.stack(
            [
                v[0] * w[0],
                0.5 * (v[0] * w[1] + v[1] * w[0]),
                0.5 * (v[0] * w[2] + v[2] * w[0]),
                v[1] * w[1],
                0.5 * (v[1] * w[2] + v[2] * w[1]),
                v[2] * w[2],
            ]
        )
        return SymTensorField(self.grid, comps)


# component order of SymTensorField
SYM_COMPONENTS = ("xx", "xy", "xz", "yy", "yz", "zz")
_SYM_IDX = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (0, 2): 2, (2, 0): 2,
            (1, 1): 3, (1, 2): 4, (2, 1): 4, (2, 2): 5}
_DIAG = (0, 3, 5)


class SymTensorField(_Field):
    ncomp = 6

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((6, grid.n, grid.n, grid.n)))

    @classmethod
    def isotropic(cls, grid, rho):
        """rho * Id with rho a scalar or ScalarField."""
        vals = np.zeros((6, grid.n, grid.n, grid.n))
        r = rho.values if isinstance(rho, ScalarField) else float(rho)
        for d in _DIAG:
            vals[d] = r
        return cls(grid, vals)

    @classmethod
    def from_matrix_field(cls, grid, M):
        """M with shape (3,3,n,n,n) (assumed symmetric)."""
        comps = np.stack([M[0, 0], 0.5 * (M[0, 1] + M[1, 0]), 0.5 * (M[0, 2] + M[2, 0]),
                          M[1, 1], 0.5 * (M[1, 2] + M[2, 1]), M[2, 2]])
        return cls(grid, comps)

    @classmethod
    def from_constant_matrix(cls, grid, M):
        M = np.asarray(M, float)
        ones = np.ones((grid.n,) * 3)
        comps = np.stack([M[0, 0] * ones, M[0, 1] * ones, M[0, 2] * ones,
                          M[1, 1] * ones, M[1, 2] * ones, M[2, 2] * ones])
        return cls(grid, comps)

    def entry(self, i, j):
        return ScalarField(self.grid, self.values[_SYM_IDX[(i, j)]])

    def trace_field(self):
        return ScalarField(self.grid, self.values[0] + self.values[3] + self.values[5])

    def deviator(self):
        """Traceless part R - (tr R / 3) Id."""
        tr3 = (self.values[0] + self.values[3] + self.values[5]) / 3.0
        vals = self.values.copy()
        for d in _DIAG:
            vals[d] -= tr3
        return SymTensorField(self.grid, vals)

    def matrix_values(self):
        """Dense (n,n,n,3,3) view for pointwise linear algebra."""
        v = self.values
        M = np.empty(v.shape[1:] + (3, 3))
        M[..., 0, 0] = v[0]; M[..., 0, 1] = v[1]; M[..., 0, 2] = v[2]
        M[..., 1, 0] = v[1]; M[..., 1, 1] = v[3]; M[..., 1, 2] = v[4]
        M[..., 2, 0] = v[2]; M[..., 2, 1] = v[4]; M[..., 2, 2] = v[5]
        return M

    def apply(self, v: VectorField):
        """Pointwise matrix-vector product R v."""
        c = self.values
        w = v.values
        out = np.stack([
            c[0] * w[0] + c[1] * w[1] + c[2] * w[2],
            c[1] * w[0] + c[3] * w[1] + c[4] * w[2],
            c[2] * w[0] + c[4] * w[1] + c[5] * w[2],
        ])
        return VectorField(self.grid, out)

    def frobenius_field(self):
        c = self.values
        sq = c[0]**2 + c[3]**2 + c[5]**2 + 2 * (c[1]**2 + c[2]**2 + c[4]**2)
        return ScalarField(self.grid, np.sqrt(sq))

    def mean_matrix(self):
        """Average tensor as a 3x3 array."""
        m = self.values.mean(axis=(1, 2, 3))
        return np.array([[m[0], m[1], m[2]], [m[1], m[3], m[4]], [m[2], m[4], m[5]]])


def identity_map(grid: Grid3) -> VectorField:
    """The coordinate map Phi(x) = x as a VectorField (components = x_i)."""
    X1, X2, X3 = grid.coords()
    return VectorField(grid, np.stack([X1, X2, X3]))


def displacement(phi: VectorField) -> VectorField:
    """Periodic displacement Phi - x of a coordinate map."""
    X1, X2, X3 = phi.grid.coords()
    return VectorField(phi.grid, phi.values - np.stack([X1, X2, X3]))


def roundtrip_error(f: _Field) -> float:
    """Max-norm relative error of the physical->spectral->physical round trip."""
    if f.ncomp is None:
        back = ifftn(fftn(f.values)).real
    else:
        back = np.stack([ifftn(fftn(c)).real for c in f.values])
    scale = max(np.max(np.abs(f.values)), 1e-300)
    return float(np.max(np.abs(back - f.values)) / scale)
