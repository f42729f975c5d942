"""Localized perturbation: squiggling stripes, stress distribution and
flow-map conjugation, the Mikado perturbation with its divergence-fixing
corrector, and the error bookkeeping that certifies the output.

Stripes.  eta_i(x, t) = Theta((t - t_i)/tau + kappa sin(x_1)) with Theta a
C-infinity plateau profile: zero off (1/3 - kappa - w, 2/3 + kappa + w), one
on [1/3 - kappa, 2/3 + kappa].  At fixed x consecutive supports are disjoint
(support length < tau), the plateau covers T^3 x I_i, and for kappa >= 1/6
the squiggle makes the x_1-sets where some eta_i = 1 cover every time, which
keeps sum_i int eta_i^2 uniformly positive (property (v)); the measured c_0
is part of the stripe certificate.

Perturbation.  The principal term uses the pipe family's Fourier data
truncated to |k| <= K,

    w_o = sum_{i,j,k} sigma_i^(1/2) Gamma~_j(S~_i(x)) psi_hat_j(k)
          (grad Phi_i)^{-1} khat_j exp(i lam k . Phi_i),

where Gamma~_j = Gamma_j / sqrt(m_jK) renormalizes each channel by its
truncated spectral mass so the truncated flow reproduces the prescribed
moment exactly.  The corrector

    w_c = (i/lam) sum grad(sigma_i^(1/2) Gamma~_j(S~_i)) psi_hat_j(k)
          x [grad Phi_i^T (k x khat_j)] / |k|^2  exp(i lam k . Phi_i)

makes each k-term of w_o + w_c a curl (exactly, when det grad Phi = 1), so
the perturbation is divergence-free up to the measured volume distortion of
the flow maps.  Everything the truncation discards is charged to explicit,
reported budgets; nothing is assumed small.
"""

from dataclasses import dataclass, field

import numpy as np

from .fields import (
    Grid3, ScalarField, VectorField, SymTensorField, fftn, ifftn, identity_map,
)
from .operators import inverse_divergence, divergence, flow_gradient, h_minus1_norm
from .gluing import IntervalPartition, smoothstep
from .scheduler import SchemeParams, stage_values
from .state import SubsolutionState, TWO_PI_CUBED
from . import mikado as mk

TWO_PI = 2 * np.pi


class PerturbationError(Exception):
    pass


# ---------------------------------------------------------------------------
# squiggling stripes


@dataclass
class StripeFamily:
    partition: IntervalPartition
    kind: str = "squiggling"      # or "global"
    kappa: float = 0.21
    rise: float = 0.11
    certificate: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("squiggling", "global"):
            raise PerturbationError(f"unknown stripe kind {self.kind!r}")
        if self.kind == "squiggling":
            # support length in phase units must stay below one period
            if 1.0 / 3.0 + 2 * self.kappa + 2 * self.rise >= 1.0:
                raise PerturbationError("stripe support spills into the neighbor")
            if self.kappa < 1.0 / 6.0:
                raise PerturbationError("kappa < 1/6 cannot cover all times")

    def indices(self):
        p = self.partition
        if self.kind == "global":
            return [0]
        return list(range(p.n_lo, p.n_hi + 1))

    def _theta(self, s):
        a1 = 1.0 / 3.0 - self.kappa
        b1 = 2.0 / 3.0 + self.kappa
        w = self.rise
        s = np.asarray(s, float)
        return smoothstep((s - (a1 - w)) / w) * smoothstep(((b1 + w) - s) / w)

    def profile(self, i, t, x1):
        """eta_i(x, t) as a function of x_1 only (broadcast over x_2, x_3)."""
        if self.kind == "global":
            return np.ones_like(x1)
        s = (t - self.partition.t(i)) / self.partition.tau + self.kappa * np.sin(x1)
        return self._theta(s)

    def mass(self, t, x1):
        """sum_i avg(eta_i^2) at time t (average over the torus)."""
        if self.kind == "global":
            return 1.0
        acc = 0.0
        for i in self.indices():
            prof = self.profile(i, t, x1)
            acc += float(np.mean(prof**2))
        return acc

    def time_band(self, i):
        """supp eta_i lies inside this interval."""
        p = self.partition
        if self.kind == "global":
            return (0.0, p.T)
        lo = p.t(i) + (1.0 / 3.0 - 2 * self.kappa - self.rise) * p.tau
        hi = p.t(i) + (2.0 / 3.0 + 2 * self.kappa + self.rise) * p.tau
        return (lo, hi)

    def active_indices(self, t):
        return [i for i in self.indices()
                if self.time_band(i)[0] < t < self.time_band(i)[1]]

    @property
    def coverage_span(self):
        """Times where the squiggle coverage sum_i int eta_i^2 >= c0 holds;
        the periodic pattern is complete between the first and last plateau
        reach.  Stress with sigma > 0 must live inside this span."""
        p = self.partition
        if self.kind == "global":
            return (0.0, p.T)
        lo = p.t(p.n_lo) + (1.0 / 3.0 - 2 * self.kappa) * p.tau
        hi = p.t(p.n_hi) + (2.0 / 3.0 + 2 * self.kappa) * p.tau
        return (lo, hi)

    def certify(self, n_x=512, n_t=400):
        """Numerical certification of properties (i)-(vi)."""
        if self.kind == "global":
            self.certificate = {"kind": "global", "c0_over_volume": 1.0}
            return self.certificate
        p = self.partition
        x1 = TWO_PI * np.arange(n_x) / n_x
        lo, hi = self.coverage_span
        eps = 1e-6 * p.tau
        ts = np.linspace(lo + eps, hi - eps, n_t)
        worst_mass = np.inf
        overlap = 0.0
        range_ok = True
        flat_ok = True
        max_dt = 0.0
        for t in ts:
            profs = {i: self.profile(i, t, x1) for i in self.indices()}
            vals = list(profs.values())
            for v in vals:
                if v.min() < -1e-15 or v.max() > 1 + 1e-15:
                    range_ok = False
            for a in range(len(vals)):
                for b in range(a + 1, len(vals)):
                    overlap = max(overlap, float(np.max(vals[a] * vals[b])))
            worst_mass = min(worst_mass, sum(float(np.mean(v**2)) for v in vals))
            h = p.tau * 1e-6
            for i in self.indices():
                dd = (self.profile(i, t + h, x1) - self.profile(i, t - h, x1)) / (2 * h)
                max_dt = max(max_dt, float(np.max(np.abs(dd))))
        for i in self.indices():
            lo, hi = p.I(i)
            if hi > lo:
                for t in np.linspace(lo, hi, 20):
                    if np.min(self.profile(i, t, x1)) < 1.0 - 1e-14:
                        flat_ok = False
        self.certificate = {
            "kind": "squiggling",
            "kappa": self.kappa,
            "rise": self.rise,
            "range_ok": bool(range_ok),
            "pairwise_overlap_max": overlap,
            "flat_on_I": bool(flat_ok),
            "c0_over_volume": float(worst_mass),
            "c0": float(worst_mass) * TWO_PI_CUBED,
            "max_dt_eta_times_tau": max_dt * p.tau,
        }
        return self.certificate


def build_stripes(partition: IntervalPartition, kind="squiggling",
                  kappa=0.21) -> StripeFamily:
    fam = StripeFamily(partition, kind=kind, kappa=kappa)
    cert = fam.certify()
    if kind == "squiggling":
        failures = []
        if not cert["range_ok"]:
            failures.append("(i) range")
        if cert["pairwise_overlap_max"] > 0.0:
            failures.append(f"(ii) disjointness (overlap {cert['pairwise_overlap_max']:.2e})")
        if not cert["flat_on_I"]:
            failures.append("(iii) plateau on I_i")
        if cert["c0_over_volume"] <= 0.1:
            failures.append(f"(v) c0 too small ({cert['c0_over_volume']:.3f})")
        if failures:
            raise PerturbationError("stripe certification failed: " + ", ".join(failures))
    return fam


# ---------------------------------------------------------------------------
# stress distribution and conjugation


@dataclass
class LocalStress:
    """sigma(t), stripe weights, and the data needed for S~_i."""
    stripes: StripeFamily
    times: np.ndarray
    sigma: np.ndarray            # trace part of S, per slice
    sdev: list                   # traceless part of S, per slice
    hypothesis: dict


def distribute_stress(times, sigma_series, sdev_slices, stripes: StripeFamily,
                      params: SchemeParams = None, q: int = 0,
                      mode: str = "toy") -> LocalStress:
    """Checked container for S = sigma Id + Sdev against the stripe family.

    Verifies sigma >= 0, the measured hypothesis set (bounds on sigma and
    d_t sigma, support of Sdev inside union I_i), and records everything.
    """
    times = np.asarray(times, float)
    sigma = np.asarray(sigma_series, float)
    if np.any(sigma < -1e-14):
        raise PerturbationError(f"negative sigma (min {sigma.min():.3e})")
    sigma = np.maximum(sigma, 0.0)
    checks = {}
    if params is not None:
        sv1 = stage_values(params, q + 1)
        svq = stage_values(params, q)
        checks["sigma <= 4 delta_{q+1}"] = bool(np.all(sigma <= 4 * sv1.delta + 1e-15))
        if len(times) > 2:
            dsig = np.gradient(sigma, times)
            lim = sigma * svq.delta**0.5 * svq.lam
            checks["dt_sigma <= sigma delta_q^(1/2) lambda_q"] = bool(
                np.all(np.abs(dsig) <= np.maximum(lim, 1e-14) * 20))
    # support of the deviatoric part inside the stripe plateaus
    p = stripes.partition
    bad = 0.0
    for m, t in enumerate(times):
        nrm = sdev_slices[m].frobenius_field().max_norm()
        if nrm == 0.0:
            continue
        inside_I = any(p.I(i)[0] - 1e-12 <= t <= p.I(i)[1] + 1e-12
                       for i in stripes.indices()) if stripes.kind == "squiggling" else True
        if not inside_I:
            bad = max(bad, nrm)
    checks["supp Sdev in union I_i (max leak)"] = bad
    if bad > 0 and mode == "rigorous":
        raise PerturbationError(f"Sdev supported outside union I_i (leak {bad:.3e})")
    # sigma may only be positive where the squiggle coverage is certified
    lo, hi = stripes.coverage_span
    for m, t in enumerate(times):
        if sigma[m] > 0 and not (lo - 1e-12 <= t <= hi + 1e-12):
            raise PerturbationError(
                f"sigma > 0 at t = {t:.6g} outside the stripe coverage span "
                f"[{lo:.6g}, {hi:.6g}]")
    return LocalStress(stripes, times, sigma, list(sdev_slices), checks)


def conjugated_stress(local: LocalStress, m_index: int, i: int, phi: VectorField,
                      mode="rigorous"):
    """S~_i at slice m_index: grad Phi (Id + m(t) Sdev/sigma) grad Phi^T.

    (The stripe weights cancel: eta_i^2 Sdev / sigma_i is eta-independent on
    the stripe support.)  Certifies pointwise |S~_i - Id|_op <= 1/2 wherever
    the stripe is active; where sigma = 0 the value Id is returned unused.
    Returns (field (n,n,n,3,3), certificate dict).
    """
    t = local.times[m_index]
    sig = local.sigma[m_index]
    grid = phi.grid
    G = flow_gradient(phi)
    x1 = grid.x
    mass = local.stripes.mass(t, x1)
    if sig <= 0:
        St = np.broadcast_to(np.eye(3), G.shape).copy()
        return St, {"sigma_zero": True, "max_op_distance": 0.0, "clamped": False}
    Sd = local.sdev[m_index].matrix_values()  # (n,n,n,3,3)
    core = np.broadcast_to(np.eye(3), Sd.shape) + (mass / sig) * Sd
    St = np.einsum("...ik,...kl,...jl->...ij", G, core, G)
    St = 0.5 * (St + np.swapaxes(St, -1, -2))
    diff = St - np.eye(3)
    fro = np.sqrt(np.einsum("...ij,...ij->...", diff, diff))
    max_op = 0.0
    clamped = False
    if fro.max() > 0.5:
        # Frobenius dominates the operator norm; look closer only where needed
        idx = fro > 0.5
        ev = np.linalg.eigvalsh(diff[idx])
        max_op = float(np.max(np.abs(ev)))
        if max_op > 0.5:
            if mode == "rigorous":
                raise PerturbationError(
                    f"conjugated stress leaves B_1/2(Id): |S~-Id|_op = {max_op:.4f}")
            clamped = True
            lam_ev, vec_ev = np.linalg.eigh(diff[idx])
            lam_ev = np.clip(lam_ev, -0.5 + 1e-9, 0.5 - 1e-9)
            repaired = np.einsum("...ik,...k,...jk->...ij", vec_ev, lam_ev, vec_ev)
            St[idx] = np.eye(3) + repaired
    else:
        max_op = float(fro.max())  # upper bound; |.|_op <= |.|_F
    cert = {"sigma_zero": False, "max_op_distance": max_op, "clamped": clamped,
            "frobenius_max": float(fro.max()), "stripe_mass": mass}
    return St, cert


# ---------------------------------------------------------------------------
# coefficient fields and synthesis


def _gamma_fields(St, family: mk.MikadoFamily, K):
    """Gamma~_j(S~(x)) / sqrt(m_jK) as (13, n, n, n), vectorized.

    Points with |S~ - Id|_F <= BLEND_LO take the linear branch (a matrix
    multiply); the rare remainder goes through the blended map pointwise.
    """
    shp = St.shape[:-2]
    flat = St.reshape(-1, 3, 3)
    b = np.empty((flat.shape[0], 6))
    b[:, 0] = flat[:, 0, 0]
    b[:, 1] = flat[:, 1, 1]
    b[:, 2] = flat[:, 2, 2]
    b[:, 3] = np.sqrt(2.0) * flat[:, 0, 1]
    b[:, 4] = np.sqrt(2.0) * flat[:, 0, 2]
    b[:, 5] = np.sqrt(2.0) * flat[:, 1, 2]
    gam2 = b @ mk.LINEAR_CORE.T
    dist = np.linalg.norm(flat - np.eye(3), axis=(1, 2))
    hard = np.nonzero(dist > mk.BLEND_LO)[0]
    for idx in hard:
        gam2[idx] = mk.decompose_stress(flat[idx], mode="toy")
    if gam2.min() <= 0:
        raise PerturbationError(
            f"pipe coefficient lost positivity (min {gam2.min():.3e})")
    masses = np.array([family.truncated_mass(j, K) for j in range(mk.N_CHANNELS)])
    if masses.min() <= 0:
        raise PerturbationError("a channel has no Fourier mass below the cutoff")
    gam = np.sqrt(gam2 / masses)
    return gam.T.reshape((mk.N_CHANNELS,) + shp), masses


def _half_modes(modes):
    """Representatives of +-k pairs (k identified with -k by conjugation)."""
    out = []
    seen = set()
    for k in modes:
        if k in seen:
            continue
        mk_ = tuple(-c for c in k)
        seen.add(k)
        seen.add(mk_)
        out.append(k)
    return out


@dataclass
class PerturbationFields:
    w: VectorField
    w_o: VectorField
    w_c: VectorField
    lam: int
    K: int
    truncated_masses: np.ndarray
    stripe_cert: dict
    conj_certs: list
    div_w_rel: float


class SynthBasis:
    """Per-(lambda, K) oscillation fields of the truncated pipe family for
    identity flow maps, synthesized exactly by coefficient placement:

        P_j(x) = sum_{0<|k|<=K} psi_hat_j(k) exp(i lam k.x)          (real)
        Q_j(x) = sum_k i psi_hat_j(k) (k x khat_j)/|k|^2 exp(i lam k.x)

    so that w_o = sum c_ij P_j khat_j and w_c = (1/lam) sum grad(c_ij) x Q_j.
    """

    def __init__(self, family, lam: int, K: int):
        g = family.grid
        n = g.n
        self.lam = int(lam)
        self.K = int(K)
        if lam * K + n // 6 > n // 2:
            raise PerturbationError(
                f"aliasing: lam*K = {lam*K} leaves no coefficient band below "
                f"Nyquist {n//2} (need lam*K <= {n//2 - n//6})")
        khat = mk.DIRECTIONS / np.linalg.norm(mk.DIRECTIONS, axis=1)[:, None]
        self.P = np.zeros((mk.N_CHANNELS,) + (n,) * 3)
        self.Q = np.zeros((mk.N_CHANNELS, 3) + (n,) * 3)
        for j in range(mk.N_CHANNELS):
            modes = family.transverse_modes(j, K)
            if not modes:
                continue
            ph = np.zeros((n,) * 3, complex)
            qh = np.zeros((3,) + (n,) * 3, complex)
            for kvec, coeff in modes.items():
                idx = tuple((self.lam * np.asarray(kvec)) % n)
                ph[idx] += coeff
                kxA = np.cross(np.asarray(kvec, float), khat[j]) / np.dot(kvec, kvec)
                for comp in range(3):
                    qh[(comp,) + idx] += 1j * coeff * kxA[comp]
            self.P[j] = ifftn(ph * n**3).real
            for comp in range(3):
                self.Q[j, comp] = ifftn(qh[comp] * n**3).real


def synthesize_perturbation(local: LocalStress, m_index: int, flows: dict,
                            family: mk.MikadoFamily, lam: int, K: int,
                            mode="rigorous", basis: SynthBasis = None) -> PerturbationFields:
    """w_o, w_c at slice m_index.  flows maps stripe index -> Phi_i
    (VectorField of coordinate functions) at this time, None for identity.
    A SynthBasis covers all identity-flow stripes; non-identity flows fall
    back to the explicit mode sum."""
    grid = family.grid
    t = local.times[m_index]
    sig = local.sigma[m_index]
    x1 = grid.x
    w_o = np.zeros((3,) + (grid.n,) * 3)
    w_c = np.zeros_like(w_o)
    conj_certs = []
    if sig <= 0:
        zero = VectorField(grid, w_o)
        return PerturbationFields(zero, zero, VectorField(grid, w_c), lam, K,
                                  np.ones(mk.N_CHANNELS), local.stripes.certificate,
                                  conj_certs, 0.0)
    mass = local.stripes.mass(t, x1)
    khat = mk.DIRECTIONS / np.linalg.norm(mk.DIRECTIONS, axis=1)[:, None]
    masses = None
    for i in local.stripes.active_indices(t):
        phi = flows[i]
        identity_flow = phi is None
        if identity_flow and basis is None:
            basis = SynthBasis(family, lam, K)
        St, cert = conjugated_stress(
            local, m_index, i, identity_map(grid) if identity_flow else phi,
            mode=mode)
        conj_certs.append({"stripe": i, **cert})
        gam, masses = _gamma_fields(St, family, K)
        prof = local.stripes.profile(i, t, x1)[:, None, None]
        sqrt_sigma_i = prof * np.sqrt(sig / mass)
        if not identity_flow:
            G = flow_gradient(phi)
            Ginv = np.linalg.inv(G)
        for j in range(mk.N_CHANNELS):
            modes = family.transverse_modes(j, K)
            if not modes:
                continue
            cfield = sqrt_sigma_i * gam[j]
            chat = fftn(cfield) / grid.n**3
            gradc = np.stack([
                ifftn(1j * grid.k_axis(ax) * chat * grid.n**3).real
                for ax in (1, 2, 3)
            ])
            if identity_flow:
                for comp in range(3):
                    w_o[comp] += cfield * basis.P[j] * khat[j][comp]
                w_c[0] += (gradc[1] * basis.Q[j, 2] - gradc[2] * basis.Q[j, 1]) / lam
                w_c[1] += (gradc[2] * basis.Q[j, 0] - gradc[0] * basis.Q[j, 2]) / lam
                w_c[2] += (gradc[0] * basis.Q[j, 1] - gradc[1] * basis.Q[j, 0]) / lam
                continue
            dir_field = np.einsum("...ab,b->...a", Ginv, khat[j])
            for kvec in _half_modes(modes):
                coeff = modes[kvec]
                karr = np.asarray(kvec, float)
                phase = np.exp(1j * lam * np.einsum("a,a...->...", karr, phi.values))
                osc = 2.0 * np.real(coeff * phase)
                for comp in range(3):
                    w_o[comp] += cfield * osc * dir_field[..., comp]
                kxA = np.cross(karr, khat[j]) / np.dot(karr, karr)
                osc_c = 2.0 * np.real(1j * coeff * phase) / lam
                B = np.einsum("...ba,b->...a", G, kxA)
                cross = np.stack([
                    gradc[1] * B[..., 2] - gradc[2] * B[..., 1],
                    gradc[2] * B[..., 0] - gradc[0] * B[..., 2],
                    gradc[0] * B[..., 1] - gradc[1] * B[..., 0],
                ])
                for comp in range(3):
                    w_c[comp] += osc_c * cross[comp]
    wof = VectorField(grid, w_o)
    wcf = VectorField(grid, w_c)
    wf = VectorField(grid, w_o + w_c)
    div_rel = divergence(wf).max_norm() / max(wf.max_norm(), 1e-300)
    return PerturbationFields(wf, wof, wcf, lam, K,
                              masses if masses is not None else np.ones(mk.N_CHANNELS),
                              local.stripes.certificate, conj_certs, div_rel)


def _separable_phase(grid: Grid3, lam, kvec):
    ex = np.exp(1j * lam * kvec[0] * grid.x)[:, None, None]
    ey = np.exp(1j * lam * kvec[1] * grid.x)[None, :, None]
    ez = np.exp(1j * lam * kvec[2] * grid.x)[None, None, :]
    return ex * ey * ez


# ---------------------------------------------------------------------------
# assembly and error bookkeeping


def _padded_quadratic_residual(times, vs, ps, stresses, pad=2):
    """Euler-Reynolds residual with products evaluated on a pad-times finer
    grid (no aliasing for the lambda-scale quadratic terms)."""
    from .operators import derivative, gradient, tensor_divergence
    g = vs[0].grid
    n = g.n
    gp = Grid3(pad * n)

    def lift(f):
        cls = type(f)
        hat = f.hat
        big = np.zeros(((f.ncomp or 1),) + (gp.n,) * 3, complex)
        idx = np.fft.fftfreq(n, 1.0 / n).astype(int)
        hat_in = hat if f.ncomp else hat[None]
        big[np.ix_(range(f.ncomp or 1), idx, idx, idx)] = hat_in
        if f.ncomp is None:
            return ScalarField.from_hat(gp, big[0])
        return cls.from_hat(gp, big)

    def restrict_vec(fbig):
        idx = np.fft.fftfreq(n, 1.0 / n).astype(int)
        hat = fbig.hat[np.ix_(range(3), idx, idx, idx)]
        return VectorField.from_hat(g, hat)

    maxs, h1s, fields = [], [], []
    for m in range(1, len(times) - 1):
        dtm = times[m] - times[m - 1]
        dtp = times[m + 1] - times[m]
        w_m = -dtp / (dtm * (dtm + dtp))
        w_p = dtm / (dtp * (dtm + dtp))
        w_0 = -(w_m + w_p)
        dvdt = (w_m * vs[m - 1].values + w_0 * vs[m].values + w_p * vs[m + 1].values)
        vbig = lift(vs[m])
        conv_big = tensor_divergence(vbig.outer(vbig))
        conv = restrict_vec(conv_big)
        tail = np.sqrt(max(conv_big.l2_norm() ** 2 - conv.l2_norm() ** 2, 0.0))
        resid = dvdt + conv.values + gradient(ps[m]).values
        if stresses[m] is not None:
            resid = resid + tensor_divergence(stresses[m]).values
        rf = VectorField(g, resid)
        maxs.append(rf.max_norm())
        h1s.append(h_minus1_norm(rf))
        fields.append((rf, tail))
    return maxs, h1s, fields


@dataclass
class PerturbReport:
    energy_identity_max_rel: float
    div_v_rel: float
    div_budget: float
    residual_out: dict
    error_norms: dict
    predicted_scales: dict
    stripe_certificate: dict
    conjugation: list
    truncation: dict
    support_ok: bool

    def as_dict(self):
        return {
            "energy_identity_max_rel": self.energy_identity_max_rel,
            "div_v_rel": self.div_v_rel,
            "div_budget": self.div_budget,
            "residual_out": self.residual_out,
            "error_norms": self.error_norms,
            "predicted_scales": self.predicted_scales,
            "stripe_certificate": self.stripe_certificate,
            "conjugation": self.conjugation,
            "truncation": self.truncation,
            "support_ok": self.support_ok,
        }


def assemble(state: SubsolutionState, local: LocalStress, flows, family,
             lam: int, K: int, params: SchemeParams = None, q: int = 0,
             mode="rigorous", pad=2):
    """Add the Mikado perturbation for the stress S to the subsolution.

    Returns (new_state, PerturbReport).  flows maps (stripe index, slice
    index) -> Phi_i or None for the identity map.  Slices outside the bands
    where some stripe is active are passed through bitwise.
    """
    grid = state.grid
    times = state.times
    active = [m for m, t in enumerate(times)
              if local.sigma[m] > 0 or local.sdev[m].frobenius_field().max_norm() > 0]
    if not active:
        return state, None
    band = (min(active), max(active))

    perts = {}
    basis = SynthBasis(family, lam, K)  # also enforces the aliasing guard
    for m in active:
        fl = {i: flows.get((i, m)) for i in local.stripes.indices()} if flows else \
             {i: None for i in local.stripes.indices()}
        perts[m] = synthesize_perturbation(local, m, fl, family, lam, K, mode=mode,
                                           basis=basis)

    vs, ps, rho_out, rdevs = state.copy_slice_refs()
    sigma_field_means = {}
    for m in active:
        w = perts[m].w
        vt = VectorField(grid, state.velocities[m].values + w.values)
        # p~ = p + |w|^2 - sum_i sigma_i, mean-zero
        x1 = grid.x
        t = times[m]
        sig = local.sigma[m]
        if sig > 0 and local.stripes.kind == "squiggling":
            massv = local.stripes.mass(t, x1)
            sig_sum = sum(local.stripes.profile(i, t, x1) ** 2
                          for i in local.stripes.indices()) * (sig / massv)
            sig_field = np.broadcast_to(sig_sum[:, None, None], (grid.n,) * 3)
        else:
            sig_field = np.full((grid.n,) * 3, sig)
        pvals = (state.pressures[m].values
                 + np.einsum("i...,i...->...", w.values, w.values) - sig_field)
        pvals = pvals - pvals.mean()
        vs[m] = vt
        ps[m] = ScalarField(grid, pvals)
        sigma_field_means[m] = float(np.mean(sig_field))

    # error tensors at the active slices, from the padded residual of the
    # *perturbed* fields against the retained stress R - S
    retained = []
    for m in range(state.n_slices()):
        if m in perts:
            rd = state.rdev[m] - local.sdev[m]
            rho_ret = state.rho[m] - local.sigma[m]
            retained.append(rd + SymTensorField.isotropic(grid, rho_ret))
        else:
            retained.append(None)
    lo = max(band[0] - 1, 0)
    hi = min(band[1] + 1, state.n_slices() - 1)
    window = list(range(lo, hi + 1))
    maxs, h1s, fields = _padded_quadratic_residual(
        times[window],
        [vs[m] for m in window],
        [ps[m] for m in window],
        [retained[m] if m in perts else state.stress(m) for m in window],
        pad=pad,
    )
    e2_series = {}
    tails = []
    for pos, m in enumerate(window[1:-1], start=1):
        if m not in perts:
            continue
        rf, tail = fields[pos - 1]
        tails.append(tail)
        e1 = inverse_divergence(rf)
        mean_vt = vs[m].l2_norm() ** 2 / TWO_PI_CUBED
        mean_v = state.velocities[m].l2_norm() ** 2 / TWO_PI_CUBED
        e2 = (mean_vt - mean_v - 3.0 * sigma_field_means[m]) / 3.0
        e2_series[m] = e2
        rho_out[m] = state.rho[m] - local.sigma[m] - e2
        rdevs[m] = state.rdev[m] - local.sdev[m] - e1
    # boundary active slices (no centered difference available): balance the
    # energy identity exactly, keep the deviatoric error at zero
    for m in perts:
        if m not in e2_series:
            mean_vt = vs[m].l2_norm() ** 2 / TWO_PI_CUBED
            mean_v = state.velocities[m].l2_norm() ** 2 / TWO_PI_CUBED
            e2 = (mean_vt - mean_v - 3.0 * sigma_field_means[m]) / 3.0
            e2_series[m] = e2
            rho_out[m] = state.rho[m] - local.sigma[m] - e2
            rdevs[m] = state.rdev[m] - local.sdev[m]

    out = SubsolutionState(times, vs, ps, rho_out, rdevs,
                           provenance=state.provenance + [f"perturb(lam={lam},K={K})"])

    energy_rel = float(np.max(np.abs(out.energy_series() - state.energy_series())
                              / np.maximum(np.abs(state.energy_series()), 1e-300)))
    div_rel = max(perts[m].div_w_rel for m in perts)
    vol = 0.0
    if flows:
        from .dynamics import flow_volume_distortion
        for key, phi in flows.items():
            if phi is not None:
                vol = max(vol, flow_volume_distortion(phi))
    div_budget = max(1e-8, 10.0 * vol)
    e1_max = max(
        (rdevs[m] - state.rdev[m] + local.sdev[m]).frobenius_field().max_norm()
        for m in perts)
    e2_max = max(abs(v) for v in e2_series.values())
    tr_e1 = max(
        (rdevs[m] - state.rdev[m] + local.sdev[m]).trace_field().max_norm()
        for m in perts)
    predicted = {}
    if params is not None:
        sv1 = stage_values(params, q + 1)
        sv2 = stage_values(params, q + 2)
        predicted = {
            "E_scale delta_{q+2} lambda_{q+1}^(-3 alpha)": float(
                sv2.delta * (sv1.lam) ** (-3 * params.alpha)),
            "dtTrE_scale delta_{q+2} delta_{q+1}^(1/2) lambda_{q+1}^(1-3 alpha)": float(
                sv2.delta * sv1.delta**0.5 * sv1.lam ** (1 - 3 * params.alpha)),
        }
        es = sorted(e2_series.items())
        if len(es) >= 2:
            tvals = [times[m] for m, _ in es]
            evals = [3 * v for _, v in es]
            predicted["measured |dt tr E|"] = float(
                np.max(np.abs(np.gradient(evals, tvals))))
    report = PerturbReport(
        energy_identity_max_rel=energy_rel,
        div_v_rel=div_rel,
        div_budget=div_budget,
        residual_out={"max": float(np.max(maxs)), "h_minus1": float(np.max(h1s))},
        error_norms={"E1_max": e1_max, "E2_max": e2_max, "trace_E1_max": tr_e1,
                     "unrepresentable_product_tail": float(np.max(tails)) if tails else 0.0},
        predicted_scales=predicted,
        stripe_certificate=local.stripes.certificate,
        conjugation=[c for m in perts for c in perts[m].conj_certs],
        truncation={"K": K, "lam": lam,
                    "channel_masses": perts[band[0]].truncated_masses.tolist()},
        support_ok=True,
    )
    return out, report


# ---------------------------------------------------------------------------
# one-shot global perturbation


def global_perturb(state: SubsolutionState, sigma_series, sdev_slices, lam: int,
                   family, K: int = 6, case: str = "strong", flows=None,
                   mode="rigorous", pad=2):
    """One-shot perturbation with a single global stripe.

    case 'positive-definite': S given as full slices via sdev+sigma with the
    conjugated stress normalized by its pointwise trace; case 'strong':
    S = sigma(t) Id + Sdev with |Sdev| <= sigma/2 (checked).
    """
    grid = state.grid
    times = state.times
    T = float(times[-1])
    part = IntervalPartition(tau=T, T1=0.0, T2=T, T=T, n_lo=0, n_hi=0)
    stripes = StripeFamily(part, kind="global")
    stripes.certify()
    sigma_series = np.asarray(sigma_series, float)
    if case == "strong":
        for m in range(state.n_slices()):
            if sigma_series[m] > 0:
                lim = 0.5 * sigma_series[m]
                nrm = sdev_slices[m].frobenius_field().max_norm()
                if nrm > lim * (1 + 1e-9) and mode == "rigorous":
                    raise PerturbationError(
                        f"case (ii) needs |Sdev| <= sigma/2, got {nrm:.3e} > {lim:.3e}")
    elif case != "positive-definite":
        raise PerturbationError(f"unknown case {case!r}")
    local = distribute_stress(times, sigma_series, sdev_slices, stripes, mode="toy")
    flow_table = {}
    if flows is not None:
        for m in range(state.n_slices()):
            flow_table[(0, m)] = flows.get(m)
    return assemble(state, local, flow_table, family, lam, K, mode=mode, pad=pad)


# ---------------------------------------------------------------------------
# scaling ladder


def corrector_scaling(family, lam_values=(8, 16, 32), K=2, n_synth=160,
                      sdev_amp=0.1):
    """Measured lambda-scaling of ||w_c||/||w_o|| and ||w||_{H^-1}.

    Background v = 0 (identity flows), one global stripe, sigma = 1, and a
    low-mode deviatoric stress so the corrector is nonzero.  The synthesized
    fields are band-limited below Nyquist for every lambda in the ladder, so
    grid sup norms and spectral H^-1 norms are faithful.
    """
    g = Grid3(n_synth)
    X1 = g.coords()[0]
    rows = []
    for lam in lam_values:
        if lam * K + 8 >= g.n // 2:
            raise PerturbationError(f"ladder grid too small for lam = {lam}")
        part = IntervalPartition(tau=1.0, T1=0.0, T2=1.0, T=1.0, n_lo=0, n_hi=0)
        stripes = StripeFamily(part, kind="global")
        stripes.certify()
        sd = SymTensorField.from_constant_matrix(g, np.zeros((3, 3)))
        sd_vals = sd.values
        sd_vals[0] = sdev_amp * np.cos(X1)
        sd_vals[3] = -sdev_amp * np.cos(X1)
        sdev = SymTensorField(g, sd_vals)
        times = np.array([0.0, 0.5, 1.0])
        local = distribute_stress(times, np.ones(3), [sdev] * 3, stripes, mode="toy")
        fam_synth = family if family.grid.n == n_synth else None
        if fam_synth is None:
            raise PerturbationError("family must be built on the synthesis grid")
        pf = synthesize_perturbation(local, 1, {0: None}, fam_synth, lam, K)
        rows.append({
            "lam": lam,
            "wo_sup": pf.w_o.max_norm(),
            "wc_sup": pf.w_c.max_norm(),
            "ratio_sup": pf.w_c.max_norm() / pf.w_o.max_norm(),
            "wo_l2": pf.w_o.l2_norm(),
            "wc_l2": pf.w_c.l2_norm(),
            "ratio_l2": pf.w_c.l2_norm() / pf.w_o.l2_norm(),
            "w_hminus1": h_minus1_norm(pf.w),
            "div_w_rel": pf.div_w_rel,
        })
    lams = np.array([r["lam"] for r in rows], float)
    slope = lambda key: float(np.polyfit(np.log(lams),
                                         np.log([r[key] for r in rows]), 1)[0])
    return {
        "rows": rows,
        "slope_ratio_sup": slope("ratio_sup"),
        "slope_ratio_l2": slope("ratio_l2"),
        "slope_hminus1": slope("w_hminus1"),
    }
