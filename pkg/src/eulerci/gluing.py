"""Temporal gluing: interval partitions, time-local mollification, exact
classical solves launched from mollified data at the anchor times t_i, and
the partition-of-unity assembly of the glued subsolution.

Interval layout (anchor spacing tau):

    t_i = i tau,  I_i = [t_i + tau/3, t_i + 2 tau/3] cap [0, T],
    J_i = (t_i - tau/3, t_i + tau/3) cap [0, T]  for n_lo <= i <= n_hi,
    J_{n_lo - 1} = [0, t_{n_lo} - 2 tau/3),  J_{n_hi + 1} = (t_{n_hi} + 2 tau/3, T],

so [0, T] decomposes disjointly and the construction touches nothing outside
[start I_{n_lo - 1}, end I_{n_hi}] subset [T1, T2].  The glued stress is

    Rdev_bar = -chi_i'(t) Rop(v_i - v_{i+1}) + chi_i (1 - chi_i) (v_i - v_{i+1}) odot (v_i - v_{i+1})
               + (chi_{n_lo - 1} + chi_{n_hi + 1}) Rdev_in        (odot = traceless outer)
    rho_bar  = rho + (1/3) avg(|v_in|^2 - |v_bar|^2),

which balances the energy identity exactly by construction.  The pressure
correction on the cutoff regions is (1/3) chi (1 - chi) (|d|^2 - avg |d|^2);
the trace split of the quadratic term forces the 1/3.
"""

from dataclasses import dataclass, field

import numpy as np

from .fields import ScalarField, VectorField, SymTensorField
from .operators import inverse_divergence, mollify, dealias, holder_norm
from .dynamics import TimeGrid, classical_solve, euler_reynolds_residual, SolverError
from .scheduler import SchemeParams, stage_values, local_scale
from .state import SubsolutionState, TWO_PI_CUBED


class GluingError(Exception):
    pass


# ---------------------------------------------------------------------------
# intervals and cutoffs


@dataclass(frozen=True)
class IntervalPartition:
    tau: float
    T1: float
    T2: float
    T: float
    n_lo: int
    n_hi: int

    def t(self, i):
        return i * self.tau

    def I(self, i):
        lo = max(self.t(i) + self.tau / 3.0, 0.0)
        hi = min(self.t(i) + 2.0 * self.tau / 3.0, self.T)
        return (lo, hi)

    def J(self, i):
        if i == self.n_lo - 1:
            return (0.0, max(self.t(self.n_lo) - 2.0 * self.tau / 3.0, 0.0))
        if i == self.n_hi + 1:
            return (self.t(self.n_hi) + 2.0 * self.tau / 3.0, self.T)
        lo = max(self.t(i) - self.tau / 3.0, 0.0)
        hi = min(self.t(i) + self.tau / 3.0, self.T)
        return (lo, hi)

    @property
    def active_span(self):
        """Interval actually modified by the gluing."""
        return (self.I(self.n_lo - 1)[0], self.I(self.n_hi)[1])

    def glued_indices(self):
        return list(range(self.n_lo, self.n_hi + 1))

    def in_core_J(self, t, tol=0.0):
        """True when t lies in one of the J_i, n_lo <= i <= n_hi."""
        for i in self.glued_indices():
            lo, hi = self.J(i)
            if lo + tol < t < hi - tol:
                return True
        return False


def build_partition(T1, T2, tau, T) -> IntervalPartition:
    if not (0.0 <= T1 < T2 <= T):
        raise GluingError(f"need 0 <= T1 < T2 <= T, got {T1}, {T2}, {T}")
    if T2 - T1 <= 4.0 * tau:
        raise GluingError(
            f"window hypothesis violated: T2 - T1 = {T2 - T1:.6g} <= 4 tau = {4*tau:.6g}"
        )
    if T1 == 0.0:
        n_lo = 0
    else:
        # min i with t_i - 2 tau / 3 >= T1
        n_lo = int(np.ceil((T1 + 2.0 * tau / 3.0) / tau - 1e-12))
    n_hi = int(np.floor((T2 - 2.0 * tau / 3.0) / tau + 1e-12))
    if n_hi < n_lo:
        raise GluingError("degenerate partition (window too short for tau)")
    return IntervalPartition(tau=tau, T1=T1, T2=T2, T=T, n_lo=n_lo, n_hi=n_hi)


def _bexp(s):
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smoothstep(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, float)
    b0 = _bexp(s)
    b1 = _bexp(1.0 - s)
    return b0 / (b0 + b1)


@dataclass
class ChiPartition:
    """Cutoffs chi_i, i = n_lo-1 .. n_hi+1, built by telescoping smoothsteps
    so that the partition of unity is exact."""

    partition: IntervalPartition
    certificate: dict = field(default_factory=dict)

    def _step(self, i, t):
        """Ascending step over I_{i-1}; 1 below the window when I is empty."""
        lo, hi = self.partition.I(i - 1)
        t = np.asarray(t, float)
        if hi <= lo + 1e-300:  # empty cutoff region (T1 = 0 boundary)
            return np.ones_like(t) if self.partition.t(i - 1) < 0 else (t >= hi).astype(float)
        return smoothstep((t - lo) / (hi - lo))

    def chi(self, i, t):
        p = self.partition
        t = np.asarray(t, float)
        if i == p.n_lo - 1:
            s_next = self._step(p.n_lo, t)
            return 1.0 - s_next
        s_i = self._step(i, t)
        if i == p.n_hi + 1:
            return s_i
        return s_i - self._step(i + 1, t)

    def chi_prime(self, i, t, h=None):
        """Centered difference; the cutoffs are analytic in t."""
        p = self.partition
        h = h or p.tau * 1e-6
        return (self.chi(i, np.asarray(t) + h) - self.chi(i, np.asarray(t) - h)) / (2 * h)

    def indices(self):
        p = self.partition
        return list(range(p.n_lo - 1, p.n_hi + 2))

    def certify(self, n_samples=10_000):
        p = self.partition
        ts = np.linspace(0.0, p.T, n_samples)
        total = sum(self.chi(i, ts) for i in self.indices())
        pou_resid = float(np.max(np.abs(total - 1.0)))
        worst_support = 0.0
        max_slope = 0.0
        for i in self.indices():
            vals = self.chi(i, ts)
            lo_i = p.I(i - 1)[0] if i - 1 >= p.n_lo - 1 else 0.0
            hi_i = p.I(i)[1] if i <= p.n_hi else p.T
            outside = (ts < lo_i - 1e-12) | (ts > hi_i + 1e-12)
            if outside.any():
                worst_support = max(worst_support, float(np.max(np.abs(vals[outside]))))
            max_slope = max(max_slope, float(np.max(np.abs(self.chi_prime(i, ts)))))
        ok_j = all(
            float(np.min(self.chi(i, np.linspace(*p.J(i), 100)))) > 1.0 - 1e-12
            for i in p.glued_indices() if p.J(i)[1] > p.J(i)[0]
        )
        self.certificate = {
            "partition_of_unity_residual": pou_resid,
            "support_containment_max_leak": worst_support,
            "flat_on_J": bool(ok_j),
            "max_slope_times_tau": max_slope * p.tau,
        }
        return self.certificate


def build_chi(partition: IntervalPartition) -> ChiPartition:
    chi = ChiPartition(partition)
    cert = chi.certify()
    if cert["partition_of_unity_residual"] > 1e-12 or not cert["flat_on_J"]:
        raise GluingError(f"cutoff certification failed: {cert}")
    return chi


# ---------------------------------------------------------------------------
# time-local mollification


def local_mollify(v: VectorField, p: ScalarField, rdev: SymTensorField, ell: float):
    """(v_l, p_l, Rdev_l): mollified triple with the quadratic commutators.

    v_l = v * phi; Rdev_l = Rdev * phi + (v odot v) * phi - v_l odot v_l;
    p_l = p * phi + (1/3)(|v|^2 * phi - |v_l|^2).  The triple solves the
    Euler-Reynolds system up to the residual of the input.
    """
    vl = mollify(v, ell)
    outer = dealias(v.outer(v))
    outer_l = mollify(outer, ell)
    outer_vl = dealias(vl.outer(vl))
    rl = mollify(rdev, ell) + outer_l.deviator() - outer_vl.deviator()
    tr_comm = ScalarField(
        v.grid,
        (outer_l.values[0] + outer_l.values[3] + outer_l.values[5])
        - (outer_vl.values[0] + outer_vl.values[3] + outer_vl.values[5]),
    )
    pl = ScalarField(v.grid, mollify(p, ell).values + tr_comm.values / 3.0)
    pl = ScalarField(v.grid, pl.values - pl.values.mean())
    return vl, pl, rl


# ---------------------------------------------------------------------------
# the glue


@dataclass
class GlueReport:
    hypothesis: dict
    residual: dict
    rho_ratio_range: tuple
    energy_identity_max_rel: float
    support_J_max: float
    identity_region_bitwise: bool
    norms: dict
    budget: dict

    def as_dict(self):
        return {
            "hypothesis": self.hypothesis,
            "residual": self.residual,
            "rho_ratio_range": list(self.rho_ratio_range),
            "energy_identity_max_rel": self.energy_identity_max_rel,
            "support_J_max": self.support_J_max,
            "identity_region_bitwise": self.identity_region_bitwise,
            "norms": self.norms,
            "budget": self.budget,
        }


def check_glue_hypotheses(state: SubsolutionState, partition, params: SchemeParams,
                          q: int, M: float, mode: str):
    """Measured form of the gluing hypotheses on [T1, T2]; hard in rigorous
    mode, warnings in toy mode."""
    sv = stage_values(params, q)
    sv2 = stage_values(params, q + 2)
    sv1 = stage_values(params, q + 1)
    sel = [i for i, t in enumerate(state.times)
           if partition.T1 - 1e-12 <= t <= partition.T2 + 1e-12]
    rho = state.rho[sel]
    checks = {}
    checks["rho_lower (>= 3/4 delta_{q+2})"] = bool(np.all(rho >= 0.75 * sv2.delta - 1e-15))
    checks["rho_upper (<= 7/2 delta_{q+1})"] = bool(np.all(rho <= 3.5 * sv1.delta + 1e-15))
    rdev_ok = True
    for i in sel:
        lim = rho[sel.index(i)] ** (1 + params.gamma)
        if state.rdev[i].frobenius_field().max_norm() > lim * (1 + 1e-9):
            rdev_ok = False
            break
    checks["rdev_bound (|Rdev| <= rho^(1+gamma))"] = bool(rdev_ok)
    v1a = max(holder_norm(state.velocities[i], 1, params.alpha) for i in sel)
    checks["v_bound (||v||_{1+alpha} <= M delta_q^(1/2) lambda_q^(1+alpha))"] = bool(
        v1a <= M * sv.delta**0.5 * sv.lam ** (1 + params.alpha)
    )
    if len(sel) >= 3:
        drho = np.gradient(state.rho[sel], state.times[sel])
        checks["drho_bound (|rho'| <= rho delta_q^(1/2) lambda_q)"] = bool(
            np.all(np.abs(drho) <= rho * sv.delta**0.5 * sv.lam + 1e-15)
        )
    failed = [k for k, ok in checks.items() if not ok]
    if failed and mode == "rigorous":
        raise GluingError(f"gluing hypotheses failed: {failed}")
    return checks


def glue(state: SubsolutionState, partition: IntervalPartition, chi: ChiPartition,
         params: SchemeParams, q: int, M: float = 10.0, cfl: float = 0.5,
         mode: str = None):
    """Localized gluing of `state` on [T1, T2]; returns (glued state, info).

    Anchors t_i must lie on the state's slice grid and tau >= 8 dt (enforced)
    so the cutoff derivatives are resolved.
    """
    mode = mode or params.mode
    dt = state.dt
    p = partition
    if p.tau < 8 * dt - 1e-12:
        raise GluingError(f"tau = {p.tau:.4g} must be >= 8 dt = {8*dt:.4g}")
    hyp = check_glue_hypotheses(state, p, params, q, M, mode)

    grid = state.grid
    # per-anchor mollification scales from the local trace part
    scales = {}
    for i in p.glued_indices():
        idx = state.slice_index(p.t(i))
        rho_i = state.rho[idx]
        if rho_i <= 0:
            raise GluingError(f"non-positive rho at anchor t_{i}")
        scales[i] = local_scale(rho_i, params, q)

    # classical solves from mollified anchor data, sampled on the slice grid
    span_steps = int(np.ceil((2.0 * p.tau / 3.0) / dt - 1e-9))
    local_solutions = {}
    for i in p.glued_indices():
        idx = state.slice_index(p.t(i))
        vl, pl, _ = local_mollify(state.velocities[idx], state.pressures[idx],
                                  state.rdev[idx], scales[i])
        steps_down = min(span_steps, idx)
        steps_up = min(span_steps, state.n_slices() - 1 - idx)
        sol = {idx: (vl, pl)}
        if steps_up > 0:
            fwd = classical_solve(vl, TimeGrid(0.0, steps_up * dt, dt), cfl=cfl)
            for j in range(1, steps_up + 1):
                sol[idx + j] = (fwd.velocities[j], fwd.pressures[j])
        if steps_down > 0:
            # Euler is time-reversible: integrate -v forward, flip back
            bwd = classical_solve(-1.0 * vl, TimeGrid(0.0, steps_down * dt, dt), cfl=cfl)
            for j in range(1, steps_down + 1):
                sol[idx - j] = (-1.0 * bwd.velocities[j], bwd.pressures[j])
        local_solutions[i] = sol

    def v_of(i, m):
        """Slice m of the i-th glued solution; input state at the boundary."""
        if i in local_solutions and m in local_solutions[i]:
            return local_solutions[i][m]
        if i in (p.n_lo - 1, p.n_hi + 1):
            return (state.velocities[m], state.pressures[m])
        raise GluingError(f"solution v_{i} not available at slice {m}")

    lo_act, hi_act = p.active_span
    vs, ps, rho_out, rdevs = state.copy_slice_refs()
    diagnostics = {"anchor_scales": scales, "chi_certificate": chi.certificate}

    for m, t in enumerate(state.times):
        if t < lo_act - 1e-12 or t > hi_act + 1e-12:
            continue  # untouched: keep the input slice objects bitwise
        weights = {i: float(chi.chi(i, t)) for i in chi.indices()}
        active = [i for i, wgt in weights.items() if wgt > 1e-300]
        vbar = np.zeros_like(state.velocities[m].values)
        pbar = np.zeros_like(state.pressures[m].values)
        for i in active:
            vi, pi = v_of(i, m)
            vbar += weights[i] * vi.values
            pbar += weights[i] * pi.values
        rdev_new = SymTensorField.zeros(grid)
        # cutoff-region stress: on I_i exactly two cutoffs are active
        if len(active) == 2:
            i = min(active)
            ci = weights[i]
            cpi = float(chi.chi_prime(i, t))
            vi, _ = v_of(i, m)
            vip, _ = v_of(i + 1, m)
            diff = VectorField(grid, vi.values - vip.values)
            rop = inverse_divergence(diff)
            quad = dealias(diff.outer(diff))
            quad_dev = quad.deviator()
            rdev_new = SymTensorField(
                grid, -cpi * rop.values + ci * (1.0 - ci) * quad_dev.values)
            trq = quad.trace_field().values
            pbar = pbar + ci * (1.0 - ci) * (trq - trq.mean()) / 3.0
        # boundary stress passthrough
        wb = weights.get(p.n_lo - 1, 0.0) + weights.get(p.n_hi + 1, 0.0)
        if wb > 1e-300:
            rdev_new = rdev_new + wb * state.rdev[m]
        vbar_f = VectorField(grid, vbar)
        pbar_vals = pbar - pbar.mean()
        mean_sq_in = state.velocities[m].l2_norm() ** 2 / TWO_PI_CUBED
        mean_sq_bar = vbar_f.l2_norm() ** 2 / TWO_PI_CUBED
        vs[m] = vbar_f
        ps[m] = ScalarField(grid, pbar_vals)
        rho_out[m] = state.rho[m] + (mean_sq_in - mean_sq_bar) / 3.0
        rdevs[m] = rdev_new

    glued = SubsolutionState(state.times, vs, ps, rho_out, rdevs,
                             provenance=state.provenance + [f"glue(q={q})"])
    diagnostics["hypothesis"] = hyp
    return glued, diagnostics


def verify_glue(glued: SubsolutionState, original: SubsolutionState,
                partition: IntervalPartition, params: SchemeParams, q: int,
                info=None) -> GlueReport:
    """Measured form of the gluing conclusions; magnitudes are compared to
    the predicted scales as logged ratios, never asserted against
    unquantified constants."""
    p = partition
    sv = stage_values(params, q)
    sel = [m for m, t in enumerate(glued.times)
           if p.T1 - 1e-12 <= t <= p.T2 + 1e-12]
    inner = [m for m in sel if 0 < m < glued.n_slices() - 1]

    stresses = [glued.stress(m) for m in range(glued.n_slices())]
    resid = euler_reynolds_residual(
        glued.times, glued.velocities, glued.pressures, stresses)
    resid_in = euler_reynolds_residual(
        original.times, original.velocities, original.pressures,
        [original.stress(m) for m in range(original.n_slices())])

    ratios = [glued.rho[m] / original.rho[m] for m in sel if original.rho[m] != 0]
    energy_rel = float(np.max(np.abs(glued.energy_series() - original.energy_series())
                              / np.maximum(np.abs(original.energy_series()), 1e-300)))
    support_J = 0.0
    for m in sel:
        if p.in_core_J(glued.times[m]):
            support_J = max(support_J, glued.rdev[m].frobenius_field().max_norm())
    outside = [m for m, t in enumerate(glued.times)
               if t < p.active_span[0] - 1e-12 or t > p.active_span[1] + 1e-12]
    from .state import states_bit_identical
    bitwise = states_bit_identical(glued, original, outside)

    dv = max(
        holder_norm(VectorField(glued.grid,
                                glued.velocities[m].values - original.velocities[m].values),
                    0, params.alpha) for m in sel)
    v1a = max(holder_norm(glued.velocities[m], 1, params.alpha) for m in sel)
    rdev_max = max(glued.rdev[m].frobenius_field().max_norm() for m in sel)
    rho_bar = np.array([glued.rho[m] for m in sel])
    predicted = {
        "dv_scale rho^((1+gamma)/2) ell^(alpha/3)": float(
            np.max(rho_bar ** ((1 + params.gamma) / 2)) * sv.ell ** (params.alpha / 3)),
        "v1a_scale delta_q^(1/2) lambda_q^(1+alpha)": float(
            sv.delta**0.5 * sv.lam ** (1 + params.alpha)),
        "rdev_scale rho^(1+gamma) ell^(-alpha)": float(
            np.max(rho_bar ** (1 + params.gamma)) * sv.ell ** (-params.alpha)),
    }
    norms = {
        "dv_alpha": dv,
        "v_1_alpha": v1a,
        "rdev_max": rdev_max,
        "predicted_scales": predicted,
        "ratio_dv": dv / predicted["dv_scale rho^((1+gamma)/2) ell^(alpha/3)"],
        "ratio_rdev": (rdev_max / predicted["rdev_scale rho^(1+gamma) ell^(-alpha)"]
                       if rdev_max > 0 else 0.0),
    }
    dt = glued.dt
    vmax = max(glued.velocities[m].max_norm() for m in sel)
    budget = {
        "input_residual_max": resid_in.worst_max,
        "time_differencing": dt**2 * vmax / max(p.tau, 1e-300) ** 2,
        "solver_tolerance": 1e-6 * vmax,
    }
    budget["total"] = 10.0 * sum(budget.values())
    return GlueReport(
        hypothesis=(info or {}).get("hypothesis", {}),
        residual={"max": resid.worst_max, "h_minus1": resid.worst_h_minus1,
                  "input_max": resid_in.worst_max},
        rho_ratio_range=(float(np.min(ratios)), float(np.max(ratios))),
        energy_identity_max_rel=energy_rel,
        support_J_max=support_J,
        identity_region_bitwise=bool(bitwise),
        norms=norms,
        budget=budget,
    )
