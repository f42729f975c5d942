"""Short-horizon pseudo-spectral Euler solves, inverse flow maps, pressure
recovery, and the Euler-Reynolds residual.

Time stepping is classical RK4 on the Leray-projected divergence form with
the 2/3 dealiasing rule applied to every quadratic product.  The gluing
analysis only ever needs horizons of the order of the cutoff scale tau_q,
far inside the stability envelope of this scheme.
"""

import json
from dataclasses import dataclass

import numpy as np

from .fields import Grid3, ScalarField, VectorField, identity_map, displacement
from .operators import (
    leray_project,
    divergence,
    tensor_divergence,
    derivative,
    gradient,
    dealias,
    h_minus1_norm,
)
from . import io as eio

CFL_DEFAULT = 0.5


class SolverError(Exception):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")

    @property
    def times(self):
        span = self.t_end - self.t_start
        n_full = int(np.floor(span / self.dt + 1e-12))
        ts = self.t_start + self.dt * np.arange(n_full + 1)
        if ts[-1] < self.t_end - 1e-12 * max(1.0, abs(self.t_end)):
            ts = np.append(ts, self.t_end)  # last step shortened
        else:
            ts[-1] = self.t_end
        return ts


class Trajectory:
    """Slices of (v, p) on a TimeGrid; immutable once produced."""

    def __init__(self, timegrid: TimeGrid, velocities, pressures):
        self.timegrid = timegrid
        self.velocities = list(velocities)
        self.pressures = list(pressures)
        if len(self.velocities) != len(self.timegrid.times):
            raise ValueError("slice count does not match time grid")

    @property
    def times(self):
        return self.timegrid.times

    def velocity_at(self, t):
        """Linear interpolation between slices (O(dt^2), documented)."""
        ts = self.times
        if t <= ts[0]:
            return self.velocities[0]
        if t >= ts[-1]:
            return self.velocities[-1]
        i = int(np.searchsorted(ts, t) - 1)
        h = (t - ts[i]) / (ts[i + 1] - ts[i])
        if h < 1e-12:
            return self.velocities[i]
        if h > 1 - 1e-12:
            return self.velocities[i + 1]
        vals = (1 - h) * self.velocities[i].values + h * self.velocities[i + 1].values
        return VectorField(self.velocities[i].grid, vals)

    def energy_series(self):
        return [0.5 * v.l2_norm() ** 2 for v in self.velocities]

    def save(self, directory, prefix="slice"):
        import os
        os.makedirs(directory, exist_ok=True)
        names = []
        for i, (v, p) in enumerate(zip(self.velocities, self.pressures)):
            vn = f"{prefix}_{i:05d}_v.eulci"
            pn = f"{prefix}_{i:05d}_p.eulci"
            eio.export_field(v, os.path.join(directory, vn))
            eio.export_field(p, os.path.join(directory, pn))
            names.append({"v": vn, "p": pn})
        manifest = {
            "format": "EULCI1",
            "n": self.velocities[0].grid.n,
            "dt": self.timegrid.dt,
            "times": self.times.tolist(),
            "slices": names,
            "energy": self.energy_series(),
        }
        eio.write_json(os.path.join(directory, f"{prefix}_manifest.json"), manifest)

    @classmethod
    def load(cls, directory, prefix="slice"):
        import os
        with open(os.path.join(directory, f"{prefix}_manifest.json")) as fh:
            manifest = json.load(fh)
        vs, ps = [], []
        for entry in manifest["slices"]:
            vs.append(eio.import_field(os.path.join(directory, entry["v"])))
            ps.append(eio.import_field(os.path.join(directory, entry["p"])))
        times = manifest["times"]
        tg = TimeGrid(times[0], times[-1], manifest["dt"])
        return cls(tg, vs, ps)


# ---------------------------------------------------------------------------


def pressure_poisson(v: VectorField, R=None) -> ScalarField:
    """Mean-zero p with Lap p = -div div(v (x) v + R)."""
    g = v.grid
    T = dealias(v.outer(v))
    if R is not None:
        T = T + R
    Th = T.hat
    k = (g.k1, g.k2, g.k3)
    # div div T in Fourier space is -k_i k_j That_ij
    kkT = (
        k[0] * k[0] * Th[0] + k[1] * k[1] * Th[3] + k[2] * k[2] * Th[5]
        + 2 * (k[0] * k[1] * Th[1] + k[0] * k[2] * Th[2] + k[1] * k[2] * Th[4])
    )
    ph = -kkT * g.inv_k_sq
    ph[0, 0, 0] = 0.0
    return ScalarField.from_hat(g, ph)


def _euler_rhs(v: VectorField) -> VectorField:
    """-P div(v (x) v) with 2/3 dealiasing, fused to 9 transforms."""
    from .fields import fftn, ifftn
    g = v.grid
    n3 = g.n**3
    w = v.values
    pairs = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
    That = {p: fftn(w[p[0]] * w[p[1]]) / n3 for p in pairs}
    k = (g.k1, g.k2, g.k3)
    div_hat = []
    for i in range(3):
        acc = 0
        for j in range(3):
            key = (min(i, j), max(i, j))
            acc = acc + k[j] * That[key]
        div_hat.append(1j * acc * g.dealias_mask)
    kdot = k[0] * div_hat[0] + k[1] * div_hat[1] + k[2] * div_hat[2]
    factor = kdot * g.inv_k_sq
    out = np.empty_like(w)
    for i in range(3):
        # zero mean and Nyquist are automatic: k=0 modes vanish, the
        # dealias mask removes everything beyond n/3
        proj = div_hat[i] - k[i] * factor
        out[i] = -ifftn(proj * n3).real
    return VectorField(g, out)


def classical_solve(v0: VectorField, timegrid: TimeGrid,
                    cfl: float = CFL_DEFAULT, blowup_factor: float = 10.0,
                    with_pressure: bool = True) -> Trajectory:
    """RK4 integration of incompressible Euler from v0 over the time grid."""
    g = v0.grid
    scale = v0.max_norm()
    div0 = divergence(v0).max_norm()
    if div0 > 1e-6 * max(scale, 1e-30):
        raise SolverError(f"initial data not divergence-free: {div0:.3e}")
    if div0 > 0:
        v0 = leray_project(v0) + VectorField(
            g, np.broadcast_to(v0.mean()[:, None, None, None], v0.values.shape).copy())
    if scale > 0 and timegrid.dt > cfl * g.dx / scale:
        raise SolverError(
            f"CFL violation: dt = {timegrid.dt:.3e} exceeds "
            f"{cfl * g.dx / scale:.3e} = cfl*dx/|v0|"
        )
    times = timegrid.times
    v = dealias(v0)
    vs = [v]
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        k1 = _euler_rhs(v)
        k2 = _euler_rhs(VectorField(g, v.values + 0.5 * h * k1.values))
        k3 = _euler_rhs(VectorField(g, v.values + 0.5 * h * k2.values))
        k4 = _euler_rhs(VectorField(g, v.values + h * k3.values))
        v = VectorField(
            g, v.values + (h / 6.0) * (k1.values + 2 * k2.values + 2 * k3.values + k4.values)
        )
        if v.max_norm() > blowup_factor * max(scale, 1e-30):
            raise SolverError(f"blow-up guard tripped at t = {times[i+1]:.4f}")
        vs.append(v)
    ps = [pressure_poisson(vv) if with_pressure else ScalarField.zeros(g) for vv in vs]
    return Trajectory(timegrid, vs, ps)


def inverse_flow(traj_or_v, t_i: float, eval_times, cfl: float = CFL_DEFAULT):
    """Inverse flow maps Phi(., t) with (d_t + v.grad) Phi = 0, Phi(., t_i) = id.

    Integrates the periodic displacement Phi - x with the same RK4/dealias
    scheme; velocity between slices by linear interpolation.  Returns one
    VectorField of coordinate functions per requested time.
    """
    if isinstance(traj_or_v, Trajectory):
        vel = traj_or_v.velocity_at
        g = traj_or_v.velocities[0].grid
        vmax = max(v.max_norm() for v in traj_or_v.velocities)
    else:
        vel = lambda t: traj_or_v
        g = traj_or_v.grid
        vmax = traj_or_v.max_norm()
    eval_times = np.atleast_1d(np.asarray(eval_times, float))
    out = {}

    def rhs(t, d):
        from .fields import fftn, ifftn
        vt = vel(t).values
        n3 = g.n**3
        k = (g.k1, g.k2, g.k3)
        acc = np.empty_like(d)
        nyq = g.n // 2
        for c in range(3):
            dh = fftn(d[c])
            prod = 0
            for ax in range(3):
                mult = 1j * np.where(np.abs(k[ax]) == nyq, 0.0, k[ax])
                prod = prod + vt[ax] * ifftn(mult * dh).real
            acc[c] = ifftn(fftn(prod) * g.dealias_mask).real
        return -(acc + vt)

    def sweep(targets):
        """One integration pass visiting the sorted targets in order."""
        d = np.zeros((3,) + (g.n,) * 3)
        t = t_i
        for target in targets:
            span = target - t
            if abs(span) < 1e-15:
                out[float(target)] = VectorField(g, identity_map(g).values + d)
                continue
            nsteps = max(1, int(np.ceil(abs(span) * vmax / (cfl * g.dx))) if vmax > 0 else 1)
            h = span / nsteps
            for _ in range(nsteps):
                k1 = rhs(t, d)
                k2 = rhs(t + 0.5 * h, d + 0.5 * h * k1)
                k3 = rhs(t + 0.5 * h, d + 0.5 * h * k2)
                k4 = rhs(t + h, d + h * k3)
                d = d + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
            out[float(target)] = VectorField(g, identity_map(g).values + d)

    fwd = sorted(t for t in eval_times if t >= t_i)
    bwd = sorted((t for t in eval_times if t < t_i), reverse=True)
    if fwd:
        sweep(fwd)
    if bwd:
        sweep(bwd)
    if len(eval_times) == 1:
        return out[float(eval_times[0])]
    return out


@dataclass
class ResidualReport:
    times: list
    max_norms: list
    h_minus1_norms: list
    worst_max: float
    worst_h_minus1: float


def euler_reynolds_residual(timegrid_times, velocities, pressures, stresses=None,
                            return_fields=False):
    """Residual d_t v + div(v (x) v) + grad p + div R at interior slice times.

    d_t v by centered differences across slices; endpoints are skipped (a
    one-sided difference would be lower order).  Needs at least 3 slices.
    """
    times = np.asarray(timegrid_times, float)
    if len(times) < 3:
        raise SolverError("residual needs at least 3 time slices")
    g = velocities[0].grid
    fields = []
    maxs, h1s, ts = [], [], []
    for i in range(1, len(times) - 1):
        dt_m = times[i] - times[i - 1]
        dt_p = times[i + 1] - times[i]
        # centered difference, exact for parabolas when steps are equal
        w_m = -dt_p / (dt_m * (dt_m + dt_p))
        w_p = dt_m / (dt_p * (dt_m + dt_p))
        w_0 = -(w_m + w_p)
        dvdt = (w_m * velocities[i - 1].values + w_0 * velocities[i].values
                + w_p * velocities[i + 1].values)
        v = velocities[i]
        conv = tensor_divergence(dealias(v.outer(v))).values
        gp = gradient(pressures[i]).values
        resid = dvdt + conv + gp
        if stresses is not None and stresses[i] is not None:
            resid = resid + tensor_divergence(stresses[i]).values
        rf = VectorField(g, resid)
        ts.append(float(times[i]))
        maxs.append(rf.max_norm())
        h1s.append(h_minus1_norm(rf))
        if return_fields:
            fields.append(rf)
    rep = ResidualReport(ts, maxs, h1s, max(maxs), max(h1s))
    return (rep, fields) if return_fields else rep


def flow_volume_distortion(phi: VectorField) -> float:
    """max |det grad Phi - 1| over the grid."""
    from .operators import flow_gradient
    G = flow_gradient(phi)
    return float(np.max(np.abs(np.linalg.det(G) - 1.0)))
