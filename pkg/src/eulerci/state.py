"""Time-sliced subsolution states (v, p, R) with R = rho(t) Id + Rdev.

rho is stored as a scalar per slice (the trace part of a strong subsolution
is a function of time only, exactly); Rdev holds the traceless part.
"""

import os
import json

import numpy as np

from .fields import Grid3, ScalarField, VectorField, SymTensorField
from . import io as eio

TWO_PI_CUBED = (2 * np.pi) ** 3


class SubsolutionState:
    def __init__(self, times, velocities, pressures, rho, rdev, provenance=None):
        self.times = np.asarray(times, float)
        self.velocities = list(velocities)
        self.pressures = list(pressures)
        self.rho = np.asarray(rho, float)
        self.rdev = list(rdev)
        self.provenance = list(provenance or [])
        m = len(self.times)
        if not (len(self.velocities) == len(self.pressures) == len(self.rdev)
                == len(self.rho) == m):
            raise ValueError("inconsistent slice counts")

    @property
    def grid(self) -> Grid3:
        return self.velocities[0].grid

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def n_slices(self):
        return len(self.times)

    def slice_index(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no slice at t = {t}")
        return i

    def stress(self, i) -> SymTensorField:
        """Full stress rho Id + Rdev at slice i."""
        return self.rdev[i] + SymTensorField.isotropic(self.grid, self.rho[i])

    def energy(self, i) -> float:
        """int |v|^2 + tr R dx at slice i."""
        return self.velocities[i].l2_norm() ** 2 + 3.0 * self.rho[i] * TWO_PI_CUBED

    def energy_series(self):
        return np.array([self.energy(i) for i in range(self.n_slices())])

    def copy_slice_refs(self):
        """Shallow copies of the slice lists (fields shared, not copied)."""
        return (list(self.velocities), list(self.pressures),
                self.rho.copy(), list(self.rdev))

    def with_provenance(self, entry):
        self.provenance.append(entry)
        return self

    # -- serialization ------------------------------------------------------

    def save(self, directory, prefix="state"):
        os.makedirs(directory, exist_ok=True)
        entries = []
        for i in range(self.n_slices()):
            vn = f"{prefix}_{i:05d}_v.eulci"
            pn = f"{prefix}_{i:05d}_p.eulci"
            rn = f"{prefix}_{i:05d}_rdev.eulci"
            eio.export_field(self.velocities[i], os.path.join(directory, vn))
            eio.export_field(self.pressures[i], os.path.join(directory, pn))
            eio.export_field(self.rdev[i], os.path.join(directory, rn))
            entries.append({"v": vn, "p": pn, "rdev": rn})
        manifest = {
            "format": "EULCI1",
            "n": self.grid.n,
            "times": self.times.tolist(),
            "rho": self.rho.tolist(),
            "slices": entries,
            "energy": self.energy_series().tolist(),
            "provenance": self.provenance,
        }
        path = os.path.join(directory, f"{prefix}_manifest.json")
        eio.write_json(path, manifest)
        return path

    @classmethod
    def load(cls, manifest_path):
        directory = os.path.dirname(manifest_path)
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        vs, ps, rd = [], [], []
        for entry in manifest["slices"]:
            vs.append(eio.import_field(os.path.join(directory, entry["v"])))
            ps.append(eio.import_field(os.path.join(directory, entry["p"])))
            rd.append(eio.import_field(os.path.join(directory, entry["rdev"])))
        return cls(manifest["times"], vs, ps, manifest["rho"], rd,
                   manifest.get("provenance"))


def constant_stress_state(grid: Grid3, times, v: VectorField, rho_series,
                          p: ScalarField = None) -> SubsolutionState:
    """State with a time-independent velocity and R = rho(t) Id."""
    times = np.asarray(times, float)
    p = p if p is not None else ScalarField.zeros(grid)
    rho = np.asarray(rho_series, float)
    if rho.ndim == 0:
        rho = np.full(len(times), float(rho))
    return SubsolutionState(
        times,
        [v] * len(times),
        [p] * len(times),
        rho,
        [SymTensorField.zeros(grid)] * len(times),
        provenance=["constant_stress_state"],
    )


def states_bit_identical(a: SubsolutionState, b: SubsolutionState, indices=None):
    """True when the listed slices agree bitwise (arrays equal, rho equal)."""
    idx = range(a.n_slices()) if indices is None else indices
    for i in idx:
        if a.rho[i] != b.rho[i]:
            return False
        if not (np.array_equal(a.velocities[i].values, b.velocities[i].values)
                and np.array_equal(a.pressures[i].values, b.pressures[i].values)
                and np.array_equal(a.rdev[i].values, b.rdev[i].values)):
            return False
    return True
