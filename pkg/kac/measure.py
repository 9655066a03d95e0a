"""
Uniform atom clouds.
"""

from dataclasses import dataclass

import numpy as np

from kac.errors import KacError


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """N atoms of weight 1/N each; ``atoms`` is an (N, d) array, shared not copied."""
    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise KacError(f"atoms must be a non-empty (N, d) array, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise KacError("atoms must be finite")
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def mass(self) -> float:
        return 1.0

    def mean(self) -> np.ndarray:
        return self.atoms.mean(axis=0)

    def second_moment(self) -> float:
        return float(np.einsum("ij,ij->", self.atoms, self.atoms) / self.n)

    def integrate(self, f) -> float:
        """<f, mu> for f mapping an (N, d) array to N values."""
        return float(np.mean(f(self.atoms)))
