"""Network topology, traffic parameters and stability checks.

A network is a 0/1 resource-route incidence matrix ``A`` (J x I) with a
capacity vector ``C``.  Route ``i`` uses resource ``j`` iff ``A[j, i] == 1``.
Indices are zero-based throughout the code; documentation that talks about
"line 1" means index 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CapacityNotDecreasing,
    CapacityOrdering,
    CycleDetected,
    EmptyRoute,
    NonpositiveCapacity,
    RankDeficient,
    ValidationError,
)

__all__ = [
    "Network",
    "TrafficParams",
    "StabilityReport",
    "validate",
    "matrix_rank_exact",
    "stability_margin",
    "linear_network",
    "tree_network",
    "TREE6_PARENTS",
    "TREE6_CAPACITIES",
    "parallel_roads_virtual",
    "is_linear",
]


def _readonly(x: np.ndarray) -> np.ndarray:
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class Network:
    """Validated resource-route incidence matrix plus capacities.

    Build instances through :func:`validate` or one of the preset
    constructors; the dataclass itself performs no checks.
    """

    A: np.ndarray
    C: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return self.A.shape[0]

    @property
    def I(self) -> int:  # noqa: E743
        return self.A.shape[1]

    @property
    def local_traffic(self) -> bool:
        """True if every unit vector e_j appears among the columns of A."""
        cols = {tuple(col) for col in self.A.T.tolist()}
        return all(tuple(np.eye(self.J, dtype=int)[j]) in cols for j in range(self.J))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.A.shape == other.A.shape
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.C, other.C)
        )

    def __repr__(self) -> str:
        return f"Network(name={self.name!r}, J={self.J}, I={self.I}, C={self.C.tolist()})"


@dataclass(frozen=True, eq=False)
class TrafficParams:
    """Arrival rates ``nu``, size rates ``mu``, loads ``rho = nu/mu`` and the
    inflow variance factor ``sigma2`` used by the direct Brownian models."""

    nu: np.ndarray
    mu: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        nu = _readonly(np.array(self.nu, dtype=float).reshape(-1))
        mu = _readonly(np.array(self.mu, dtype=float).reshape(-1))
        if nu.shape != mu.shape:
            raise ValidationError(f"nu and mu lengths differ: {nu.size} vs {mu.size}")
        if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(mu))):
            raise ValidationError("traffic parameters must be finite")
        if np.any(nu < 0):
            raise ValidationError("arrival rates must be non-negative")
        if np.any(mu <= 0):
            raise ValidationError("mu must be strictly positive")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValidationError("sigma2 must be a positive finite number")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def rho(self) -> np.ndarray:
        return self.nu / self.mu

    @property
    def I(self) -> int:  # noqa: E743
        return self.nu.size

    @classmethod
    def from_rho(cls, rho: Sequence[float], sigma2: float = 1.0, mu=None) -> "TrafficParams":
        """Parameters with given loads; ``mu`` defaults to ones so ``nu == rho``."""
        rho = np.asarray(rho, dtype=float).reshape(-1)
        mu = np.ones_like(rho) if mu is None else np.broadcast_to(np.asarray(mu, float), rho.shape)
        return cls(nu=rho * mu, mu=mu, sigma2=sigma2)

    def __eq__(self, other):
        if not isinstance(other, TrafficParams):
            return NotImplemented
        return (
            np.array_equal(self.nu, other.nu)
            and np.array_equal(self.mu, other.mu)
            and self.sigma2 == other.sigma2
        )


@dataclass(frozen=True)
class StabilityReport:
    margins: np.ndarray
    stable: bool
    harmonic_load: Optional[float] = None
    local_traffic: Optional[bool] = None


def matrix_rank_exact(A) -> int:
    """Rank of a small integer/rational matrix by fraction-exact elimination."""
    rows = [[Fraction(int(v)) if float(v).is_integer() else Fraction(float(v)) for v in r]
            for r in np.asarray(A).tolist()]
    if not rows:
        return 0
    n_rows, n_cols = len(rows), len(rows[0])
    rank = 0
    for col in range(n_cols):
        pivot = next((r for r in range(rank, n_rows) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        for r in range(n_rows):
            if r != rank and rows[r][col] != 0:
                f = rows[r][col] / rows[rank][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[rank])]
        rank += 1
        if rank == n_rows:
            break
    return rank


def validate(A, C, name: str = "custom", params: Optional[dict] = None) -> Network:
    """Check an incidence matrix and capacity vector and wrap them.

    Raises
    ------
    ValidationError
        On shape problems or non-binary entries.
    EmptyRoute
        If a column of ``A`` is zero.
    NonpositiveCapacity
        If some ``C_j <= 0``.
    RankDeficient
        If ``A`` does not have full row rank.
    """
    try:
        A = np.array(A, dtype=float)
        C = np.array(C, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"malformed network: {exc}") from exc
    if A.ndim != 2 or A.size == 0:
        raise ValidationError(f"A must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all((A == 0) | (A == 1)):
        raise ValidationError("A must contain only 0/1 entries")
    if C.size != A.shape[0]:
        raise ValidationError(f"C has length {C.size} but A has {A.shape[0]} rows")
    if not np.all(np.isfinite(C)) or np.any(C <= 0):
        raise NonpositiveCapacity(f"capacities must be positive and finite, got {C.tolist()}")
    empty = np.flatnonzero(A.sum(axis=0) == 0)
    if empty.size:
        raise EmptyRoute(f"routes {empty.tolist()} use no resource")
    if matrix_rank_exact(A) < A.shape[0]:
        raise RankDeficient(f"A (J={A.shape[0]}) does not have full row rank")
    return Network(
        A=_readonly(A.astype(np.int64)),
        C=_readonly(C),
        name=name,
        params=dict(params or {}),
    )


def is_linear(net: Network) -> bool:
    """True for the square upper-triangular all-ones matrix of a linear road."""
    return net.J == net.I and np.array_equal(net.A, np.triu(np.ones((net.J, net.J), dtype=np.int64)))


def stability_margin(net: Network, params: TrafficParams) -> StabilityReport:
    """Margins ``C - A rho``; stable iff all are strictly positive."""
    rho = params.rho
    if rho.size != net.I:
        raise ValidationError(f"traffic has {rho.size} routes, network has {net.I}")
    margins = net.C - net.A @ rho
    harmonic = float(np.sum(rho / net.C)) if is_linear(net) else None
    return StabilityReport(
        margins=margins,
        stable=bool(np.min(margins) > 0),
        harmonic_load=harmonic,
        local_traffic=net.local_traffic,
    )


def linear_network(J: Optional[int] = None, C: Sequence[float] = ()) -> Network:
    """Linear road of ``J`` sections; line ``i`` uses sections ``0..i``.

    Capacities must be strictly decreasing upstream: ``C[0] > C[1] > ... > 0``.
    """
    C = np.asarray(C, dtype=float).reshape(-1)
    if J is None:
        J = C.size
    if C.size != J:
        raise ValidationError(f"expected {J} capacities, got {C.size}")
    if np.any(C <= 0):
        raise NonpositiveCapacity("capacities must be positive")
    if np.any(np.diff(C) >= 0):
        raise CapacityNotDecreasing(f"linear network needs C_1 > C_2 > ... > C_J, got {C.tolist()}")
    A = np.triu(np.ones((J, J), dtype=int))
    return validate(A, C, name="linear", params={"C": C.tolist()})


# Parent of each resource in the six-entry tree (root is resource 0).
TREE6_PARENTS = (-1, 0, 1, 0, 3, 3)
TREE6_CAPACITIES = (10.0, 4.0, 2.0, 5.0, 2.0, 2.0)


def _tree_incidence(parents: Sequence[int]) -> np.ndarray:
    n = len(parents)
    A = np.zeros((n, n), dtype=int)
    for i in range(n):
        node, seen = i, set()
        while node != -1:
            if node in seen:
                raise CycleDetected(f"parent map contains a cycle through node {node}")
            if not 0 <= node < n:
                raise ValidationError(f"parent index {node} out of range")
            seen.add(node)
            A[node, i] = 1
            node = parents[node]
    return A


def tree_network(parents: Optional[Sequence[int]] = None, C: Optional[Sequence[float]] = None) -> Network:
    """In-tree network with one entry line per node.

    ``parents[j]`` is the downstream neighbour of resource ``j`` (``-1`` for
    the root).  Route ``i`` enters at node ``i`` and uses every resource on the
    path to the root.  With no arguments the six-node example tree is built.
    """
    if parents is None:
        parents = TREE6_PARENTS
        if C is None:
            C = TREE6_CAPACITIES
        name = "tree6"
    else:
        name = "tree"
    parents = [int(p) for p in parents]
    roots = [j for j, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        raise ValidationError(f"tree needs exactly one root, found {len(roots)}")
    A = _tree_incidence(parents)
    if C is None:
        C = np.ones(len(parents))
    return validate(A, C, name=name, params={"parents": parents, "C": list(map(float, C))})


def parallel_roads_virtual(C: Sequence[float]) -> tuple[Network, Network]:
    """Three parallel roads feeding a fourth, plus the virtual-resource network.

    Returns the physical network (roads 0-2 are private to lines 0-2, road 3
    carries everything) and the lower-triangular virtual network with
    capacities ``(C1, C1+C2, C1+C2+C3, C4)``.
    """
    C = np.asarray(C, dtype=float).reshape(-1)
    if C.size != 4:
        raise ValidationError("parallel roads preset needs exactly 4 capacities")
    if np.any(C <= 0):
        raise NonpositiveCapacity("capacities must be positive")
    if not C[0] + C[1] + C[2] < C[3]:
        raise CapacityOrdering(f"need C1 + C2 + C3 < C4, got {C.tolist()}")
    A = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [1, 1, 1, 1]])
    A_bar = np.tril(np.ones((4, 4), dtype=int))
    C_bar = np.array([C[0], C[0] + C[1], C[0] + C[1] + C[2], C[3]])
    params = {"C": C.tolist()}
    return (
        validate(A, C, name="parallel4", params=params),
        validate(A_bar, C_bar, name="parallel4-virtual", params=params),
    )
