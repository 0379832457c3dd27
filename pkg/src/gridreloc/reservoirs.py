"""Fixed-capacity point reservoirs with mode-seeking clustering.

Each reservoir holds a uniform sample (classic reservoir sampling) of the
world-space points that were routed to it during online training. Its
contents are clustered by a quick-shift-style procedure: every point links
to its nearest neighbour of strictly higher kernel density within distance
tau; the resulting link forest's trees are the clusters and its roots the
density modes. Per-cluster centroids (3D and colour) and covariances are
maintained for use as correspondence candidates during pose estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COVARIANCE_EPSILON = 1e-6  # m^2, added when a cluster covariance degenerates


@dataclass(frozen=True)
class ClustererParams:
    sigma: float = 0.1            # density kernel bandwidth, metres
    tau: float = 0.05             # max link distance, metres
    max_cluster_count: int = 50
    min_cluster_size: int = 20

    def __post_init__(self):
        if min(self.sigma, self.tau) <= 0:
            raise ValueError("sigma and tau must be positive")
        if self.max_cluster_count < 1 or self.min_cluster_size < 1:
            raise ValueError("cluster count/size limits must be >= 1")


@dataclass
class ClusterSummary:
    centroid: np.ndarray         # (3,) metres
    colour_centroid: np.ndarray  # (3,) RGB in [0, 1]
    covariance: np.ndarray       # (3, 3) PSD, m^2
    inv_covariance: np.ndarray   # (3, 3)
    size: int


@dataclass
class Reservoir:
    capacity: int = 4096
    positions: np.ndarray = field(
        default_factory=lambda: np.empty((0, 3), np.float64))
    colours: np.ndarray = field(
        default_factory=lambda: np.empty((0, 3), np.float64))
    seen_count: int = 0
    clusters: list = field(default_factory=list)
    inserts_since_recluster: int = 0

    def __len__(self) -> int:
        return len(self.positions)

    def add_point(self, position, colour, rng: np.random.Generator) -> None:
        self.add_points(np.asarray(position, np.float64).reshape(1, 3),
                        np.asarray(colour, np.float64).reshape(1, 3), rng)

    def add_points(self, positions: np.ndarray, colours: np.ndarray,
                   rng: np.random.Generator) -> None:
        """Stream a batch of points through the reservoir sampler.

        Equivalent to feeding the points one at a time: point number m
        (1-based over the reservoir's lifetime) lands in the buffer with
        probability capacity/m, evicting a uniformly random occupant.
        """
        positions = np.asarray(positions, np.float64).reshape(-1, 3)
        colours = np.asarray(colours, np.float64).reshape(-1, 3)
        n = len(positions)
        if n == 0:
            return
        free = self.capacity - len(self.positions)
        take = min(free, n)
        if take > 0:
            self.positions = np.vstack([self.positions, positions[:take]])
            self.colours = np.vstack([self.colours, colours[:take]])
        self.seen_count += take
        positions, colours = positions[take:], colours[take:]
        n -= take
        if n > 0:
            # Buffer full: slot j_m = floor(U * m) replaces iff j_m < capacity.
            seen_after = self.seen_count + 1 + np.arange(n)
            slots = np.floor(rng.random(n) * seen_after).astype(np.int64)
            accept = slots < self.capacity
            # Later duplicates win, matching sequential replacement order.
            self.positions[slots[accept]] = positions[accept]
            self.colours[slots[accept]] = colours[accept]
            self.seen_count += n
        self.inserts_since_recluster += take + n

    def recluster(self, params: ClustererParams) -> list:
        """Recompute clusters from the current buffer contents."""
        self.clusters = _quick_shift_clusters(self.positions, self.colours,
                                              params)
        self.inserts_since_recluster = 0
        return self.clusters

    def modes(self) -> list:
        """Current cluster summaries, largest cluster first."""
        return self.clusters


def quick_shift_labels(positions: np.ndarray,
                       params: ClustererParams) -> np.ndarray:
    """Label each point with the index of its density mode.

    Density of point i is sum_j exp(-|p_i - p_j|^2 / (2 sigma^2)). Each
    point links to its nearest neighbour of strictly higher density within
    tau (distance ties broken by lowest index); link-forest roots are the
    modes and trees the clusters.
    """
    n = len(positions)
    if n == 0:
        return np.empty(0, np.int64)
    sq = _pairwise_sq_distances(positions)
    density = np.exp(-sq / (2.0 * params.sigma ** 2)).sum(axis=1)
    parent = np.arange(n)
    tau_sq = params.tau ** 2
    for i in range(n):
        eligible = (density > density[i]) & (sq[i] <= tau_sq)
        if eligible.any():
            cands = np.nonzero(eligible)[0]
            d = sq[i][cands]
            best = cands[d == d.min()].min()
            parent[i] = best
    # Path-compress to the root of each link tree.
    root = parent.copy()
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    return root


def _pairwise_sq_distances(p: np.ndarray) -> np.ndarray:
    n = len(p)
    if n <= 2048:
        diff = p[:, None, :] - p[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    out = np.empty((n, n))
    for start in range(0, n, 1024):
        diff = p[start:start + 1024, None, :] - p[None, :, :]
        out[start:start + 1024] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _quick_shift_clusters(positions, colours, params: ClustererParams):
    roots = quick_shift_labels(positions, params)
    clusters = []
    for mode in np.unique(roots):
        members = roots == mode
        size = int(members.sum())
        if size < params.min_cluster_size:
            continue
        clusters.append(_summarise(positions[members], colours[members]))
    clusters.sort(key=lambda c: -c.size)
    return clusters[:params.max_cluster_count]


def _summarise(positions: np.ndarray, colours: np.ndarray) -> ClusterSummary:
    centroid = positions.mean(axis=0)
    diff = positions - centroid
    cov = diff.T @ diff / len(positions)
    if len(positions) < 4 or np.linalg.eigvalsh(cov)[0] < 1e-9:
        cov = cov + COVARIANCE_EPSILON * np.eye(3)
    return ClusterSummary(centroid=centroid,
                          colour_centroid=colours.mean(axis=0),
                          covariance=cov,
                          inv_covariance=np.linalg.inv(cov),
                          size=len(positions))
