"""Differential-region calling from fitted profiles.

Reads fusion structure off the beta variables of a fit: per site, groups
whose values sit within epsilon of each other form fused blocks; sites
where the closeness relation is not transitive are invalid and never enter
regions. Contiguous runs of valid sites with two or more unfused profiles
become regions, runs separated by exactly one fully-fused site are merged,
and each region decomposes into maximal sub-regions of constant partition.
Pure post-processing; safe for concurrent use.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

FUSED = 0
DIFFERENTIAL = 1
INVALID = 2


@dataclass(frozen=True)
class SitePartition:
    """Grouping of the profiles into fused blocks at one site."""

    site: int
    blocks: tuple
    valid: bool

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def fused(self):
        return len(self.blocks) == 1

    def signature(self):
        """Compact label like "1|23": groups are 1-based, fused groups abut."""
        return "|".join(
            "".join(str(g + 1) for g in block) for block in self.blocks
        )


@dataclass(frozen=True)
class SubRegion:
    """Maximal run of sites inside a region sharing one partition."""

    start: int
    end: int
    partition: SitePartition


@dataclass
class Region:
    """Contiguous run of differential sites, possibly spanning single fused
    gap sites introduced by merging; site indices are inclusive."""

    start: int
    end: int
    partitions: list  # SitePartition per site, aligned with start..end
    start_coord: float = None
    end_coord: float = None

    @property
    def n_sites(self):
        return self.end - self.start + 1

    def span_basepairs(self):
        if self.start_coord is None:
            return float(self.end - self.start + 1)
        return float(self.end_coord - self.start_coord + 1)


def partition_at_site(beta_column, epsilon, site=0):
    """Partition one site's profile values into fused blocks.

    Blocks are connected components of the relation |b_m - b_m'| < epsilon;
    the partition is valid only when that relation is transitive, i.e. every
    pair inside a component is itself within epsilon.
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    beta_column = np.asarray(beta_column, dtype=float)
    m = beta_column.size
    close = np.abs(beta_column[:, None] - beta_column[None, :]) < epsilon

    labels = np.full(m, -1, dtype=int)
    blocks = []
    for start in range(m):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = len(blocks)
        members = [start]
        while stack:
            a = stack.pop()
            for b in range(m):
                if labels[b] < 0 and close[a, b]:
                    labels[b] = len(blocks)
                    members.append(b)
                    stack.append(b)
        blocks.append(tuple(sorted(members)))
    blocks.sort(key=lambda blk: blk[0])

    valid = all(
        close[a, b] for blk in blocks for a in blk for b in blk if a < b
    )
    return SitePartition(site=site, blocks=tuple(blocks), valid=valid)


def classify_sites(beta, epsilon):
    """Per-site partitions and FUSED/DIFFERENTIAL/INVALID labels."""
    beta = np.asarray(beta, dtype=float)
    p = beta.shape[1]
    partitions = [partition_at_site(beta[:, j], epsilon, site=j) for j in range(p)]
    labels = np.empty(p, dtype=int)
    for j, part in enumerate(partitions):
        if not part.valid:
            labels[j] = INVALID
        elif part.fused:
            labels[j] = FUSED
        else:
            labels[j] = DIFFERENTIAL
    return partitions, labels


def _beta_of(fit):
    return fit.beta if hasattr(fit, "beta") else np.asarray(fit, dtype=float)


def _default_epsilon(fit, epsilon):
    if epsilon is not None:
        return epsilon
    params = getattr(fit, "params", None)
    if params is None:
        raise ParameterError("epsilon is required when passing a bare array")
    return params.epsilon


def extract_regions(fit, epsilon=None, merge_gap=1, positions=None):
    """Differential regions from a fit, after invalid-site removal.

    Sites with invalid partitions are dropped first; maximal runs of
    remaining differential sites form regions, and two regions separated by
    at most merge_gap fully-fused sites are combined into one (the gap sites
    stay in the region with their fused partition). positions, when given,
    attaches genomic coordinates.
    """
    beta = _beta_of(fit)
    epsilon = _default_epsilon(fit, epsilon)
    partitions, labels = classify_sites(beta, epsilon)
    p = labels.size

    runs = []
    j = 0
    while j < p:
        if labels[j] == DIFFERENTIAL:
            start = j
            while j + 1 < p and labels[j + 1] == DIFFERENTIAL:
                j += 1
            runs.append([start, j])
        j += 1

    merged = []
    for run in runs:
        if merged:
            gap_lo, gap_hi = merged[-1][1] + 1, run[0] - 1
            gap = gap_hi - gap_lo + 1
            if 0 < gap <= merge_gap and np.all(labels[gap_lo : gap_hi + 1] == FUSED):
                merged[-1][1] = run[1]
                continue
        merged.append(run)

    if positions is not None:
        positions = np.asarray(
            getattr(positions, "positions", positions), dtype=float
        )
    regions = []
    for start, end in merged:
        region = Region(
            start=start,
            end=end,
            partitions=partitions[start : end + 1],
        )
        if positions is not None:
            region.start_coord = float(positions[start])
            region.end_coord = float(positions[end])
        regions.append(region)
    return regions


def invalid_site_report(fit, epsilon=None, positions=None):
    """Sites excluded for invalid partitions, as runs plus a base-pair total."""
    beta = _beta_of(fit)
    epsilon = _default_epsilon(fit, epsilon)
    _, labels = classify_sites(beta, epsilon)
    if positions is not None:
        positions = np.asarray(
            getattr(positions, "positions", positions), dtype=float
        )
    runs = []
    total = 0.0
    j = 0
    p = labels.size
    while j < p:
        if labels[j] == INVALID:
            start = j
            while j + 1 < p and labels[j + 1] == INVALID:
                j += 1
            runs.append((start, j))
            if positions is not None:
                total += positions[j] - positions[start] + 1
            else:
                total += j - start + 1
        j += 1
    return runs, total


def subregions(region):
    """Split a region into maximal runs of identical partitions; the pieces
    concatenate back to the full region."""
    parts = region.partitions
    out = []
    run_start = region.start
    for offset in range(1, len(parts) + 1):
        boundary = offset == len(parts) or (
            parts[offset].blocks != parts[offset - 1].blocks
        )
        if boundary:
            out.append(
                SubRegion(
                    start=run_start,
                    end=region.start + offset - 1,
                    partition=parts[offset - 1],
                )
            )
            if offset < len(parts):
                run_start = region.start + offset
    return out


def classify_direction(subregion, theta, group_order, tol=1e-9):
    """Label a sub-region gain/loss/other along a developmental ordering.

    gain means the profile values are non-decreasing along group_order at
    every site of the sub-region (within tol), loss means non-increasing,
    anything else is other.
    """
    theta = np.asarray(theta, dtype=float)
    mgroups = theta.shape[0]
    order = list(group_order)
    if sorted(order) != list(range(mgroups)):
        raise ParameterError(
            f"group_order must be a permutation of 0..{mgroups - 1}, got {order}"
        )
    window = theta[np.asarray(order), subregion.start : subregion.end + 1]
    steps = np.diff(window, axis=0)
    if np.all(steps >= -tol):
        return "gain"
    if np.all(steps <= tol):
        return "loss"
    return "other"
