"""End-to-end pipeline: count tables in, regions and profiles out.

Flat TSV tables of per-replicate methylation-style counts are validated,
pooled within groups, converted to weighted mean profiles, segmented at
coverage gaps, and solved segment-by-segment (two-stage cross-validation,
final fit, region extraction) on a bounded worker pool. Outputs are a BED
file of regions, a TSV of fitted profiles, and a JSON manifest sufficient
to reproduce the run. Given a fixed config the outputs are byte-identical
regardless of worker count.
"""

import csv
import json
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, admm, regions as regions_mod, tuning
from .admm import GroupedDataset, PenaltyParams
from .errors import DataError, JadeError
from .simbench import binomial_weights

HEADER = ["chrom", "pos", "group", "rep", "reads", "count"]


@dataclass
class CountTable:
    """Validated long-format count rows, sorted by chrom, position, group, rep."""

    chrom: np.ndarray
    pos: np.ndarray
    group: np.ndarray
    rep: np.ndarray
    reads: np.ndarray
    count: np.ndarray

    def __len__(self):
        return self.pos.size

    @property
    def groups(self):
        return sorted(set(self.group.tolist()))


def ingest_counts(path):
    """Read and validate a tab-separated count table.

    Requires the exact header chrom/pos/group/rep/reads/count; malformed
    rows (wrong arity, non-integer numerics, negative values, counts
    exceeding reads, duplicated site within a replicate) raise a DataError
    naming the offending line numbers. Rows are sorted on load.
    """
    rows = []
    bad = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            import warnings

            warnings.warn(f"{path} is empty", RuntimeWarning, stacklevel=2)
            empty = np.array([], dtype=object)
            zeros = np.array([], dtype=int)
            return CountTable(empty, zeros, empty, empty, zeros, zeros)
        if [h.strip().lower() for h in header] != HEADER:
            raise DataError(
                f"{path}: expected header {'/'.join(HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 6:
                bad.append((lineno, f"expected 6 fields, got {len(row)}"))
                continue
            chrom, pos, group, rep, reads, count = (f.strip() for f in row)
            try:
                pos, reads, count = int(pos), int(reads), int(count)
            except ValueError:
                bad.append((lineno, "non-integer pos/reads/count"))
                continue
            if reads < 0 or count < 0:
                bad.append((lineno, "negative reads or count"))
                continue
            if count > reads:
                bad.append((lineno, f"count {count} exceeds reads {reads}"))
                continue
            rows.append((chrom, pos, group, rep, reads, count))
    if bad:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in bad[:20])
        raise DataError(f"{path}: {len(bad)} malformed row(s): {detail}")

    seen = Counter((r[0], r[2], r[3], r[1]) for r in rows)
    dupes = [key for key, cnt in seen.items() if cnt > 1]
    if dupes:
        raise DataError(f"{path}: duplicated site entries, e.g. {dupes[0]}")

    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    cols = list(zip(*rows)) if rows else [[], [], [], [], [], []]
    return CountTable(
        chrom=np.array(cols[0], dtype=object),
        pos=np.array(cols[1], dtype=int),
        group=np.array(cols[2], dtype=object),
        rep=np.array(cols[3], dtype=object),
        reads=np.array(cols[4], dtype=int),
        count=np.array(cols[5], dtype=int),
    )


def write_counts(table, path):
    """Inverse of ingest_counts, for fixtures and round-trip checks."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(HEADER)
        for i in range(len(table)):
            writer.writerow(
                [
                    table.chrom[i],
                    table.pos[i],
                    table.group[i],
                    table.rep[i],
                    table.reads[i],
                    table.count[i],
                ]
            )


@dataclass
class PooledBlock:
    """One chromosome's pooled per-group counts on the union site grid."""

    chrom: str
    positions: np.ndarray  # (P,) sorted unique positions
    groups: list
    reads: np.ndarray  # (M, P) pooled read counts, 0 where unmeasured
    counts: np.ndarray  # (M, P)
    ybar: np.ndarray  # (M, P) pooled proportions, 0 where unmeasured
    weights: np.ndarray  # (M, P) inverse-sd weights, 0 where unmeasured


def pool_replicates(table):
    """Sum reads and counts across replicates within each group and site,
    then derive proportions and pseudo-count weights; one block per
    chromosome."""
    blocks = []
    for chrom in sorted(set(table.chrom.tolist())):
        sel = table.chrom == chrom
        positions = np.unique(table.pos[sel])
        groups = sorted(set(table.group[sel].tolist()))
        pos_index = {p: i for i, p in enumerate(positions.tolist())}
        reads = np.zeros((len(groups), positions.size))
        counts = np.zeros((len(groups), positions.size))
        for gi, g in enumerate(groups):
            gsel = sel & (table.group == g)
            for p, r, c in zip(table.pos[gsel], table.reads[gsel], table.count[gsel]):
                j = pos_index[p]
                reads[gi, j] += r
                counts[gi, j] += c
        with np.errstate(invalid="ignore", divide="ignore"):
            ybar = np.where(reads > 0, counts / np.maximum(reads, 1), 0.0)
        _, weights = binomial_weights(counts, reads)
        blocks.append(
            PooledBlock(
                chrom=chrom,
                positions=positions.astype(float),
                groups=groups,
                reads=reads,
                counts=counts,
                ybar=ybar,
                weights=weights,
            )
        )
    return blocks


def segment_sites(positions, covered, max_gap=2000, min_sites=20):
    """Split sorted positions into runs with gaps under max_gap, trim each
    run so its first and last site are covered in every group, and drop runs
    with fewer than min_sites sites. Returns inclusive index ranges."""
    positions = np.asarray(positions, dtype=float)
    covered = np.asarray(covered, dtype=bool)
    all_covered = covered.all(axis=0)
    n = positions.size
    segments = []
    start = 0
    for end in range(n):
        if end + 1 >= n or positions[end + 1] - positions[end] >= max_gap:
            lo, hi = start, end
            while lo <= hi and not all_covered[lo]:
                lo += 1
            while hi >= lo and not all_covered[hi]:
                hi -= 1
            if hi - lo + 1 >= min_sites:
                segments.append((lo, hi))
            start = end + 1
    return segments


@dataclass
class Segment:
    """A solvable chunk: contiguous well-covered sites with pooled data."""

    chrom: str
    lo: int
    hi: int
    groups: list
    dataset: GroupedDataset

    @property
    def n_sites(self):
        return self.hi - self.lo + 1


def make_segments(block, max_gap=2000, min_sites=20):
    ranges = segment_sites(block.positions, block.reads > 0, max_gap, min_sites)
    segments = []
    for lo, hi in ranges:
        sl = slice(lo, hi + 1)
        dataset = GroupedDataset(
            block.positions[sl],
            block.ybar[:, sl],
            block.weights[:, sl],
            np.ones(len(block.groups)),
        )
        segments.append(
            Segment(chrom=block.chrom, lo=lo, hi=hi, groups=block.groups,
                    dataset=dataset)
        )
    return segments


@dataclass
class PipelineConfig:
    input_path: str
    out_dir: str
    k: int = 2
    folds: int = 5
    epsilon: float = 0.005
    max_gap: int = 2000
    min_sites: int = 20
    workers: int = 1
    seed: int = 0
    gamma_count: int = 100
    lambda_count: int = 30
    group_order: list = None


@dataclass
class SegmentResult:
    chrom: str
    start_pos: float
    end_pos: float
    n_sites: int
    groups: list
    lam: float = np.nan
    gamma: float = np.nan
    converged: bool = False
    iterations: int = 0
    error: str = None
    positions: np.ndarray = field(default=None, repr=False)
    theta: np.ndarray = field(default=None, repr=False)
    beta: np.ndarray = field(default=None, repr=False)
    regions: list = field(default=None, repr=False)


def fit_segment(segment, config):
    """Two-stage cross-validation and final fit for one segment."""
    ds = segment.dataset
    params = PenaltyParams(lam=1.0, gamma=0.0, k=config.k, epsilon=config.epsilon)
    result = SegmentResult(
        chrom=segment.chrom,
        start_pos=float(ds.grid.positions[0]),
        end_pos=float(ds.grid.positions[-1]),
        n_sites=ds.p,
        groups=list(segment.groups),
        positions=ds.grid.positions.copy(),
    )
    try:
        folds = tuning.make_folds(ds.p, ds.n_groups, config.folds)
        lam_grid = tuning.default_lambda_grid(ds, params, count=config.lambda_count)
        lam_curve = tuning.cv_lambda(ds, params, lam_grid, folds)
        params = PenaltyParams(
            lam=lam_curve.selected, gamma=0.0, k=config.k, epsilon=config.epsilon
        )
        gammas = admm.gamma_grid(ds, params, count=config.gamma_count)
        gamma_curve = tuning.cv_gamma(ds, params, gammas, folds)
        final_params = PenaltyParams(
            lam=lam_curve.selected,
            gamma=gamma_curve.selected,
            k=config.k,
            epsilon=config.epsilon,
        )
        fit = admm.solve_jade(ds, final_params)
        result.lam = float(lam_curve.selected)
        result.gamma = float(gamma_curve.selected)
        result.converged = bool(fit.converged)
        result.iterations = int(fit.iterations)
        result.theta = fit.theta
        result.beta = fit.beta
        result.regions = regions_mod.extract_regions(
            fit, config.epsilon, positions=ds.grid.positions
        )
    except JadeError as exc:
        result.error = str(exc)
    return result


def _region_name(region):
    """Modal partition signature over the region's differential sites."""
    sigs = [
        part.signature()
        for part in region.partitions
        if part.valid and not part.fused
    ]
    counts = Counter(sigs)
    top = max(counts.values())
    return sorted(sig for sig, cnt in counts.items() if cnt == top)[0]


def _region_direction(region, theta, start, group_order, epsilon):
    if group_order is None:
        return "na"
    labels = set()
    shifted = regions_mod.Region(
        start=region.start - start,
        end=region.end - start,
        partitions=region.partitions,
    )
    for sub in regions_mod.subregions(shifted):
        labels.add(
            regions_mod.classify_direction(sub, theta, group_order, tol=epsilon)
        )
    if len(labels) == 1:
        return labels.pop()
    return "mixed"


def write_outputs(results, config, groups):
    """Assemble regions.bed, profiles.tsv, and manifest.json from the
    per-segment results; failed or unconverged segments are manifest-only."""
    out = config.out_dir
    order_idx = None
    if config.group_order is not None:
        if sorted(config.group_order) != sorted(groups):
            raise DataError(
                f"group order {config.group_order} does not match groups {groups}"
            )
        order_idx = [groups.index(g) for g in config.group_order]

    bed_rows = []
    profile_rows = []
    for res in results:
        if res.error is not None or not res.converged:
            continue
        for region in res.regions:
            name = _region_name(region)
            subs = regions_mod.subregions(region)
            direction = _region_direction(
                region, res.theta[:, region.start : region.end + 1], region.start,
                order_idx, config.epsilon,
            ) if order_idx is not None else "na"
            bed_rows.append(
                (
                    res.chrom,
                    int(region.start_coord),
                    int(region.end_coord) + 1,
                    name,
                    len(subs),
                    direction,
                )
            )
        for j in range(res.n_sites):
            row = [res.chrom, int(res.positions[j])]
            row += [f"{res.theta[m, j]:.6g}" for m in range(len(groups))]
            for a in range(len(groups)):
                for b in range(a + 1, len(groups)):
                    fusedflag = int(
                        abs(res.beta[a, j] - res.beta[b, j]) < config.epsilon
                    )
                    row.append(fusedflag)
            profile_rows.append(row)

    bed_rows.sort(key=lambda r: (r[0], r[1]))
    bed_path = os.path.join(out, "regions.bed")
    with open(bed_path, "w") as fh:
        fh.write("#chrom\tstart\tend\tpartition\tsubregions\tdirection\n")
        for row in bed_rows:
            fh.write("\t".join(str(v) for v in row) + "\n")

    profile_path = os.path.join(out, "profiles.tsv")
    pair_cols = [
        f"fused_{a + 1}{b + 1}"
        for a in range(len(groups))
        for b in range(a + 1, len(groups))
    ]
    with open(profile_path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(
            ["chrom", "pos"] + [f"theta_{g}" for g in groups] + pair_cols
        )
        writer.writerows(profile_rows)

    manifest = {
        "version": __version__,
        "input": os.path.abspath(config.input_path),
        "seed": config.seed,
        "parameters": {
            "k": config.k,
            "folds": config.folds,
            "epsilon": config.epsilon,
            "max_gap": config.max_gap,
            "min_sites": config.min_sites,
            "gamma_count": config.gamma_count,
            "lambda_count": config.lambda_count,
            "group_order": config.group_order,
        },
        "groups": groups,
        "segments": [
            {
                "chrom": res.chrom,
                "start": res.start_pos,
                "end": res.end_pos,
                "n_sites": res.n_sites,
                "lam": None if np.isnan(res.lam) else res.lam,
                "gamma": None if np.isnan(res.gamma) else res.gamma,
                "converged": res.converged,
                "iterations": res.iterations,
                "n_regions": len(res.regions) if res.regions is not None else 0,
                "error": res.error,
            }
            for res in results
        ],
    }
    manifest_path = os.path.join(out, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return {"bed": bed_path, "profiles": profile_path, "manifest": manifest_path}


def run_pipeline(config):
    """Ingest, pool, segment, solve all segments, and write outputs.

    Segments run on a process pool when workers > 1; results are assembled
    in segment order so outputs do not depend on the worker count. Returns
    (results, paths); per-segment failures are recorded, not raised.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    probe = os.path.join(config.out_dir, ".write_probe")
    with open(probe, "w") as fh:
        fh.write("")
    os.remove(probe)

    table = ingest_counts(config.input_path)
    blocks = pool_replicates(table)
    groups = table.groups
    segments = []
    for block in blocks:
        if block.groups != groups:
            raise DataError(
                f"chromosome {block.chrom} has groups {block.groups}, "
                f"expected {groups}"
            )
        segments.extend(make_segments(block, config.max_gap, config.min_sites))

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(fit_segment, seg, config) for seg in segments]
            results = [f.result() for f in futures]
    else:
        results = [fit_segment(seg, config) for seg in segments]

    paths = write_outputs(results, config, groups)
    return results, paths
