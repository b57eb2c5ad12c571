"""Observation runs as discrete-time heterogeneous graph sequences.

Each epoch becomes a star snapshot: the receiver at the hub, one node per
tracked satellite, and a directed edge pair (sat -> recv "tracked_by",
recv -> sat "tracks") wherever a signal is tracked.  Sequences are cut
into fixed-length windows whose regression target is the deviation at the
final snapshot's epoch.  Feature normalization is plain z-scoring fit on
the training split only.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, ParseError

log = logging.getLogger(__name__)

FEATURES = ("snr", "azimuth", "elevation", "lat", "lon", "dev_lat", "dev_lon")
STD_FLOOR = 1e-8


@dataclass
class GraphSnapshot:
    t: int
    recv_feat: np.ndarray          # (2,) [lat, lon]
    sat_ids: tuple                 # ordered (constellation, prn) pairs
    sat_feats: np.ndarray          # (n, 3) [snr, azimuth, elevation]
    edges_tracked_by: np.ndarray   # sat index -> receiver, one per satellite
    edges_tracks: np.ndarray       # receiver -> sat index, one per satellite
    dev_cm: np.ndarray             # (2,) ground-truth deviation at this epoch

    @property
    def n_sats(self):
        return len(self.sat_ids)


@dataclass
class WindowSample:
    snapshots: list
    target: np.ndarray             # (2,) deviation at the last snapshot's epoch
    labels: tuple                  # (receiver, mode, power_dbm, repetition)
    roster: tuple                  # all sat ids of the source sequence, sorted
    normalized: bool = False


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean/std aligned with FEATURES; immutable after fit."""

    mean: tuple
    std: tuple

    def of(self, feature):
        i = FEATURES.index(feature)
        return self.mean[i], self.std[i]


def build_snapshot(epoch):
    """Star graph for one epoch; satellite order follows epoch.sats."""
    n = len(epoch.sats)
    feats = np.zeros((n, 3))
    ids = []
    for i, sat in enumerate(epoch.sats):
        ids.append(sat.sat_id)
        feats[i] = (sat.snr_db, sat.azimuth_deg, sat.elevation_deg)
    idx = np.arange(n)
    return GraphSnapshot(
        t=epoch.t,
        recv_feat=np.array([epoch.est_lat_deg, epoch.est_lon_deg]),
        sat_ids=tuple(ids),
        sat_feats=feats,
        edges_tracked_by=idx.copy(),
        edges_tracks=idx.copy(),
        dev_cm=np.array([epoch.dev_lat_cm, epoch.dev_lon_cm]),
    )


def build_sequence(run):
    return [build_snapshot(e) for e in run.epochs]


def window_sequence(snapshots, length, stride, labels=None):
    """Non-anchored sliding windows at offsets 0, stride, 2*stride, ...

    Yields floor((N - L)/stride) + 1 samples; too-short input yields an
    empty list (logged, not an error).  Every sample carries the full
    sequence's satellite roster so flattened views can keep stable slots.
    """
    if length < 2:
        raise ContractError(f"window length must be >= 2, got {length}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    n = len(snapshots)
    if n < length:
        log.warning("sequence of %d snapshots shorter than window %d; no samples",
                    n, length)
        return []
    roster = sorted(set(sid for s in snapshots for sid in s.sat_ids))
    samples = []
    for offset in range(0, n - length + 1, stride):
        chunk = snapshots[offset : offset + length]
        samples.append(WindowSample(
            snapshots=chunk,
            target=chunk[-1].dev_cm.copy(),
            labels=labels,
            roster=tuple(roster),
        ))
    return samples


def windows_from_run(run, length, stride):
    return window_sequence(build_sequence(run), length, stride,
                           labels=run.labels())


def fit_norm_stats(train_samples):
    """Z-score statistics (population std) from training samples only."""
    if not train_samples:
        raise ContractError("fit_norm_stats needs at least one sample")
    sat_rows = []
    recv_rows = []
    targets = []
    for sample in train_samples:
        if sample.normalized:
            raise ContractError("fit_norm_stats expects raw samples")
        for snap in sample.snapshots:
            if snap.n_sats:
                sat_rows.append(snap.sat_feats)
            recv_rows.append(snap.recv_feat)
        targets.append(sample.target)
    recv = np.array(recv_rows)
    dev = np.array(targets)

    means, stds = [], []

    def account(name, values):
        if values.size == 0:
            warnings.warn(f"feature {name!r} has no observations; using 0/1 stats")
            means.append(0.0)
            stds.append(1.0)
            return
        m = float(values.mean())
        s = float(values.std())
        if s < STD_FLOOR:
            warnings.warn(f"feature {name!r} is constant; std floored at {STD_FLOOR}")
            s = STD_FLOOR
        means.append(m)
        stds.append(s)

    sat = np.concatenate(sat_rows) if sat_rows else np.zeros((0, 3))
    account("snr", sat[:, 0])
    account("azimuth", sat[:, 1])
    account("elevation", sat[:, 2])
    account("lat", recv[:, 0])
    account("lon", recv[:, 1])
    account("dev_lat", dev[:, 0])
    account("dev_lon", dev[:, 1])
    return NormStats(mean=tuple(means), std=tuple(stds))


def _z(x, mean, std):
    return (x - mean) / std


def apply_norm(sample, stats):
    """Return a normalized copy; the input sample is left untouched."""
    if sample.normalized:
        raise ContractError("sample already normalized")
    m = np.array(stats.mean)
    s = np.array(stats.std)
    snaps = []
    for snap in sample.snapshots:
        feats = snap.sat_feats.copy()
        if feats.size:
            feats = (feats - m[0:3]) / s[0:3]
        snaps.append(replace(
            snap,
            recv_feat=_z(snap.recv_feat, m[3:5], s[3:5]),
            sat_feats=feats,
            sat_ids=snap.sat_ids,
            edges_tracked_by=snap.edges_tracked_by.copy(),
            edges_tracks=snap.edges_tracks.copy(),
            dev_cm=_z(snap.dev_cm, m[5:7], s[5:7]),
        ))
    return WindowSample(
        snapshots=snaps,
        target=_z(sample.target, m[5:7], s[5:7]),
        labels=sample.labels,
        roster=sample.roster,
        normalized=True,
    )


def denorm_target(vec, stats):
    """Normalized (dev_lat, dev_lon) back to centimeters."""
    vec = np.asarray(vec, dtype=float)
    m = np.array(stats.mean[5:7])
    s = np.array(stats.std[5:7])
    return vec * s + m


def save_stats(stats, path):
    lines = ["feature,mean,std"]
    for name, m, s in zip(FEATURES, stats.mean, stats.std):
        lines.append(f"{name},{m!r},{s!r}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_stats(path):
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "feature,mean,std":
        raise ParseError(path, 1, "bad stats header")
    got = {}
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 3:
            raise ParseError(path, line_no, f"expected 3 cells, got {len(cells)}")
        got[cells[0]] = (float(cells[1]), float(cells[2]))
    if set(got) != set(FEATURES):
        raise ParseError(path, 1, f"stats features {sorted(got)} != {sorted(FEATURES)}")
    return NormStats(
        mean=tuple(got[f][0] for f in FEATURES),
        std=tuple(got[f][1] for f in FEATURES),
    )
