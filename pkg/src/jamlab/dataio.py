"""Bit-exact text persistence for runs, campaign manifests and results.

Run files are diff-able comma-separated text: `#key=value` header lines
(version, receiver, mode, power_dbm, repetition, seed) followed by one
receiver row per epoch and one satellite row per tracked satellite:

    R,t,est_lat_deg,est_lon_deg,dev_lat_cm,dev_lon_cm
    S,t,constellation,prn,snr_db,azimuth_deg,elevation_deg

Floats are serialized in shortest round-trip decimal form ('.' separator)
and files always use '\\n' line ends, so output is platform independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import sim
from .errors import ParseError, ValidationError

FORMAT_VERSION = "1"

_HEADER_KEYS = ("version", "receiver", "mode", "power_dbm", "repetition", "seed")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_run(run, path):
    """Persist one run; read_run(path) returns an equal run.

    config.repetitions is campaign-level metadata and intentionally not
    part of the format.
    """
    path = Path(path)
    cfg = run.config
    lines = [
        f"#version={FORMAT_VERSION}",
        f"#receiver={cfg.receiver.name}",
        f"#mode={cfg.mode}",
        f"#power_dbm={_fmt(float(cfg.power_dbm))}",
        f"#repetition={run.repetition_idx}",
        f"#seed={cfg.seed}",
    ]
    for epoch in run.epochs:
        lines.append(
            f"R,{epoch.t},{_fmt(epoch.est_lat_deg)},{_fmt(epoch.est_lon_deg)},"
            f"{_fmt(epoch.dev_lat_cm)},{_fmt(epoch.dev_lon_cm)}")
        for sat in epoch.sats:
            lines.append(
                f"S,{epoch.t},{sat.sat_id[0]},{sat.sat_id[1]},{_fmt(sat.snr_db)},"
                f"{_fmt(sat.azimuth_deg)},{_fmt(sat.elevation_deg)}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def _parse_float(path, line_no, text, what):
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line_no, f"bad {what}: {text!r}") from None


def _parse_int(path, line_no, text, what):
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, line_no, f"bad {what}: {text!r}") from None


def read_run(path):
    """Parse and fully re-validate one run file."""
    path = Path(path)
    header = {}
    epochs = []
    current = None

    with open(path, encoding="ascii", newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if line.startswith("#"):
                if "=" not in line:
                    raise ParseError(path, line_no, f"bad header line {line!r}")
                key, value = line[1:].split("=", 1)
                header[key] = value
                continue
            fields = line.split(",")
            tag = fields[0]
            if tag == "R":
                if len(fields) != 6:
                    raise ParseError(path, line_no,
                                     f"receiver row needs 6 fields, got {len(fields)}")
                t = _parse_int(path, line_no, fields[1], "epoch index")
                current = sim.ObservationEpoch(
                    t=t,
                    est_lat_deg=_parse_float(path, line_no, fields[2], "est_lat_deg"),
                    est_lon_deg=_parse_float(path, line_no, fields[3], "est_lon_deg"),
                    dev_lat_cm=_parse_float(path, line_no, fields[4], "dev_lat_cm"),
                    dev_lon_cm=_parse_float(path, line_no, fields[5], "dev_lon_cm"),
                    sats=[],
                )
                epochs.append(current)
            elif tag == "S":
                if len(fields) != 7:
                    raise ParseError(path, line_no,
                                     f"satellite row needs 7 fields, got {len(fields)}")
                t = _parse_int(path, line_no, fields[1], "epoch index")
                if current is None or t != current.t:
                    raise ParseError(path, line_no,
                                     f"satellite row for epoch {t} outside its receiver row")
                current.sats.append(sim.SatObservation(
                    sat_id=(fields[2], _parse_int(path, line_no, fields[3], "prn")),
                    snr_db=_parse_float(path, line_no, fields[4], "snr_db"),
                    azimuth_deg=_parse_float(path, line_no, fields[5], "azimuth_deg"),
                    elevation_deg=_parse_float(path, line_no, fields[6], "elevation_deg"),
                ))
            else:
                raise ParseError(path, line_no, f"unknown row type {tag!r}")

    for key in _HEADER_KEYS:
        if key not in header:
            raise ParseError(path, 1, f"missing header key {key!r}")
    if header["version"] != FORMAT_VERSION:
        raise ParseError(path, 1, f"unsupported format version {header['version']!r}")
    receiver = sim.RECEIVERS.get(header["receiver"])
    if receiver is None:
        raise ParseError(path, 1, f"unknown receiver {header['receiver']!r}")
    repetition = _parse_int(path, 1, header["repetition"], "repetition")
    try:
        config = sim.ScenarioConfig(
            receiver=receiver,
            mode=header["mode"],
            power_dbm=_parse_float(path, 1, header["power_dbm"], "power_dbm"),
            repetitions=max(1, repetition + 1),
            seed=_parse_int(path, 1, header["seed"], "seed"),
        )
    except Exception as exc:
        raise ParseError(path, 1, f"bad header: {exc}") from None

    run = sim.TimeSeriesRun(config=config, repetition_idx=repetition, epochs=epochs)
    sim.validate_run(run)
    return run


# ---------------------------------------------------------------------------
# generic CSV tables (header row + typed string cells)


def write_csv_table(path, fieldnames, rows):
    """Plain CSV with a header row; floats in shortest round-trip form."""
    path = Path(path)
    lines = [",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(name)) for name in fieldnames))
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def read_csv_table(path):
    """Returns (fieldnames, rows) with cell values as raw strings."""
    path = Path(path)
    with open(path, encoding="ascii", newline="") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ParseError(path, 1, "empty table file")
    fieldnames = lines[0].split(",")
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(fieldnames):
            raise ParseError(path, line_no,
                             f"expected {len(fieldnames)} cells, got {len(cells)}")
        rows.append(dict(zip(fieldnames, cells)))
    return fieldnames, rows


# ---------------------------------------------------------------------------
# campaign manifests


@dataclass
class ManifestEntry:
    path: str
    receiver: str
    mode: str
    power_dbm: float
    repetition: int


@dataclass
class CampaignManifest:
    kind: str  # single_scenario | mixed | worst_case
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("single_scenario", "mixed", "worst_case"):
            raise ValidationError("dataset kind", f"unknown kind {self.kind!r}")
        seen = set()
        for e in self.entries:
            key = (e.receiver, e.mode, e.power_dbm, e.repetition)
            if key in seen:
                raise ValidationError("no duplicate (scenario, repetition) pairs",
                                      str(key))
            seen.add(key)


_MANIFEST_FIELDS = ("kind", "path", "receiver", "mode", "power_dbm", "repetition")


def write_manifest(manifest, path):
    rows = [
        {"kind": manifest.kind, "path": e.path, "receiver": e.receiver,
         "mode": e.mode, "power_dbm": float(e.power_dbm), "repetition": e.repetition}
        for e in manifest.entries
    ]
    write_csv_table(path, _MANIFEST_FIELDS, rows)


def read_manifest(path):
    fieldnames, rows = read_csv_table(path)
    if tuple(fieldnames) != _MANIFEST_FIELDS:
        raise ParseError(path, 1, f"bad manifest header {fieldnames}")
    if not rows:
        raise ParseError(path, 1, "manifest has no entries")
    entries = [
        ManifestEntry(
            path=r["path"], receiver=r["receiver"], mode=r["mode"],
            power_dbm=float(r["power_dbm"]), repetition=int(r["repetition"]))
        for r in rows
    ]
    return CampaignManifest(kind=rows[0]["kind"], entries=entries)


def write_campaign(runs, out_dir, kind="single_scenario", stem="run"):
    """Write every run plus a manifest.csv into out_dir; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for run in runs:
        cfg = run.config
        name = (f"{stem}_{cfg.receiver.name}_{cfg.mode}_"
                f"{int(cfg.power_dbm)}_rep{run.repetition_idx:03d}.csv")
        write_run(run, out_dir / name)
        entries.append(ManifestEntry(
            path=name, receiver=cfg.receiver.name, mode=cfg.mode,
            power_dbm=float(cfg.power_dbm), repetition=run.repetition_idx))
    manifest = CampaignManifest(kind=kind, entries=entries)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def read_campaign(manifest_path):
    """Load every run referenced by a manifest, in manifest order."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    return manifest, [read_run(base / e.path) for e in manifest.entries]


# ---------------------------------------------------------------------------
# results tables


@dataclass
class ResultRow:
    receiver: str
    mode: str  # a jam mode, or "mixed" for pooled datasets
    power_dbm: float | None
    model: str
    stat: str  # seed | mean | sd
    seed: int | None
    mae_lat_cm: float
    mae_lon_cm: float
    euclid_mae_cm: float


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)


_RESULT_FIELDS = ("receiver", "mode", "power_dbm", "model", "stat", "seed",
                  "mae_lat_cm", "mae_lon_cm", "euclid_mae_cm")


def validate_results(table):
    for row in table.rows:
        if row.stat not in ("seed", "mean", "sd"):
            raise ValidationError("stat kind", f"unknown stat {row.stat!r}")
        if row.stat == "seed" and row.seed is None:
            raise ValidationError("seed rows carry a seed", str(row))
    seed_counts = {}
    for row in table.rows:
        if row.stat == "seed":
            key = (row.receiver, row.mode, row.power_dbm, row.model)
            seed_counts[key] = seed_counts.get(key, 0) + 1
    for row in table.rows:
        if row.stat == "sd":
            key = (row.receiver, row.mode, row.power_dbm, row.model)
            if seed_counts.get(key, 0) < 2:
                raise ValidationError("sd present only when >= 2 seeds", str(key))
    return table


def write_results(table, path):
    validate_results(table)
    rows = [
        {"receiver": r.receiver, "mode": r.mode,
         "power_dbm": None if r.power_dbm is None else float(r.power_dbm),
         "model": r.model, "stat": r.stat, "seed": r.seed,
         "mae_lat_cm": float(r.mae_lat_cm), "mae_lon_cm": float(r.mae_lon_cm),
         "euclid_mae_cm": float(r.euclid_mae_cm)}
        for r in table.rows
    ]
    write_csv_table(path, _RESULT_FIELDS, rows)


def read_results(path):
    fieldnames, rows = read_csv_table(path)
    if tuple(fieldnames) != _RESULT_FIELDS:
        raise ParseError(path, 1, f"bad results header {fieldnames}")
    out = ResultsTable()
    for line_no, r in enumerate(rows, start=2):
        try:
            out.rows.append(ResultRow(
                receiver=r["receiver"], mode=r["mode"],
                power_dbm=float(r["power_dbm"]) if r["power_dbm"] else None,
                model=r["model"], stat=r["stat"],
                seed=int(r["seed"]) if r["seed"] else None,
                mae_lat_cm=float(r["mae_lat_cm"]),
                mae_lon_cm=float(r["mae_lon_cm"]),
                euclid_mae_cm=float(r["euclid_mae_cm"]),
            ))
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return validate_results(out)
