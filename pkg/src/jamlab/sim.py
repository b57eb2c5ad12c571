"""Deterministic synthetic generator of GNSS interference campaigns.

Each run follows the fixed 280 s protocol: 100 s clean, 100 s with the
jammer active, 80 s recovery, sampled at 1 Hz.  All functional forms
(attenuation amplitudes, dropout threshold, deviation walk, drift rates)
are centralized in SimConstants so experiments can vary them; the default
values are tuned so jam-phase deviations land in the cm-to-dm range and
triple-tone interference is harder than a single tone.

Randomness is fully reproducible: every run's streams derive from
(config.seed, repetition_idx) and nothing else, so the same repetition
index yields the same underlying noise across modes and power levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, ValidationError

CONSTELLATIONS = ("GPS", "GLONASS", "Galileo", "BeiDou", "QZSS")
JAM_MODES = ("cw", "cw3", "fm")
POWER_LEVELS_DBM = (-45.0, -50.0, -55.0, -60.0, -65.0, -70.0)

CLEAN_EPOCHS = 100
JAM_EPOCHS = 100
RECOVERY_EPOCHS = 80
TOTAL_EPOCHS = CLEAN_EPOCHS + JAM_EPOCHS + RECOVERY_EPOCHS

_MIX_STREAM_TAG = 0x4D495845  # distinguishes label draws from run streams


@dataclass(frozen=True)
class PhaseSchedule:
    clean_s: int = CLEAN_EPOCHS
    jam_s: int = JAM_EPOCHS
    recovery_s: int = RECOVERY_EPOCHS
    rate_hz: int = 1

    def __post_init__(self):
        if self.clean_s + self.jam_s + self.recovery_s != TOTAL_EPOCHS:
            raise ContractError("PhaseSchedule: total duration must be 280 s")
        if self.rate_hz != 1:
            raise ContractError("PhaseSchedule: rate is fixed at 1 Hz")


@dataclass(frozen=True)
class ReceiverProfile:
    name: str
    constellations: tuple
    max_satellites: int
    supported_modes: tuple

    def __post_init__(self):
        if self.name not in ("GP01", "Ublox10"):
            raise ContractError(f"unknown receiver name {self.name!r}")
        if not self.constellations:
            raise ContractError("receiver needs at least one constellation")
        for c in self.constellations:
            if c not in CONSTELLATIONS:
                raise ContractError(f"unknown constellation {c!r}")
        expected = ("cw", "cw3", "fm") if self.name == "Ublox10" else ("cw", "cw3")
        if tuple(self.supported_modes) != expected:
            raise ContractError(f"{self.name} must support modes {expected}")


GP01 = ReceiverProfile(
    name="GP01",
    constellations=("GPS", "BeiDou", "Galileo"),
    max_satellites=20,
    supported_modes=("cw", "cw3"),
)

UBLOX10 = ReceiverProfile(
    name="Ublox10",
    constellations=("GPS", "GLONASS", "Galileo", "BeiDou", "QZSS"),
    max_satellites=32,
    supported_modes=("cw", "cw3", "fm"),
)

RECEIVERS = {"GP01": GP01, "Ublox10": UBLOX10}


@dataclass(frozen=True)
class ScenarioConfig:
    receiver: ReceiverProfile
    mode: str
    power_dbm: float
    repetitions: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mode not in self.receiver.supported_modes:
            raise ContractError(
                f"mode {self.mode!r} not supported by {self.receiver.name}")
        if float(self.power_dbm) not in POWER_LEVELS_DBM:
            raise ContractError(
                f"power {self.power_dbm} dBm not one of {POWER_LEVELS_DBM}")
        if self.repetitions < 1:
            raise ContractError("repetitions must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ContractError("seed must fit an unsigned 64-bit integer")


@dataclass
class SatObservation:
    sat_id: tuple  # (constellation, prn)
    snr_db: float
    azimuth_deg: float
    elevation_deg: float


@dataclass
class ObservationEpoch:
    t: int
    est_lat_deg: float
    est_lon_deg: float
    dev_lat_cm: float
    dev_lon_cm: float
    sats: list


@dataclass(eq=False)
class TimeSeriesRun:
    """One 280-epoch observation sequence.

    Equality compares the persisted identity (scenario labels, seed,
    repetition index, epochs); config.repetitions is campaign-level
    metadata and not part of the run file format.
    """

    config: ScenarioConfig
    repetition_idx: int
    epochs: list

    def labels(self):
        return (self.config.receiver.name, self.config.mode,
                self.config.power_dbm, self.repetition_idx)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesRun):
            return NotImplemented
        return (self.labels() == other.labels()
                and self.config.seed == other.config.seed
                and self.epochs == other.epochs)


@dataclass(frozen=True)
class SimConstants:
    """Every invented functional-form constant, in one place."""

    cw_attenuation_db: float = 25.0
    cw3_extra_db: float = 5.0
    cw3_multipliers: tuple = (0.8, 1.0, 1.2)
    fm_period_s: float = 20.0
    snr_base_db: float = 30.0
    snr_elev_gain_db: float = 15.0
    snr_noise_db: float = 1.0
    dropout_snr_db: float = 12.0
    dropout_prob: float = 0.8
    clean_walk_std_cm: float = 1.0
    mean_reversion: float = 0.2
    jam_std_gain: float = 30.0
    difficulty: tuple = (("cw", 1.0), ("fm", 1.2), ("cw3", 1.5))
    recovery_tau_s: float = 15.0
    azimuth_drift_deg_s: float = 0.1
    elevation_drift_deg_s: float = 0.02
    min_satellites: int = 8
    site_lat_deg: float = 46.05
    site_lon_deg: float = 14.50
    deg_per_cm: float = 9.0e-8

    def difficulty_of(self, mode):
        return dict(self.difficulty)[mode]


DEFAULT_CONSTANTS = SimConstants()


def severity_from_power(power_dbm):
    """Map the jammer power levels linearly onto [0, 1]."""
    if not -70.0 <= power_dbm <= -45.0:
        raise DomainError(f"power {power_dbm} dBm outside [-70, -45]")
    return (power_dbm + 70.0) / 25.0


@dataclass(frozen=True)
class JamDraws:
    """Per-run stochastic quantities of the interference model."""

    phi_run: float
    cw3_mult: tuple  # ((constellation, multiplier), ...)

    def mult_of(self, constellation):
        return dict(self.cw3_mult)[constellation]


def draw_jam_randoms(rng, constellations, consts=DEFAULT_CONSTANTS):
    phi = float(rng.uniform(0.0, 2.0 * math.pi))
    mults = tuple(
        (c, float(rng.choice(consts.cw3_multipliers)))
        for c in sorted(constellations)
    )
    return JamDraws(phi_run=phi, cw3_mult=mults)


def jam_envelope(mode, t_in_jam, severity, sat, draws, consts=DEFAULT_CONSTANTS):
    """SNR attenuation (dB, >= 0) while the jammer is active.

    cw hits every satellite with a flat A*severity; cw3 is stronger and
    uneven across constellation bands; fm sweeps, so its impact oscillates
    with a 20 s period.
    """
    if not 0 <= t_in_jam < JAM_EPOCHS:
        raise ContractError(f"t_in_jam {t_in_jam} outside [0, {JAM_EPOCHS})")
    if not 0.0 <= severity <= 1.0:
        raise ContractError(f"severity {severity} outside [0, 1]")
    a = consts.cw_attenuation_db
    if mode == "cw":
        return a * severity
    if mode == "cw3":
        return (a + consts.cw3_extra_db) * severity * draws.mult_of(sat.sat_id[0])
    if mode == "fm":
        phase = 2.0 * math.pi * t_in_jam / consts.fm_period_s + draws.phi_run
        return a * severity * (0.5 + 0.5 * math.sin(phase))
    raise ContractError(f"unknown jam mode {mode!r}")


def _steady_envelope(mode, severity, sat, draws, consts):
    """Time-averaged attenuation level, the anchor the recovery decays from."""
    a = consts.cw_attenuation_db
    if mode == "cw":
        return a * severity
    if mode == "cw3":
        return (a + consts.cw3_extra_db) * severity * draws.mult_of(sat.sat_id[0])
    return 0.5 * a * severity


def recovery_attenuation(mode, t_since_jam_end, severity, sat, draws,
                         consts=DEFAULT_CONSTANTS):
    """Residual attenuation decaying toward clean with a 15 s time constant."""
    decay = math.exp(-t_since_jam_end / consts.recovery_tau_s)
    return _steady_envelope(mode, severity, sat, draws, consts) * decay


def _roster(geometry_rng, receiver, consts):
    """Draw the run's fixed satellite roster and initial geometry."""
    n = int(geometry_rng.integers(consts.min_satellites,
                                  receiver.max_satellites + 1))
    prn_pools = {
        c: list(geometry_rng.permutation(np.arange(1, 33)))
        for c in sorted(receiver.constellations)
    }
    sat_ids = []
    for _ in range(n):
        c = str(geometry_rng.choice(sorted(receiver.constellations)))
        sat_ids.append((c, int(prn_pools[c].pop())))
    az0 = geometry_rng.uniform(0.0, 360.0, size=n)
    el0 = geometry_rng.uniform(10.0, 80.0, size=n)
    el_sign = geometry_rng.choice([-1.0, 1.0], size=n)
    return sat_ids, az0, el0, el_sign


def simulate_run(config, repetition_idx, consts=DEFAULT_CONSTANTS):
    """Generate one 280-epoch run; bit-identical for identical inputs."""
    receiver = config.receiver
    ss = np.random.SeedSequence([int(config.seed), int(repetition_idx)])
    geometry, walk, snr_rng, drop_rng, jam_rng = (
        np.random.default_rng(child) for child in ss.spawn(5))

    sat_ids, az0, el0, el_sign = _roster(geometry, receiver, consts)
    n = len(sat_ids)
    severity = severity_from_power(config.power_dbm)
    draws = draw_jam_randoms(jam_rng, receiver.constellations, consts)
    sigma_jam = 1.0 + consts.jam_std_gain * severity * consts.difficulty_of(config.mode)

    epochs = []
    dev = np.zeros(2)
    for t in range(TOTAL_EPOCHS):
        if t < CLEAN_EPOCHS:
            sigma = consts.clean_walk_std_cm
        elif t < CLEAN_EPOCHS + JAM_EPOCHS:
            sigma = sigma_jam
        else:
            t_rec = t - (CLEAN_EPOCHS + JAM_EPOCHS) + 1
            sigma = 1.0 + (sigma_jam - 1.0) * math.exp(-t_rec / consts.recovery_tau_s)
        dev = (1.0 - consts.mean_reversion) * dev + sigma * walk.normal(size=2)

        az = (az0 + consts.azimuth_drift_deg_s * t) % 360.0
        el = np.clip(el0 + el_sign * consts.elevation_drift_deg_s * t, 0.0, 90.0)
        noise = snr_rng.normal(0.0, consts.snr_noise_db, size=n)
        drop_u = drop_rng.random(n)

        sats = []
        for i, sid in enumerate(sat_ids):
            probe = SatObservation(sid, 0.0, float(az[i]), float(el[i]))
            if t < CLEAN_EPOCHS:
                att = 0.0
            elif t < CLEAN_EPOCHS + JAM_EPOCHS:
                att = jam_envelope(config.mode, t - CLEAN_EPOCHS, severity,
                                   probe, draws, consts)
            else:
                att = recovery_attenuation(config.mode,
                                           t - (CLEAN_EPOCHS + JAM_EPOCHS) + 1,
                                           severity, probe, draws, consts)
            snr = (consts.snr_base_db
                   + consts.snr_elev_gain_db * math.sin(math.radians(el[i]))
                   + noise[i] - att)
            snr = max(0.0, snr)
            if att > 0.0 and snr < consts.dropout_snr_db and drop_u[i] < consts.dropout_prob:
                continue  # tracking lost this epoch; edge disappears
            probe.snr_db = float(snr)
            sats.append(probe)

        epochs.append(ObservationEpoch(
            t=t,
            est_lat_deg=consts.site_lat_deg + float(dev[0]) * consts.deg_per_cm,
            est_lon_deg=consts.site_lon_deg + float(dev[1]) * consts.deg_per_cm,
            dev_lat_cm=float(dev[0]),
            dev_lon_cm=float(dev[1]),
            sats=sats,
        ))

    return TimeSeriesRun(config=config, repetition_idx=repetition_idx, epochs=epochs)


def generate_campaign(config, consts=DEFAULT_CONSTANTS):
    """All repetitions of one scenario, independent streams per repetition."""
    return [simulate_run(config, i, consts) for i in range(config.repetitions)]


def enumerate_scenarios(seed=0, repetitions=50):
    """The full grid: every (receiver, mode, power) combination."""
    configs = []
    for receiver in (UBLOX10, GP01):
        for mode in receiver.supported_modes:
            for power in POWER_LEVELS_DBM:
                configs.append(ScenarioConfig(
                    receiver=receiver, mode=mode, power_dbm=power,
                    repetitions=repetitions, seed=seed))
    return configs


def generate_mixed(receiver, powers, seed, n_runs=50, consts=DEFAULT_CONSTANTS):
    """Runs whose (mode, power) labels are drawn uniformly per repetition.

    With powers = {-45} this is the worst-case dataset: maximum jammer
    power, all interference types the receiver supports.
    """
    powers = sorted(float(p) for p in powers)
    if not powers:
        raise ContractError("powers must be a non-empty subset of the levels")
    for p in powers:
        if p not in POWER_LEVELS_DBM:
            raise ContractError(f"power {p} dBm not one of {POWER_LEVELS_DBM}")
    combos = [(m, p) for m in receiver.supported_modes for p in powers]
    label_rng = np.random.default_rng(
        np.random.SeedSequence([int(seed), _MIX_STREAM_TAG]))
    picks = label_rng.integers(0, len(combos), size=n_runs)
    runs = []
    for i, k in enumerate(picks):
        mode, power = combos[int(k)]
        cfg = ScenarioConfig(receiver=receiver, mode=mode, power_dbm=power,
                             repetitions=n_runs, seed=seed)
        runs.append(simulate_run(cfg, i, consts))
    return runs


def validate_run(run, receiver=None):
    """Re-check every structural invariant; raises ValidationError."""
    receiver = receiver or run.config.receiver
    if len(run.epochs) != TOTAL_EPOCHS:
        raise ValidationError("epochs contiguous",
                              f"expected {TOTAL_EPOCHS} epochs, got {len(run.epochs)}")
    for want_t, epoch in enumerate(run.epochs):
        if epoch.t != want_t:
            raise ValidationError("epochs contiguous",
                                  f"epoch index {epoch.t} at position {want_t}")
        if not (math.isfinite(epoch.dev_lat_cm) and math.isfinite(epoch.dev_lon_cm)):
            raise ValidationError("dev fields finite", f"epoch {epoch.t}")
        if len(epoch.sats) > receiver.max_satellites:
            raise ValidationError("satellite count",
                                  f"epoch {epoch.t} has {len(epoch.sats)} sats, "
                                  f"max {receiver.max_satellites}")
        seen = set()
        for sat in epoch.sats:
            if sat.sat_id in seen:
                raise ValidationError("sat_id unique within an epoch",
                                      f"epoch {epoch.t}, {sat.sat_id}")
            seen.add(sat.sat_id)
            if sat.sat_id[0] not in CONSTELLATIONS:
                raise ValidationError("constellation known",
                                      f"epoch {epoch.t}, {sat.sat_id}")
            if sat.snr_db < 0:
                raise ValidationError("snr_db >= 0",
                                      f"epoch {epoch.t}, {sat.sat_id}: {sat.snr_db}")
            if not 0.0 <= sat.azimuth_deg < 360.0:
                raise ValidationError("azimuth_deg in [0, 360)",
                                      f"epoch {epoch.t}, {sat.sat_id}: {sat.azimuth_deg}")
            if not 0.0 <= sat.elevation_deg <= 90.0:
                raise ValidationError("elevation_deg in [0, 90]",
                                      f"epoch {epoch.t}, {sat.sat_id}: {sat.elevation_deg}")
    return run
