"""Synthetic crash populations and independent counting oracles.

The generator exists so that aggregation code can be tested against
populations whose true tallies are known by construction, and so that
the normal-approximation power formulas can be checked against Monte
Carlo rejection rates.  Nothing here attempts realism.

The pseudorandom generator is part of the external contract: fixtures
regenerate byte-identically from a seed, in any implementation of the
same algorithm (splitmix64).  One 64-bit state word advances by the
constant 0x9E3779B97F4A7C15 per draw and is finalized by two
xor-shift-multiply rounds; uniform doubles take the top 53 bits.
Derived sub-streams (one per Monte Carlo trial) are seeded from the
finalizer applied to seed + k*GOLDEN so trials are order-independent.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

from .errors import ValidationError
from .model import (
    BodyClass,
    CrashEvent,
    Kabco,
    Region,
    RoadClass,
    SeverityLevel,
    VehicleInvolvement,
)
from .power import normal_quantile

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 with a 53-bit uniform and derived sub-streams."""

    def __init__(self, seed: int) -> None:
        self._seed = seed & _MASK
        self._state = self._seed

    @staticmethod
    def _mix(z: int) -> int:
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return self._mix(self._state)

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def derived(self, k: int) -> "SplitMix64":
        """Independent stream k, a function of the original seed only."""
        if k < 0:
            raise ValidationError(f"derived stream index must be >= 0, got {k}")
        return SplitMix64(self._mix((self._seed + _GOLDEN * (k + 1)) & _MASK))


def poisson(rng: SplitMix64, mean: float) -> int:
    """Poisson draw by product-of-uniforms inversion.

    exp(-mean) underflows long before the double floor is a concern only
    because means above 500 are split in half and the halves summed;
    inversion stays exact for each piece.
    """
    if mean < 0.0 or not math.isfinite(mean):
        raise ValidationError(f"poisson mean must be finite and >= 0, got {mean!r}")
    if mean > 500.0:
        half = mean / 2.0
        return poisson(rng, half) + poisson(rng, mean - half)
    limit = math.exp(-mean)
    count = 0
    product = rng.random()
    while product > limit:
        count += 1
        product *= rng.random()
    return count


def _check_mixture(name: str, items: tuple[tuple[object, float], ...]) -> None:
    if not items:
        raise ValidationError(f"{name} mixture is empty")
    total = 0.0
    for value, p in items:
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"{name} mixture: probability {p!r} for {value!r}")
        total += p
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"{name} mixture sums to {total!r}, expected 1")


def _draw(rng: SplitMix64, items: tuple[tuple[object, float], ...]) -> object:
    u = rng.random()
    acc = 0.0
    for value, p in items:
        acc += p
        if u < acc:
            return value
    return items[-1][0]


@dataclass(frozen=True)
class PopulationSpec:
    """Parameters for one synthetic police-reported crash population.

    Mixtures are (value, probability) tuples summing to 1.  Severity is
    the crash-level maximum KABCO; tow and airbag are per-unit marginal
    probabilities folded up to the crash.  weights picks the per-crash
    sample-weight distribution: "unit" (all 1), "integer" (uniform on
    1..5), or "real" (uniform on [0.5, 5.0)).
    """

    n_crashes: int
    multiplicity: tuple[tuple[int, float], ...]
    severity: tuple[tuple[Kabco, float], ...]
    tow_p: float
    airbag_p: float
    body: tuple[tuple[BodyClass, float], ...]
    road: tuple[tuple[RoadClass, float], ...]
    weights: str
    region: Region
    year: int
    seed: int

    def __post_init__(self) -> None:
        if self.n_crashes < 0:
            raise ValidationError(f"n_crashes must be >= 0, got {self.n_crashes}")
        _check_mixture("multiplicity", self.multiplicity)
        for m, _ in self.multiplicity:
            if m < 1:
                raise ValidationError(f"multiplicity support must be >= 1, got {m}")
        _check_mixture("severity", self.severity)
        for k, _ in self.severity:
            if k in (Kabco.ISU, Kabco.UNK):
                raise ValidationError(f"severity mixture over O/C/B/A/K only, got {k.value}")
        _check_mixture("body", self.body)
        _check_mixture("road", self.road)
        for name, p in (("tow_p", self.tow_p), ("airbag_p", self.airbag_p)):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {p!r}")
        if self.weights not in ("unit", "integer", "real"):
            raise ValidationError(f"unknown weight distribution {self.weights!r}")

    @classmethod
    def from_config(cls, path: str) -> "PopulationSpec":
        """Load from an INI file; see tests/fixtures for the layout."""
        parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#",)
        )
        parser.optionxform = str  # type: ignore[method-assign]
        read = parser.read(path)
        if not read:
            raise ValidationError(f"population spec not readable: {path}")
        try:
            pop = parser["population"]
            n_crashes = int(pop["n_crashes"])
            seed = int(pop["seed"], 0)
            year = int(pop["year"])
            weights = pop.get("weights", "unit").strip()
            region_text = pop.get("region", "national").strip()
            if region_text == "national":
                region = Region.national()
            else:
                parts = region_text.split(":")
                if len(parts) != 3 or parts[0] != "county":
                    raise ValidationError(
                        f"region must be 'national' or 'county:NAME:ST', got {region_text!r}"
                    )
                region = Region.county(parts[1], parts[2])
            multiplicity = tuple(
                (int(k), float(v)) for k, v in parser["multiplicity"].items()
            )
            severity = tuple(
                (Kabco(k), float(v)) for k, v in parser["severity"].items()
            )
            body = tuple(
                (BodyClass(k), float(v)) for k, v in parser["body"].items()
            )
            road = tuple(
                (RoadClass(k), float(v)) for k, v in parser["road"].items()
            )
            flags = parser["flags"]
            tow_p = float(flags["tow_p"])
            airbag_p = float(flags["airbag_p"])
        except KeyError as exc:
            raise ValidationError(f"population spec {path}: missing {exc}") from exc
        except ValueError as exc:
            raise ValidationError(f"population spec {path}: {exc}") from exc
        return cls(
            n_crashes=n_crashes,
            multiplicity=multiplicity,
            severity=severity,
            tow_p=tow_p,
            airbag_p=airbag_p,
            body=body,
            road=road,
            weights=weights,
            region=region,
            year=year,
            seed=seed,
        )


@dataclass(frozen=True)
class GroundTruth:
    """Exact weighted tallies recorded at generation time.

    Counts cover every generated crash on every road class.  Tow and
    airbag tallies use the same eligible-unit basis as the benchmark
    (in-transport passenger and NFS units); the all-unit fold is still
    on each crash record's own flags.
    """

    crash_count: int
    vehicle_count: int
    weighted_crashes: float
    weighted_vehicles: float
    crashes_by_severity: tuple[tuple[SeverityLevel, float], ...]
    units_by_body: tuple[tuple[BodyClass, float], ...]

    def severity_count(self, level: SeverityLevel) -> float:
        for found, value in self.crashes_by_severity:
            if found is level:
                return value
        raise ValidationError(f"no ground-truth tally for severity {level.value}")


# Observable severity flags re-derived here from raw fields, deliberately
# not sharing code with the filters module.  Tow and airbag follow the
# eligible-unit basis: only in-transport passenger and NFS units count,
# matching the subset the benchmark retains; the crash-level folded flag
# applies only when no unit rows exist at all.
def _naive_has(crash: CrashEvent, units: tuple[VehicleInvolvement, ...],
               level: SeverityLevel) -> bool:
    k = crash.max_kabco
    if level is SeverityLevel.POLICE_REPORTED:
        return True
    if level is SeverityLevel.ANY_INJURY_REPORTED:
        return k in (Kabco.K, Kabco.A, Kabco.B, Kabco.C, Kabco.ISU)
    if level is SeverityLevel.SUSPECTED_SERIOUS_INJURY_PLUS:
        return k in (Kabco.K, Kabco.A)
    if level is SeverityLevel.FATAL:
        return k is Kabco.K
    if level in (SeverityLevel.TOW_AWAY, SeverityLevel.AIRBAG_DEPLOYED):
        if not units:
            return (crash.tow_away if level is SeverityLevel.TOW_AWAY
                    else crash.airbag_deployed)
        eligible = [
            u for u in units
            if u.in_transport
            and u.body_class in (BodyClass.PASSENGER, BodyClass.VEHICLE_NFS)
        ]
        if level is SeverityLevel.TOW_AWAY:
            return any(u.towed for u in eligible)
        return any(u.airbag_deployed for u in eligible)
    raise ValidationError(f"severity {level.value} is not observable")


_OBSERVABLE = (
    SeverityLevel.POLICE_REPORTED,
    SeverityLevel.ANY_INJURY_REPORTED,
    SeverityLevel.TOW_AWAY,
    SeverityLevel.AIRBAG_DEPLOYED,
    SeverityLevel.SUSPECTED_SERIOUS_INJURY_PLUS,
    SeverityLevel.FATAL,
)


def generate(
    spec: PopulationSpec,
) -> tuple[tuple[CrashEvent, ...], tuple[VehicleInvolvement, ...], GroundTruth]:
    """Draw one population from a single splitmix64 stream.

    Draw order per crash is fixed (multiplicity, severity, road, weight,
    then body/towed/airbag per unit) so a seed pins the full output.
    """
    rng = SplitMix64(spec.seed)
    crashes: list[CrashEvent] = []
    vehicles: list[VehicleInvolvement] = []
    sev_tally = {level: 0.0 for level in _OBSERVABLE}
    body_tally = {body: 0.0 for body, _ in spec.body}
    weighted_crashes = 0.0
    weighted_vehicles = 0.0
    for i in range(spec.n_crashes):
        crash_id = f"S{i + 1:06d}"
        count = _draw(rng, spec.multiplicity)
        kabco = _draw(rng, spec.severity)
        road = _draw(rng, spec.road)
        if spec.weights == "unit":
            weight = 1.0
        elif spec.weights == "integer":
            weight = float(1 + int(rng.random() * 5.0))
        else:
            weight = 0.5 + 4.5 * rng.random()
        units = []
        for j in range(count):
            units.append(
                VehicleInvolvement(
                    crash_id=crash_id,
                    unit_id=str(j + 1),
                    body_class=_draw(rng, spec.body),
                    in_transport=True,
                    towed=rng.random() < spec.tow_p,
                    airbag_deployed=rng.random() < spec.airbag_p,
                )
            )
        crash = CrashEvent(
            crash_id=crash_id,
            source="synth",
            region=spec.region,
            year=spec.year,
            road_class=road,
            sample_weight=weight,
            max_kabco=kabco,
            tow_away=any(u.towed for u in units),
            airbag_deployed=any(u.airbag_deployed for u in units),
        )
        crashes.append(crash)
        vehicles.extend(units)
        weighted_crashes += weight
        weighted_vehicles += weight * count
        for unit in units:
            body_tally[unit.body_class] += weight
        unit_tuple = tuple(units)
        for level in _OBSERVABLE:
            if _naive_has(crash, unit_tuple, level):
                sev_tally[level] += weight
    truth = GroundTruth(
        crash_count=len(crashes),
        vehicle_count=len(vehicles),
        weighted_crashes=weighted_crashes,
        weighted_vehicles=weighted_vehicles,
        crashes_by_severity=tuple(sev_tally.items()),
        units_by_body=tuple(body_tally.items()),
    )
    return tuple(crashes), tuple(vehicles), truth


def brute_force_tally(
    crashes: tuple[CrashEvent, ...],
    vehicles: tuple[VehicleInvolvement, ...],
    question: str,
    *,
    severity: SeverityLevel = SeverityLevel.POLICE_REPORTED,
    road: str = "all",
    w: float | None = None,
) -> float:
    """Answer one counting question by a naive full scan.

    Shares no code with the rates or filters modules; this is the oracle
    they are tested against.  road is "all" or "surface"; w is the NFS
    imputation weight for vehicle_count (None means fail if NFS present).
    """
    if road not in ("all", "surface"):
        raise ValidationError(f"road must be 'all' or 'surface', got {road!r}")
    units_of: dict[str, list[VehicleInvolvement]] = {c.crash_id: [] for c in crashes}
    for unit in vehicles:
        units_of[unit.crash_id].append(unit)

    def eligible(crash: CrashEvent) -> bool:
        if road == "surface" and crash.road_class is not RoadClass.SURFACE_STREET:
            return False
        return _naive_has(crash, tuple(units_of[crash.crash_id]), severity)

    if question == "crash_count":
        return sum(c.sample_weight for c in crashes if eligible(c))
    if question == "weighted_crashes":
        return sum(
            c.sample_weight for c in crashes
            if road == "all" or c.road_class is RoadClass.SURFACE_STREET
        )
    if question == "weighted_vehicles":
        total = 0.0
        for crash in crashes:
            if road == "surface" and crash.road_class is not RoadClass.SURFACE_STREET:
                continue
            total += crash.sample_weight * len(units_of[crash.crash_id])
        return total
    if question == "vehicle_count":
        total = 0.0
        for crash in crashes:
            if not eligible(crash):
                continue
            per_crash = 0.0
            for unit in units_of[crash.crash_id]:
                if not unit.in_transport:
                    continue
                if unit.body_class is BodyClass.PASSENGER:
                    per_crash += 1.0
                elif unit.body_class is BodyClass.VEHICLE_NFS:
                    if w is None:
                        raise ValidationError(
                            "vehicle_count needs an imputation weight: NFS units present"
                        )
                    per_crash += w
            total += crash.sample_weight * per_crash
        return total
    if question == "imputation_weight":
        passenger = 0.0
        classified = 0.0
        for crash in crashes:
            if road == "surface" and crash.road_class is not RoadClass.SURFACE_STREET:
                continue
            for unit in units_of[crash.crash_id]:
                if not unit.in_transport:
                    continue
                if unit.body_class is BodyClass.PASSENGER:
                    passenger += crash.sample_weight
                    classified += crash.sample_weight
                elif unit.body_class is BodyClass.OTHER_VEHICLE:
                    classified += crash.sample_weight
        if classified == 0.0:
            raise ValidationError("no classified vehicle units to impute from")
        return passenger / classified
    if question == "ratio":
        crash_total = 0.0
        unit_total = 0.0
        for crash in crashes:
            if road == "surface" and crash.road_class is not RoadClass.SURFACE_STREET:
                continue
            if not _naive_has(crash, tuple(units_of[crash.crash_id]), severity):
                continue
            crash_total += crash.sample_weight
            for unit in units_of[crash.crash_id]:
                if unit.in_transport and unit.body_class is not BodyClass.NON_VEHICLE:
                    unit_total += crash.sample_weight
        if crash_total == 0.0:
            raise ValidationError("ratio undefined on zero crashes")
        return unit_total / crash_total
    raise ValidationError(f"unknown tally question {question!r}")


def simulate_power(
    benchmark_rate: float,
    relative_rate: float,
    vmt_millions: float,
    alpha: float = 0.05,
    n_trials: int = 20000,
    seed: int = 0,
) -> float:
    """Empirical rejection rate of the two-sided normal-approximation test.

    Each trial draws X ~ Poisson(r * lambda_B * t) from its own derived
    sub-stream and applies the score test z = (X - mu0)/sqrt(mu0) with
    mu0 = lambda_B * t, rejecting when |z| exceeds the upper alpha/2
    normal quantile.  Returns the rejection fraction.
    """
    if n_trials < 1000:
        raise ValidationError(f"n_trials must be >= 1000, got {n_trials}")
    if not benchmark_rate > 0.0 or not relative_rate > 0.0 or not vmt_millions > 0.0:
        raise ValidationError("benchmark_rate, relative_rate, vmt_millions must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha!r}")
    mu0 = benchmark_rate * vmt_millions
    mu1 = relative_rate * mu0
    z_a = normal_quantile(1.0 - alpha / 2.0)
    root = math.sqrt(mu0)
    base = SplitMix64(seed)
    rejections = 0
    for trial in range(n_trials):
        x = poisson(base.derived(trial), mu1)
        if abs((x - mu0) / root) > z_a:
            rejections += 1
    return rejections / n_trials
