"""Subset selection and severity classification for benchmark counting.

The comparable-driving subset is defined on two axes: road type (surface
streets only) and vehicle type (in-transport passenger vehicles, with
not-further-specified vehicles assigned fractionally via an imputation
weight).  Severity is a property of the crash, classified after
subsetting so the tow and airbag tests only consider eligible units.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import UndefinedStatistic
from .model import (
    BodyClass,
    CrashEvent,
    Kabco,
    Region,
    RoadClass,
    SeverityLevel,
    VehicleInvolvement,
)


@dataclass(frozen=True)
class SeverityFlags:
    """Observed severity thresholds for one crash.

    Any-property-damage-or-injury is absent by design: it is an estimate
    produced by underreporting adjustment, never observed on a report.
    """

    police_reported: bool
    any_injury_reported: bool
    tow_away: bool
    airbag_deployed: bool
    suspected_serious_injury_plus: bool
    fatal: bool

    def __post_init__(self) -> None:
        chain = (self.police_reported, self.any_injury_reported,
                 self.suspected_serious_injury_plus, self.fatal)
        for outer, inner in zip(chain, chain[1:]):
            if inner and not outer:
                raise ValueError(f"severity flags break containment: {self}")

    def has(self, level: SeverityLevel) -> bool:
        if level is SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY:
            raise ValueError(
                "any_property_damage_or_injury is adjustment-derived, not observed"
            )
        return getattr(self, level.value)


def classify_severity(
    crash: CrashEvent,
    units: tuple[VehicleInvolvement, ...] = (),
    *,
    tow_from_units: bool = True,
    airbag_from_units: bool = True,
) -> SeverityFlags:
    """Severity flags for one crash given its eligible units.

    ``units`` are the crash's subset-eligible vehicles.  Where the source
    lacks unit-level tow or airbag data the crash-level folded flag is
    used instead (``*_from_units=False``).  Unknown injury codes classify
    as non-injury; the loader already counted them.
    """
    injury = crash.max_kabco.is_injury
    serious = crash.max_kabco.is_suspected_serious_plus
    fatal = crash.max_kabco is Kabco.K
    if tow_from_units:
        towed = any(u.towed for u in units)
    else:
        towed = crash.tow_away
    if airbag_from_units:
        airbag = any(u.airbag_deployed for u in units)
    else:
        airbag = crash.airbag_deployed
    return SeverityFlags(
        police_reported=True,
        any_injury_reported=injury,
        tow_away=towed,
        airbag_deployed=airbag,
        suspected_serious_injury_plus=serious,
        fatal=fatal,
    )


@dataclass(frozen=True)
class ImputationWeight:
    """Passenger fraction among classified vehicles in a subset."""

    region: Region
    w: float
    passenger: float          # weighted classified passenger vehicles
    other: float              # weighted classified non-passenger vehicles

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise UndefinedStatistic(f"imputation weight {self.w!r} outside [0, 1]")


@dataclass(frozen=True)
class CrashSlice:
    """One retained crash with its unit tallies."""

    crash: CrashEvent
    units: tuple[VehicleInvolvement, ...]   # retained passenger/NFS units
    passenger: int
    nfs: int
    other: int                              # in-transport classified non-passenger

    @property
    def flags_input(self) -> tuple[VehicleInvolvement, ...]:
        return self.units


@dataclass
class Subset:
    """The filtered crash/vehicle record sets plus selection bookkeeping."""

    crashes: list[CrashEvent]
    vehicles: list[VehicleInvolvement]
    slices: dict[str, CrashSlice]
    road: str                               # surface | all
    in_transport_only: bool
    tow_from_units: bool
    airbag_from_units: bool
    weighted: bool
    exclusions: Counter = field(default_factory=Counter)
    caveats: tuple[str, ...] = ()

    def flags_for(self, crash_id: str) -> SeverityFlags:
        s = self.slices[crash_id]
        return classify_severity(
            s.crash, s.units,
            tow_from_units=self.tow_from_units,
            airbag_from_units=self.airbag_from_units,
        )


def select_subset(
    crashes: list[CrashEvent],
    vehicles: list[VehicleInvolvement],
    *,
    road: str = "surface",
    in_transport_only: bool = True,
    unit_tow_flags: bool = True,
    unit_airbag_flags: bool = True,
    weighted: bool = False,
    caveats: tuple[str, ...] = (),
) -> Subset:
    """Filter records to the comparable subset.

    Road filtering keeps surface-street crashes (``road="surface"``) or
    everything (``road="all"``); unknown road classes are excluded from
    surface subsets and counted.  Vehicle filtering keeps in-transport
    passenger and NFS units; classified non-passenger units are tallied
    per crash for the imputation weight but are not part of the retained
    vehicle record set.  Crashes with no retained units stay in the
    crash-level set with empty unit tallies.
    """
    if road not in ("surface", "all"):
        raise ValueError(f"road must be 'surface' or 'all', got {road!r}")
    exclusions: Counter = Counter()
    by_crash: dict[str, list[VehicleInvolvement]] = {}
    for v in vehicles:
        by_crash.setdefault(v.crash_id, []).append(v)

    kept_crashes: list[CrashEvent] = []
    kept_vehicles: list[VehicleInvolvement] = []
    slices: dict[str, CrashSlice] = {}
    for crash in crashes:
        if road == "surface":
            if crash.road_class is RoadClass.EXCLUDED_HIGHWAY:
                exclusions["crash_road_excluded"] += 1
                continue
            if crash.road_class is RoadClass.UNKNOWN:
                exclusions["crash_road_unknown"] += 1
                continue
        retained: list[VehicleInvolvement] = []
        passenger = nfs = other = 0
        for v in by_crash.get(crash.crash_id, ()):
            if v.body_class is BodyClass.NON_VEHICLE:
                exclusions["unit_non_vehicle"] += 1
                continue
            if in_transport_only and not v.in_transport:
                exclusions["unit_not_in_transport"] += 1
                continue
            if v.body_class is BodyClass.PASSENGER:
                passenger += 1
                retained.append(v)
            elif v.body_class is BodyClass.VEHICLE_NFS:
                nfs += 1
                retained.append(v)
            else:
                other += 1
                exclusions["unit_other_vehicle"] += 1
        kept_crashes.append(crash)
        kept_vehicles.extend(retained)
        slices[crash.crash_id] = CrashSlice(
            crash=crash, units=tuple(retained),
            passenger=passenger, nfs=nfs, other=other,
        )
    return Subset(
        crashes=kept_crashes,
        vehicles=kept_vehicles,
        slices=slices,
        road=road,
        in_transport_only=in_transport_only,
        tow_from_units=unit_tow_flags,
        airbag_from_units=unit_airbag_flags,
        weighted=weighted,
        exclusions=exclusions,
        caveats=caveats,
    )


def compute_imputation_weight(subset: Subset, region: Region) -> ImputationWeight:
    """Weighted passenger share among classified vehicles in the subset.

    Weight invariance: scaling every sample weight by a constant leaves
    the ratio unchanged.
    """
    passenger = 0.0
    other = 0.0
    for s in subset.slices.values():
        passenger += s.passenger * s.crash.sample_weight
        other += s.other * s.crash.sample_weight
    total = passenger + other
    if total <= 0.0:
        raise UndefinedStatistic(
            f"imputation weight undefined for {region.name}: no classified vehicles"
        )
    return ImputationWeight(region=region, w=passenger / total,
                            passenger=passenger, other=other)


def effective_passenger_count(passenger: float, nfs: float, w: float) -> float:
    """Passenger vehicles plus the imputed fraction of NFS vehicles."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"imputation weight {w!r} outside [0, 1]")
    return passenger + w * nfs


def audit_subset(subset: Subset, imputation: ImputationWeight | None) -> dict:
    """Filter-audit payload: retention, exclusions, flag bases, caveats."""
    return {
        "road": subset.road,
        "in_transport_only": subset.in_transport_only,
        "crashes_retained": len(subset.crashes),
        "vehicles_retained": len(subset.vehicles),
        "weighted": subset.weighted,
        "exclusions": dict(sorted(subset.exclusions.items())),
        "tow_basis": "subset_units" if subset.tow_from_units else "crash_flag",
        "airbag_basis": "subset_units" if subset.airbag_from_units else "crash_flag",
        "imputation": None if imputation is None else {
            "w": imputation.w,
            "classified_passenger": imputation.passenger,
            "classified_other": imputation.other,
        },
        "caveats": list(subset.caveats),
    }
