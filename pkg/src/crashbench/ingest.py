"""Raw file loading: spec-driven adapters to the canonical record model.

Every raw row either becomes exactly one canonical record or is counted
under exactly one diagnostic reason, so row counts are conserved and the
filter audit can account for every exclusion.  Unknown codes never drop a
record silently: they classify to an explicit unknown bucket and bump a
warning counter.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ReferentialError, SchemaError, ValidationError
from . import interchange
from .model import (
    AreaType,
    BodyClass,
    CrashEvent,
    Kabco,
    KABCO_FOLD_RANK,
    MileageCell,
    PassengerShareTable,
    PersonOutcome,
    Region,
    VehicleInvolvement,
)
from .schema import Rule, SchemaSpec, _normalize_code, load_schema


@dataclass
class LoadResult:
    """Canonical records from one raw source, plus row accounting.

    The flags mirror what the source can support downstream: whether tow
    status is known per unit or only per crash, whether airbag flags are
    populated on units, and whether sample weights are meaningful.
    """

    tag: str
    crashes: list[CrashEvent]
    vehicles: list[VehicleInvolvement]
    persons: list[PersonOutcome]
    diagnostics: Counter = field(default_factory=Counter)
    rows_in: dict = field(default_factory=dict)
    weighted: bool = False
    tow_level: str = "none"           # vehicle | crash | none
    airbag_units: bool = False
    caveats: tuple[str, ...] = ()


def _read_table(path: Path, required: set[str], label: str) -> list[dict]:
    try:
        handle = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise ValidationError(f"{label} file {path}: {exc}") from None
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = sorted(required - set(header))
        if missing:
            raise SchemaError(f"{label} file {path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _crash_columns(spec: SchemaSpec) -> set[str]:
    crash = spec.crash
    cols = {crash.id_column}
    for col in (crash.year_column, crash.weight_column):
        if col:
            cols.add(col)
    if crash.kabco is not None:
        cols.add(crash.kabco.column)
    for rule in (crash.road.surface, crash.road.excluded, crash.towed):
        if rule is not None:
            cols.update(rule.columns())
    return cols


def _vehicle_columns(spec: SchemaSpec) -> set[str]:
    v = spec.vehicle
    cols = {v.id_column, v.crash_column}
    for rule in (v.passenger, v.vehicle_nfs, v.non_vehicle, v.in_transport,
                 v.towed, v.airbag):
        if rule is not None:
            cols.update(rule.columns())
    return cols


def _person_columns(spec: SchemaSpec) -> set[str]:
    p = spec.person
    cols = {p.id_column, p.crash_column}
    if p.unit_column:
        cols.add(p.unit_column)
    if p.kabco is not None:
        cols.add(p.kabco.column)
    if p.airbag is not None:
        cols.update(p.airbag.columns())
    return cols


def _eval_flag(rule: Rule | None, row: dict, diagnostics: Counter, warn_key: str) -> bool:
    """Evaluate a boolean rule; missing inputs count as false plus a warning."""
    if rule is None:
        return False
    value = rule.eval(row)
    if value is None:
        diagnostics[warn_key] += 1
        return False
    return value


def load_crash_source(
    spec: SchemaSpec,
    crash_file: str | Path,
    vehicle_file: str | Path | None = None,
    person_file: str | Path | None = None,
    *,
    region: Region,
    year: int,
    region_filter: str | None = None,
) -> LoadResult:
    """Normalize one raw crash database extract.

    Produces one CrashEvent per retained crash row, one VehicleInvolvement
    per unit row, and one PersonOutcome per person row.  Person airbag
    flags fold into their unit and crash; person injury codes fold into
    the crash-level maximum when the spec says severity lives on the
    person table.  A child row pointing at a crash id that never appeared
    raises; a child of a deliberately dropped crash is counted instead.
    """
    if spec.kind != "crash":
        raise SchemaError(f"spec {spec.tag} is a {spec.kind} spec, not a crash spec")
    diagnostics: Counter = Counter()
    filter_rule = (
        Rule.parse(region_filter, f"{spec.tag} region_filter")
        if region_filter else None
    )

    crash_rows = _read_table(
        Path(crash_file),
        _crash_columns(spec) | (filter_rule.columns() if filter_rule else set()),
        f"{spec.tag} crash",
    )
    vehicle_rows = (
        _read_table(Path(vehicle_file), _vehicle_columns(spec), f"{spec.tag} vehicle")
        if vehicle_file is not None else []
    )
    person_rows = (
        _read_table(Path(person_file), _person_columns(spec), f"{spec.tag} person")
        if person_file is not None and spec.person is not None else []
    )
    rows_in = {
        "crashes": len(crash_rows),
        "vehicles": len(vehicle_rows),
        "persons": len(person_rows),
    }

    crash_schema = spec.crash
    kept: dict[str, dict] = {}       # crash_id -> raw row
    dropped: set[str] = set()
    for row in crash_rows:
        crash_id = (row.get(crash_schema.id_column) or "").strip()
        if not crash_id:
            raise ValidationError(f"{spec.tag}: crash row with empty {crash_schema.id_column}")
        if crash_id in kept or crash_id in dropped:
            raise ValidationError(f"{spec.tag}: duplicate crash id {crash_id}")
        if filter_rule is not None:
            match = filter_rule.eval(row)
            if match is not True:
                key = "region_filtered" if match is False else "region_filter_unknown"
                diagnostics[key] += 1
                dropped.add(crash_id)
                continue
        if crash_schema.year_column:
            cell = (row.get(crash_schema.year_column) or "").strip()
            try:
                row_year = int(cell)
            except ValueError:
                raise ValidationError(
                    f"{spec.tag}: crash {crash_id} has unreadable year {cell!r}"
                )
            if row_year != year:
                diagnostics["year_mismatch"] += 1
                dropped.add(crash_id)
                continue
        kept[crash_id] = row

    # Units, with folds accumulated per crash.
    vehicle_schema = spec.vehicle
    unit_seen: set[tuple[str, str]] = set()
    unit_info: dict[tuple[str, str], dict] = {}
    crash_any_towed: Counter = Counter()
    crash_any_airbag: Counter = Counter()
    for row in vehicle_rows:
        crash_id = (row.get(vehicle_schema.crash_column) or "").strip()
        if crash_id in dropped:
            diagnostics["parent_dropped"] += 1
            continue
        if crash_id not in kept:
            raise ReferentialError(
                f"{spec.tag}: vehicle row references unknown crash {crash_id!r}"
            )
        unit_id = (row.get(vehicle_schema.id_column) or "").strip()
        if not unit_id:
            raise ValidationError(f"{spec.tag}: crash {crash_id} has a unit with no id")
        if (crash_id, unit_id) in unit_seen:
            raise ValidationError(f"{spec.tag}: duplicate unit {crash_id}/{unit_id}")
        unit_seen.add((crash_id, unit_id))
        towed = _eval_flag(vehicle_schema.towed, row, diagnostics, "unknown_towed")
        airbag = _eval_flag(vehicle_schema.airbag, row, diagnostics, "unknown_airbag") \
            if vehicle_schema.airbag is not None else False
        unit_info[(crash_id, unit_id)] = {
            "body": _classify_body(spec, row, diagnostics),
            "in_transport": _eval_flag(vehicle_schema.in_transport, row, diagnostics,
                                       "unknown_in_transport"),
            "towed": towed,
            "airbag": airbag,
        }
        if towed:
            crash_any_towed[crash_id] += 1
        if airbag:
            crash_any_airbag[crash_id] += 1

    # Persons.
    person_schema = spec.person
    persons: list[PersonOutcome] = []
    person_seen: set[tuple[str, str, str]] = set()
    person_airbag: dict[tuple[str, str], bool] = {}
    crash_person_kabco: dict[str, Kabco] = {}
    for row in person_rows:
        crash_id = (row.get(person_schema.crash_column) or "").strip()
        if crash_id in dropped:
            diagnostics["parent_dropped"] += 1
            continue
        if crash_id not in kept:
            raise ReferentialError(
                f"{spec.tag}: person row references unknown crash {crash_id!r}"
            )
        unit_id = ""
        if person_schema.unit_column:
            cell = (row.get(person_schema.unit_column) or "").strip()
            if cell and not (
                person_schema.unit_null_codes is not None
                and person_schema.unit_null_codes.contains(cell)
            ):
                if (crash_id, cell) not in unit_seen:
                    raise ReferentialError(
                        f"{spec.tag}: person row references unknown unit "
                        f"{crash_id}/{cell}"
                    )
                unit_id = cell
        person_id = (row.get(person_schema.id_column) or "").strip()
        if not person_id:
            raise ValidationError(f"{spec.tag}: crash {crash_id} has a person with no id")
        if (crash_id, unit_id, person_id) in person_seen:
            raise ValidationError(
                f"{spec.tag}: duplicate person {crash_id}/{unit_id}/{person_id}"
            )
        person_seen.add((crash_id, unit_id, person_id))
        if person_schema.kabco is not None:
            kabco, known = person_schema.kabco.lookup(row.get(person_schema.kabco.column))
            if not known:
                diagnostics["unknown_person_kabco"] += 1
        else:
            kabco = Kabco.UNK
        airbag = _eval_flag(person_schema.airbag, row, diagnostics, "unknown_airbag") \
            if person_schema.airbag is not None else False
        persons.append(PersonOutcome(
            crash_id=crash_id, unit_id=unit_id, person_id=person_id,
            kabco=kabco, airbag_deployed=airbag,
        ))
        if airbag:
            if unit_id:
                person_airbag[(crash_id, unit_id)] = True
            crash_any_airbag[crash_id] += 1
        prev = crash_person_kabco.get(crash_id)
        if prev is None or KABCO_FOLD_RANK[kabco] > KABCO_FOLD_RANK[prev]:
            crash_person_kabco[crash_id] = kabco

    vehicles = [
        VehicleInvolvement(
            crash_id=crash_id,
            unit_id=unit_id,
            body_class=info["body"],
            in_transport=info["in_transport"],
            towed=info["towed"],
            airbag_deployed=info["airbag"] or person_airbag.get((crash_id, unit_id), False),
        )
        for (crash_id, unit_id), info in unit_info.items()
    ]

    crashes: list[CrashEvent] = []
    for crash_id, row in kept.items():
        road_class, known = crash_schema.road.classify(row)
        if not known:
            diagnostics["unknown_road"] += 1
        if spec.kabco_from == "crash":
            kabco, kabco_known = crash_schema.kabco.lookup(row.get(crash_schema.kabco.column))
            if not kabco_known:
                diagnostics["unknown_kabco"] += 1
        else:
            kabco = crash_person_kabco.get(crash_id, Kabco.UNK)
            if kabco is Kabco.UNK:
                diagnostics["unknown_kabco"] += 1
        if crash_schema.weight_column:
            cell = (row.get(crash_schema.weight_column) or "").strip()
            try:
                weight = float(cell)
            except ValueError:
                raise ValidationError(
                    f"{spec.tag}: crash {crash_id} has unreadable weight {cell!r}"
                )
        else:
            weight = 1.0
        towed = bool(crash_any_towed[crash_id])
        if crash_schema.towed is not None:
            towed = towed or _eval_flag(crash_schema.towed, row, diagnostics,
                                        "unknown_towed")
        crashes.append(CrashEvent(
            crash_id=crash_id,
            source=spec.tag,
            region=region,
            year=year,
            road_class=road_class,
            sample_weight=weight,
            max_kabco=kabco,
            tow_away=towed,
            airbag_deployed=bool(crash_any_airbag[crash_id]),
        ))

    crashes.sort(key=lambda c: c.crash_id)
    vehicles.sort(key=lambda v: (v.crash_id, v.unit_id))
    persons.sort(key=lambda p: (p.crash_id, p.unit_id, p.person_id))
    airbag_units = vehicle_schema.airbag is not None or (
        spec.person is not None and spec.person.airbag is not None
        and spec.person.unit_column is not None
    )
    return LoadResult(
        tag=spec.tag, crashes=crashes, vehicles=vehicles, persons=persons,
        diagnostics=diagnostics, rows_in=rows_in, weighted=spec.weighted,
        tow_level=spec.tow_level, airbag_units=airbag_units,
        caveats=spec.caveats,
    )


def _classify_body(spec: SchemaSpec, row: dict, diagnostics: Counter) -> BodyClass:
    v = spec.vehicle
    p = v.passenger.eval(row)
    if p is True:
        return BodyClass.PASSENGER
    nfs = v.vehicle_nfs.eval(row) if v.vehicle_nfs is not None else False
    if nfs is True:
        return BodyClass.VEHICLE_NFS
    non = v.non_vehicle.eval(row) if v.non_vehicle is not None else False
    if non is True:
        return BodyClass.NON_VEHICLE
    if p is None or nfs is None or non is None:
        # vehicle of unknown type; route to NFS so imputation covers it
        diagnostics["unknown_body"] += 1
        return BodyClass.VEHICLE_NFS
    return BodyClass.OTHER_VEHICLE


@dataclass
class CombinedRecords:
    """Crash/vehicle/person records merged across a dataset's sources."""

    crashes: list[CrashEvent]
    vehicles: list[VehicleInvolvement]
    persons: list[PersonOutcome]
    diagnostics: Counter
    unit_tow_flags: bool
    unit_airbag_flags: bool
    weighted: bool
    caveats: tuple[str, ...]


def combine_sources(loads: list[tuple[str, LoadResult]]) -> CombinedRecords:
    """Merge per-source loads under their dataset roles.

    A nonfatal-role source contributes only its non-fatal crashes and a
    fatal-role source only its fatal ones, so a sampled non-fatal database
    and a fatal census can cover one region without double counting.
    """
    crashes: list[CrashEvent] = []
    vehicles: list[VehicleInvolvement] = []
    persons: list[PersonOutcome] = []
    diagnostics: Counter = Counter()
    caveats: list[str] = []
    seen_ids: dict[str, str] = {}
    unit_tow = True
    unit_airbag = True
    weighted = False
    for role, load in loads:
        diagnostics.update(load.diagnostics)
        for caveat in load.caveats:
            if caveat not in caveats:
                caveats.append(caveat)
        if load.tow_level != "vehicle":
            unit_tow = False
        if not load.airbag_units:
            unit_airbag = False
        if load.weighted:
            weighted = True
        drop: set[str] = set()
        for crash in load.crashes:
            is_fatal = crash.max_kabco is Kabco.K
            if (role == "nonfatal" and is_fatal) or (role == "fatal" and not is_fatal):
                drop.add(crash.crash_id)
                diagnostics["role_excluded"] += 1
                continue
            if crash.crash_id in seen_ids:
                raise ValidationError(
                    f"crash id {crash.crash_id} appears in both "
                    f"{seen_ids[crash.crash_id]} and {load.tag}"
                )
            seen_ids[crash.crash_id] = load.tag
            crashes.append(crash)
        vehicles.extend(v for v in load.vehicles if v.crash_id not in drop)
        persons.extend(p for p in load.persons if p.crash_id not in drop)
    crashes.sort(key=lambda c: (c.source, c.crash_id))
    vehicles.sort(key=lambda v: (v.crash_id, v.unit_id))
    persons.sort(key=lambda p: (p.crash_id, p.unit_id, p.person_id))
    return CombinedRecords(
        crashes=crashes, vehicles=vehicles, persons=persons,
        diagnostics=diagnostics, unit_tow_flags=unit_tow,
        unit_airbag_flags=unit_airbag, weighted=weighted,
        caveats=tuple(caveats),
    )


def load_mileage(
    spec: SchemaSpec,
    file: str | Path,
    *,
    region: Region,
    year: int,
    region_filter: str | None = None,
) -> tuple[list[MileageCell], Counter]:
    if spec.kind != "mileage":
        raise SchemaError(f"spec {spec.tag} is a {spec.kind} spec, not a mileage spec")
    schema = spec.mileage
    diagnostics: Counter = Counter()
    filter_rule = (
        Rule.parse(region_filter, f"{spec.tag} region_filter")
        if region_filter else None
    )
    required = {schema.class_column, schema.vmt_column}
    for col in (schema.area_column, schema.year_column):
        if col:
            required.add(col)
    if filter_rule is not None:
        required.update(filter_rule.columns())
    rows = _read_table(Path(file), required, f"{spec.tag} mileage")
    cells: list[MileageCell] = []
    for i, row in enumerate(rows, start=2):
        context = f"{spec.tag} mileage row {i}"
        if filter_rule is not None and filter_rule.eval(row) is not True:
            diagnostics["region_filtered"] += 1
            continue
        if schema.year_column:
            cell_text = (row.get(schema.year_column) or "").strip()
            try:
                row_year = int(cell_text)
            except ValueError:
                raise ValidationError(f"{context}: unreadable year {cell_text!r}")
            if row_year != year:
                diagnostics["year_mismatch"] += 1
                continue
        vmt_text = (row.get(schema.vmt_column) or "").strip()
        try:
            vmt = float(vmt_text)
        except ValueError:
            raise ValidationError(f"{context}: unreadable mileage {vmt_text!r}")
        cells.append(MileageCell(
            region=region,
            year=year,
            functional_class=schema.class_of(row.get(schema.class_column) or "", context),
            area_type=schema.area_of(row.get(schema.area_column), context),
            vmt_millions=schema.to_millions(vmt),
        ))
    return cells, diagnostics


def load_passenger_share(spec: SchemaSpec, file: str | Path) -> PassengerShareTable:
    if spec.kind != "shares":
        raise SchemaError(f"spec {spec.tag} is a {spec.kind} spec, not a shares spec")
    schema = spec.shares
    required = {schema.state_column, schema.area_column, schema.group_column,
                schema.share_column}
    rows = _read_table(Path(file), required, f"{spec.tag} shares")
    area_index = dict(schema.area_codes) if schema.area_codes else {
        a.value: a for a in AreaType
    }
    group_index = dict(schema.group_codes)
    mapping: dict = {}
    for i, row in enumerate(rows, start=2):
        context = f"{spec.tag} shares row {i}"
        state = (row.get(schema.state_column) or "").strip()
        if not state:
            raise ValidationError(f"{context}: empty state")
        area_key = _normalize_code(row.get(schema.area_column) or "")
        if area_key not in area_index:
            raise SchemaError(f"{context}: unmapped area code {area_key!r}")
        group_key = _normalize_code(row.get(schema.group_column) or "")
        if group_key not in group_index:
            raise SchemaError(f"{context}: unmapped class group {group_key!r}")
        share_text = (row.get(schema.share_column) or "").strip()
        try:
            share = float(share_text)
        except ValueError:
            raise ValidationError(f"{context}: unreadable share {share_text!r}")
        if schema.values == "percent":
            if not 0.0 <= share <= 100.0:
                raise ValidationError(f"{context}: share {share!r} outside [0, 100]")
            share /= 100.0
        elif not 0.0 <= share <= 1.0:
            raise ValidationError(f"{context}: share {share!r} outside [0, 1]")
        key = (state, area_index[area_key], group_index[group_key])
        if key in mapping:
            raise ValidationError(f"{context}: duplicate share for {key}")
        mapping[key] = share
    return PassengerShareTable.from_mapping(mapping)


# ---------------------------------------------------------------------------
# Dataset assembly from a manifest entry

CANONICAL_SPEC = "canonical"


@dataclass
class DatasetRecords:
    """Everything loaded for one region-year: records, mileage, shares."""

    manifest: interchange.DatasetManifest
    records: CombinedRecords
    mileage: list[MileageCell]
    shares: PassengerShareTable | None
    source_audits: list[dict]


def _load_canonical_source(ref: interchange.CrashSourceRef, region: Region,
                           year: int) -> LoadResult:
    if ref.region_filter:
        raise ValidationError(
            "canonical sources are filtered by their region column, not region_filter"
        )
    diagnostics: Counter = Counter()
    crashes = []
    for c in interchange.read_crashes(ref.crash_file):
        if c.region != region:
            diagnostics["region_filtered"] += 1
        elif c.year != year:
            diagnostics["year_mismatch"] += 1
        else:
            crashes.append(c)
    ids = {c.crash_id for c in crashes}
    vehicles = [v for v in interchange.read_vehicles(ref.vehicle_file)
                if v.crash_id in ids] if ref.vehicle_file else []
    persons = [p for p in interchange.read_persons(ref.person_file)
               if p.crash_id in ids] if ref.person_file else []
    return LoadResult(
        tag=CANONICAL_SPEC, crashes=crashes, vehicles=vehicles, persons=persons,
        diagnostics=diagnostics,
        rows_in={"crashes": len(crashes) + diagnostics.total(),
                 "vehicles": len(vehicles), "persons": len(persons)},
        weighted=any(c.sample_weight != 1.0 for c in crashes),
        tow_level="vehicle" if vehicles else "crash",
        airbag_units=bool(vehicles),
    )


def load_dataset(manifest: interchange.DatasetManifest,
                 jobs: int = 1) -> DatasetRecords:
    """Load and merge every source named by one dataset manifest."""
    def load_one(ref: interchange.CrashSourceRef) -> tuple[str, LoadResult]:
        if ref.spec == CANONICAL_SPEC:
            return ref.role, _load_canonical_source(ref, manifest.region, manifest.year)
        spec = load_schema(ref.spec)
        return ref.role, load_crash_source(
            spec, ref.crash_file, ref.vehicle_file, ref.person_file,
            region=manifest.region, year=manifest.year,
            region_filter=ref.region_filter,
        )

    if jobs > 1 and len(manifest.crash_sources) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            loads = list(pool.map(load_one, manifest.crash_sources))
    else:
        loads = [load_one(ref) for ref in manifest.crash_sources]

    records = combine_sources(loads)
    audits = []
    for (role, load), ref in zip(loads, manifest.crash_sources):
        audits.append({
            "spec": ref.spec,
            "role": role,
            "rows_in": load.rows_in,
            "records": {"crashes": len(load.crashes), "vehicles": len(load.vehicles),
                        "persons": len(load.persons)},
            "diagnostics": dict(sorted(load.diagnostics.items())),
            "caveats": list(load.caveats),
        })

    cells: list[MileageCell] = []
    for ref in manifest.mileage:
        if ref.spec == CANONICAL_SPEC:
            cells.extend(m for m in interchange.read_mileage(ref.file)
                         if m.region == manifest.region and m.year == manifest.year)
            continue
        spec = load_schema(ref.spec)
        loaded, diag = load_mileage(
            spec, ref.file, region=manifest.region, year=manifest.year,
            region_filter=ref.region_filter,
        )
        cells.extend(loaded)
        records.diagnostics.update(diag)

    shares: PassengerShareTable | None = None
    if manifest.shares:
        merged: dict = {}
        for ref in manifest.shares:
            table = load_passenger_share(load_schema(ref.spec), ref.file)
            for key, value in table.shares:
                if key in merged and merged[key] != value:
                    raise ValidationError(f"conflicting passenger shares for {key}")
                merged[key] = value
        shares = PassengerShareTable.from_mapping(merged)

    return DatasetRecords(
        manifest=manifest, records=records, mileage=cells, shares=shares,
        source_audits=audits,
    )
