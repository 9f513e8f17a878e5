"""Heterogeneous ingestion: one water-level reading, four disguises.

The same physical measurement arrives as a German-labelled CSV line, a
Czech-labelled JSON object, a binary mote frame, and (for contrast) an
indigenous-knowledge categorical report. Annotation collapses them onto
one canonical vocabulary term with one canonical unit.

Run:  python3 demos/01_heterogeneous_ingestion.py
"""

from semdews import annotate, default_ontology
from semdews.ingest import (
    encode_mote_frame,
    parse_csv,
    parse_ik_report,
    parse_mote_frame,
    parse_structured,
)
from semdews.model import ObservationRecord, SourceFormat

onto = default_ontology()

print("== the same 3.25 m water level, three ways ==\n")

csv_line = "station-7,Hoehe,3.25,m,1700000000"
print(f"csv line (German station):      {csv_line}")
rec_csv = parse_csv(csv_line)

json_doc = '[{"node":"vltava-2","prop":"Stav","val":325,"unit":"cm","ts":1700000000}]'
print(f"structured doc (Czech gauge):   {json_doc}")
rec_json = parse_structured(json_doc)[0]

frame = encode_mote_frame(
    ObservationRecord("7", "waterLvl", 3.25, "m", 1700000000, SourceFormat.MOTE_FRAME)
)
print(f"mote frame (hex):               {frame.hex()}")
rec_frame = parse_mote_frame(frame)

print("\n== after annotation ==\n")
for rec in (rec_csv, rec_json, rec_frame):
    sobs = annotate(rec, onto)
    print(
        f"  {rec.source_format.value:<12} {rec.native_property!r:>12} -> "
        f"{sobs.canonical_term} = {sobs.canonical_value} {sobs.canonical_unit.local} "
        f"({sobs.dolce_category.value})"
    )

print("\n== a categorical indigenous-knowledge sighting ==\n")
ik_line = "ik-report\telder-3\tik:sifennefeneAbundance\t3\t1700000000"
print(f"report line: {ik_line!r}")
rec_ik = parse_ik_report(ik_line, onto)
sobs_ik = annotate(rec_ik, onto)
print(
    f"  code {rec_ik.code} on scale 0..{onto.get_scale(sobs_ik.canonical_term)} -> "
    f"{sobs_ik.canonical_term} ({sobs_ik.dolce_category.value})"
)

print("\nunknown property names are quarantined rather than guessed:")
try:
    annotate(parse_csv("x1,Mystery,1.0,m,0"), onto)
except Exception as exc:
    print(f"  {type(exc).__name__}: {exc}")
