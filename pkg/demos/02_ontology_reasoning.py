"""Ontology store and reasoner: load, close, classify, query.

Builds a tiny ontology from scratch next to the shipped one, shows what
the five inference rules add, and walks the classification of terms into
the three upper-ontology categories.

Run:  python3 demos/02_ontology_reasoning.py
"""

from semdews import default_ontology
from semdews.model import parse_term
from semdews.ontology import RDFS_SUBCLASS, load_ontology, render_node

print("== a minimal ontology, before and after closure ==\n")

doc = """
# a little hierarchy with a domain axiom and an alignment
demo:riverGauge rdfs:subClassOf env:sensorNode
env:sensorNode rdfs:subClassOf dolce:Endurant
demo:measures rdfs:domain demo:riverGauge
demo:gauge42 demo:measures demo:depth
demo:pegel rdfs:label "Pegelstand"
demo:pegel align:alignedWith demo:depth
demo:depth rdfs:subClassOf dolce:Quality
demo:depth align:canonical "true"
"""
store = load_ontology([doc])
print(f"asserted triples: {len(store.asserted)}, inferred: {len(store.inferred)}")
for triple in sorted(store.inferred, key=lambda t: str(t.subject)):
    print(f"  + {triple.subject} {triple.predicate} {render_node(triple.obj)}")

print("\nresolution through the alignment:")
print(f"  'Pegelstand' -> {store.resolve_term('Pegelstand')}")

print("\n== the shipped vocabulary ==\n")
onto = default_ontology()
for name in ("env:soilMoisture", "env:dryingProcess", "env:sensorNode"):
    term = parse_term(name)
    print(f"  {name:<22} classifies as {onto.classify(term).value}")

print("\nall quality terms (pattern query, deterministic order):")
for triple in onto.query(predicate=RDFS_SUBCLASS, obj=parse_term("dolce:Quality")):
    print(f"  {triple.subject}")

print("\nmultilingual aliases for the water level:")
for alias in ("Hoehe", "Stav", "waterLvl", "waterLevel"):
    print(f"  {alias!r:<14} -> {onto.resolve_term(alias)}")
