"""Unit table loading and affine unit conversion.

The table is a static text asset: one line per unit,
``name <TAB> dimension <TAB> scale <TAB> offset``, with '#' comments and a
'*' suffix marking the canonical unit of each dimension. A value ``v`` in a
unit maps to the dimension's canonical unit as ``v * scale + offset``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .model import MiddlewareError


class UnknownUnit(MiddlewareError):
    pass


class DimensionMismatch(MiddlewareError):
    pass


class UnitTableError(MiddlewareError):
    """Malformed unit table asset; carries a 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class UnitDef:
    name: str
    dimension: str
    scale: float
    offset: float
    canonical: bool


class UnitTable:
    """Immutable lookup of unit definitions with affine conversion."""

    def __init__(self, defs: list[UnitDef]):
        self._by_name: dict[str, UnitDef] = {}
        self._canonical: dict[str, str] = {}
        for d in defs:
            if d.name in self._by_name:
                raise UnitTableError(0, f"duplicate unit name {d.name!r}")
            self._by_name[d.name] = d
            if d.canonical:
                if d.dimension in self._canonical:
                    raise UnitTableError(0, f"two canonical units for dimension {d.dimension!r}")
                if d.scale != 1.0 or d.offset != 0.0:
                    raise UnitTableError(
                        0, f"canonical unit {d.name!r} must have scale 1 and offset 0"
                    )
                self._canonical[d.dimension] = d.name
        for d in defs:
            if d.dimension not in self._canonical:
                raise UnitTableError(0, f"dimension {d.dimension!r} has no canonical unit")

    def lookup(self, name: str) -> UnitDef:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownUnit(name) from None

    def dimension_of(self, name: str) -> str:
        return self.lookup(name).dimension

    def canonical_unit(self, dimension: str) -> str:
        return self._canonical[dimension]

    def names(self) -> list[str]:
        return sorted(self._by_name)

    def convert(self, value: float, from_unit: str, to_unit: str) -> float:
        """Affine conversion; exact identity when both names are equal."""
        if from_unit == to_unit:
            self.lookup(from_unit)
            return value
        src = self.lookup(from_unit)
        dst = self.lookup(to_unit)
        if src.dimension != dst.dimension:
            raise DimensionMismatch(f"{from_unit} ({src.dimension}) vs {to_unit} ({dst.dimension})")
        return (value * src.scale + src.offset - dst.offset) / dst.scale

    @classmethod
    def parse(cls, text: str) -> "UnitTable":
        defs = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise UnitTableError(lineno, f"expected 4 tab-separated fields, got {len(parts)}")
            name, dimension, scale_s, offset_s = (p.strip() for p in parts)
            canonical = name.endswith("*")
            if canonical:
                name = name[:-1]
            if not name or not dimension:
                raise UnitTableError(lineno, "empty unit name or dimension")
            try:
                scale = float(scale_s)
                offset = float(offset_s)
            except ValueError:
                raise UnitTableError(lineno, f"bad numeric field in {raw!r}") from None
            if scale == 0.0:
                raise UnitTableError(lineno, f"zero scale for {name!r}")
            defs.append(UnitDef(name, dimension, scale, offset, canonical))
        return cls(defs)


_BUILTIN: UnitTable | None = None


def builtin_table() -> UnitTable:
    """The shipped unit table asset, parsed once per process."""
    global _BUILTIN
    if _BUILTIN is None:
        text = resources.files("semdews").joinpath("assets/units.tsv").read_text("utf-8")
        _BUILTIN = UnitTable.parse(text)
    return _BUILTIN


def convert_unit(value: float, from_unit: str, to_unit: str) -> float:
    """Convert between units of the built-in table."""
    return builtin_table().convert(value, from_unit, to_unit)
