"""Tracked domain-slot inventory.

The inventory is fixed at load time from a checked-in resource file (30 slots
over the five commonly tracked domains) rather than inferred from data, so the
number of classification/span heads is known before training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import LoadError

UNFILLED = "none"


@dataclass(frozen=True, order=True)
class DomainSlot:
    """One tracked domain-slot pair, e.g. restaurant-name."""

    domain: str
    slot: str
    surface_form: str

    @property
    def name(self) -> str:
        return f"{self.domain}-{self.slot}"

    def __str__(self) -> str:
        return self.name


class SlotInventory:
    """Ordered, immutable collection of the tracked domain-slot pairs."""

    def __init__(self, slots: list[DomainSlot]):
        if not slots:
            raise LoadError("slot inventory is empty")
        names = [s.name for s in slots]
        if len(set(names)) != len(names):
            raise LoadError("duplicate domain-slot names in inventory")
        self._slots = tuple(slots)
        self._by_name = {s.name: s for s in slots}
        self._index = {s.name: i for i, s in enumerate(slots)}

    def __len__(self) -> int:
        return len(self._slots)

    def __iter__(self):
        return iter(self._slots)

    def __contains__(self, item) -> bool:
        name = item.name if isinstance(item, DomainSlot) else item
        return name in self._by_name

    def get(self, name: str) -> DomainSlot:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown domain-slot {name!r}") from None

    def index(self, slot: DomainSlot | str) -> int:
        name = slot.name if isinstance(slot, DomainSlot) else slot
        return self._index[name]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self._slots]

    @property
    def domains(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self._slots:
            seen.setdefault(s.domain, None)
        return list(seen)


def load_inventory(path: str | Path | None = None) -> SlotInventory:
    """Load the slot inventory from `path`, or the packaged default."""
    if path is None:
        text = resources.files("corefdst.resources").joinpath("multiwoz_slots.json").read_text()
    else:
        path = Path(path)
        if not path.exists():
            raise LoadError(f"slot inventory file not found: {path}")
        text = path.read_text()
    try:
        raw = json.loads(text)
        slots = [
            DomainSlot(domain=e["domain"], slot=e["slot"], surface_form=e["surface_form"])
            for e in raw["slots"]
        ]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise LoadError(f"malformed slot inventory: {exc}") from exc
    return SlotInventory(slots)
