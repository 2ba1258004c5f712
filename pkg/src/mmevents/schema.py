"""Event schema: the fixed map from event types to legal argument roles."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_ENTRIES: dict[str, list[str]] = {
    "Movement:Transport": ["Agent", "Artifact", "Vehicle", "Destination", "Origin"],
    "Conflict:Attack": ["Attacker", "Target", "Instrument", "Place"],
    "Conflict:Demonstrate": ["Entity", "Police", "Instrument", "Place"],
    "Justice:ArrestJail": ["Agent", "Person", "Instrument", "Place"],
    "Contact:PhoneWrite": ["Entity", "Instrument", "Place"],
    "Contact:Meet": ["Participant", "Place"],
    "Life:Die": ["Agent", "Instrument", "Victim", "Place"],
    "Transaction:TransferMoney": ["Giver", "Recipient", "Money"],
}

# Roles an event is vacuous without. These are engine defaults, not part
# of the benchmark annotation; override via a schema config file.
DEFAULT_REQUIRED: dict[str, list[str]] = {
    "Movement:Transport": ["Artifact"],
    "Conflict:Attack": ["Attacker", "Target"],
    "Conflict:Demonstrate": ["Entity"],
    "Justice:ArrestJail": ["Person"],
    "Contact:PhoneWrite": ["Entity"],
    "Contact:Meet": ["Participant"],
    "Life:Die": ["Victim"],
    "Transaction:TransferMoney": ["Money"],
}


@dataclass(frozen=True)
class EventSchema:
    entries: dict[str, tuple[str, ...]]
    required_roles: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for etype, roles in self.entries.items():
            if not roles:
                raise ValueError(f"role list for {etype} is empty")
        for etype, req in self.required_roles.items():
            if etype not in self.entries:
                raise ValueError(f"required_roles names unknown type {etype}")
            missing = set(req) - set(self.entries[etype])
            if missing:
                raise ValueError(f"required roles {sorted(missing)} not legal for {etype}")

    @property
    def event_types(self) -> tuple[str, ...]:
        return tuple(self.entries)

    def roles_for(self, event_type: str) -> tuple[str, ...]:
        return self.entries[event_type]

    def has_type(self, event_type: str) -> bool:
        return event_type in self.entries

    def role_labels(self) -> set[str]:
        out: set[str] = set()
        for roles in self.entries.values():
            out.update(roles)
        return out

    def required_for(self, event_type: str) -> tuple[str, ...]:
        return self.required_roles.get(event_type, ())


def default_schema() -> EventSchema:
    return EventSchema(
        entries={k: tuple(v) for k, v in DEFAULT_ENTRIES.items()},
        required_roles={k: tuple(v) for k, v in DEFAULT_REQUIRED.items()},
    )


def load_schema(path: str | Path) -> EventSchema:
    """Load an alternative schema from a JSON file.

    Expected shape: {"entries": {type: [role, ...]}, "required_roles": {type: [role, ...]}}.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = {k: tuple(v) for k, v in data["entries"].items()}
    required = {k: tuple(v) for k, v in data.get("required_roles", {}).items()}
    return EventSchema(entries=entries, required_roles=required)
