"""Atomic hypergraph operations: validation, conflict resolution, commit, audit.

The operation set is closed: propose / revise / drop / link / unlink /
adjust_confidence. Each negotiation round collects agent proposals,
resolves conflicts under a fixed deterministic policy, applies the
surviving operations in a fixed family order, and appends them to an
append-only audit trail. Replaying the trail from the edge-free initial
state reconstructs the current hypergraph exactly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import hypergraph as hg
from .errors import (
    InternalInconsistency,
    MissingField,
    OutOfRangeConfidence,
    SchemaViolation,
    UnknownTarget,
    ValidationError,
)
from .schema import EventSchema

FAMILIES = ("propose", "revise", "drop", "link", "unlink", "adjust_confidence")

# Destructive operations first so that links and adjustments only ever
# target surviving edges; proposes precede links so same-round links to
# freshly proposed edges resolve.
APPLICATION_ORDER = ("drop", "unlink", "propose", "revise", "link", "adjust_confidence")
_FAMILY_RANK = {f: i for i, f in enumerate(APPLICATION_ORDER)}

DEFAULT_AGENT_ORDER = ("proposer", "linker", "verifier")


@dataclass(frozen=True)
class Operation:
    op_type: str
    target: Optional[str] = None
    payload: dict = field(default_factory=dict)
    alias: Optional[str] = None  # provisional id announced by a propose


@dataclass
class Proposal:
    agent_id: str
    op: Operation
    rationale: str
    index: int = 0  # position within the agent's submission
    resolved_target: Optional[str] = None  # filled at apply time


@dataclass
class CommitUnit:
    round: int
    accepted: list[Proposal] = field(default_factory=list)
    rejected: list[tuple[Proposal, str]] = field(default_factory=list)


@dataclass(frozen=True)
class AuditEntry:
    agent_id: str
    op_type: str
    target: Optional[str]
    payload: dict
    round: int

    def to_json(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "op_type": self.op_type,
            "target": self.target,
            "payload": self.payload,
            "round": self.round,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AuditEntry":
        return cls(
            agent_id=obj["agent_id"],
            op_type=obj["op_type"],
            target=obj.get("target"),
            payload=dict(obj.get("payload", {})),
            round=int(obj["round"]),
        )


AuditTrail = list  # list[AuditEntry]


def _canonical_trigger(raw) -> Optional[dict]:
    if raw is None:
        return None
    if not isinstance(raw, dict) or "start" not in raw or "end" not in raw:
        raise MissingField("trigger payload must carry integer start/end")
    return {"start": int(raw["start"]), "end": int(raw["end"])}


def canonical_payload(op_type: str, payload: dict) -> dict:
    """Normalize a payload so equal operations compare equal."""
    if op_type == "propose":
        out = {
            "event_type": payload.get("event_type"),
            "trigger": _canonical_trigger(payload.get("trigger")),
            "members": sorted(payload.get("members") or []),
        }
        return out
    if op_type == "revise":
        out = {}
        if "event_type" in payload:
            out["event_type"] = payload["event_type"]
        if "trigger" in payload and payload["trigger"] is not None:
            out["trigger"] = _canonical_trigger(payload["trigger"])
        return out
    if op_type in ("link", "unlink"):
        out = {"vertex": payload.get("vertex")}
        # bind-during-link ablation may carry a provisional role
        for key in ("role", "confidence"):
            if key in payload:
                out[key] = payload[key]
        return out
    if op_type == "adjust_confidence":
        return {"value": payload.get("value")}
    if op_type == "drop":
        return {}
    raise SchemaViolation(f"unknown operation family {op_type!r}")


def resolve_trigger_text(op: Operation, text: str) -> Operation:
    """Turn a {"text": ...} trigger payload into character offsets."""
    payload = dict(op.payload)
    trig = payload.get("trigger")
    if isinstance(trig, dict) and "text" in trig and "start" not in trig:
        from .textnorm import align_span

        start, end = align_span(str(trig["text"]), text)
        payload["trigger"] = {"start": start, "end": end}
        return Operation(op.op_type, op.target, payload, op.alias)
    return op


def validate(
    op: Operation,
    h: hg.Hypergraph,
    schema: EventSchema,
    text: Optional[str] = None,
    aliases: frozenset[str] = frozenset(),
) -> None:
    """Structural validation; raises a ValidationError subclass on failure."""
    if op.op_type not in FAMILIES:
        raise SchemaViolation(f"unknown operation family {op.op_type!r}")
    payload = op.payload

    def check_edge_target(allow_alias: bool = True):
        if op.target is None:
            raise MissingField(f"{op.op_type} requires a target edge")
        if op.target in h.edges:
            return
        if allow_alias and op.target in aliases:
            return
        raise UnknownTarget(f"{op.op_type} targets unknown edge {op.target!r}")

    def check_trigger(trig, required: bool):
        if trig is None:
            if required and text:
                raise MissingField("trigger required when the document has text")
            return
        canon = _canonical_trigger(trig)
        if text is not None:
            if not (0 <= canon["start"] < canon["end"] <= len(text)):
                raise SchemaViolation(f"trigger span {canon} out of text bounds")

    if op.op_type == "propose":
        etype = payload.get("event_type")
        if not etype:
            raise MissingField("propose requires event_type")
        if not schema.has_type(etype):
            raise SchemaViolation(f"event type {etype!r} not in schema")
        check_trigger(payload.get("trigger"), required=True)
        for vid in payload.get("members") or []:
            if vid not in h.vertices:
                raise UnknownTarget(f"propose member {vid!r} unknown")
    elif op.op_type == "revise":
        check_edge_target()
        if "event_type" not in payload and "trigger" not in payload:
            raise MissingField("revise requires a new event_type and/or trigger")
        if "event_type" in payload and not schema.has_type(payload["event_type"]):
            raise SchemaViolation(f"event type {payload['event_type']!r} not in schema")
        if "trigger" in payload:
            check_trigger(payload["trigger"], required=False)
    elif op.op_type == "drop":
        check_edge_target(allow_alias=False)
    elif op.op_type in ("link", "unlink"):
        # unlinks apply before same-round proposes, so an alias target can
        # never resolve — and a freshly proposed edge has nothing to unlink
        check_edge_target(allow_alias=(op.op_type == "link"))
        vid = payload.get("vertex")
        if not vid:
            raise MissingField(f"{op.op_type} requires a vertex")
        if vid not in h.vertices:
            raise UnknownTarget(f"{op.op_type} names unknown vertex {vid!r}")
    elif op.op_type == "adjust_confidence":
        check_edge_target()
        if "value" not in payload or payload["value"] is None:
            raise MissingField("adjust_confidence requires a value")
        value = payload["value"]
        if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
            raise OutOfRangeConfidence(f"confidence {value!r} outside [0, 1]")


def equivalent(op: Operation, entry: AuditEntry) -> bool:
    """True iff the operation repeats a committed trail entry.

    Proposals never carry a concrete edge id, so propose equivalence is
    judged on payload alone; all other families compare target too.
    """
    if op.op_type != entry.op_type:
        return False
    payload = canonical_payload(op.op_type, op.payload)
    if op.op_type == "propose":
        return payload == entry.payload
    return op.target == entry.target and payload == entry.payload


def _agent_rank(agent_id: str, agent_order: Sequence[str]) -> tuple:
    try:
        return (0, agent_order.index(agent_id))
    except ValueError:
        return (1, agent_id)


def _sort_key(p: Proposal, agent_order: Sequence[str]) -> tuple:
    return (_agent_rank(p.agent_id, agent_order), p.index)


def _application_key(p: Proposal, agent_order: Sequence[str]) -> tuple:
    return (_FAMILY_RANK[p.op.op_type], _agent_rank(p.agent_id, agent_order), p.index)


def resolve_conflicts(
    proposals: Sequence[Proposal],
    h: hg.Hypergraph,
    trail: Sequence[AuditEntry],
    round: int,
    schema: EventSchema,
    text: Optional[str] = None,
    agent_order: Sequence[str] = DEFAULT_AGENT_ORDER,
) -> CommitUnit:
    """Aggregate one round's proposals into a conflict-free commit unit.

    Deterministic in the proposal multiset: proposals are first brought
    into canonical (agent order, submission index) order, so arrival
    order never matters.
    """
    unit = CommitUnit(round=round)
    ordered = sorted(proposals, key=lambda p: _sort_key(p, agent_order))

    aliases = frozenset(
        p.op.alias for p in ordered if p.op.op_type == "propose" and p.op.alias
    )

    # structural validation
    valid: list[Proposal] = []
    for p in ordered:
        try:
            validate(p.op, h, schema, text=text, aliases=aliases)
        except ValidationError as exc:
            unit.rejected.append((p, f"{type(exc).__name__}: {exc}"))
            continue
        valid.append(p)

    # deduplicate identical proposals
    seen: set = set()
    deduped: list[Proposal] = []
    for p in valid:
        key = (p.op.op_type, p.op.target, _freeze(canonical_payload(p.op.op_type, p.op.payload)))
        if key in seen:
            unit.rejected.append((p, "duplicate proposal"))
            continue
        seen.add(key)
        deduped.append(p)

    # no-repeat against the committed trail
    fresh: list[Proposal] = []
    for p in deduped:
        if any(equivalent(p.op, entry) for entry in trail):
            unit.rejected.append((p, "repeat of committed operation"))
        else:
            fresh.append(p)

    # drop dominance
    dropped = {p.op.target for p in fresh if p.op.op_type == "drop"}
    survivors: list[Proposal] = []
    for p in fresh:
        if p.op.op_type != "drop" and p.op.target in dropped:
            unit.rejected.append((p, f"drop of {p.op.target} overrides this operation"))
        else:
            survivors.append(p)

    # unlink overrides link on the same (vertex, edge) pair
    unlinked = {
        (p.op.target, p.op.payload.get("vertex"))
        for p in survivors
        if p.op.op_type == "unlink"
    }
    kept: list[Proposal] = []
    for p in survivors:
        if p.op.op_type == "link" and (p.op.target, p.op.payload.get("vertex")) in unlinked:
            unit.rejected.append((p, "unlink overrides link on this vertex-edge pair"))
        else:
            kept.append(p)

    # at most one confidence adjustment per edge per round
    adjusted: set[str] = set()
    final: list[Proposal] = []
    for p in kept:
        if p.op.op_type == "adjust_confidence":
            if p.op.target in adjusted:
                unit.rejected.append((p, "conflicting confidence adjustment"))
                continue
            adjusted.add(p.op.target)
        final.append(p)

    # links to aliases of proposes that did not survive cannot resolve
    live_aliases = {p.op.alias for p in final if p.op.op_type == "propose" and p.op.alias}
    resolved: list[Proposal] = []
    for p in final:
        if (
            p.op.op_type != "propose"
            and p.op.target in aliases
            and p.op.target not in live_aliases
        ):
            unit.rejected.append((p, f"alias {p.op.target!r} refers to a rejected proposal"))
        else:
            resolved.append(p)

    unit.accepted = sorted(resolved, key=lambda p: _application_key(p, agent_order))
    return unit


def _freeze(obj):
    if isinstance(obj, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in obj.items()))
    if isinstance(obj, list):
        return tuple(_freeze(v) for v in obj)
    return obj


def apply_commit(
    h: hg.Hypergraph,
    unit: CommitUnit,
    schema: EventSchema,
    doc: Optional[hg.Document] = None,
) -> hg.Hypergraph:
    """Apply an already-resolved commit unit, returning the successor state.

    Fills each accepted proposal's resolved_target (aliases become real
    edge ids) so the audit log can record concrete targets.
    """
    out = h.copy()
    alias_map: dict[str, str] = {}
    for p in unit.accepted:
        op = p.op
        target = alias_map.get(op.target, op.target) if op.target else None
        try:
            assigned = _apply_op(out, op, target, alias_map)
        except KeyError as exc:
            raise InternalInconsistency(f"commit referenced missing id: {exc}") from exc
        p.resolved_target = assigned if op.op_type == "propose" else target
    hg.check_invariants(out, schema, doc)
    if doc is not None:
        refresh_trigger_surfaces(out, doc.text)
    return out


def _apply_op(out: hg.Hypergraph, op: Operation, target: Optional[str], alias_map: dict) -> Optional[str]:
    if op.op_type == "drop":
        del out.edges[target]
    elif op.op_type == "unlink":
        edge = out.edges[target]
        vid = op.payload["vertex"]
        edge.members.discard(vid)
        edge.roles = [rb for rb in edge.roles if rb.vertex_id != vid]
    elif op.op_type == "propose":
        eid = out.allocate_edge_id()
        trig = _canonical_trigger(op.payload.get("trigger"))
        edge = hg.Hyperedge(
            id=eid,
            event_type=op.payload["event_type"],
            members=set(op.payload.get("members") or []),
            trigger=hg.TextSpan(trig["start"], trig["end"]) if trig else None,
        )
        out.edges[eid] = edge
        if op.alias:
            alias_map[op.alias] = eid
        return eid
    elif op.op_type == "revise":
        edge = out.edges[target]
        if "event_type" in op.payload:
            edge.event_type = op.payload["event_type"]
        if "trigger" in op.payload and op.payload["trigger"] is not None:
            trig = _canonical_trigger(op.payload["trigger"])
            edge.trigger = hg.TextSpan(trig["start"], trig["end"])
    elif op.op_type == "link":
        out.edges[target].members.add(op.payload["vertex"])
    elif op.op_type == "adjust_confidence":
        out.edges[target].confidence = float(op.payload["value"])
    else:
        raise InternalInconsistency(f"unapplicable operation family {op.op_type!r}")
    return None


def refresh_trigger_surfaces(h: hg.Hypergraph, text: str) -> None:
    for edge in h.edges.values():
        if edge.trigger is not None:
            edge.trigger_surface = text[edge.trigger.start:edge.trigger.end]


def append_log(trail: Sequence[AuditEntry], unit: CommitUnit) -> list[AuditEntry]:
    """One entry per accepted proposal, in application order."""
    new = list(trail)
    for p in unit.accepted:
        new.append(
            AuditEntry(
                agent_id=p.agent_id,
                op_type=p.op.op_type,
                target=p.resolved_target if p.resolved_target else p.op.target,
                payload=canonical_payload(p.op.op_type, p.op.payload),
                round=unit.round,
            )
        )
    return new


def replay(
    h0: hg.Hypergraph,
    trail: Sequence[AuditEntry],
    schema: EventSchema,
    doc: Optional[hg.Document] = None,
) -> hg.Hypergraph:
    """Fold the audit trail over the edge-free initial state."""
    out = h0.copy()
    for entry in trail:
        _replay_entry(out, entry)
    hg.check_invariants(out, schema, doc)
    if doc is not None:
        refresh_trigger_surfaces(out, doc.text)
    return out


def replay_rounds(h0: hg.Hypergraph, trail: Sequence[AuditEntry], schema: EventSchema, doc=None):
    """Yield (round, state) after each replayed round."""
    out = h0.copy()
    for rnd, entries in itertools.groupby(trail, key=lambda e: e.round):
        for entry in entries:
            _replay_entry(out, entry)
        hg.check_invariants(out, schema, doc)
        if doc is not None:
            refresh_trigger_surfaces(out, doc.text)
        yield rnd, out.copy()


def _replay_entry(out: hg.Hypergraph, entry: AuditEntry) -> None:
    op = Operation(entry.op_type, entry.target, dict(entry.payload))
    if entry.op_type == "propose":
        expected = f"HE{out.next_edge}"
        if entry.target != expected:
            raise InternalInconsistency(
                f"replayed propose expected id {expected}, trail says {entry.target}"
            )
        _apply_op(out, op, None, {})
    else:
        if entry.op_type != "propose" and entry.target not in out.edges:
            raise InternalInconsistency(f"trail entry targets unknown edge {entry.target!r}")
        if entry.op_type in ("link", "unlink") and entry.payload.get("vertex") not in out.vertices:
            raise InternalInconsistency(
                f"trail entry names unknown vertex {entry.payload.get('vertex')!r}"
            )
        _apply_op(out, op, entry.target, {})
