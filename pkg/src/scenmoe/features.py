"""Feature schema, embedding tables, and input assembly.

A :class:`FeatureSchema` declares the user-side and item-side fields plus the
scenario cardinality. Raw :class:`InteractionRecord` values are validated
against it, then turned into dense vectors by table lookups: sparse fields
select a row, dense fields scale a projection row, and sequential fields mean
pool their element embeddings. The reserved field names ``user_id``,
``item_id`` and ``scenario_id`` bind to the record's bookkeeping ids instead
of a separate feature column.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import IndexLookupError, ValidationError

SPARSE = "sparse"
DENSE = "dense"
SEQUENTIAL = "sequential"
KINDS = (SPARSE, DENSE, SEQUENTIAL)

RESERVED_BINDINGS = ("user_id", "item_id", "scenario_id")


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    cardinality: int | None = None
    dim: int = 16

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"field '{self.name}': unknown kind '{self.kind}'")
        if self.kind in (SPARSE, SEQUENTIAL):
            if self.cardinality is None or self.cardinality < 1:
                raise ValidationError(f"field '{self.name}': {self.kind} fields need cardinality >= 1")
        if self.dim < 1:
            raise ValidationError(f"field '{self.name}': dim must be >= 1")


@dataclass(frozen=True)
class FeatureSchema:
    user_fields: tuple[FieldSpec, ...]
    item_fields: tuple[FieldSpec, ...]
    scenario_cardinality: int
    scenario_dim: int = 16

    def __post_init__(self):
        names = [f.name for f in self.user_fields + self.item_fields]
        if len(set(names)) != len(names):
            raise ValidationError("field names must be unique across both sides")
        if self.scenario_cardinality < 1:
            raise ValidationError("scenario cardinality must be >= 1")
        for side in (self.user_fields, self.item_fields):
            dims = {f.dim for f in side}
            if len(dims) > 1:
                raise ValidationError(f"embedding dims differ within a tower: {sorted(dims)}")
        if not self.user_fields or not self.item_fields:
            raise ValidationError("both towers need at least one field")

    def side(self, which):
        if which == "user":
            return self.user_fields
        if which == "item":
            return self.item_fields
        raise ValidationError(f"unknown side '{which}'")

    def input_dim(self, which):
        return sum(f.dim for f in self.side(which))

    def to_dict(self):
        def enc(f):
            return {"name": f.name, "kind": f.kind, "cardinality": f.cardinality, "dim": f.dim}

        return {
            "user_fields": [enc(f) for f in self.user_fields],
            "item_fields": [enc(f) for f in self.item_fields],
            "scenario_cardinality": self.scenario_cardinality,
            "scenario_dim": self.scenario_dim,
        }

    @staticmethod
    def from_dict(d):
        def dec(e):
            return FieldSpec(e["name"], e["kind"], e.get("cardinality"), e.get("dim", 16))

        return FeatureSchema(
            tuple(dec(e) for e in d["user_fields"]),
            tuple(dec(e) for e in d["item_fields"]),
            d["scenario_cardinality"],
            d.get("scenario_dim", 16),
        )

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class InteractionRecord:
    user_id: int
    item_id: int
    scenario_id: int
    label: int
    features: dict = field(default_factory=dict)


def _field_value(record, spec):
    if spec.name == "user_id":
        return record.user_id
    if spec.name == "item_id":
        return record.item_id
    if spec.name == "scenario_id":
        return record.scenario_id
    if spec.name not in record.features:
        raise ValidationError(f"record missing value for field '{spec.name}'")
    return record.features[spec.name]


def validate_record(record, schema):
    """Raise ValidationError unless the record conforms to the schema."""
    if record.label not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {record.label!r}")
    if not 0 <= record.scenario_id < schema.scenario_cardinality:
        raise ValidationError(
            f"scenario_id {record.scenario_id} out of range [0, {schema.scenario_cardinality})"
        )
    for spec in schema.user_fields + schema.item_fields:
        value = _field_value(record, spec)
        if spec.kind == SPARSE:
            if not isinstance(value, (int, np.integer)) or not 0 <= value < spec.cardinality:
                raise ValidationError(f"field '{spec.name}': sparse value {value!r} invalid")
        elif spec.kind == DENSE:
            if not math.isfinite(float(value)):
                raise ValidationError(f"field '{spec.name}': dense value must be finite")
        else:
            if not all(isinstance(v, (int, np.integer)) and 0 <= v < spec.cardinality for v in value):
                raise ValidationError(f"field '{spec.name}': sequential values out of range")
    return record


class EmbeddingTables:
    """One trainable matrix per field plus the scenario table.

    Sparse and sequential fields get (cardinality x dim) lookup tables; dense
    fields get a single projection row (1 x dim). Initialization is uniform
    in +-1/sqrt(dim).
    """

    def __init__(self, schema, rng, prefix="emb"):
        self.schema = schema
        self.tables = {}
        for spec in schema.user_fields + schema.item_fields:
            rows = spec.cardinality if spec.kind in (SPARSE, SEQUENTIAL) else 1
            bound = 1.0 / math.sqrt(spec.dim)
            self.tables[spec.name] = nm.uniform(
                (rows, spec.dim), -bound, bound, rng, requires_grad=True, name=f"{prefix}.{spec.name}"
            )
        bound = 1.0 / math.sqrt(schema.scenario_dim)
        self.scenario = nm.uniform(
            (schema.scenario_cardinality, schema.scenario_dim),
            -bound,
            bound,
            rng,
            requires_grad=True,
            name=f"{prefix}.scenario",
        )

    def parameters(self):
        params = [(t.name, t) for _, t in sorted(self.tables.items())]
        params.append((self.scenario.name, self.scenario))
        return params


def embed_field(value, spec, table):
    """Embed one raw field value as a 1-D vector of length spec.dim."""
    if spec.kind == SPARSE:
        if not 0 <= value < spec.cardinality:
            raise IndexLookupError(f"field '{spec.name}': index {value} out of range [0, {spec.cardinality})")
        return nm.take_row(table, value)
    if spec.kind == DENSE:
        v = float(value)
        if not math.isfinite(v):
            raise ValidationError(f"field '{spec.name}': dense value must be finite")
        return nm.mul(nm.take_row(table, 0), v)
    # Sequential: mean pooling; an empty history contributes the zero vector.
    if len(value) == 0:
        return nm.tensor(np.zeros(spec.dim))
    for v in value:
        if not 0 <= v < spec.cardinality:
            raise IndexLookupError(f"field '{spec.name}': index {v} out of range [0, {spec.cardinality})")
    return nm.mean_rows(nm.take_rows(table, list(value)))


def embed_scenario(tables, scenario_id):
    """Row of the scenario table for one scenario id."""
    n = tables.scenario.shape[0]
    if not 0 <= scenario_id < n:
        raise IndexLookupError(f"scenario_id {scenario_id} out of range [0, {n})")
    return nm.take_row(tables.scenario, scenario_id)


def assemble_input(record, schema, tables, side):
    """Concatenate the per-field embeddings of one side, in schema order."""
    parts = [embed_field(_field_value(record, spec), spec, tables.tables[spec.name]) for spec in schema.side(side)]
    if len(parts) == 1:
        return parts[0]
    return nm.concat(parts, axis=0)


def assemble_batch(records, schema, tables, side):
    """Batched assemble_input: one row per record, fields concatenated."""
    n = len(records)
    blocks = []
    for spec in schema.side(side):
        table = tables.tables[spec.name]
        values = [_field_value(r, spec) for r in records]
        if spec.kind == SPARSE:
            for v in values:
                if not 0 <= v < spec.cardinality:
                    raise IndexLookupError(f"field '{spec.name}': index {v} out of range [0, {spec.cardinality})")
            blocks.append(nm.take_rows(table, values))
        elif spec.kind == DENSE:
            vals = np.asarray(values, dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                raise ValidationError(f"field '{spec.name}': dense values must be finite")
            rows = nm.take_rows(table, [0] * n)
            scale = nm.tensor(np.repeat(vals[:, None], spec.dim, axis=1))
            blocks.append(nm.mul(rows, scale))
        else:
            flat = [v for seq in values for v in seq]
            for v in flat:
                if not 0 <= v < spec.cardinality:
                    raise IndexLookupError(f"field '{spec.name}': index {v} out of range [0, {spec.cardinality})")
            if flat:
                pool = np.zeros((n, len(flat)))
                pos = 0
                for i, seq in enumerate(values):
                    if seq:
                        pool[i, pos : pos + len(seq)] = 1.0 / len(seq)
                    pos += len(seq)
                blocks.append(nm.matmul(nm.tensor(pool), nm.take_rows(table, flat)))
            else:
                blocks.append(nm.tensor(np.zeros((n, spec.dim))))
    if len(blocks) == 1:
        return blocks[0]
    return nm.concat(blocks, axis=1)


def scenario_batch(records, tables):
    """Scenario embeddings for a batch, one row per record."""
    ids = [r.scenario_id for r in records]
    n = tables.scenario.shape[0]
    for d in ids:
        if not 0 <= d < n:
            raise IndexLookupError(f"scenario_id {d} out of range [0, {n})")
    return nm.take_rows(tables.scenario, ids)
