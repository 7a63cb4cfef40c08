"""Scope-pattern to sparsifier compilation.

A ScopeMap is an ordered list of (pattern, location, sparsifier) rules.
Patterns are exact trainable-layer scopes or trailing-star prefix globs
("block1/*"). Compilation resolves every rule against a model's scopes;
a rule matching nothing is an error. Later rules override earlier ones
for the same (scope, location).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .models import ModelSpec, forward
from .sparsity import SparsifierSpec

LOCATIONS = ("extrinsic", "weight", "gradient", "intrinsic")


class ScopeMapError(ValueError):
    pass


@dataclass(frozen=True)
class ScopeRule:
    pattern: str
    location: str
    sparsifier: SparsifierSpec

    def __post_init__(self):
        if self.location not in LOCATIONS:
            raise ScopeMapError(
                f"unknown hook location {self.location!r}; expected one of {LOCATIONS}")

    def matches(self, scope: str) -> bool:
        if self.pattern.endswith("*"):
            return scope.startswith(self.pattern[:-1])
        return scope == self.pattern


@dataclass
class ScopeMap:
    rules: list = field(default_factory=list)

    def add(self, pattern: str, location: str, method: str, value: float = 0.0):
        self.rules.append(ScopeRule(pattern, location, SparsifierSpec(method, value)))
        return self

    def to_config(self):
        return [[r.pattern, r.location, r.sparsifier.method, r.sparsifier.value]
                for r in self.rules]

    @classmethod
    def from_config(cls, entries):
        m = cls()
        for pattern, location, method, value in entries:
            m.add(pattern, location, method, value)
        return m


@dataclass
class HookedModel:
    model: ModelSpec
    table: dict  # scope -> {location: SparsifierSpec}
    match_counts: dict  # pattern -> number of scopes matched


def compile_scope_map(scope_map: ScopeMap, model: ModelSpec) -> HookedModel:
    scopes = [l.scope for l in model.layers if l.params]
    table: dict[str, dict] = {}
    counts: dict[str, int] = {}
    seen: set[tuple[str, str, str]] = set()
    for rule in scope_map.rules:
        key = (rule.pattern, rule.location)
        if key + ("",) in seen:
            raise ScopeMapError(
                f"duplicate rule for pattern {rule.pattern!r} at {rule.location!r}; "
                "use a later distinct pattern to override")
        seen.add(key + ("",))
        matched = [s for s in scopes if rule.matches(s)]
        counts[rule.pattern] = counts.get(rule.pattern, 0) + len(matched)
        if not matched:
            raise ScopeMapError(
                f"pattern {rule.pattern!r} matched no scope; available: {scopes}")
        for s in matched:
            table.setdefault(s, {})[rule.location] = rule.sparsifier
    return HookedModel(model, table, counts)


def hooked_forward(hm: HookedModel, batch, mode: str = "eval", tape=None):
    return forward(hm.model, batch, mode=mode, tape=tape, hooks=hm.table)


def hooked_gradients(hm: HookedModel, grads: dict) -> dict:
    """Pass every parameter gradient through its scope's gradient sparsifier.

    A gradient hook bound to scope s applies to all of s's parameter
    gradients (kernel and bias alike); unbound scopes pass through.
    """
    out = {}
    for name, g in grads.items():
        scope = name.rpartition("/")[0]
        spec = hm.table.get(scope, {}).get("gradient")
        if spec is None or spec.is_identity:
            out[name] = g
        else:
            out[name] = type(g)(spec.apply(g.data)) if hasattr(g, "data") else spec.apply(g)
    return out


def effective_weight(hm: HookedModel, scope: str):
    """The kernel tensor a hooked forward pass would actually use."""
    w = hm.model.weight_tensor(scope)
    spec = hm.table.get(scope, {}).get("weight")
    return w.data if spec is None else spec.apply(w.data)
