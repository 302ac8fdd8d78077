"""
Validation service for scenario documents
Cross-reference checks that the pydantic field constraints cannot express
"""
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError as PydanticValidationError

from .models import (
    Pair,
    Prosumer,
    Role,
    ScenarioSpec,
    ScenarioStep,
    TradeWeight,
    ValidationError,
)


# Constants
MIN_PROSUMERS = 1


def validate_prosumers(spec: ScenarioSpec) -> Optional[ValidationError]:
    """
    Validate the prosumer table.

    Args:
        spec: Parsed scenario

    Returns:
        ValidationError if invalid, None if valid
    """
    if len(spec.prosumers) < MIN_PROSUMERS:
        return ValidationError(
            field="prosumers",
            message="At least one prosumer is required to build a market"
        )
    ids = [p.id for p in spec.prosumers]
    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        return ValidationError(field="prosumers", message=f"Duplicate prosumer ids: {duplicates}")
    for p in spec.prosumers:
        if p.ramp_min is not None and p.ramp_max is not None and p.ramp_min > p.ramp_max:
            return ValidationError(
                field=f"prosumers[{p.id}]",
                message=f"ramp_min {p.ramp_min} exceeds ramp_max {p.ramp_max}"
            )
    return None


def validate_edges(edges: Optional[Sequence[Pair]], roles: Dict[int, Role], field: str) -> List[ValidationError]:
    """
    Validate an edge list against the roles in force.

    Returns:
        List of errors (empty when valid or when edges is None)
    """
    if edges is None:
        return []
    errors = []
    seen = set()
    for i, j in edges:
        if i not in roles or j not in roles:
            errors.append(ValidationError(field=field, message=f"Edge ({i}, {j}) references an unknown prosumer"))
            continue
        if roles[i] == roles[j]:
            errors.append(ValidationError(
                field=field,
                message=f"Edge ({i}, {j}) joins two {roles[i].value}s"
            ))
        key = (min(i, j), max(i, j))
        if key in seen:
            errors.append(ValidationError(field=field, message=f"Edge ({i}, {j}) listed twice"))
        seen.add(key)
    return errors


def validate_weights(
    weights: Sequence[TradeWeight],
    edges: Optional[Sequence[Pair]],
    roles: Dict[int, Role],
    field: str,
) -> List[ValidationError]:
    """Every weight must sit on an edge (the complete bipartite graph when edges is None)"""
    errors = []
    edge_set = None if edges is None else {(min(i, j), max(i, j)) for i, j in edges}
    for w in weights:
        if w.i not in roles or w.j not in roles:
            errors.append(ValidationError(field=field, message=f"Weight d_{w.i},{w.j} references an unknown prosumer"))
            continue
        on_edge = roles[w.i] != roles[w.j] if edge_set is None else (min(w.i, w.j), max(w.i, w.j)) in edge_set
        if not on_edge:
            errors.append(ValidationError(field=field, message=f"Weight d_{w.i},{w.j} is attached to a non-edge"))
    return errors


def validate_step(spec: ScenarioSpec, t: int, step: ScenarioStep) -> List[ValidationError]:
    """
    Validate one time step: overrides reference known prosumers, overridden
    rows are still valid prosumers, and the step graph stays bipartite.
    """
    errors = []
    base = {p.id: p for p in spec.prosumers}
    roles = {i: p.role for i, p in base.items()}
    for override in step.overrides:
        if override.id not in base:
            errors.append(ValidationError(
                field=f"steps[{t}].overrides",
                message=f"Override references unknown prosumer {override.id}"
            ))
            continue
        data = base[override.id].to_prosumer().model_dump()
        data.update(override.changes())
        try:
            updated = Prosumer(**data)
        except PydanticValidationError as exc:
            errors.append(ValidationError(
                field=f"steps[{t}].overrides[{override.id}]",
                message=exc.errors()[0]["msg"]
            ))
            continue
        roles[override.id] = updated.role

    edges = step.edges if step.edges is not None else spec.edges
    weights = step.weights if step.weights is not None else spec.weights
    errors.extend(validate_edges(edges, roles, f"steps[{t}].edges"))
    errors.extend(validate_weights(weights, edges, roles, f"steps[{t}].weights"))
    return errors


def validate_learning(spec: ScenarioSpec) -> Optional[ValidationError]:
    if spec.learning is None or spec.learning.learners is None:
        return None
    known = {p.id for p in spec.prosumers}
    unknown = sorted(set(spec.learning.learners) - known)
    if unknown:
        return ValidationError(field="learning.learners", message=f"Unknown learners: {unknown}")
    return None


def validate_scenario(spec: ScenarioSpec) -> Tuple[List[ValidationError], List[str]]:
    """
    Validate a complete scenario document.

    Args:
        spec: ScenarioSpec object

    Returns:
        Tuple of (list of errors, list of warnings)
    """
    errors = []
    warnings = []

    prosumer_error = validate_prosumers(spec)
    if prosumer_error:
        errors.append(prosumer_error)
        return errors, warnings

    roles = {p.id: p.role for p in spec.prosumers}
    errors.extend(validate_edges(spec.edges, roles, "edges"))
    errors.extend(validate_weights(spec.weights, spec.edges, roles, "weights"))
    if spec.edges is None:
        warnings.append("No edge list given; using the complete buyer-seller graph")

    if not spec.steps:
        errors.append(ValidationError(field="steps", message="At least one time step is required"))
    for t, step in enumerate(spec.steps):
        errors.extend(validate_step(spec, t, step))

    learning_error = validate_learning(spec)
    if learning_error:
        errors.append(learning_error)
    if spec.learning is not None and spec.learning.admm_throughout:
        warnings.append("Learning clears with ADMM in every round; expect long runtimes")

    if not spec.zero_extend:
        warnings.append("Bounds are not zero-extended; non-trading may be infeasible")

    return errors, warnings
