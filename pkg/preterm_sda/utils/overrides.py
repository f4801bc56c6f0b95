"""JSONPath assignments (``$.train.lr=0.02``) applied to a configuration document."""

import copy
import json
from typing import Any

from jsonpath_ng import Fields
from jsonpath_ng import parse as jsonpath_parse
from jsonpath_ng.exceptions import JSONPathError

from preterm_sda.core.errors import ConfigError


def _parse_jsonpath(json_path_str: str):
    """Parse JSONPath expression with error handling."""
    try:
        return jsonpath_parse(json_path_str)
    except JSONPathError as e:
        raise ConfigError(f"Invalid JSONPath expression '{json_path_str}': {e}") from e
    except Exception as e:
        raise ConfigError(f"Error parsing JSONPath '{json_path_str}': {e}") from e


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _ensure_parents(data: dict[str, Any], expr) -> None:
    """Creates missing intermediate objects for a dotted field path."""
    parts: list[str] = []
    node = expr
    while hasattr(node, "left") and hasattr(node, "right"):
        if not isinstance(node.right, Fields):
            return
        parts.insert(0, node.right.fields[0])
        node = node.left
    if isinstance(node, Fields):
        parts.insert(0, node.fields[0])
    target = data
    for key in parts[:-1]:
        if key not in target:
            target[key] = {}
        if not isinstance(target[key], dict):
            return
        target = target[key]


def apply_overrides(data: dict[str, Any], assignments: list[str]) -> dict[str, Any]:
    """Returns a copy of ``data`` with every ``PATH=VALUE`` assignment applied."""
    result = copy.deepcopy(data)
    for assignment in assignments:
        json_path_str, sep, raw_value = assignment.partition("=")
        if not sep or not json_path_str.strip():
            raise ConfigError(f"Override '{assignment}' must look like PATH=VALUE")
        json_path_str = json_path_str.strip()
        if not json_path_str.startswith("$"):
            json_path_str = "$." + json_path_str
        expr = _parse_jsonpath(json_path_str)
        value = _parse_value(raw_value)

        if not expr.find(result):
            _ensure_parents(result, expr)
            matches = expr.left.find(result) if hasattr(expr, "left") else []
            target = getattr(expr, "right", None)
            if not matches or not isinstance(target, Fields):
                raise ConfigError(f"No matches found for JSONPath: {json_path_str}")
            for match in matches:
                if not isinstance(match.value, dict):
                    raise ConfigError(f"Cannot add key to non-object at path: {expr.left}")
                match.value[target.fields[0]] = value
            continue
        result = expr.update(result, value)
    return result
