"""
Rate-profile files.

One YAML document per profile::

    name: constant-one
    lambda:
      head: [2, 1]
      tail: 0.5
    rho:
      head: [0.3]
      tail: 1

A bare number may stand in for a whole vector (``rho: 0`` means head [] and tail 0).
Scalars are read from their source text so decimals stay exact.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import yaml

from src.chase_phase.analysis.rates import RateProfile, to_fraction
from src.chase_phase.common import LOGGER_NAME, format_real
from src.chase_phase.exceptions import InvalidProfileError

logger = logging.getLogger(LOGGER_NAME)

VECTORS = ("lambda", "rho")


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _scalar(node: yaml.Node, field: str, index: Optional[int] = None):
    if not isinstance(node, yaml.ScalarNode) or node.value == "":
        raise InvalidProfileError(field, index, "expected a decimal number", line=_line(node))
    try:
        return to_fraction(node.value, field, index)
    except InvalidProfileError as e:
        # re-raise with the source line attached
        raise InvalidProfileError(field, index, e.detail, line=_line(node)) from e


def _mapping(node: yaml.MappingNode, field: str) -> dict[str, yaml.Node]:
    result: dict[str, yaml.Node] = {}
    for key_node, value_node in node.value:
        key = key_node.value if isinstance(key_node, yaml.ScalarNode) else None
        if key is None:
            raise InvalidProfileError(field, message="keys must be plain strings", line=_line(key_node))
        if key in result:
            raise InvalidProfileError(f"{field}.{key}" if field else key, message="duplicate key", line=_line(key_node))
        result[key] = value_node
    return result


def _vector(node: yaml.Node, name: str) -> tuple[tuple, object]:
    if isinstance(node, yaml.ScalarNode):
        return (), _scalar(node, f"{name}.tail")
    if not isinstance(node, yaml.MappingNode):
        raise InvalidProfileError(name, message="expected a mapping with head and tail", line=_line(node))

    fields = _mapping(node, name)
    unknown = set(fields) - {"head", "tail"}
    if unknown:
        raise InvalidProfileError(f"{name}.{sorted(unknown)[0]}", message="unknown field", line=_line(node))
    if "tail" not in fields:
        raise InvalidProfileError(f"{name}.tail", message="missing", line=_line(node))

    head = ()
    if "head" in fields:
        head_node = fields["head"]
        if isinstance(head_node, yaml.ScalarNode) and head_node.tag.endswith(":null"):
            head = ()
        elif not isinstance(head_node, yaml.SequenceNode):
            raise InvalidProfileError(f"{name}.head", message="expected a list", line=_line(head_node))
        else:
            head = tuple(
                _scalar(item, f"{name}.head", i) for i, item in enumerate(head_node.value, start=1)
            )
    return head, _scalar(fields["tail"], f"{name}.tail")


def parse_profile(text: str, source: str = "<string>") -> RateProfile:
    """
    Parse a profile document.

    :param text: YAML source
    :param source: label used in log messages
    :return: RateProfile
    :raises InvalidProfileError: on empty, malformed or negative data
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise InvalidProfileError(
            "document", message=str(e).splitlines()[0], line=mark.line + 1 if mark else None
        ) from e

    if root is None:
        raise InvalidProfileError("document", message=f"empty profile file {source}")
    if not isinstance(root, yaml.MappingNode):
        raise InvalidProfileError("document", message="expected a mapping", line=_line(root))

    fields = _mapping(root, "")
    for vector in VECTORS:
        if vector not in fields:
            raise InvalidProfileError(vector, message="missing")
    unknown = set(fields) - {*VECTORS, "name"}
    if unknown:
        key = sorted(unknown)[0]
        raise InvalidProfileError(key, message="unknown field", line=_line(fields[key]))

    lambda_head, lambda_tail = _vector(fields["lambda"], "lambda")
    rho_head, rho_tail = _vector(fields["rho"], "rho")
    name = fields["name"].value if "name" in fields else None

    profile = RateProfile(lambda_head, lambda_tail, rho_head, rho_tail, name)
    logger.debug(f"Loaded profile {name or source} ({profile.fingerprint()})")
    return profile


def load_profile(path: Union[str, Path]) -> RateProfile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidProfileError("document", message=f"cannot read {path}: {e}") from e
    return parse_profile(text, source=str(path))


def dump_profile(profile: RateProfile) -> str:
    """Render a profile as YAML text with exact rationals as strings."""
    payload = {
        "lambda": {
            "head": [format_real(x) for x in profile.lambda_head],
            "tail": format_real(profile.lambda_tail),
        },
        "rho": {
            "head": [format_real(x) for x in profile.rho_head],
            "tail": format_real(profile.rho_tail),
        },
    }
    if profile.name:
        payload["name"] = profile.name
    return yaml.safe_dump(payload, sort_keys=True)
