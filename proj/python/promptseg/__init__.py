"""Python access to the promptseg core: response protocol, metrics,
advantages, and the command line."""

import json

from ._core import Error, IoError, UsageError
from ._core import advantages, format_reward, iou, run_cli
from ._core import parse_response as _parse
from ._core import serialize as _serialize

__all__ = ["Error", "IoError", "UsageError", "advantages", "format_reward", "iou", "run_cli",
           "parse_response", "serialize"]


def parse_response(text, schema="bbox_pos2", width=256, height=256):
    """Returns {"ok": True, "think": str, "prompts": list} or
    {"ok": False, "kind": str, "detail": str}."""
    ok, a, b = _parse(text, schema, width, height)
    if ok:
        return {"ok": True, "think": a, "prompts": json.loads(b)}
    return {"ok": False, "kind": a, "detail": b}


def serialize(prompts, think="", schema="bbox_pos2", width=256, height=256):
    """Canonical response text for a list of instance dicts."""
    return _serialize(json.dumps(prompts), think, schema, width, height)
