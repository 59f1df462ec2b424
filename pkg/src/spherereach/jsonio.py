"""Reading JSON documents given as dicts, JSON text or file paths."""
from __future__ import annotations

import json
from pathlib import Path


def read_document(document):
    if isinstance(document, Path):
        return json.loads(document.read_text(encoding="utf-8"))
    if isinstance(document, str):
        text = document.lstrip()
        if text.startswith(("{", "[")):
            return json.loads(text)
        return json.loads(Path(document).read_text(encoding="utf-8"))
    return document
