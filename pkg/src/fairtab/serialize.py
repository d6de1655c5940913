"""Versioned npz bundles for trained models."""

from __future__ import annotations

import json
import zipfile

import numpy as np

from .errors import ModelFormatError

FORMAT_VERSION = 1


def save_bundle(path, kind: str, meta: dict, arrays: dict) -> None:
    """Write arrays plus a JSON header to a single .npz file."""
    header = {"format": kind, "version": FORMAT_VERSION, "meta": meta}
    np.savez(path, __header__=np.asarray(json.dumps(header, sort_keys=True)), **arrays)


def load_bundle(path, kind: str) -> tuple[dict, dict]:
    """Read back (meta, arrays); rejects foreign or corrupt files."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            if "__header__" not in npz:
                raise ModelFormatError(f"{path}: not a model bundle (no header)")
            header = json.loads(str(npz["__header__"]))
            arrays = {k: npz[k] for k in npz.files if k != "__header__"}
    except (OSError, ValueError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable model bundle: {exc}") from exc
    if header.get("format") != kind:
        raise ModelFormatError(
            f"{path}: expected a {kind!r} bundle, found {header.get('format')!r}"
        )
    if header.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported bundle version {header.get('version')!r}"
        )
    return header.get("meta", {}), arrays
