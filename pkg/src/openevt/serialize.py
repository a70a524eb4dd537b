"""Model persistence: one self-describing JSON container for all three
classifier kinds, with a versioned header and an optional stored feature
standardizer applied by the CLI at scoring time."""

import json
from dataclasses import dataclass

import numpy as np

from .data import DistanceMetric, Standardizer
from .errors import DataError

FORMAT_NAME = "openevt-model"
FORMAT_VERSION = 1


@dataclass
class ModelFile:
    kind: str
    model: object
    standardizer: Standardizer | None


def _registry():
    from .evm import EvmModel
    from .gevc import GevcModel
    from .gpdc import GpdcModel

    return {cls.KIND: cls for cls in (GpdcModel, GevcModel, EvmModel)}


def save_model(model, path, standardizer: Standardizer | None = None) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": model.KIND,
        "metric": model.metric.name,
        "payload": model.to_payload(),
    }
    if standardizer is not None:
        doc["standardize"] = {
            "mean": standardizer.mean.tolist(),
            "scale": standardizer.scale.tolist(),
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> ModelFile:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise DataError(f"{path}: not an {FORMAT_NAME} container")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported container version {doc.get('version')!r}"
        )
    kind = doc.get("kind")
    registry = _registry()
    if kind not in registry:
        raise DataError(f"{path}: unknown model kind {kind!r}")
    metric = DistanceMetric.parse(doc["metric"])
    model = registry[kind].from_payload(doc["payload"], metric)
    standardizer = None
    if doc.get("standardize") is not None:
        standardizer = Standardizer(
            mean=np.array(doc["standardize"]["mean"], dtype=float),
            scale=np.array(doc["standardize"]["scale"], dtype=float),
        )
    return ModelFile(kind=kind, model=model, standardizer=standardizer)
