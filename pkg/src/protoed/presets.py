"""Named method configurations over the design-element matrix.

Each preset fixes the five elements (prototype source, aggregation form,
distance, transfer, CRF module) plus the contrastive mode. The ``-adj``
variants substitute the adjusted distance/transfer pairs (scaled euclidean
with normalization for the euclidean methods, scaled cosine with
normalization for the cosine/divergence methods) while keeping every other
element unchanged.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from typing import Any, Mapping

from .elements import DISTANCE_KINDS, SCALED_DISTANCES, TRANSFER_KINDS
from .exceptions import ConfigError

PROTOTYPE_SOURCES = ("none", "mentions", "label", "both")
AGGREGATIONS = ("feature", "score", "loss", "score+loss")
CRF_MODES = ("none", "vanilla", "cdt", "pa")
CL_MODES = ("none", "inbatch", "moco", "auto")

DEFAULT_TAU = 0.2


@dataclass(frozen=True)
class MethodConfig:
    """One fully specified method over the element matrix."""

    name: str
    prototype_source: str
    aggregation: str | None
    distance: str
    transfer: str
    crf: str = "none"
    cl_mode: str = "none"
    tau: float | None = None

    def __post_init__(self):
        if self.prototype_source not in PROTOTYPE_SOURCES:
            raise ConfigError(f"unknown prototype source {self.prototype_source!r}")
        if self.aggregation is not None and self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.distance not in DISTANCE_KINDS:
            raise ConfigError(f"unknown distance {self.distance!r}")
        if self.transfer not in TRANSFER_KINDS:
            raise ConfigError(f"unknown transfer {self.transfer!r}")
        if self.crf not in CRF_MODES:
            raise ConfigError(f"unknown crf mode {self.crf!r}")
        if self.cl_mode not in CL_MODES:
            raise ConfigError(f"unknown cl mode {self.cl_mode!r}")
        if self.distance in SCALED_DISTANCES:
            if self.tau is None or self.tau <= 0:
                raise ConfigError(f"distance {self.distance!r} needs tau > 0")
        elif self.tau is not None:
            raise ConfigError(f"distance {self.distance!r} takes no tau")
        if self.cl_mode != "none" and self.prototype_source not in ("mentions", "both"):
            raise ConfigError("a contrastive branch requires mentions among the sources")
        if self.prototype_source in ("mentions", "both") and self.aggregation is None:
            raise ConfigError("mention-sourced methods need an aggregation form")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "prototype_source": self.prototype_source,
            "aggregation": "-" if self.aggregation is None else self.aggregation,
            "distance": self.distance,
            "transfer": self.transfer,
            "crf": self.crf,
            "cl_mode": self.cl_mode,
            "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MethodConfig":
        agg = d.get("aggregation")
        return cls(
            name=d["name"],
            prototype_source=d["prototype_source"],
            aggregation=None if agg in (None, "-") else agg,
            distance=d["distance"],
            transfer=d["transfer"],
            crf=d.get("crf", "none"),
            cl_mode=d.get("cl_mode", "none"),
            tau=d.get("tau"),
        )

    def estimator_kwargs(self) -> dict[str, Any]:
        """Keyword arguments for :class:`~protoed.model.FewShotEventDetector`."""
        return {
            "prototype_source": self.prototype_source,
            "aggregation": self.aggregation or "feature",
            "distance": self.distance,
            "transfer": self.transfer,
            "tau": self.tau if self.tau is not None else DEFAULT_TAU,
            "crf": self.crf,
            "cl_mode": self.cl_mode,
        }

    def adjusted(self, distance: str, transfer: str) -> "MethodConfig":
        tau = DEFAULT_TAU if distance in SCALED_DISTANCES else None
        return replace(
            self, name=f"{self.name}-adj", distance=distance, transfer=transfer, tau=tau
        )


_BASE_PRESETS = {
    "fine-tuning": MethodConfig("fine-tuning", "none", None, "S", "I"),
    "protonet": MethodConfig("protonet", "mentions", "feature", "EU", "I"),
    "l-tapnet-cdt": MethodConfig(
        "l-tapnet-cdt", "both", "feature", "SS", "DN", crf="cdt", tau=DEFAULT_TAU
    ),
    "pa-crf": MethodConfig("pa-crf", "mentions", "feature", "S", "N", crf="pa"),
    "container": MethodConfig(
        "container", "mentions", "score", "KL", "R", crf="cdt", cl_mode="inbatch"
    ),
    "fsls": MethodConfig("fsls", "label", None, "S", "I"),
    "unified-baseline": MethodConfig(
        "unified-baseline", "both", "score+loss", "SS", "N", cl_mode="auto", tau=DEFAULT_TAU
    ),
}

# Adjusted distance/transfer substitutions: the euclidean-flavored methods
# move to scaled euclidean + normalization, the rest to scaled cosine +
# normalization. All other elements are untouched.
_ADJUSTED = {
    "protonet": ("SEU", "N"),
    "l-tapnet-cdt": ("SEU", "N"),
    "container": ("SS", "N"),
    "fsls": ("SS", "N"),
}

PRESETS: dict[str, MethodConfig] = dict(_BASE_PRESETS)
for _name, (_d, _f) in _ADJUSTED.items():
    _adj = _BASE_PRESETS[_name].adjusted(_d, _f)
    PRESETS[_adj.name] = _adj


def method_preset(name: str) -> MethodConfig:
    """Look up a preset by name; unknown names list the available presets."""
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r}; available presets: {known}") from None


def config_hash(config: Mapping[str, Any]) -> str:
    """Short stable digest of a JSON-serializable config mapping."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
