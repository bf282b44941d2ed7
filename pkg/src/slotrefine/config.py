"""Pipeline configuration.

A single YAML/JSON document. Unknown keys are rejected so typos fail fast.
Defaults for frame budget, top-K and grid geometry are working values, not
published ones; every run records the full resolved config in its
provenance.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import jsonio
from .errors import ConfigError, StorageError

DEFAULT_PROTOTYPES_REAL = [
    "a natural human face with consistent skin texture",
    "lips moving smoothly in sync with speech",
    "sharp and stable teeth with clear boundaries",
    "consistent lighting and shading across the face",
    "natural eye blinking and gaze",
]

DEFAULT_PROTOTYPES_FAKE = [
    "blurry or smeared mouth region",
    "teeth that look merged, blurred or flickering",
    "unnatural boundary between face and background",
    "inconsistent skin texture or plastic looking skin",
    "lip shape that distorts between frames",
    "asymmetric or warped facial features",
]

DEFAULT_ANCHORS_REAL = [
    "the mouth region is sharp with natural lip texture",
    "teeth are clearly separated and stable over time",
    "skin texture is consistent and natural across frames",
    "facial boundaries remain stable and well aligned",
]

DEFAULT_ANCHORS_FAKE = [
    "the mouth region is blurry and smeared between frames",
    "teeth look merged or flicker across frames",
    "the face boundary shows blending artifacts and seams",
    "skin appears overly smooth with plastic texture",
]

DEFAULT_PROMPT = (
    "Each image is a strip of the same facial region cropped from several frames of one "
    "video, ordered left to right in time. Describe any localized visual evidence of "
    "manipulation you observe, such as blur, texture inconsistency, boundary artifacts, "
    "or temporal flicker. Write one observation per line and mention the region it "
    "concerns. Do not state whether the video is real or fake."
)

DEFAULT_BOILERPLATE = [
    r"\bI (?:cannot|can't|can not|am unable to|am not able to)\b",
    r"\bas an ai\b",
    r"\bunable to (?:determine|assess|verify|tell)\b",
    r"\b(?:not|im)possible to (?:determine|tell|say)\b",
    r"^(?:here (?:is|are)|sure|certainly|okay|ok)\b",
    r"\bI'?m sorry\b",
    r"\bplease note\b",
]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Ablation(_Model):
    use_routing: bool = True
    use_frame_selector: bool = True
    use_patch_selector: bool = True
    use_vlm: bool = True
    use_reranker: bool = True
    use_slots: bool = True


class EmbeddingBackendConfig(_Model):
    kind: Literal["mock", "http"] = "mock"
    url: str | None = None
    model: str = "clip-vit-l-14"
    token_env: str = "SLOTREFINE_EMBED_TOKEN"
    dimension: int = Field(64, gt=0)
    seed: int = 0


class VlmBackendConfig(_Model):
    kind: Literal["mock", "http", "chat"] = "mock"
    url: str | None = None
    model: str = "qwen2-vl-7b-instruct"
    token_env: str = "SLOTREFINE_VLM_TOKEN"
    max_tokens: int = Field(512, gt=0)
    seed: int = 0
    # mock only: path to a JSON {sample_id: 0|1} table that makes descriptions label-aware
    oracle_table: str | None = None


class RerankerBackendConfig(_Model):
    kind: Literal["mock", "http"] = "mock"
    url: str | None = None
    model: str = "bge-reranker-large"
    token_env: str = "SLOTREFINE_RERANK_TOKEN"


class BackendsConfig(_Model):
    embedding: EmbeddingBackendConfig = EmbeddingBackendConfig()
    vlm: VlmBackendConfig = VlmBackendConfig()
    reranker: RerankerBackendConfig = RerankerBackendConfig()
    timeout_s: float = Field(60.0, gt=0)
    max_retries: int = Field(3, ge=0)
    backoff_s: float = Field(0.5, ge=0)
    max_in_flight: int = Field(4, gt=0)
    max_image_bytes: int = Field(8 * 1024 * 1024, gt=0)


class PerturbationConfig(_Model):
    noise_sigma: float = Field(0.05, ge=0)
    blur_kernel: int = Field(7, gt=0)
    blur_sigma: float = Field(2.0, gt=0)
    jpeg_quality: int = Field(30, ge=0, le=100)
    seed: int = 0


class RuntimeConfig(_Model):
    """Execution knobs that never change results; excluded from the config hash."""

    workers: int = Field(4, gt=0)
    cache_dir: str | None = None


class PipelineConfig(_Model):
    t_frames: int = Field(16, gt=0)
    k_frm: int = Field(4, gt=0)
    k_pat: int = Field(3, gt=0)
    grid_rows: int = Field(4, gt=0)
    grid_cols: int = Field(4, gt=0)
    patch_size: int = Field(112, gt=0)
    prototypes_real: list[str] = Field(default_factory=lambda: list(DEFAULT_PROTOTYPES_REAL), min_length=1)
    prototypes_fake: list[str] = Field(default_factory=lambda: list(DEFAULT_PROTOTYPES_FAKE), min_length=1)
    anchors_real: list[str] = Field(default_factory=lambda: list(DEFAULT_ANCHORS_REAL), min_length=1)
    anchors_fake: list[str] = Field(default_factory=lambda: list(DEFAULT_ANCHORS_FAKE), min_length=1)
    instruction_prompt: str = Field(DEFAULT_PROMPT, min_length=1)
    boilerplate_patterns: list[str] = Field(default_factory=lambda: list(DEFAULT_BOILERPLATE))
    ablation: Ablation = Ablation()
    backends: BackendsConfig = BackendsConfig()
    perturbation: PerturbationConfig = PerturbationConfig()
    runtime: RuntimeConfig = RuntimeConfig()
    seed: int = 0

    @model_validator(mode="after")
    def _check_budgets(self):
        if self.k_frm > self.t_frames:
            raise ValueError(f"k_frm ({self.k_frm}) must not exceed t_frames ({self.t_frames})")
        if self.k_pat > self.grid_rows * self.grid_cols:
            raise ValueError(
                f"k_pat ({self.k_pat}) must not exceed grid size ({self.grid_rows}x{self.grid_cols})"
            )
        return self

    def resolved(self) -> dict:
        """Result-affecting settings, with the oracle table replaced by its content digest."""
        data = self.model_dump(mode="json", exclude={"runtime"})
        table = data["backends"]["vlm"]["oracle_table"]
        if table:
            # hash the table content, not its machine-specific location
            try:
                data["backends"]["vlm"]["oracle_table"] = jsonio.digest_bytes(Path(table).read_bytes())
            except OSError as exc:
                raise StorageError(f"cannot read oracle table {table}: {exc}") from exc
        return data

    def config_hash(self) -> str:
        return jsonio.digest_obj(self.resolved())

    def with_overrides(self, *, ablate: list[str] = (), seed: int | None = None,
                       cache_dir: str | None = None, workers: int | None = None) -> "PipelineConfig":
        data = self.model_dump(mode="python")
        for name in ablate:
            key = name if name.startswith("use_") else f"use_{name.replace('-', '_')}"
            if key not in Ablation.model_fields:
                raise ConfigError(f"unknown ablation switch {name!r}; "
                                  f"choose from {sorted(k[4:] for k in Ablation.model_fields)}")
            data["ablation"][key] = False
        if seed is not None:
            data["seed"] = seed
        if cache_dir is not None:
            data["runtime"]["cache_dir"] = cache_dir
        if workers is not None:
            data["runtime"]["workers"] = workers
        return build_config(data)


ABLATION_SWITCHES = tuple(k[4:] for k in Ablation.model_fields)


def build_config(data: dict | None) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    """Load a YAML or JSON config; relative ``oracle_table`` paths resolve against the file."""
    if path is None:
        return build_config({})
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise StorageError(f"config not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    table = data.get("backends", {}).get("vlm", {}).get("oracle_table") if isinstance(
        data.get("backends"), dict) and isinstance(data["backends"].get("vlm"), dict) else None
    if table and not os.path.isabs(table):
        data["backends"]["vlm"]["oracle_table"] = str((path.parent / table).resolve())
    return build_config(data)
