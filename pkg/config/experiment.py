"""
Experiment configuration
One INI file describes a reproducible run; every command writes the resolved
file next to its outputs
"""

import configparser
import typing
from enum import Enum as PyEnum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Type, Union

from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from analysis.changepoint import ChangepointParams
from analysis.clustering import ClusteringParams
from analysis.cp_features import CPFeatureParams
from analysis.evaluation import EvaluationParams
from analysis.importance import ImportanceParams
from analysis.segmentation import SegmentationParams
from core.errors import RejectedInput
from core.io import require_file
from core.models import MissingPolicy
from core.synthgen import ScenarioConfig
from detectors.hybrid import DEFAULT_COMPARISON, DetectorParams, PipelineSpec, resolve_spec

RESOLVED_NAME = "resolved_config.ini"
ROOT_SECTION = "experiment"
PIPELINE_PREFIX = "pipeline."
NONE_TOKENS = {"none", "null", ""}


class InputPaths(BaseModel):
    frame: Optional[str] = None
    noc: Optional[str] = None
    schema_file: Optional[str] = None  # optional column list, one per line
    cpd: Optional[str] = None
    dataset: Optional[str] = None
    model: Optional[str] = None


class TrainParams(BaseModel):
    pipeline: str = "baseline"


class CompareParams(BaseModel):
    pipelines: List[str] = Field(default_factory=lambda: list(DEFAULT_COMPARISON))


class ExperimentConfig(BaseModel):
    """Everything a run depends on; the seed has no default"""

    # ============================================
    # RUN
    # ============================================
    seed: int
    jobs: int = Field(default=1, ge=1)
    out: str = "runs/latest"
    report_formats: List[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"])
    missing_policy: MissingPolicy = MissingPolicy.FORWARD_FILL

    # ============================================
    # PHASES
    # ============================================
    input: InputPaths = Field(default_factory=InputPaths)
    synth: ScenarioConfig = Field(default_factory=ScenarioConfig)
    changepoint: ChangepointParams = Field(default_factory=ChangepointParams)
    cp_features: CPFeatureParams = Field(default_factory=CPFeatureParams)
    segmentation: SegmentationParams = Field(default_factory=SegmentationParams)
    clustering: ClusteringParams = Field(default_factory=ClusteringParams)
    detectors: DetectorParams = Field(default_factory=DetectorParams)
    train: TrainParams = Field(default_factory=TrainParams)
    evaluation: EvaluationParams = Field(default_factory=EvaluationParams)
    compare: CompareParams = Field(default_factory=CompareParams)
    importance: ImportanceParams = Field(default_factory=ImportanceParams)
    pipelines: Dict[str, PipelineSpec] = Field(default_factory=dict)

    def pipeline(self, name: str) -> PipelineSpec:
        return resolve_spec(name, self.pipelines)


# ============================================
# VALUE CODEC
# ============================================

def _unwrap_optional(annotation: Any) -> Any:
    if typing.get_origin(annotation) is Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return annotation


def _is_list(annotation: Any) -> bool:
    return typing.get_origin(_unwrap_optional(annotation)) in (list, List)


def _submodel(annotation: Any) -> Optional[Type[BaseModel]]:
    inner = _unwrap_optional(annotation)
    if isinstance(inner, type) and issubclass(inner, BaseModel):
        return inner
    return None


def _parse_value(model: Type[BaseModel], key: str, raw: str, section: str) -> Any:
    field = model.model_fields.get(key)
    if field is None:
        raise RejectedInput(f"unknown key '{key}' in [{section}]", section=section, known=sorted(model.model_fields))
    if _submodel(field.annotation) is not None:
        nested = key if section == ROOT_SECTION else f"{section}.{key}"
        raise RejectedInput(f"'{key}' is a section; use [{nested}]", section=section)
    text = raw.strip()
    if text.lower() in NONE_TOKENS and not _is_list(field.annotation):
        return None
    if _is_list(field.annotation):
        if text.lower() == "none":
            return None
        return [item.strip() for item in text.split(",") if item.strip()]
    return text


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, PyEnum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


# ============================================
# LOADING
# ============================================

def _section_model(section: str) -> Tuple[Type[BaseModel], List[str]]:
    """Model class and field path behind a section name"""
    if section == ROOT_SECTION:
        return ExperimentConfig, []
    model: Type[BaseModel] = ExperimentConfig
    path = section.split(".")
    for part in path:
        field = model.model_fields.get(part)
        sub = _submodel(field.annotation) if field is not None else None
        if sub is None:
            raise RejectedInput(f"unknown config section [{section}]", section=section)
        model = sub
    return model, path


def _apply_sets(parser: configparser.ConfigParser, sets: Sequence[str]) -> None:
    for item in sets:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().rpartition(".")
        if not sep or not dot or not key:
            raise RejectedInput(f"--set expects section.key=value, got '{item}'")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())


def parse_experiment(parser: configparser.ConfigParser, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Build an ExperimentConfig from parsed INI sections.

    `overrides` holds top-level values (seed, jobs, out) from command-line
    flags and wins over the file.
    """
    data: Dict[str, Any] = {}
    pipelines: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        if section.startswith(PIPELINE_PREFIX):
            name = section[len(PIPELINE_PREFIX):]
            pipelines[name] = {"name": name}
            for key, raw in parser.items(section):
                pipelines[name][key] = _parse_value(PipelineSpec, key, raw, section)
            continue
        model, path = _section_model(section)
        target = data
        for part in path:
            target = target.setdefault(part, {})
        for key, raw in parser.items(section):
            target[key] = _parse_value(model, key, raw, section)

    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "seed" not in data or data["seed"] is None:
        raise RejectedInput("a seed is required: set [experiment] seed or pass --seed")

    try:
        synth = data.pop("synth", {})
        config = ExperimentConfig(
            **data,
            synth=ScenarioConfig.from_preset(synth.pop("preset", "default") or "default", **synth),
            pipelines={name: PipelineSpec(**spec) for name, spec in pipelines.items()},
        )
    except ValidationError as e:
        problems = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise RejectedInput(f"invalid experiment configuration: {'; '.join(problems)}", problems=problems) from None
    return config


def load_experiment(
    path: Optional[Union[str, Path]] = None,
    sets: Sequence[str] = (),
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    out: Optional[str] = None,
) -> ExperimentConfig:
    """Defaults < config file < --set overrides < --seed/--jobs/--out flags"""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        source = require_file(path)
        try:
            parser.read(source, encoding="utf-8")
        except configparser.Error as e:
            raise RejectedInput(f"cannot parse {source}: {e}") from None
        logger.debug(f"Loaded experiment config {source}")
    _apply_sets(parser, sets)
    return parse_experiment(parser, {"seed": seed, "jobs": jobs, "out": out})


# ============================================
# WRITING
# ============================================

def _emit(model: BaseModel, section: str, parser: configparser.ConfigParser) -> None:
    parser.add_section(section)
    children = []
    for key, field in type(model).model_fields.items():
        value = getattr(model, key)
        if isinstance(value, BaseModel):
            children.append((key, value))
        elif key != "pipelines":
            parser.set(section, key, _format_value(value))
    for key, child in children:
        _emit(child, key if section == ROOT_SECTION else f"{section}.{key}", parser)


def experiment_to_ini(config: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    _emit(config, ROOT_SECTION, parser)
    for name, spec in sorted(config.pipelines.items()):
        section = f"{PIPELINE_PREFIX}{name}"
        parser.add_section(section)
        for key in type(spec).model_fields:
            if key != "name":
                parser.set(section, key, _format_value(getattr(spec, key)))

    lines: List[str] = ["# Resolved experiment configuration; load it with --config to reproduce the run", ""]
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in parser.items(section))
        lines.append("")
    return "\n".join(lines)


def write_resolved_config(config: ExperimentConfig, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_NAME
    path.write_text(experiment_to_ini(config), encoding="utf-8")
    return path


__all__ = [
    "RESOLVED_NAME",
    "InputPaths",
    "TrainParams",
    "CompareParams",
    "ExperimentConfig",
    "parse_experiment",
    "load_experiment",
    "experiment_to_ini",
    "write_resolved_config",
]
