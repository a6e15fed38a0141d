"""
Run configuration: TOML in, typed dataclasses out, canonical TOML back.
"""
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .datasets import DatasetSpec
from .exceptions import ConfigError
from .network import ModelConfig
from .selection import SelectionConfig
from .serializers import RunConfigSerializer
from .training import TrainConfig
from .verification import VerifyConfig

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selection: Optional[SelectionConfig] = None
    verify: Optional[VerifyConfig] = None
    name: str = field(default='', compare=False)


def _flatten_errors(detail, path=()) -> List[Tuple[str, str]]:
    if isinstance(detail, dict):
        out = []
        for key, value in detail.items():
            # non_field_errors belong to the enclosing section
            out += _flatten_errors(value, path if key == 'non_field_errors' else path + (str(key),))
        return out
    if isinstance(detail, list):
        if all(not isinstance(d, (dict, list)) for d in detail):
            return [('.'.join(path), str(d)) for d in detail]
        out = []
        for d in detail:
            out += _flatten_errors(d, path)
        return out
    return [('.'.join(path), str(detail))]


def validate_document(document: Dict[str, Any], name: str = '') -> RunConfig:
    serializer = RunConfigSerializer(data=document)
    if not serializer.is_valid():
        errors = _flatten_errors(serializer.errors)
        path, message = errors[0]
        for other_path, other in errors[1:]:
            logger.debug("also invalid: %s: %s", other_path, other)
        raise ConfigError(message, path or None)
    config = serializer.save()
    config.name = name
    return config


def parse_run_config(text: str, name: str = '') -> RunConfig:
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc
    return validate_document(document, name)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_run_config(text, name=path.stem)


# --------------------------------------------------------------------------
# canonical TOML
# --------------------------------------------------------------------------
def _scalar(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return '[' + ', '.join(_scalar(v) for v in value) + ']'
    raise ConfigError(f"cannot write {type(value).__name__} as TOML")


def _section(name: str, values: Dict[str, Any]) -> List[str]:
    lines = [f"[{name}]"]
    tables = []
    for key, value in values.items():
        if value is None:
            continue
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_scalar(value)}")
    for key, value in tables:
        lines += [''] + _section(f"{name}.{key}", value)
    return lines


def canonical_toml(config: RunConfig) -> str:
    """Sections and keys in schema order; unset optional values are omitted."""
    blocks = []
    for f in fields(RunConfig):
        section = getattr(config, f.name)
        if section is None or f.name == 'name':
            continue
        blocks.append('\n'.join(_section(f.name, asdict(section))))
    return '\n\n'.join(blocks) + '\n'
