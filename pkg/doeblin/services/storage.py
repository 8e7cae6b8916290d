"""
File persistence for experiments: configs, models, references, datasets,
delimiter-separated tables, JSON-lines logs and run metadata.

Model and reference JSON uses Python's shortest round-trip float repr, so a
reload reproduces θ and q bit for bit.
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd
from pydantic import BaseModel

from doeblin import __version__
from doeblin.core.constants import TASK_LABEL
from doeblin.core.exceptions import ConfigError
from doeblin.models.chain import StateSpace
from doeblin.models.mrf import PairwiseModel, ReferenceModel
from doeblin.models.schemas import Dataset, ExperimentConfig, ModelDocument, ReferenceDocument

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_HEADER = re.compile(r"^#\s*V=(\d+)\s+K=(\d+)\s*$")
TABLE_FLOAT_FORMAT = "%.12g"


def ensure_parent(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create directory {path.parent}: {e}") from e
    return path


def _write_text(path: PathLike, text: str) -> Path:
    path = ensure_parent(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}") from e
    return path


def _read_text(path: PathLike) -> str:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    return path.read_text(encoding="utf-8")


def write_json(path: PathLike, payload: Any) -> Path:
    return _write_text(path, json.dumps(payload, indent=2, sort_keys=False) + "\n")


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e


def load_config(path: PathLike) -> ExperimentConfig:
    """Parse an experiment file; schema violations surface as pydantic ValidationError"""
    return ExperimentConfig.model_validate(read_json(path))


def save_config(path: PathLike, config: ExperimentConfig) -> Path:
    return write_json(path, config.model_dump(mode="json"))


def save_model(path: PathLike, model: PairwiseModel) -> Path:
    return write_json(path, ModelDocument.from_model(model).model_dump(by_alias=True))


def load_model(path: PathLike) -> PairwiseModel:
    return ModelDocument.model_validate(read_json(path)).to_model()


def save_reference(path: PathLike, reference: ReferenceModel) -> Path:
    return write_json(path, ReferenceDocument.from_reference(reference).model_dump(by_alias=True))


def load_reference(path: PathLike) -> ReferenceModel:
    return ReferenceDocument.model_validate(read_json(path)).to_reference()


def save_dataset(path: PathLike, dataset: Dataset) -> Path:
    """`# V=<V> K=<K>` header, then one space-separated row per line"""
    lines = [f"# V={dataset.space.num_variables} K={dataset.space.num_labels}"]
    lines.extend(" ".join(str(int(k)) for k in row) for row in dataset.rows)
    return _write_text(path, "\n".join(lines) + "\n")


def load_dataset(path: PathLike, space: Optional[StateSpace] = None) -> Dataset:
    """
    Rows of a dataset file. The header fixes the space; without one the
    caller must pass it. Blank lines and other comments are skipped.
    """
    rows: List[List[int]] = []
    for number, line in enumerate(_read_text(path).splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            match = _HEADER.match(line)
            if match:
                header = StateSpace(num_variables=int(match[1]), num_labels=int(match[2]))
                if space is not None and space != header:
                    raise ConfigError(f"{path}: header {header} does not match expected {space}")
                space = header
            continue
        try:
            rows.append([int(token) for token in line.split()])
        except ValueError as e:
            raise ConfigError(f"{path}:{number}: not an integer row") from e
    if space is None:
        raise ConfigError(f"{path}: no '# V=.. K=..' header and no state space given")
    return Dataset(space=space, rows=rows)


def write_table(path: PathLike, frame: pd.DataFrame) -> Path:
    """Tab-separated table with a header line"""
    path = ensure_parent(path)
    try:
        frame.to_csv(path, sep="\t", index=False, float_format=TABLE_FLOAT_FORMAT)
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}") from e
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    if not Path(path).is_file():
        raise ConfigError(f"file not found: {path}")
    return pd.read_csv(path, sep="\t")


def write_jsonl(path: PathLike, records: Iterable[BaseModel]) -> Path:
    lines = [record.model_dump_json() for record in records]
    return _write_text(path, "".join(line + "\n" for line in lines))


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    return [json.loads(line) for line in _read_text(path).splitlines() if line.strip()]


def write_metadata(
    out_dir: PathLike, command: str, config: ExperimentConfig, extra: Optional[Dict] = None
) -> Path:
    """metadata.json: command, config hash, task label and package version"""
    payload = {
        "command": command,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "task": TASK_LABEL,
        "version": __version__,
    }
    if extra:
        payload.update(extra)
    path = write_json(Path(out_dir) / "metadata.json", payload)
    logger.debug(f"metadata_written path={path}")
    return path
