"""Channel-wise knowledge distillation toolkit.

Arrays are float64 NumPy arrays laid out as (n, c, h, w); label maps are int32
arrays of shape (n, h, w) using ``IGNORE`` for unlabelled pixels. Experiment
configs are plain dicts with the same schema as the JSON files the ``cwkd``
command-line tool reads.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Sequence

from . import _cwkd
from ._cwkd import (  # noqa: F401
    IGNORE,
    FormatError,
    NormalizationError,
    ParameterError,
    ShapeError,
    UnsupportedError,
    UsageError,
    attention_transfer,
    channel_distribution,
    channelwise_bhattacharyya,
    channelwise_kl,
    channelwise_l2,
    complexity,
    complexity_csv,
    cross_entropy,
    generate,
    gradcheck,
    ifvd,
    local_similarity,
    mimic_l2,
    miou,
    pairwise_affinity,
    pixelwise_kl,
)

__version__ = _cwkd.__version__


def default_config() -> dict:
    """The default experiment: CE plus CW_KL on the feature tap (alpha 35, T 1)."""
    return json.loads(_cwkd.default_config())


def _config_json(config: dict | None) -> str:
    return _cwkd.normalize_config(json.dumps(config if config is not None else default_config()))


def _threads(threads: int | None) -> int:
    if threads is not None:
        return threads
    return max(1, int(os.environ.get("CWKD_THREADS", "1")))


def forward(checkpoint: str | os.PathLike, images):
    """(feature, score) taps of a saved network on ``images``."""
    return _cwkd.forward(os.fspath(checkpoint), images)


def gen_data(config: dict | None, out: str | os.PathLike) -> int:
    return _cwkd.run_gen_data(_config_json(config), os.fspath(out))


def train_teacher(config: dict | None, out: str | os.PathLike) -> float:
    """Trains and saves ``<out>/teacher``; returns the teacher's val mIoU."""
    return _cwkd.run_train_teacher(_config_json(config), os.fspath(out))


def distill(config: dict | None, teacher: str | os.PathLike, out: str | os.PathLike,
            threads: int | None = None) -> list[float]:
    """Best val mIoU per student seed."""
    return _cwkd.run_distill(_config_json(config), os.fspath(teacher), os.fspath(out), _threads(threads))


def compare(config: dict | None, teacher: str | os.PathLike, losses: Iterable[str] = (),
            out: str | os.PathLike = "cwkd_out", threads: int | None = None) -> str:
    return _cwkd.run_compare(_config_json(config), os.fspath(teacher), list(losses), os.fspath(out),
                             _threads(threads))


def ablate(config: dict | None, teacher: str | os.PathLike,
           grid_T: Sequence[float] = (0.01, 0.1, 1.0, 10.0, 100.0),
           grid_alpha: Sequence[float] = (0.0, 5.0, 15.0, 35.0, 50.0),
           out: str | os.PathLike = "cwkd_out", threads: int | None = None) -> str:
    return _cwkd.run_ablate(_config_json(config), os.fspath(teacher), list(grid_T), list(grid_alpha),
                            os.fspath(out), _threads(threads))


def dump_channels(config: dict | None, checkpoint: str | os.PathLike, out: str | os.PathLike,
                  temperature: float = 1.0):
    """Returns (feature, score) channel distributions for the config's first val scenes."""
    return _cwkd.run_dump_channels(_config_json(config), os.fspath(checkpoint), os.fspath(out), temperature)
