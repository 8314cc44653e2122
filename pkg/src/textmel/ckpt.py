"""Checkpoint save/load: model tensors plus enough metadata to rebuild.

The vocabulary travels inside the checkpoint (symbol list + digest) so the
inference pipeline can verify that all three models share one vocabulary.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import CheckpointMissing, CorruptCheckpoint, VocabMismatch
from .models import (
    DurationModel,
    DurationModelConfig,
    MelModel,
    MelModelConfig,
    PitchModel,
    PitchModelConfig,
)
from .tenio import read_container, write_container
from .text import Vocab

_CONFIGS = {
    "duration": DurationModelConfig,
    "pitch": PitchModelConfig,
    "mel": MelModelConfig,
}
_MODELS = {
    "duration": DurationModel,
    "pitch": PitchModel,
    "mel": MelModel,
}


def save_checkpoint(path: str | Path, model, kind: str, vocab: Vocab,
                    meta_extra: dict | None = None,
                    extra_tensors: dict | None = None) -> None:
    meta = {
        "kind": kind,
        "config": model.cfg.to_json(),
        "vocab_symbols": list(vocab.symbols),
        "vocab_sha": vocab.sha256(),
    }
    if meta_extra:
        meta.update(meta_extra)
    tensors = dict(model.state())
    if extra_tensors:
        for name, arr in extra_tensors.items():
            tensors[f"extra.{name}"] = np.asarray(arr, dtype=np.float32)
    write_container(path, tensors, meta)


def load_checkpoint(path: str | Path):
    """Returns (model, vocab, meta, extra_tensors)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointMissing(f"no checkpoint at {path}")
    tensors, meta = read_container(path)
    kind = meta.get("kind")
    if kind not in _CONFIGS:
        raise CorruptCheckpoint(f"unknown model kind {kind!r} in {path}")
    cfg = _CONFIGS[kind].from_json(meta["config"])
    model = _MODELS[kind](cfg)
    model.load_state(tensors)
    vocab = Vocab(tuple(meta["vocab_symbols"]))
    if vocab.sha256() != meta.get("vocab_sha"):
        raise VocabMismatch(f"vocabulary digest mismatch inside {path}")
    extra = {name[len("extra."):]: arr for name, arr in tensors.items()
             if name.startswith("extra.")}
    return model, vocab, meta, extra
