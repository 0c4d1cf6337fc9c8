"""Checkpoint container: a numpy ``.npz`` archive.

Entries:
  ``param/<name>``  float64 parameter arrays, names as in ``state_dict``
  ``alpha_bars``    cumulative schedule over the training steps
  ``meta``          JSON string: format version, denoiser config, vocabulary
"""
from __future__ import annotations

import json

import numpy as np
import torch

from .denoiser import DenoiserConfig, ToyDenoiser
from .schedule import NoiseSchedule
from .vocab import TokenVocabulary

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ToyDenoiser, schedule: NoiseSchedule, vocab: TokenVocabulary) -> None:
    arrays = {f"param/{k}": v.detach().to(torch.float64).numpy() for k, v in model.state_dict().items()}
    meta = {
        "format_version": FORMAT_VERSION,
        "denoiser": model.config.to_dict(),
        "vocab": list(vocab.tokens),
        "context_length": vocab.context_length,
    }
    with open(path, "wb") as fh:
        np.savez(fh, alpha_bars=schedule.alpha_bars, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[ToyDenoiser, NoiseSchedule, TokenVocabulary]:
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
    model = ToyDenoiser(DenoiserConfig(**meta["denoiser"]))
    state = {k[len("param/"):]: torch.as_tensor(data[k]) for k in data.files if k.startswith("param/")}
    model.load_state_dict(state)
    model.eval()
    alpha_bars = np.asarray(data["alpha_bars"], dtype=np.float64)
    schedule = NoiseSchedule(alpha_bars, np.arange(len(alpha_bars)))
    vocab = TokenVocabulary(tuple(meta["vocab"]), meta["context_length"])
    return model, schedule, vocab
