from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .denoiser import DenoiserConfig, ToyDenoiser, predict_noise
from .scenes import (
    PALETTE,
    PhraseSpec,
    PlacementError,
    SceneSpec,
    SyntheticScene,
    make_manifest,
    make_scene,
    phrase_token_indices,
    read_manifest,
    scene_from_spec_line,
)
from .schedule import NoiseSchedule, ScheduleError, forward_noise
from .training import TrainingError, TrainResult, train
from .vocab import DEFAULT_VOCAB, TokenVocabulary

__all__ = [
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "DenoiserConfig",
    "ToyDenoiser",
    "predict_noise",
    "PALETTE",
    "PhraseSpec",
    "PlacementError",
    "SceneSpec",
    "SyntheticScene",
    "make_manifest",
    "make_scene",
    "phrase_token_indices",
    "read_manifest",
    "scene_from_spec_line",
    "NoiseSchedule",
    "ScheduleError",
    "forward_noise",
    "TrainingError",
    "TrainResult",
    "train",
    "DEFAULT_VOCAB",
    "TokenVocabulary",
]
