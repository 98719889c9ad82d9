"""Save/load every learned model through the shared checkpoint container."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np
import torch

from .composition import CompositionModel
from .grounding import GroundingConfig, GroundingModel, build_grounding_model
from .io import FeatureStore, load_checkpoint, save_checkpoint
from .pairwise import CaptionEncoder, SiameseComparator, StoredFeatureEncoder
from .text import Vocabulary

PAIRWISE_IMAGE = "pairwise_image"
PAIRWISE_TEXT = "pairwise_text"
COMPOSITION = "composition"
SCDM = "scdm"
SCDM_PLUS = "scdmplus"


def _state_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def _load_state(model: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    state = {k: torch.as_tensor(v, dtype=torch.float32) for k, v in tensors.items()}
    model.load_state_dict(state)


def save_pairwise(path, model: SiameseComparator, model_type: str, config: dict, log) -> None:
    save_checkpoint(path, model_type, config, _state_arrays(model), log)


def save_composition(path, model: CompositionModel, config: dict, log) -> None:
    config = dict(config, vocab=model.vocab.id_to_token[2:])
    save_checkpoint(path, COMPOSITION, config, _state_arrays(model), log)


def save_grounding(path, model: GroundingModel, vocab: Vocabulary, log) -> None:
    model_type = SCDM_PLUS if model.use_face else SCDM
    config = {"grounding": asdict(model.config), "vocab": vocab.id_to_token[2:]}
    save_checkpoint(path, model_type, config, _state_arrays(model), log)


def load_model(path, features: FeatureStore | None = None):
    """Rebuild a model from a checkpoint.

    Returns (model_type, model, config, log); pairwise-image and composition
    models need the feature store their encoder reads from.
    """
    model_type, config, tensors, log = load_checkpoint(path)
    if model_type == PAIRWISE_IMAGE:
        if features is None:
            raise ValueError("pairwise image model requires a feature store")
        model = SiameseComparator(
            StoredFeatureEncoder(features), hidden=tuple(config["hidden"])
        )
    elif model_type == PAIRWISE_TEXT:
        vocab = Vocabulary(config["vocab"])
        encoder = CaptionEncoder(vocab, config["embed_dim"], config["rnn_hidden"])
        model = SiameseComparator(encoder, hidden=tuple(config["hidden"]))
    elif model_type == COMPOSITION:
        if features is None:
            raise ValueError("composition model requires a feature store")
        vocab = Vocabulary(config["vocab"])
        model = CompositionModel(
            features, vocab, config["text_hidden"], config["embed_dim"]
        )
    elif model_type in (SCDM, SCDM_PLUS):
        vocab = Vocabulary(config["vocab"])
        gconf = GroundingConfig(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in config["grounding"].items()
        })
        model = build_grounding_model(len(vocab), gconf, use_face=model_type == SCDM_PLUS)
        model.vocab = vocab  # type: ignore[attr-defined]
    else:
        raise ValueError(f"unknown model type {model_type!r}")
    _load_state(model, tensors)
    model.eval()
    return model_type, model, config, log
