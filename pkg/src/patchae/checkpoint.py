"""Checkpoint persistence for encoder and decoder.

The container is an NPZ archive: one NPY entry per named state tensor
(``encoder/<name>`` and ``decoder/<name>``; NPY headers record dtype and
row-major dims) plus a ``meta`` entry holding the JSON-encoded encoder and
decoder configs. Conv/linear weights are float32; the wide-resnet batch-norm
step counters are int64 and stored unchanged.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .decoder import DecoderConfig, PatchDecoder, build_decoder
from .encoder import Encoder, EncoderConfig, build_encoder
from .errors import DataError


def save_checkpoint(path: str | Path, encoder: Encoder, decoder: PatchDecoder) -> None:
    meta = {
        "format": "patchae-checkpoint",
        "version": 1,
        "encoder_config": asdict(encoder.config),
        "decoder_config": asdict(decoder.config),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, tensor in encoder.state_dict().items():
        arrays[f"encoder/{name}"] = tensor.detach().cpu().numpy()
    for name, tensor in decoder.state_dict().items():
        arrays[f"decoder/{name}"] = tensor.detach().cpu().numpy()
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[Encoder, PatchDecoder]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if "meta" not in archive:
            raise DataError(f"checkpoint {path} has no meta entry")
        meta = json.loads(archive["meta"].tobytes().decode("utf-8"))
        if meta.get("format") != "patchae-checkpoint":
            raise DataError(f"{path} is not a patchae checkpoint")
        enc_cfg_raw = dict(meta["encoder_config"])
        enc_cfg_raw["fuse_layers"] = tuple(enc_cfg_raw["fuse_layers"])
        encoder_cfg = EncoderConfig(**enc_cfg_raw)
        decoder_cfg = DecoderConfig(**meta["decoder_config"])
        # rebuild with random init, then overwrite every tensor from the file
        encoder = build_encoder(encoder_cfg, init="random", seed=0)
        decoder = build_decoder(decoder_cfg, seed=0)
        encoder_state = {}
        decoder_state = {}
        for key in archive.files:
            if key.startswith("encoder/"):
                encoder_state[key[len("encoder/") :]] = torch.from_numpy(archive[key].copy())
            elif key.startswith("decoder/"):
                decoder_state[key[len("decoder/") :]] = torch.from_numpy(archive[key].copy())
    try:
        encoder.load_state_dict(encoder_state)
        decoder.load_state_dict(decoder_state)
    except RuntimeError as exc:
        raise DataError(f"checkpoint {path} does not match its config: {exc}") from exc
    encoder.eval()
    decoder.eval()
    return encoder, decoder
