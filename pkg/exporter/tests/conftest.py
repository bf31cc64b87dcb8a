import numpy as np
import pytest
import torch
from scipy.io import wavfile
from transformers import Wav2Vec2Config, Wav2Vec2Model


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A deterministic stand-in frontend with the real embedding width (1024)
    and the standard 20 ms convolutional stack, small enough to run offline."""
    torch.manual_seed(1234)
    config = Wav2Vec2Config(
        hidden_size=1024,
        num_hidden_layers=2,
        num_attention_heads=16,
        intermediate_size=512,
        conv_dim=(64,) * 7,
    )
    model = Wav2Vec2Model(config)
    target = tmp_path_factory.mktemp("ckpt") / "tiny-xlsr-stand-in"
    model.save_pretrained(target)
    return str(target)


def write_wav(path, seconds=4.0, rate=16_000, freq=220.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    wave = 0.3 * np.sin(2 * np.pi * freq * t) + 0.05 * rng.standard_normal(len(t))
    wavfile.write(path, rate, (wave * 32767).astype(np.int16))
    return path


@pytest.fixture(scope="session")
def clip_4s(tmp_path_factory):
    return write_wav(tmp_path_factory.mktemp("audio") / "clip4s.wav")
