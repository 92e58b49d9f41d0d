"""End-to-end streaming: WAV in, feature frames, one inference step per
stride-many frames, softmax, smoothing, sliding-window score, events.

All engines share the same state protocol: prime on the first
receptive_field - stride feature frames (so the first emitted posterior
has a fully real context), then one step per chunk. A stream of F frames
therefore yields floor((F - RF) / s1) + 1 posteriors.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .decoder import DetectionEvent, KeywordDecoder, PosteriorFrame, posterior_from_logits
from .errors import ConfigError, InvalidInputError
from .frontend import FeatureStream
from .linearize import LinearizedNet, linearize_network
from .model import LiCoNet, MlpNet, StreamingNetwork
from .modelfile import Model
from .quantize import QuantizedNet

ENGINES = ("conv", "linear", "int8")


def read_wav(path, expected_rate: int = 16000) -> np.ndarray:
    """Load RIFF PCM16 mono samples as int16. Other formats are rejected."""
    with wave.open(str(path), "rb") as w:
        if w.getcomptype() != "NONE":
            raise InvalidInputError(f"compressed WAV ({w.getcomptype()}) not supported")
        if w.getsampwidth() != 2:
            raise InvalidInputError(f"need 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        if w.getnchannels() != 1:
            raise InvalidInputError(f"need mono audio, got {w.getnchannels()} channels")
        if w.getframerate() != expected_rate:
            raise InvalidInputError(
                f"need {expected_rate} Hz audio, got {w.getframerate()} Hz (no resampling)"
            )
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.int16)


def write_wav(path, samples: np.ndarray, rate: int = 16000) -> None:
    """Write int16 mono PCM; clips float input to [-1, 1)."""
    arr = np.asarray(samples)
    if arr.dtype != np.int16:
        arr = np.clip(np.round(arr * 32768.0), -32768, 32767).astype(np.int16)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(arr.astype("<i2").tobytes())


def make_engine(model: Model, engine: str):
    """Instantiate the requested execution engine with fresh state."""
    if engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}, got {engine!r}")
    net, stride = model.net, model.first_stride
    if engine == "conv":
        if not isinstance(net, (LiCoNet, MlpNet)):
            raise ConfigError(f"conv engine needs a float model, file holds {model.kind!r}")
        fs = stride if isinstance(net, MlpNet) else None
        return StreamingNetwork(net, first_stride=fs)
    if engine == "linear":
        if isinstance(net, LinearizedNet):
            dup = net.copy()
            dup.reset()
            return dup
        if isinstance(net, (LiCoNet, MlpNet)):
            return linearize_network(net, stride)
        raise ConfigError(f"linear engine needs a float or linearized model, not {model.kind!r}")
    if not isinstance(net, QuantizedNet):
        raise ConfigError(f"int8 engine needs a quantized model, file holds {model.kind!r}")
    dup = net.copy()
    dup.reset()
    return dup


@dataclass(frozen=True)
class StepResult:
    step: int
    time_s: float
    posterior: PosteriorFrame
    smoothed: PosteriorFrame
    score: float
    event: DetectionEvent | None


def run_stream(model: Model, pcm_chunks, engine: str = "linear", threshold: float | None = None):
    """Generator over inference steps for a PCM chunk iterable.

    Emits a StepResult per step; events carry the detection score at the
    upward threshold crossing. time_s is the end time of the newest audio
    sample the step consumed.
    """
    eng = make_engine(model, engine)
    cfg = model.frontend
    dcfg = model.decoder
    if threshold is not None:
        from dataclasses import replace

        dcfg = replace(dcfg, threshold=threshold)
    decoder = KeywordDecoder(dcfg)
    features = FeatureStream(cfg)
    t = model.first_stride
    prime_len = model.receptive_field - t
    pending = np.zeros((cfg.n_mels, 0))
    primed = prime_len == 0
    step = 0
    for chunk in pcm_chunks:
        frames = features.push(chunk)
        if frames.shape[1]:
            pending = np.concatenate([pending, frames], axis=1)
        if not primed:
            if pending.shape[1] < prime_len:
                continue
            eng.prime_array(pending[:, :prime_len])
            pending = pending[:, prime_len:]
            primed = True
        while pending.shape[1] >= t:
            logits = eng.step_array(pending[:, :t])
            pending = pending[:, t:]
            frame_idx = prime_len + (step + 1) * t - 1
            time_s = (frame_idx * cfg.hop_samples + cfg.window_samples) / cfg.sample_rate
            posterior = posterior_from_logits(step, logits)
            smoothed, score, event = decoder.update(posterior)
            yield StepResult(step, time_s, posterior, smoothed, score, event)
            step += 1
