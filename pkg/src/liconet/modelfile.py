"""Single-file model serialization.

Layout, all integers little-endian:

    bytes 0..3   magic "LCN1"
    bytes 4..5   format version (u16)
    bytes 6..9   manifest length in bytes (u32)
    manifest     canonical JSON (sorted keys, no whitespace)
    blobs        raw tensors, concatenated in manifest order

The manifest declares every tensor's name, dtype (f32, i8, or i32),
shape, and byte length; loading validates the whole file before any net
is constructed. Saving is deterministic: the same model always produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .conv import Conv1DLayer
from .decoder import DecoderConfig
from .errors import (
    BadMagicError,
    ConfigError,
    ManifestError,
    TruncatedError,
    VersionError,
)
from .frontend import FrontendConfig
from .linearize import LinearizedNet, Stage
from .model import LiCoBlock, LiCoNet, LinearLayer, MlpNet, conv_to_dense, receptive_field
from .quantize import QuantizedLinearLayer, QuantizedNet, _QStage
from .tensor import QuantParams

MAGIC = b"LCN1"
VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "i8": np.dtype("i1"), "i32": np.dtype("<i4")}


@dataclass(frozen=True)
class Model:
    """A network bundled with its frontend and decoder configuration."""

    net: object
    frontend: FrontendConfig
    decoder: DecoderConfig
    first_stride: int

    def __post_init__(self):
        if self.first_stride < 1:
            raise ConfigError(f"first stride must be >= 1, got {self.first_stride}")
        if isinstance(self.net, LiCoNet) and self.net.first_stride != self.first_stride:
            raise ConfigError(
                f"stored stride {self.first_stride} != block 1 stride {self.net.first_stride}"
            )
        if isinstance(self.net, (LinearizedNet, QuantizedNet)):
            if self.net.chunk_size != self.first_stride:
                raise ConfigError("stored stride must equal the pipeline chunk size")

    @property
    def kind(self) -> str:
        return {
            LiCoNet: "lico",
            MlpNet: "mlp",
            LinearizedNet: "linearized",
            QuantizedNet: "quantized",
        }[type(self.net)]

    @property
    def receptive_field(self) -> int:
        net = self.net
        if isinstance(net, (LiCoNet, MlpNet)):
            stride = self.first_stride if isinstance(net, MlpNet) else None
            return receptive_field(net, stride)
        first = net.stages[0]
        later = sum(s.kernel - 1 for s in net.stages[1:])
        return first.kernel + first.stride * later


def default_model(net, first_stride: int | None = None, threshold: float = 0.5) -> Model:
    """Wrap a bare net with identity-normalization frontend and default decoder."""
    if first_stride is None:
        first_stride = net.first_stride if isinstance(net, LiCoNet) else getattr(
            net, "chunk_size", 1
        )
    n_classes = net.n_classes
    return Model(
        net,
        FrontendConfig(),
        DecoderConfig.default(n_classes, first_stride, threshold),
        first_stride,
    )


# --- manifest assembly -----------------------------------------------------


def _tensor_entries(named):
    entries, blobs = [], []
    for name, arr, dtype in named:
        cast = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
        blob = cast.tobytes()
        entries.append(
            {"name": name, "dtype": dtype, "shape": list(arr.shape), "byte_len": len(blob)}
        )
        blobs.append(blob)
    return entries, b"".join(blobs)


def _qparams_out(p: QuantParams):
    return {"scale": p.scale, "zero_point": p.zero_point}


def _qparams_in(d) -> QuantParams:
    return QuantParams(float(d["scale"]), int(d["zero_point"]))


def _collect(model: Model):
    net = model.net
    tensors = []
    if isinstance(net, LiCoNet):
        arch = {
            "input_features": net.input_features,
            "n_classes": net.n_classes,
            "blocks": [
                {
                    "in_channels": b.in_channels,
                    "width": b.width,
                    "expansion": b.expansion,
                    "kernel": b.kernel,
                    "stride": b.stride,
                    "residual": b.residual,
                }
                for b in net.blocks
            ],
        }
        for i, blk in enumerate(net.blocks, start=1):
            for j, layer in enumerate(blk.layers, start=1):
                tensors.append((f"block{i}.conv{j}.weight", layer.weights, "f32"))
                tensors.append((f"block{i}.conv{j}.bias", layer.bias, "f32"))
        cls = conv_to_dense(net.classifier)
        tensors.append(("classifier.weight", cls.weights, "f32"))
        tensors.append(("classifier.bias", cls.bias, "f32"))
    elif isinstance(net, MlpNet):
        arch = {
            "input_frames": net.input_frames,
            "input_features": net.input_features,
            "hidden": [l.out_dim for l in net.hidden],
            "n_classes": net.n_classes,
        }
        for i, layer in enumerate(net.hidden, start=1):
            tensors.append((f"layer{i}.weight", layer.weights, "f32"))
            tensors.append((f"layer{i}.bias", layer.bias, "f32"))
        tensors.append(("classifier.weight", net.classifier.weights, "f32"))
        tensors.append(("classifier.bias", net.classifier.bias, "f32"))
    elif isinstance(net, LinearizedNet):
        arch = {
            "input_features": net.input_features,
            "n_classes": net.n_classes,
            "chunk_size": net.chunk_size,
            "stages": [
                {
                    "name": s.name,
                    "channels": s.channels,
                    "kernel": s.kernel,
                    "stride": s.stride,
                    "activation": s.layer.activation,
                    "captures_input": s.captures_input,
                    "residual_from": s.residual_from,
                }
                for s in net.stages
            ],
        }
        for s in net.stages:
            tensors.append((f"{s.name}.weight", s.layer.weights, "f32"))
            tensors.append((f"{s.name}.bias", s.layer.bias, "f32"))
        tensors.append(("classifier.weight", net.classifier.weights, "f32"))
        tensors.append(("classifier.bias", net.classifier.bias, "f32"))
    elif isinstance(net, QuantizedNet):
        arch = {
            "input_features": net.input_features,
            "n_classes": net.n_classes,
            "chunk_size": net.chunk_size,
            "input_params": _qparams_out(net.input_params),
            "stages": [
                {
                    "name": s.name,
                    "channels": s.channels,
                    "kernel": s.kernel,
                    "stride": s.stride,
                    "activation": s.qlayer.activation,
                    "captures_input": s.captures_input,
                    "residual_from": s.residual_from,
                    "weight_params": _qparams_out(s.qlayer.weight_params),
                    "in_params": _qparams_out(s.qlayer.in_params),
                    "out_params": _qparams_out(s.qlayer.out_params),
                }
                for s in net.stages
            ],
            "classifier": {
                "activation": net.classifier.activation,
                "weight_params": _qparams_out(net.classifier.weight_params),
                "in_params": _qparams_out(net.classifier.in_params),
                "out_params": _qparams_out(net.classifier.out_params),
            },
        }
        for s in net.stages:
            tensors.append((f"{s.name}.weight", s.qlayer.weights, "i8"))
            tensors.append((f"{s.name}.bias", s.qlayer.bias, "i32"))
        tensors.append(("classifier.weight", net.classifier.weights, "i8"))
        tensors.append(("classifier.bias", net.classifier.bias, "i32"))
    else:
        raise ConfigError(f"cannot serialize {type(net).__name__}")
    fe = model.frontend
    tensors.append(("frontend.norm_mean", fe.norm_mean, "f32"))
    tensors.append(("frontend.norm_std", fe.norm_std, "f32"))
    manifest = {
        "kind": model.kind,
        "first_stride": model.first_stride,
        "arch": arch,
        "frontend": {
            "sample_rate": fe.sample_rate,
            "window_ms": fe.window_ms,
            "hop_ms": fe.hop_ms,
            "n_mels": fe.n_mels,
            "fmin": fe.fmin,
            "fmax": fe.fmax,
            "log_floor": fe.log_floor,
        },
        "decoder": {
            "window_steps": model.decoder.window_steps,
            "smooth_steps": model.decoder.smooth_steps,
            "keyword_ids": list(model.decoder.keyword_ids),
            "threshold": model.decoder.threshold,
        },
    }
    return manifest, tensors


def save_model(model, path) -> None:
    """Write a model (or bare net, wrapped with defaults) to path."""
    if not isinstance(model, Model):
        model = default_model(model)
    manifest, named = _collect(model)
    entries, blob = _tensor_entries(named)
    manifest["tensors"] = entries
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        f.write(blob)


# --- loading ---------------------------------------------------------------


def _read_tensors(manifest, blob):
    offset = 0
    out = {}
    for entry in manifest["tensors"]:
        try:
            name, dtype, shape, byte_len = (
                entry["name"],
                entry["dtype"],
                tuple(entry["shape"]),
                entry["byte_len"],
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed tensor entry: {entry!r}") from exc
        if dtype not in _DTYPES:
            raise ManifestError(f"tensor {name}: unknown dtype {dtype!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * _DTYPES[dtype].itemsize
        if byte_len != expected:
            raise ManifestError(
                f"tensor {name}: shape {shape} implies {expected} bytes, manifest says {byte_len}"
            )
        if offset + byte_len > len(blob):
            raise TruncatedError(
                f"tensor {name}: file ends {offset + byte_len - len(blob)} bytes early"
            )
        arr = np.frombuffer(blob[offset : offset + byte_len], dtype=_DTYPES[dtype])
        out[name] = arr.reshape(shape).astype(
            np.float64 if dtype == "f32" else arr.dtype
        )
        offset += byte_len
    if offset != len(blob):
        raise ManifestError(f"{len(blob) - offset} unexpected trailing bytes after tensors")
    return out


def _rebuild_net(manifest, tensors):
    kind = manifest["kind"]
    arch = manifest["arch"]
    if kind == "lico":
        blocks = []
        for i, spec in enumerate(arch["blocks"], start=1):
            layers = []
            for j, act in ((1, "relu"), (2, "relu"), (3, "none")):
                layers.append(
                    Conv1DLayer(
                        tensors[f"block{i}.conv{j}.weight"],
                        tensors[f"block{i}.conv{j}.bias"],
                        spec["stride"] if j == 1 else 1,
                        act,
                    )
                )
            blocks.append(LiCoBlock(*layers, residual=spec["residual"]))
        w = tensors["classifier.weight"]
        classifier = Conv1DLayer(
            w.T.reshape(w.shape[1], w.shape[0], 1), tensors["classifier.bias"], 1, "none"
        )
        return LiCoNet(arch["input_features"], tuple(blocks), classifier)
    if kind == "mlp":
        hidden = tuple(
            LinearLayer(tensors[f"layer{i}.weight"], tensors[f"layer{i}.bias"], "relu")
            for i in range(1, len(arch["hidden"]) + 1)
        )
        classifier = LinearLayer(
            tensors["classifier.weight"], tensors["classifier.bias"], "none"
        )
        return MlpNet(arch["input_frames"], arch["input_features"], hidden, classifier)
    if kind == "linearized":
        stages = []
        for spec in arch["stages"]:
            layer = LinearLayer(
                tensors[f"{spec['name']}.weight"],
                tensors[f"{spec['name']}.bias"],
                spec["activation"],
            )
            stages.append(
                Stage(
                    spec["name"],
                    layer,
                    spec["channels"],
                    spec["kernel"],
                    spec["stride"],
                    spec["captures_input"],
                    spec["residual_from"],
                )
            )
        classifier = LinearLayer(
            tensors["classifier.weight"], tensors["classifier.bias"], "none"
        )
        return LinearizedNet(stages, classifier, arch["chunk_size"], arch["input_features"])
    if kind == "quantized":
        stages = []
        for spec in arch["stages"]:
            qlayer = QuantizedLinearLayer(
                tensors[f"{spec['name']}.weight"],
                tensors[f"{spec['name']}.bias"],
                _qparams_in(spec["weight_params"]),
                _qparams_in(spec["in_params"]),
                _qparams_in(spec["out_params"]),
                spec["activation"],
            )
            stages.append(
                _QStage(
                    spec["name"],
                    qlayer,
                    spec["channels"],
                    spec["kernel"],
                    spec["stride"],
                    spec["captures_input"],
                    spec["residual_from"],
                )
            )
        cspec = arch["classifier"]
        classifier = QuantizedLinearLayer(
            tensors["classifier.weight"],
            tensors["classifier.bias"],
            _qparams_in(cspec["weight_params"]),
            _qparams_in(cspec["in_params"]),
            _qparams_in(cspec["out_params"]),
            cspec["activation"],
        )
        return QuantizedNet(
            _qparams_in(arch["input_params"]),
            stages,
            classifier,
            arch["chunk_size"],
            arch["input_features"],
        )
    raise ManifestError(f"unknown model kind {kind!r}")


def load_model(path) -> Model:
    """Read and fully validate a model file before any inference runs."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 10:
        raise TruncatedError(f"file has {len(raw)} bytes, header needs 10")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}, expected {VERSION}")
    (manifest_len,) = struct.unpack_from("<I", raw, 6)
    if 10 + manifest_len > len(raw):
        raise TruncatedError("file ends inside the manifest")
    try:
        manifest = json.loads(raw[10 : 10 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    for key in ("kind", "arch", "frontend", "decoder", "tensors", "first_stride"):
        if key not in manifest:
            raise ManifestError(f"manifest missing required key {key!r}")
    tensors = _read_tensors(manifest, raw[10 + manifest_len :])
    try:
        net = _rebuild_net(manifest, tensors)
        fe = manifest["frontend"]
        frontend = FrontendConfig(
            sample_rate=fe["sample_rate"],
            window_ms=fe["window_ms"],
            hop_ms=fe["hop_ms"],
            n_mels=fe["n_mels"],
            fmin=fe["fmin"],
            fmax=fe["fmax"],
            log_floor=fe["log_floor"],
            norm_mean=tensors["frontend.norm_mean"],
            norm_std=tensors["frontend.norm_std"],
        )
        de = manifest["decoder"]
        decoder = DecoderConfig(
            window_steps=de["window_steps"],
            smooth_steps=de["smooth_steps"],
            keyword_ids=tuple(de["keyword_ids"]),
            threshold=de["threshold"],
        )
        return Model(net, frontend, decoder, manifest["first_stride"])
    except KeyError as exc:
        raise ManifestError(f"manifest missing field {exc}") from exc
