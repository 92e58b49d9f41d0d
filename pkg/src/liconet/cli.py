"""Command-line surface: init, info, check, linearize, quantize, run, verify.

Exit codes: 0 ok, 1 verification/operational failure, 2 usage.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .decoder import softmax
from .errors import ModelFileError, NotLinearizableError
from .frontend import FeatureStream
from .linearize import check_linearizable, linearize_network
from .model import (
    LiCoNet,
    MlpNet,
    StreamingNetwork,
    bias_count,
    build_lico_net,
    build_mlp,
    count_macs_per_step,
    count_params,
    layer_plan,
    network_forward,
)
from .modelfile import Model, default_model, load_model, save_model
from .quantize import calibrate_activations, quantize_network
from .runtime import make_engine, read_wav, run_stream
from .tensor import Tensor2D

LICO_PRESETS = {
    "large": dict(input_features=40, n_blocks=5, w=32, e=6, kernel=5, n_classes=11),
    "small": dict(input_features=40, n_blocks=5, w=16, e=4, kernel=4, n_classes=11),
}
MLP_PRESETS = {
    "large": dict(input_frames=21, input_features=40, h1=80, h2=320, n_classes=11),
    "small": dict(input_frames=21, input_features=40, h1=40, h2=320, n_classes=11),
}


def _cmd_init(args) -> int:
    if args.arch == "lico":
        p = LICO_PRESETS[args.preset]
        net = build_lico_net(
            p["input_features"], p["n_blocks"], p["w"], p["e"], p["kernel"],
            args.stride, p["n_classes"], args.seed,
        )
    else:
        p = MLP_PRESETS[args.preset]
        net = build_mlp(
            p["input_frames"], p["input_features"], p["h1"], p["h2"], p["n_classes"], args.seed
        )
    save_model(default_model(net, first_stride=args.stride), args.out)
    print(f"wrote {args.arch} {args.preset} model (stride {args.stride}) to {args.out}")
    return 0


def _cmd_info(args) -> int:
    model = load_model(args.model)
    net = model.net
    params = count_params(net)
    macs = count_macs_per_step(net)
    print(f"kind {model.kind}, stride {model.first_stride}")
    print(f"params {params}, macs {macs}")
    print(f"receptive field {model.receptive_field} frames")
    print(f"{'layer':<16}{'shape':<18}{'stride':<8}{'act':<6}{'params':<10}{'macs':<10}")
    for name, shape, stride, act, p, m in _layer_rows(model):
        print(f"{name:<16}{shape:<18}{stride:<8}{act:<6}{p:<10}{m:<10}")
    return 0


def _layer_rows(model: Model):
    net = model.net
    if isinstance(net, (LiCoNet, MlpNet)):
        stride = model.first_stride if isinstance(net, MlpNet) else None
        for entry in layer_plan(net, stride):
            l = entry.layer
            yield (entry.name, f"{l.out_channels}x{l.in_channels}x{l.kernel}",
                   l.stride, l.activation, l.param_count, l.mac_count)
    else:
        for s in net.stages:
            l = s.qlayer if hasattr(s, "qlayer") else s.layer
            yield (s.name, f"{l.in_dim}->{l.out_dim}", s.stride, l.activation,
                   l.param_count, l.mac_count)
        l = net.classifier
        yield ("classifier", f"{l.in_dim}->{l.out_dim}", 1, l.activation,
               l.param_count, l.mac_count)


def _cmd_check(args) -> int:
    model = load_model(args.model)
    net = model.net
    if isinstance(net, (LiCoNet, MlpNet)):
        report = check_linearizable(net, args.chunk)
        if report.compliant:
            print(f"compliant: chunk size {args.chunk} linearizes this model")
            return 0
        print("not linearizable:")
        for layer_id, reason in report.violations:
            print(f"  {layer_id}: {reason}")
        return 1
    if net.chunk_size == args.chunk:
        print(f"compliant: pipeline was linearized at chunk size {args.chunk}")
        return 0
    print(f"not linearizable: pipeline chunk size is {net.chunk_size}, not {args.chunk}")
    return 1


def _cmd_linearize(args) -> int:
    model = load_model(args.model)
    if not isinstance(model.net, (LiCoNet, MlpNet)):
        print(f"error: {args.model} already holds a {model.kind} pipeline", file=sys.stderr)
        return 1
    lnet = linearize_network(model.net, model.first_stride)
    save_model(Model(lnet, model.frontend, model.decoder, model.first_stride), args.out)
    print(f"wrote linearized pipeline ({len(lnet.stages)} stages + classifier) to {args.out}")
    return 0


def _cmd_quantize(args) -> int:
    model = load_model(args.model)
    if isinstance(model.net, (LiCoNet, MlpNet)):
        lnet = linearize_network(model.net, model.first_stride)
    elif hasattr(model.net, "stages") and not hasattr(model.net, "input_params"):
        lnet = model.net.copy()
        lnet.reset()
    else:
        print(f"error: {args.model} is already quantized", file=sys.stderr)
        return 1
    pcm = read_wav(args.calib, model.frontend.sample_rate)
    features = FeatureStream(model.frontend).push(pcm)
    ranges = calibrate_activations(lnet, Tensor2D(features))
    qnet = quantize_network(lnet, ranges)
    save_model(Model(qnet, model.frontend, model.decoder, model.first_stride), args.out)
    print(f"wrote int8 pipeline calibrated on {features.shape[1]} frames to {args.out}")
    return 0


def _cmd_run(args) -> int:
    model = load_model(args.model)
    pcm = read_wav(args.wav, model.frontend.sample_rate)
    dump = open(args.posteriors, "w") if args.posteriors else None
    try:
        for res in run_stream(model, [pcm], engine=args.engine, threshold=args.threshold):
            if dump:
                probs = " ".join(f"{p:.6f}" for p in res.posterior.probs)
                dump.write(f"{res.step} {probs}\n")
            if res.event is not None:
                print(f"t={res.time_s:.3f} score={res.event.score:.4f}")
    finally:
        if dump:
            dump.close()
    return 0


def _cmd_verify(args) -> int:
    model = load_model(args.model)
    net = model.net
    if not isinstance(net, (LiCoNet, MlpNet)):
        print(f"error: verify needs a float model, file holds {model.kind!r}", file=sys.stderr)
        return 1
    t = model.first_stride
    rng = np.random.default_rng(args.seed)
    fs = None if isinstance(net, LiCoNet) else t
    stream = rng.normal(0.0, 1.0, size=(net.input_features, args.steps * t))

    conv_eng = StreamingNetwork(net, first_stride=fs)
    lin_eng = linearize_network(net, t)
    conv_out, lin_out = [], []
    for j in range(args.steps):
        chunk = stream[:, j * t : (j + 1) * t]
        conv_out.append(conv_eng.step_array(chunk))
        lin_out.append(lin_eng.step_array(chunk))
    conv_out = np.concatenate(conv_out, axis=1)
    lin_out = np.concatenate(lin_out, axis=1)

    from .model import receptive_field

    pad = receptive_field(net, fs) - t
    padded = np.concatenate([np.zeros((net.input_features, pad)), stream], axis=1)
    batch_out = network_forward(net, Tensor2D(padded), fs).data

    dev_batch = float(np.max(np.abs(conv_out - batch_out)))
    dev_linear = float(np.max(np.abs(lin_out - conv_out)))

    lnet = linearize_network(net, t)
    ranges = calibrate_activations(lnet, Tensor2D(stream))
    qnet = quantize_network(lnet, ranges)
    lnet.reset()
    drift = np.zeros(net.n_classes)
    for j in range(args.steps):
        chunk = stream[:, j * t : (j + 1) * t]
        pf = softmax(lnet.step_array(chunk))
        pq = softmax(qnet.step_array(chunk))
        drift += np.abs(pf - pq)
    dev_quant = float(np.max(drift / args.steps))

    ok = True
    for name, dev, limit in (
        ("streaming vs batch", dev_batch, 1e-5),
        ("linearized vs streaming", dev_linear, 1e-6),
        ("int8 mean posterior drift", dev_quant, 0.05),
    ):
        status = "ok" if dev <= limit else "FAIL"
        if dev > limit:
            ok = False
        print(f"{name}: max deviation {dev:.3e} (limit {limit:g}) {status}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liconet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="build a seeded random model file")
    p.add_argument("--arch", choices=("lico", "mlp"), required=True)
    p.add_argument("--preset", choices=("large", "small"), required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("info", help="print parameter/MAC accounting and layers")
    p.add_argument("model")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser("check", help="report whether a chunk size linearizes the model")
    p.add_argument("model")
    p.add_argument("--chunk", type=int, required=True)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("linearize", help="convert to the dense per-step pipeline")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_linearize)

    p = sub.add_parser("quantize", help="calibrate on a WAV and quantize to int8")
    p.add_argument("model")
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("run", help="stream a WAV and print detection events")
    p.add_argument("model")
    p.add_argument("--wav", required=True)
    p.add_argument("--engine", choices=("conv", "linear", "int8"), default="linear")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--posteriors", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="run the engine-equivalence suites")
    p.add_argument("model")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelFileError, NotLinearizableError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
