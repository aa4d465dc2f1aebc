"""Keras reference tooling for the backbone implementations.

Subcommands:
  names      print every weight key (`<layer>/<variable>`) and shape
  reference  load safetensors weights into the Keras model and write the
             globally pooled features for the fixed probe image
  convert    export published ImageNet weights into the weight cache layout

Requires tensorflow/keras, numpy and safetensors (or the pure-numpy reader
below).
"""

import argparse
import hashlib
import json
import math
import os
import struct
import sys

import numpy as np

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")
import keras  # noqa: E402

IMAGENET_STD = [0.229, 0.224, 0.225]

BUILDERS = {
    "resnet50": "ResNet50",
    "densenet121": "DenseNet121",
    "vgg16": "VGG16",
    "mobilenetv2": "MobileNetV2",
    "inceptionv3": "InceptionV3",
    "efficientnetb0": "EfficientNetB0",
    "resnet101": "ResNet101",
    "vgg19": "VGG19",
    "nasnet": "NASNetMobile",
    "densenet169": "DenseNet169",
}

DTYPES = {"F32": np.float32, "F64": np.float64, "I64": np.int64}


def read_safetensors(path):
    with open(path, "rb") as f:
        n = struct.unpack("<Q", f.read(8))[0]
        header = json.loads(f.read(n))
        body = f.read()
    out = {}
    for key, meta in header.items():
        if key == "__metadata__":
            continue
        a, b = meta["data_offsets"]
        arr = np.frombuffer(body[a:b], dtype=DTYPES[meta["dtype"]])
        out[key] = arr.reshape(meta["shape"]).astype(np.float32)
    return out


def write_safetensors(path, tensors):
    header, chunks, offset = {}, [], 0
    for key in sorted(tensors):
        arr = np.ascontiguousarray(tensors[key], dtype=np.float32)
        raw = arr.tobytes()
        header[key] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(header, separators=(",", ":")).encode()
    blob += b" " * ((8 - len(blob) % 8) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for c in chunks:
            f.write(c)


def build(name, size, weights=None):
    keras.backend.clear_session()
    ctor = getattr(keras.applications, BUILDERS[name])
    return ctor(include_top=False, weights=weights, input_shape=(size, size, 3))


def weight_items(model):
    for layer in model.layers:
        for var in layer.weights:
            yield f"{layer.name}/{var.name}", var


def probe(size, scale):
    y, x, c = np.meshgrid(np.arange(size), np.arange(size), np.arange(3), indexing="ij")
    v = 0.5 + 0.5 * np.sin(0.37 * y + 0.23 * x + 1.1 * c)
    return (scale * v).astype(np.float32)[None]


def cmd_names(args):
    model = build(args.backbone, args.size)
    for key, var in weight_items(model):
        print(key, tuple(var.shape))


def cmd_reference(args):
    fixtures = {}
    for name in args.backbones or BUILDERS:
        stored = read_safetensors(os.path.join(args.weights_dir, f"{name}.safetensors"))
        model = build(name, args.size)
        used = set()
        for key, var in weight_items(model):
            value = stored[key].reshape(tuple(var.shape))
            if name == "efficientnetb0" and key == "stem_conv/kernel":
                # weights=None omits the checkpoint's trailing input rescale;
                # folding it into the first conv is exact since padding is zero.
                value = value * np.array([1 / math.sqrt(s) for s in IMAGENET_STD])[None, None, :, None]
            var.assign(value)
            used.add(key)
        missing = sorted(set(stored) - used)
        if missing:
            sys.exit(f"{name}: unused stored tensors {missing[:5]}")
        scale = 255.0 if name == "efficientnetb0" else 1.0
        features = model(probe(args.size, scale), training=False).numpy()[0]
        pooled = features.astype(np.float64).mean(axis=(0, 1))
        fixtures[name] = {
            "input_size": args.size,
            "seed": args.seed,
            "pooled": [float(f"{v:.7g}") for v in pooled],
        }
        print(name, pooled.shape, float(np.abs(pooled).max()))
    with open(args.out, "w") as f:
        json.dump(fixtures, f, indent=1)


def cmd_convert(args):
    model = build(args.backbone, args.size, weights=args.weights)
    tensors = {key: var.numpy() for key, var in weight_items(model)}
    out_dir = os.path.join(args.cache, args.backbone)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "weights.safetensors")
    write_safetensors(path, tensors)
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    source = {
        "backbone": args.backbone,
        "origin": f"keras.applications.{BUILDERS[args.backbone]}(weights={args.weights!r})",
        "content_hash": digest,
        "surrogate": False,
    }
    with open(os.path.join(out_dir, "source.json"), "w") as f:
        json.dump(source, f, indent=2)
    print(out_dir, digest)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    n = sub.add_parser("names")
    n.add_argument("backbone", choices=BUILDERS)
    n.add_argument("--size", type=int, default=96)
    n.set_defaults(func=cmd_names)

    r = sub.add_parser("reference")
    r.add_argument("--weights-dir", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--size", type=int, default=96)
    r.add_argument("--seed", type=int, default=7)
    r.add_argument("--backbones", nargs="*")
    r.set_defaults(func=cmd_reference)

    c = sub.add_parser("convert")
    c.add_argument("backbone", choices=BUILDERS)
    c.add_argument("--cache", required=True)
    c.add_argument("--weights", default="imagenet", help="'imagenet' or a path to an .h5 file")
    c.add_argument("--size", type=int, default=224)
    c.set_defaults(func=cmd_convert)

    args = p.parse_args()
    args.func(args)


if __name__ == "__main__":
    main()
