#!/usr/bin/env python3
"""Export torchvision ResNet-50 weights into the kdctc checkpoint format.

The output is a regular kdctc checkpoint (arch resnet50, 1000-way head) that
`build_model(..., pretrained=...)` and the `--init pretrained` CLI path can
consume; the classifier head in the file is ignored and re-initialized for
the downstream class count.

Usage:
    python tools/export_resnet50.py --out resnet50_imagenet.ckpt
    python tools/export_resnet50.py --state-dict resnet50.pth --out r50.ckpt
"""

import argparse
import struct
import zlib

MAGIC = b"KDCK"
FORMAT_VERSION = 1


def _put_string(chunks, s):
    data = s.encode("utf-8")
    chunks.append(struct.pack("<I", len(data)))
    chunks.append(data)


def export(state_dict, num_classes, out_path):
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    _put_string(chunks, "resnet50")
    chunks.append(struct.pack("<I", num_classes))
    chunks.append(struct.pack("<I", 0))  # no class names

    names = [k for k in state_dict if not k.endswith("num_batches_tracked")]
    chunks.append(struct.pack("<Q", len(names)))
    for name in names:
        tensor = state_dict[name].detach().double().contiguous()
        _put_string(chunks, name)
        chunks.append(struct.pack("<I", tensor.dim()))
        for d in tensor.shape:
            chunks.append(struct.pack("<q", d))
        chunks.append(struct.pack("<Q", tensor.numel()))
        chunks.append(tensor.numpy().tobytes())

    blob = b"".join(chunks)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(out_path, "wb") as f:
        f.write(blob)
    print(f"wrote {len(names)} tensors ({len(blob) / 1e6:.1f} MB) to {out_path}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output .ckpt path")
    parser.add_argument("--state-dict", help="load weights from a .pth file instead of torchvision's download")
    args = parser.parse_args()

    import torch

    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu", weights_only=True)
        if hasattr(state, "state_dict"):
            state = state.state_dict()
    else:
        from torchvision.models import ResNet50_Weights, resnet50

        state = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1).state_dict()

    num_classes = state["fc.weight"].shape[0]
    export(state, num_classes, args.out)


if __name__ == "__main__":
    main()
