"""Export ImageNet-pretrained torchvision teachers to safetensors.

Writes resnet18.safetensors and efficientnet_b0.safetensors into the
directory given by --out, defaulting to $TEXDISTILL_WEIGHTS_DIR or
~/.cache/texdistill/weights. Classifier heads and integer buffers are dropped.
"""

import argparse
import os
from pathlib import Path

import torch
import torchvision
from safetensors.torch import save_file

MODELS = {
    "resnet18": (torchvision.models.resnet18, "IMAGENET1K_V1", ("fc.",)),
    "efficientnet_b0": (torchvision.models.efficientnet_b0, "IMAGENET1K_V1", ("classifier.",)),
}


def default_dir() -> Path:
    env = os.environ.get("TEXDISTILL_WEIGHTS_DIR")
    return Path(env) if env else Path.home() / ".cache" / "texdistill" / "weights"


def export(name: str, out: Path) -> Path:
    ctor, weights, skip = MODELS[name]
    model = ctor(weights=weights).eval()
    tensors = {
        k: v.detach().to(torch.float32).contiguous()
        for k, v in model.state_dict().items()
        if v.is_floating_point() and not k.startswith(skip)
    }
    path = out / f"{name}.safetensors"
    save_file(tensors, str(path), metadata={"source": f"torchvision {name} {weights}"})
    return path


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=default_dir())
    ap.add_argument("--arch", choices=sorted(MODELS), action="append")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.arch or sorted(MODELS):
        print(export(name, args.out))


if __name__ == "__main__":
    main()
