"""Rearrange a BTAD product folder into the MVTec-AD layout.

BTAD ships `<product>/train/ok`, `<product>/test/{ok,ko}` and
`<product>/ground_truth/ko`; the loader expects `train/good`,
`test/{good,<defect>}` and `ground_truth/<defect>/<stem>_mask.png`.
"""

import argparse
import shutil
from pathlib import Path

from PIL import Image

IMAGE_EXT = {".png", ".bmp", ".jpg", ".jpeg"}


def images(d: Path):
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXT) if d.is_dir() else []


def to_png(src: Path, dst: Path, mode: str = "RGB") -> None:
    dst.parent.mkdir(parents=True, exist_ok=True)
    Image.open(src).convert(mode).save(dst.with_suffix(".png"))


def convert(src: Path, dst: Path, defect: str) -> None:
    for p in images(src / "train" / "ok"):
        to_png(p, dst / "train" / "good" / p.name)
    for p in images(src / "test" / "ok"):
        to_png(p, dst / "test" / "good" / p.name)
    masks = {m.stem: m for m in images(src / "ground_truth" / "ko")}
    for p in images(src / "test" / "ko"):
        to_png(p, dst / "test" / defect / p.name)
        if p.stem in masks:
            to_png(masks[p.stem], dst / "ground_truth" / defect / f"{p.stem}_mask.png", "L")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("product", type=Path, help="BTAD product directory, e.g. BTAD/01")
    ap.add_argument("out", type=Path, help="destination root; the category is created inside")
    ap.add_argument("--category", help="category name (defaults to btad_<product>)")
    ap.add_argument("--defect", default="ko")
    args = ap.parse_args()
    dst = args.out / (args.category or f"btad_{args.product.name}")
    if dst.exists():
        shutil.rmtree(dst)
    convert(args.product, dst, args.defect)
    print(dst)


if __name__ == "__main__":
    main()
