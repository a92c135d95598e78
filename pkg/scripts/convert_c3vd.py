#!/usr/bin/env python3
"""Convert a C3VD-style sequence into the endorender dataset layout.

Expected input (one sequence directory):
  NNNN_color.png   RGB frames
  NNNN_depth.tiff  16-bit depth, raw 0..65535 spanning 0..--depth-range-mm
  pose.txt         one camera-to-world pose per line, 16 comma-separated
                   values in column-major order, translation in millimeters

Images are assumed already undistorted; pass pinhole intrinsics for them.
Output: manifest.json + images/ + depth/ + poses/ with every 9th frame held
out for testing. Poses and depth are written in meters.
"""

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from endorender.data_io import write_pose
from endorender.geometry import Intrinsics, Pose


def read_poses(path: Path, unit: float) -> list[Pose]:
    poses = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        T = np.array([float(v) for v in line.replace(",", " ").split()]).reshape(4, 4).T
        poses.append(Pose(T[:3, :3], T[:3, 3] * unit))
    return poses


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("src", type=Path)
    p.add_argument("out", type=Path)
    for k in ("fx", "fy", "cx", "cy"):
        p.add_argument(f"--{k}", type=float, required=True)
    p.add_argument("--depth-range-mm", type=float, default=100.0)
    p.add_argument("--pose-unit", type=float, default=1e-3, help="multiplier taking pose translation to meters")
    p.add_argument("--stride", type=int, default=1, help="keep every k-th frame")
    args = p.parse_args(argv)

    colors = sorted(args.src.glob("*_color.png"))
    poses = read_poses(args.src / "pose.txt", args.pose_unit)
    if not colors or len(poses) < len(colors):
        print(f"error: {len(colors)} color frames but {len(poses)} poses", file=sys.stderr)
        return 1
    w, h = Image.open(colors[0]).size
    K = Intrinsics(args.fx, args.fy, args.cx, args.cy, w, h)
    for sub in ("images", "depth", "poses"):
        (args.out / sub).mkdir(parents=True, exist_ok=True)

    entries = []
    for k, color in enumerate(colors[::args.stride]):
        src_idx = k * args.stride
        stem = color.name.split("_")[0]
        depth = args.src / f"{stem}_depth.tiff"
        if not depth.exists():
            print(f"error: missing {depth}", file=sys.stderr)
            return 1
        raw = np.asarray(Image.open(depth)).astype(np.uint16)
        Image.fromarray(np.asarray(Image.open(color).convert("RGB"))).save(args.out / "images" / f"{k:04d}.png")
        Image.fromarray(raw).save(args.out / "depth" / f"{k:04d}.png")
        write_pose(args.out / "poses" / f"{k:04d}.txt", poses[src_idx])
        entries.append({"id": k, "image": f"images/{k:04d}.png", "depth": f"depth/{k:04d}.png",
                        "pose": f"poses/{k:04d}.txt", "split": "test" if k % 9 == 8 else "train"})

    meta = {"intrinsics": K.to_dict(), "depth_scale": args.depth_range_mm * 1e-3 / 65535,
            "forward_axis": "+z", "frames": entries, "source": str(args.src)}
    (args.out / "manifest.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote {len(entries)} frames to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
