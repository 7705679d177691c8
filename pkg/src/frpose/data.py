"""Datasets: skeleton definitions, synthetic multi-person scenes, image and
annotation IO, and training-crop sampling.

The synthetic generator draws stick figures whose joints are known exactly,
so decoding accuracy can be measured against noise-free ground truth.  Bones
are dim capsules and each joint carries a bright Gaussian blob, which keeps
every intensity maximum at an annotated joint; scenes may contain several
overlapping people on a noisy background.

Annotations round-trip through a small JSON dialect compatible with COCO
keypoint files (images / annotations / categories, flat ``[x, y, v]``
keypoint triples, 1-indexed bones) and images through binary PPM, so a
dataset on disk is a manifest, one JSON file, and a folder of PPMs.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
from typing import Optional, Sequence

import numpy as np

from .heatmaps import JointSet
from .transforms import CropTransform, build_crop_transform, transform_joints, warp_image

__all__ = [
    "Skeleton",
    "TOY_SKELETON",
    "COCO_SKELETON",
    "skeleton_by_name",
    "PersonInstance",
    "ImageInfo",
    "AnnotationSet",
    "AnnotationError",
    "SyntheticSpec",
    "generate_synthetic",
    "write_ppm",
    "read_ppm",
    "save_annotations",
    "load_annotations",
    "write_dataset",
    "load_dataset",
    "AugmentPolicy",
    "sample_augmentation",
    "make_crop",
]


class AnnotationError(ValueError):
    """Raised when an annotation file fails validation."""


@dataclasses.dataclass(frozen=True)
class Skeleton:
    name: str
    joint_names: tuple[str, ...]
    bones: tuple[tuple[int, int], ...]

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def flip_pairs(self) -> tuple[tuple[int, int], ...]:
        """(left, right) index pairs derived from joint-name prefixes."""
        index = {name: i for i, name in enumerate(self.joint_names)}
        pairs = []
        for name, i in index.items():
            if name.startswith("left_"):
                j = index.get("right_" + name[len("left_"):])
                if j is not None:
                    pairs.append((i, j))
        return tuple(sorted(pairs))


TOY_SKELETON = Skeleton(
    name="toy",
    joint_names=("head", "neck", "left_hand", "right_hand",
                 "chest", "pelvis", "left_foot", "right_foot"),
    bones=((0, 1), (1, 4), (4, 5), (1, 2), (1, 3), (5, 6), (5, 7)),
)

COCO_SKELETON = Skeleton(
    name="coco",
    joint_names=(
        "nose", "left_eye", "right_eye", "left_ear", "right_ear",
        "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
        "left_wrist", "right_wrist", "left_hip", "right_hip",
        "left_knee", "right_knee", "left_ankle", "right_ankle"),
    bones=(
        (15, 13), (13, 11), (16, 14), (14, 12), (11, 12), (5, 11), (6, 12),
        (5, 6), (5, 7), (6, 8), (7, 9), (8, 10), (1, 2), (0, 1), (0, 2),
        (1, 3), (2, 4), (3, 5), (4, 6)),
)

_SKELETONS = {s.name: s for s in (TOY_SKELETON, COCO_SKELETON)}


def skeleton_by_name(name: str) -> Skeleton:
    try:
        return _SKELETONS[name]
    except KeyError:
        raise ValueError(f"unknown skeleton {name!r}; have {sorted(_SKELETONS)}")


@dataclasses.dataclass
class PersonInstance:
    """One annotated person in original-image coordinates."""

    instance_id: int
    image_id: int
    xy: np.ndarray          # (K, 2) float64
    visibility: np.ndarray  # (K,) int, 0 unlabeled / 1 occluded / 2 visible
    bbox: tuple[float, float, float, float]   # x, y, w, h
    area: float

    def joint_set(self) -> JointSet:
        return JointSet(xy=self.xy.copy(), visibility=self.visibility.copy(),
                        frame="original")


@dataclasses.dataclass
class ImageInfo:
    image_id: int
    height: int
    width: int
    file_name: str = ""


@dataclasses.dataclass
class AnnotationSet:
    skeleton: Skeleton
    images: dict[int, ImageInfo]
    instances: list[PersonInstance]

    def by_image(self, image_id: int) -> list[PersonInstance]:
        return [p for p in self.instances if p.image_id == image_id]


# --------------------------------------------------------------------------
# synthetic scenes


@dataclasses.dataclass
class SyntheticSpec:
    num_images: int = 8
    canvas: tuple[int, int] = (192, 256)       # (height, width)
    min_people: int = 1
    max_people: int = 2
    skeleton: str = "toy"
    noise: float = 0.15
    blob_radius: float = 2.0
    bone_thickness: float = 1.4
    seed: int = 0


def _stamp_blob(image, color, cx, cy, radius):
    """Max-blend a Gaussian bump so its peak stays exactly at (cx, cy)."""
    _, height, width = image.shape
    reach = int(np.ceil(3.0 * radius))
    x0 = max(int(np.floor(cx)) - reach, 0)
    x1 = min(int(np.ceil(cx)) + reach, width - 1)
    y0 = max(int(np.floor(cy)) - reach, 0)
    y1 = min(int(np.ceil(cy)) + reach, height - 1)
    if x0 > x1 or y0 > y1:
        return
    ys = np.arange(y0, y1 + 1)[:, None]
    xs = np.arange(x0, x1 + 1)[None, :]
    bump = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * radius ** 2))
    patch = color[:, None, None] * bump[None]
    region = image[:, y0:y1 + 1, x0:x1 + 1]
    np.maximum(region, patch.astype(region.dtype), out=region)


def _stamp_capsule(image, color, p, q, thickness):
    """Flat-intensity segment from p to q rendered as overlapping discs."""
    steps = max(int(np.ceil(np.hypot(*(q - p)) / (0.5 * thickness))), 1)
    for t in np.linspace(0.0, 1.0, steps + 1):
        cx, cy = p + t * (q - p)
        _, height, width = image.shape
        reach = int(np.ceil(thickness))
        x0 = max(int(np.floor(cx)) - reach, 0)
        x1 = min(int(np.ceil(cx)) + reach, width - 1)
        y0 = max(int(np.floor(cy)) - reach, 0)
        y1 = min(int(np.ceil(cy)) + reach, height - 1)
        if x0 > x1 or y0 > y1:
            continue
        ys = np.arange(y0, y1 + 1)[:, None]
        xs = np.arange(x0, x1 + 1)[None, :]
        disc = ((xs - cx) ** 2 + (ys - cy) ** 2) <= thickness ** 2
        patch = color[:, None, None] * disc[None]
        region = image[:, y0:y1 + 1, x0:x1 + 1]
        np.maximum(region, patch.astype(region.dtype), out=region)


def _sample_toy_pose(rng, canvas, anchor=None):
    height, width = canvas
    span = 0.22 * min(height, width) * rng.uniform(0.8, 1.3)
    if anchor is None:
        center = np.array([rng.uniform(0.3, 0.7) * width,
                           rng.uniform(0.35, 0.65) * height])
    else:
        center = anchor + rng.uniform(-0.5, 0.5, 2) * span
    lean = rng.uniform(-0.25, 0.25)

    def polar(origin, length, angle):
        return origin + length * np.array([np.sin(angle), -np.cos(angle)])

    pelvis = center + np.array([0.0, 0.6 * span])
    chest = polar(pelvis, 0.8 * span, lean)
    neck = polar(chest, 0.35 * span, lean + rng.uniform(-0.15, 0.15))
    head = polar(neck, 0.35 * span, lean + rng.uniform(-0.2, 0.2))
    left_hand = polar(neck, 0.75 * span, lean + rng.uniform(0.5, 1.6))
    right_hand = polar(neck, 0.75 * span, lean - rng.uniform(0.5, 1.6))
    # legs hang downward: rotate the up direction by half a turn
    left_foot = polar(pelvis, 0.85 * span, np.pi - rng.uniform(0.1, 0.5))
    right_foot = polar(pelvis, 0.85 * span, np.pi + rng.uniform(0.1, 0.5))
    xy = np.stack([head, neck, left_hand, right_hand,
                   chest, pelvis, left_foot, right_foot])
    xy[:, 0] = np.clip(xy[:, 0], 2.0, width - 3.0)
    xy[:, 1] = np.clip(xy[:, 1], 2.0, height - 3.0)
    return xy


def _sample_coco_pose(rng, canvas, anchor=None):
    """Rough 17-joint figure built on top of the toy pose geometry."""
    toy = _sample_toy_pose(rng, canvas, anchor)
    head, neck, lhand, rhand, chest, pelvis, lfoot, rfoot = toy
    up = neck - chest
    side = np.array([-up[1], up[0]])
    norm = np.linalg.norm(side) + 1e-9
    side = side / norm * 0.2 * np.linalg.norm(pelvis - neck)
    xy = np.stack([
        head,                       # nose
        head - 0.3 * side,          # left_eye
        head + 0.3 * side,          # right_eye
        head - 0.6 * side,          # left_ear
        head + 0.6 * side,          # right_ear
        neck - side,                # left_shoulder
        neck + side,                # right_shoulder
        (neck - side + lhand) / 2,  # left_elbow
        (neck + side + rhand) / 2,  # right_elbow
        lhand,                      # left_wrist
        rhand,                      # right_wrist
        pelvis - side,              # left_hip
        pelvis + side,              # right_hip
        (pelvis - side + lfoot) / 2,
        (pelvis + side + rfoot) / 2,
        lfoot,
        rfoot,
    ])
    height, width = canvas
    xy[:, 0] = np.clip(xy[:, 0], 2.0, width - 3.0)
    xy[:, 1] = np.clip(xy[:, 1], 2.0, height - 3.0)
    return xy


def generate_synthetic(spec: SyntheticSpec):
    """Returns (images, annotations): ``images`` maps id -> (3, H, W) float32
    in [0, 1]; every person's joints, box, and area are exact."""
    rng = np.random.default_rng(spec.seed)
    skeleton = skeleton_by_name(spec.skeleton)
    sample_pose = (_sample_toy_pose if skeleton.name == "toy"
                   else _sample_coco_pose)
    height, width = spec.canvas
    images: dict[int, np.ndarray] = {}
    infos: dict[int, ImageInfo] = {}
    instances: list[PersonInstance] = []
    next_instance = 1
    for image_id in range(1, spec.num_images + 1):
        canvas = rng.uniform(0.0, spec.noise,
                             (3, height, width)).astype(np.float32)
        count = int(rng.integers(spec.min_people, spec.max_people + 1))
        anchor = None
        for _ in range(count):
            xy = sample_pose(rng, spec.canvas, anchor)
            anchor = xy.mean(axis=0)   # later people crowd the first one
            color = rng.uniform(0.55, 1.0, 3)
            for a, b in skeleton.bones:
                _stamp_capsule(canvas, 0.5 * color, xy[a], xy[b],
                               spec.bone_thickness)
            for j in range(skeleton.num_joints):
                _stamp_blob(canvas, color, xy[j, 0], xy[j, 1],
                            spec.blob_radius)
            pad = spec.blob_radius + 1.0
            x0, y0 = xy.min(axis=0) - pad
            x1, y1 = xy.max(axis=0) + pad
            bbox = (float(x0), float(y0), float(x1 - x0), float(y1 - y0))
            visibility = np.full(skeleton.num_joints, 2, dtype=np.int64)
            # occasionally mark a joint occluded (still labeled)
            if rng.uniform() < 0.3:
                visibility[int(rng.integers(skeleton.num_joints))] = 1
            instances.append(PersonInstance(
                instance_id=next_instance, image_id=image_id,
                xy=xy.astype(np.float64), visibility=visibility,
                bbox=bbox, area=float(bbox[2] * bbox[3])))
            next_instance += 1
        images[image_id] = np.clip(canvas, 0.0, 1.0)
        infos[image_id] = ImageInfo(image_id=image_id, height=height,
                                    width=width,
                                    file_name=f"img_{image_id:06d}.ppm")
    return images, AnnotationSet(skeleton=skeleton, images=infos,
                                 instances=instances)


# --------------------------------------------------------------------------
# image and annotation IO


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, 8 bits per channel; input is (3, H, W) float in [0, 1]."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {image.shape}")
    _, height, width = image.shape
    levels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(levels.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":           # comment to end of line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported max value {maxval}")
    pos += 1   # single whitespace byte after the header
    raw = np.frombuffer(blob, dtype=np.uint8, count=width * height * 3,
                        offset=pos)
    pixels = raw.reshape(height, width, 3).transpose(2, 0, 1)
    return (pixels.astype(np.float32) / 255.0)


def save_annotations(path, annotations: AnnotationSet) -> None:
    skeleton = annotations.skeleton
    doc = {
        "images": [
            {"id": info.image_id, "height": info.height, "width": info.width,
             "file_name": info.file_name}
            for info in annotations.images.values()
        ],
        "annotations": [
            {
                "id": p.instance_id,
                "image_id": p.image_id,
                "category_id": 1,
                "keypoints": [round(float(v), 6) for trip in
                              zip(p.xy[:, 0], p.xy[:, 1], p.visibility)
                              for v in trip],
                "num_keypoints": int((p.visibility > 0).sum()),
                "bbox": [round(float(v), 6) for v in p.bbox],
                "area": round(float(p.area), 6),
            }
            for p in annotations.instances
        ],
        "categories": [{
            "id": 1,
            "name": "person",
            "keypoints": list(skeleton.joint_names),
            "skeleton": [[a + 1, b + 1] for a, b in skeleton.bones],
        }],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_annotations(path) -> AnnotationSet:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        category = doc["categories"][0]
        joint_names = tuple(category["keypoints"])
        bones = tuple((a - 1, b - 1) for a, b in category.get("skeleton", []))
    except (KeyError, IndexError, TypeError) as exc:
        raise AnnotationError(f"{path}: missing person category: {exc}")
    skeleton = Skeleton(name=category.get("name", "person"),
                        joint_names=joint_names, bones=bones)
    for known in _SKELETONS.values():
        if known.joint_names == joint_names:
            skeleton = known
            break
    images = {}
    for entry in doc.get("images", []):
        try:
            images[int(entry["id"])] = ImageInfo(
                image_id=int(entry["id"]), height=int(entry["height"]),
                width=int(entry["width"]),
                file_name=str(entry.get("file_name", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{path}: bad image record {entry!r}: {exc}")
    instances = []
    for entry in doc.get("annotations", []):
        ident = entry.get("id", "<missing id>")
        try:
            flat = np.asarray(entry["keypoints"], dtype=np.float64)
            if flat.size != 3 * len(joint_names):
                raise AnnotationError(
                    f"{path}: annotation {ident} has {flat.size} keypoint "
                    f"values, expected {3 * len(joint_names)}")
            triples = flat.reshape(-1, 3)
            bbox = tuple(float(v) for v in entry["bbox"])
            if len(bbox) != 4:
                raise AnnotationError(
                    f"{path}: annotation {ident} bbox needs 4 values")
            image_id = int(entry["image_id"])
            if image_id not in images:
                raise AnnotationError(
                    f"{path}: annotation {ident} references unknown image "
                    f"{image_id}")
            instances.append(PersonInstance(
                instance_id=int(entry["id"]), image_id=image_id,
                xy=triples[:, :2].copy(),
                visibility=triples[:, 2].astype(np.int64),
                bbox=bbox, area=float(entry["area"])))
        except AnnotationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{path}: annotation {ident}: {exc}")
    return AnnotationSet(skeleton=skeleton, images=images, instances=instances)


def write_dataset(root, images: dict[int, np.ndarray],
                  annotations: AnnotationSet) -> pathlib.Path:
    """Lay out manifest + annotations.json + images/ under ``root``; returns
    the manifest path."""
    root = pathlib.Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for image_id, image in images.items():
        info = annotations.images[image_id]
        if not info.file_name:
            info.file_name = f"img_{image_id:06d}.ppm"
        write_ppm(root / "images" / info.file_name, image)
    save_annotations(root / "annotations.json", annotations)
    manifest = root / "manifest.txt"
    with open(manifest, "w") as fh:
        fh.write("annotations annotations.json\n")
        for image_id in sorted(images):
            name = annotations.images[image_id].file_name
            fh.write(f"image {image_id} images/{name}\n")
    return manifest


def load_dataset(manifest_path):
    manifest_path = pathlib.Path(manifest_path)
    root = manifest_path.parent
    annotations = None
    image_paths: dict[int, pathlib.Path] = {}
    with open(manifest_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            kind, *rest = line.split()
            if kind == "annotations" and len(rest) == 1:
                annotations = load_annotations(root / rest[0])
            elif kind == "image" and len(rest) == 2:
                image_paths[int(rest[0])] = root / rest[1]
            else:
                raise AnnotationError(
                    f"{manifest_path}:{lineno}: unrecognized line {line!r}")
    if annotations is None:
        raise AnnotationError(f"{manifest_path}: no annotations line")
    images = {image_id: read_ppm(path)
              for image_id, path in image_paths.items()}
    return images, annotations


# --------------------------------------------------------------------------
# crop sampling


@dataclasses.dataclass
class AugmentPolicy:
    flip_prob: float = 0.5
    max_rotation_deg: float = 40.0
    scale_low: float = 0.7
    scale_high: float = 1.3
    enabled: bool = True


def sample_augmentation(policy: AugmentPolicy, rng) -> dict:
    if not policy.enabled:
        return {"scale": 1.0, "rotation_deg": 0.0, "flip": False}
    return {
        "scale": float(rng.uniform(policy.scale_low, policy.scale_high)),
        "rotation_deg": float(rng.uniform(-policy.max_rotation_deg,
                                          policy.max_rotation_deg)),
        "flip": bool(rng.uniform() < policy.flip_prob),
    }


def make_crop(image: np.ndarray, person: PersonInstance, skeleton: Skeleton,
              out_size: tuple[int, int], margin: float = 1.25,
              augment: Optional[dict] = None):
    """Warp one person into a training crop.

    Returns (crop, joints, transform): the (3, h, w) float32 crop, the
    joints mapped into crop coordinates with anything landing outside the
    crop marked unlabeled, and the transform for mapping results back.
    """
    params = augment or {"scale": 1.0, "rotation_deg": 0.0, "flip": False}
    transform = build_crop_transform(
        person.bbox, out_size, margin=margin, scale=params["scale"],
        rotation_deg=params["rotation_deg"], flip=params["flip"])
    crop = warp_image(image, transform, out_size)
    joints = transform_joints(person.joint_set(), transform,
                              skeleton.flip_pairs)
    out_h, out_w = out_size
    xy = joints.xy
    outside = ((xy[:, 0] < -0.5) | (xy[:, 0] > out_w - 0.5)
               | (xy[:, 1] < -0.5) | (xy[:, 1] > out_h - 0.5))
    visibility = joints.visibility.copy()
    visibility[outside] = 0
    joints = JointSet(xy=xy, visibility=visibility, frame=joints.frame)
    return crop, joints, transform
