"""Synthetic landmark images with locally ambiguous structure.

Every landmark is drawn as the same small bright blob, so its immediate
neighbourhood says nothing about *which* landmark it is. Extra identical
blobs (distractors) are scattered at random positions. The landmarks
follow a posed template, so they can only be told apart by spatial
configuration.

On disk a dataset is a directory holding ``manifest.json``, one binary PGM
per image and one ``index,x,y`` CSV per landmark set.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

# Hub-and-fingers layout around the image centre, (x, y) with y pointing down:
# wrist, palm, thumb base, thumb tip, index tip, middle tip, ring tip, ulnar edge.
HAND_TEMPLATE = (
    (0.0, 20.0), (0.0, 4.0), (-15.0, 12.0), (-21.0, -4.0),
    (-9.0, -15.0), (6.0, -19.0), (19.0, -9.0), (16.0, 10.0),
)


@dataclass(frozen=True)
class GenConfig:
    height: int = 64
    width: int = 64
    template: tuple = HAND_TEMPLATE
    blob_radius: float = 2.5
    translation: float = 2.0
    rotation_deg: float = 10.0
    scale_range: tuple = (0.97, 1.03)
    point_jitter: float = 0.5
    distractor_count: int = 6
    noise_amplitude: float = 0.05
    margin: float = 6.0
    min_separation: float = 12.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "template", tuple(tuple(float(v) for v in p) for p in self.template))
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        self.validate()

    @property
    def n_landmarks(self) -> int:
        return len(self.template)

    def validate(self) -> None:
        tpl = np.asarray(self.template, dtype=np.float64)
        if tpl.ndim != 2 or tpl.shape[1] != 2 or len(tpl) < 1:
            raise ConfigError("template must be a non-empty list of (x, y) points")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError(f"invalid scale_range {self.scale_range}")
        if min(self.translation, self.rotation_deg, self.point_jitter) < 0:
            raise ConfigError("jitter ranges must be non-negative")
        if self.distractor_count < 0:
            raise ConfigError("distractor_count must be >= 0")
        if self.blob_radius <= 0 or self.noise_amplitude < 0:
            raise ConfigError("blob_radius must be > 0 and noise_amplitude >= 0")
        if self.min_separation < 2 * self.blob_radius:
            raise ConfigError("min_separation must keep blobs from overlapping")

        # worst case over every admissible pose: each coordinate may move by
        # translation + jitter + 0.5 (rounding) on top of the scaled radius
        slack = self.translation + self.point_jitter + 0.5
        reach = np.hypot(tpl[:, 0], tpl[:, 1]).max() * hi + slack
        room_x = (self.width - 1) / 2 - self.margin
        room_y = (self.height - 1) / 2 - self.margin
        if reach > min(room_x, room_y):
            raise ConfigError(
                f"posed template may reach {reach:.2f} px from the centre; "
                f"only {min(room_x, room_y):.2f} px fit inside the {self.margin} px margin")
        if len(tpl) > 1:
            diff = tpl[:, None, :] - tpl[None, :, :]
            dist = np.hypot(diff[..., 0], diff[..., 1])
            d_min = dist[np.triu_indices(len(tpl), 1)].min()
            worst = d_min * lo - math.sqrt(2) * (2 * self.point_jitter + 1)
            if worst < self.min_separation:
                raise ConfigError(
                    f"jitter can bring landmarks {worst:.2f} px apart "
                    f"(< min_separation {self.min_separation})")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["template"] = [list(p) for p in self.template]
        d["scale_range"] = list(self.scale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(**d)


@dataclass
class Sample:
    image: np.ndarray          # (H, W) float32 in [0, 1], multiples of 1/255
    landmarks: np.ndarray      # (N, 2) float64, (x, y)
    id: str
    distractors: Optional[np.ndarray] = field(default=None, repr=False)

    def equals(self, other: "Sample") -> bool:
        """Value equality on image, landmarks and id (distractors are not persisted)."""
        return (self.id == other.id
                and self.image.shape == other.image.shape
                and np.array_equal(self.image, other.image)
                and np.array_equal(self.landmarks, other.landmarks))


def sample_id(index: int) -> str:
    return f"s{index:05d}"


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _pose_landmarks(cfg: GenConfig, rng) -> np.ndarray:
    tpl = np.asarray(cfg.template, dtype=np.float64)
    theta = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    scale = rng.uniform(*cfg.scale_range)
    shift = rng.uniform(-cfg.translation, cfg.translation, size=2)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    centre = np.array([(cfg.width - 1) / 2, (cfg.height - 1) / 2])
    pts = centre + scale * tpl @ rot.T + shift
    pts = pts + rng.uniform(-cfg.point_jitter, cfg.point_jitter, size=pts.shape)
    return np.round(pts)


def _place_distractors(cfg: GenConfig, landmarks: np.ndarray, rng) -> np.ndarray:
    lo = int(math.ceil(cfg.margin))
    hi_x = int(math.floor(cfg.width - 1 - cfg.margin))
    hi_y = int(math.floor(cfg.height - 1 - cfg.margin))
    for _ in range(200):
        placed = []
        for _ in range(cfg.distractor_count):
            for _ in range(2000):
                q = np.array([rng.integers(lo, hi_x + 1), rng.integers(lo, hi_y + 1)], dtype=np.float64)
                others = np.vstack([landmarks] + placed) if placed else landmarks
                if np.hypot(*(others - q).T).min() >= cfg.min_separation:
                    placed.append(q[None])
                    break
            else:
                break
        if len(placed) == cfg.distractor_count:
            return np.vstack(placed) if placed else np.zeros((0, 2))
    raise ConfigError("could not place distractors; lower distractor_count or min_separation")


def blob_profile(d2: np.ndarray, radius: float) -> np.ndarray:
    """Gaussian spot with standard deviation radius/2, cut to zero beyond ``radius``."""
    sd = radius / 2
    return np.where(d2 <= radius * radius, np.exp(-d2 / (2 * sd * sd)), 0.0)


def render(cfg: GenConfig, centres: np.ndarray, rng=None) -> np.ndarray:
    """Draw identical blobs at integer centres, add noise, quantise to 8 bits."""
    img = np.zeros((cfg.height, cfg.width), dtype=np.float64)
    r = int(math.ceil(cfg.blob_radius))
    off = np.arange(-r, r + 1)
    patch = blob_profile(off[:, None] ** 2 + off[None, :] ** 2, cfg.blob_radius)
    for x, y in np.asarray(centres, dtype=np.int64):
        y0, y1, x0, x1 = y - r, y + r + 1, x - r, x + r + 1
        py0, px0 = max(0, -y0), max(0, -x0)
        py1 = patch.shape[0] - max(0, y1 - cfg.height)
        px1 = patch.shape[1] - max(0, x1 - cfg.width)
        img[max(y0, 0):min(y1, cfg.height), max(x0, 0):min(x1, cfg.width)] += patch[py0:py1, px0:px1]
    if cfg.noise_amplitude > 0 and rng is not None:
        img += rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude, size=img.shape)
    return quantize(img)


def quantize(img: np.ndarray) -> np.ndarray:
    q = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    return q.astype(np.float32) / np.float32(255)


def generate_sample(config: GenConfig, index: int) -> Sample:
    """Deterministic function of ``(config.seed, index)``."""
    rng = sample_rng(config.seed, index)
    landmarks = _pose_landmarks(config, rng)
    distractors = _place_distractors(config, landmarks, rng)
    image = render(config, np.vstack([landmarks, distractors]), rng)
    return Sample(image, landmarks, sample_id(index), distractors)


def generate_samples(config: GenConfig, n_samples: int, start: int = 0) -> list:
    return [generate_sample(config, i) for i in range(start, start + n_samples)]


# ---------------------------------------------------------------------------
# file formats

def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit PGM (P5) from an array of values in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {img.shape}")
    q = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def _pgm_tokens(buf: bytes, path):
    """Yield (token, end offset) for the three header fields after the magic."""
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # single whitespace byte ends the header


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM with maxval 255 into float32 values in [0, 1]."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read image ({exc.strerror})") from None
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    tokens, start = _pgm_tokens(buf, path)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    data = buf[start:]
    if len(data) < w * h:
        raise FormatError(f"{path}: truncated image data ({len(data)} of {w * h} bytes)")
    q = np.frombuffer(data[:w * h], dtype=np.uint8).reshape(h, w)
    return q.astype(np.float32) / np.float32(255)


def format_landmarks_csv(landmarks) -> str:
    out = io.StringIO()
    out.write("index,x,y\n")
    for i, (x, y) in enumerate(np.asarray(landmarks, dtype=np.float64)):
        out.write(f"{i},{float(x)!r},{float(y)!r}\n")
    return out.getvalue()


def write_landmarks_csv(path, landmarks) -> None:
    with open(path, "w", newline="") as f:
        f.write(format_landmarks_csv(landmarks))


def parse_landmarks_csv(text: str, source="<string>") -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["index", "x", "y"]:
        raise FormatError(f"{source}: line 1: expected header 'index,x,y'")
    pts = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"{source}: line {lineno}: expected 3 columns, got {len(row)}")
        try:
            idx, x, y = int(row[0]), float(row[1]), float(row[2])
        except ValueError:
            raise FormatError(f"{source}: line {lineno}: non-numeric value") from None
        if idx != len(pts):
            raise FormatError(f"{source}: line {lineno}: expected index {len(pts)}, got {idx}")
        pts.append((x, y))
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def read_landmarks_csv(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read landmarks ({exc.strerror})") from None
    return parse_landmarks_csv(text, source=path)


@dataclass
class DatasetManifest:
    count: int
    config: dict
    samples: list              # [{"id", "image", "landmarks"}]
    version: int = FORMAT_VERSION
    path: Optional[Path] = None

    def to_json(self) -> str:
        doc = {"version": self.version, "count": self.count,
               "config": self.config, "samples": self.samples}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def generate_dataset(config: GenConfig, n_samples: int, out_dir) -> DatasetManifest:
    """Write ``n_samples`` images, landmark files and a manifest to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_samples):
        s = generate_sample(config, i)
        img_name, lm_name = f"{s.id}.pgm", f"{s.id}.csv"
        write_pgm(out / img_name, s.image)
        write_landmarks_csv(out / lm_name, s.landmarks)
        entries.append({"id": s.id, "image": img_name, "landmarks": lm_name})
    manifest = DatasetManifest(n_samples, config.to_dict(), entries, path=out / MANIFEST_NAME)
    (out / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest


def read_manifest(directory) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text())
    except OSError:
        raise FormatError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {doc.get('version') if isinstance(doc, dict) else None!r}")
    try:
        samples, count = doc["samples"], int(doc["count"])
        for s in samples:
            s["id"], s["image"], s["landmarks"]
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{path}: missing or malformed manifest fields") from None
    if count != len(samples):
        raise FormatError(f"{path}: count {count} does not match {len(samples)} entries")
    return DatasetManifest(count, doc.get("config", {}), samples, doc["version"], path)


def load_dataset(directory) -> list:
    """Samples in manifest order."""
    d = Path(directory)
    manifest = read_manifest(d)
    out = []
    for entry in manifest.samples:
        image = read_pgm(d / entry["image"])
        landmarks = read_landmarks_csv(d / entry["landmarks"])
        out.append(Sample(image, landmarks, entry["id"]))
    return out
