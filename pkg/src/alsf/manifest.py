"""Dataset manifests and key-value config files.

Both formats are line-oriented text: blank lines and full-line `#` comments
are ignored, everything else is `key = value`. Manifests additionally use
`[class NAME]` section headers; keys before the first section configure the
pipeline, keys inside a section attach data to that class:

    patch_size = 8
    patches_per_class = 200
    channels = gray
    rule = ratio
    positive_class = lesion
    seed = 0

    [class healthy]
    image = healthy_0.png
    mask = healthy_0_mask.png
    eval-image = healthy_eval_0.png

    [class lesion]
    patches = lesion_train.npy
    image = lesion_0.png
    eval-image = lesion_eval_0.png

A `mask` line binds to the immediately preceding `image` line; the special
value `center` denotes the built-in mask covering the middle half of each
dimension. `patches` files (.npy, shape (n, d)) feed dictionary training
directly; when a class has none, training patches are randomly extracted
from its `image` entries. `image` entries are always the threshold-learning
split and `eval-image` entries the held-out evaluation split. All paths are
relative to the manifest's directory and must exist at parse time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .classifier import RULE_KINDS
from .exceptions import (
    AlsfError,
    ConfigError,
    EmptyClass,
    InsufficientData,
    ManifestError,
)
from .model import Hyperparams, TrainingSet

CHANNEL_MODES = ("gray", "rgb")
CENTER_MASK = "center"


def _read_lines(path) -> list[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.readlines()
    out = []
    for i, line in enumerate(raw, start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            out.append((i, stripped))
    return out


def _parse_kv(path, line_no: int, line: str) -> tuple[str, str]:
    if "=" not in line:
        raise ManifestError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
    key, value = line.split("=", 1)
    key, value = key.strip(), value.strip()
    if not key or not value:
        raise ManifestError(f"{path}:{line_no}: empty key or value")
    return key, value


@dataclass(frozen=True)
class ImageEntry:
    path: str             # resolved absolute path
    rel: str              # path as written (seed derivation + reports)
    mask: str | None = None  # resolved mask path, CENTER_MASK, or None


@dataclass
class ClassEntry:
    name: str
    images: list[ImageEntry] = field(default_factory=list)
    patch_files: list[str] = field(default_factory=list)
    eval_images: list[ImageEntry] = field(default_factory=list)


@dataclass
class Manifest:
    patch_size: int
    classes: list[ClassEntry]
    patches_per_class: int | None = None
    channels: str = "gray"
    downsample: tuple[int, int] | None = None  # (width, height)
    rule: str = "ratio"
    positive_class: str = ""
    seed: int = 0
    base_dir: str = "."

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * (3 if self.channels == "rgb" else 1)

    @property
    def positive_index(self) -> int:
        return self.class_names.index(self.positive_class)


def _to_int(path, key, value) -> int:
    try:
        return int(value)
    except ValueError:
        raise ManifestError(f"{path}: key {key!r} needs an integer, got {value!r}")


def parse_manifest(path) -> Manifest:
    """Parse and validate a dataset manifest.

    Raises ManifestError for syntax or schema problems, FileNotFoundError
    for unresolvable referenced paths, InsufficientData when no class is
    declared.
    """
    base = os.path.dirname(os.path.abspath(path))
    top: dict[str, str] = {}
    classes: list[ClassEntry] = []
    current: ClassEntry | None = None

    def resolve(rel: str) -> str:
        full = os.path.normpath(os.path.join(base, rel))
        if not os.path.exists(full):
            raise FileNotFoundError(f"{path}: referenced file not found: {rel}")
        return full

    for line_no, line in _read_lines(path):
        if line.startswith("["):
            if not (line.endswith("]") and line[1:-1].strip().startswith("class ")):
                raise ManifestError(f"{path}:{line_no}: bad section header {line!r}")
            name = line[1:-1].strip()[len("class "):].strip()
            if not name:
                raise ManifestError(f"{path}:{line_no}: class section needs a name")
            if any(c.name == name for c in classes):
                raise ManifestError(f"{path}:{line_no}: duplicate class {name!r}")
            current = ClassEntry(name)
            classes.append(current)
            continue
        key, value = _parse_kv(path, line_no, line)
        if current is None:
            if key in top:
                raise ManifestError(f"{path}:{line_no}: duplicate key {key!r}")
            top[key] = value
        elif key == "image":
            current.images.append(ImageEntry(resolve(value), value))
        elif key == "eval-image":
            current.eval_images.append(ImageEntry(resolve(value), value))
        elif key == "patches":
            current.patch_files.append(resolve(value))
        elif key == "mask":
            if not current.images:
                raise ManifestError(
                    f"{path}:{line_no}: mask without a preceding image line")
            last = current.images[-1]
            if last.mask is not None:
                raise ManifestError(f"{path}:{line_no}: image already has a mask")
            mask = CENTER_MASK if value == CENTER_MASK else resolve(value)
            current.images[-1] = dataclasses.replace(last, mask=mask)
        else:
            raise ManifestError(f"{path}:{line_no}: unknown class key {key!r}")

    if not classes:
        raise InsufficientData(f"{path}: manifest declares no classes")

    known = {"patch_size", "patches_per_class", "channels", "downsample",
             "rule", "positive_class", "seed"}
    unknown = set(top) - known
    if unknown:
        raise ManifestError(f"{path}: unknown keys {sorted(unknown)}")
    if "patch_size" not in top:
        raise ManifestError(f"{path}: missing required key patch_size")
    patch_size = _to_int(path, "patch_size", top["patch_size"])
    if patch_size < 2:
        raise ManifestError(f"{path}: patch_size must be >= 2")

    downsample = None
    if "downsample" in top:
        parts = top["downsample"].split()
        if len(parts) != 2:
            raise ManifestError(f"{path}: downsample needs 'WIDTH HEIGHT'")
        downsample = (_to_int(path, "downsample", parts[0]),
                      _to_int(path, "downsample", parts[1]))
        if min(downsample) < 1:
            raise ManifestError(f"{path}: downsample target must be positive")

    channels = top.get("channels", "gray")
    if channels not in CHANNEL_MODES:
        raise ManifestError(f"{path}: channels must be one of {CHANNEL_MODES}")
    rule = top.get("rule", "ratio")
    if rule not in RULE_KINDS:
        raise ManifestError(f"{path}: rule must be one of {RULE_KINDS}")
    positive = top.get("positive_class", classes[0].name)
    if positive not in [c.name for c in classes]:
        raise ManifestError(f"{path}: positive_class {positive!r} has no section")

    ppc = None
    if "patches_per_class" in top:
        ppc = _to_int(path, "patches_per_class", top["patches_per_class"])
        if ppc < 1:
            raise ManifestError(f"{path}: patches_per_class must be >= 1")

    return Manifest(
        patch_size=patch_size,
        classes=classes,
        patches_per_class=ppc,
        channels=channels,
        downsample=downsample,
        rule=rule,
        positive_class=positive,
        seed=_to_int(path, "seed", top.get("seed", "0")),
        base_dir=base,
    )


def prepare_image(path, channels: str,
                  downsample: tuple[int, int] | None) -> data_mod.ImageBuffer:
    """Load an image and apply the channel and downsample pipeline settings."""
    img = data_mod.load_image(path)
    if channels == "gray":
        img = data_mod.to_grayscale(img)
    elif img.channels != 3:
        raise ManifestError(f"{path}: pipeline wants rgb but the image is grayscale")
    if downsample is not None:
        img = data_mod.downsample(img, downsample[0], downsample[1])
    return img


def load_manifest_image(man: Manifest, entry: ImageEntry) -> data_mod.ImageBuffer:
    """Load one manifest image and apply the channel and downsample settings."""
    return prepare_image(entry.path, man.channels, man.downsample)


def _load_mask(man: Manifest, entry: ImageEntry,
               img: data_mod.ImageBuffer) -> data_mod.RegionMask | None:
    if entry.mask is None:
        return None
    if entry.mask == CENTER_MASK:
        return data_mod.center_mask(img.height, img.width)
    m = data_mod.to_grayscale(data_mod.load_image(entry.mask))
    return data_mod.RegionMask(m.pixels > 0)


def _entry_seed(master_seed: int, rel: str) -> list[int]:
    """Per-image extraction seed: master seed mixed with the path text."""
    digest = hashlib.sha256(rel.encode("utf-8")).digest()
    return [master_seed & 0xFFFFFFFF, int.from_bytes(digest[:8], "big")]


def assemble_training_set(man: Manifest) -> TrainingSet:
    """Training patches per class, as a TrainingSet.

    Classes with `patches` files train on those arrays verbatim; otherwise
    `patches_per_class` random patches are extracted from the class's
    images, split as evenly as possible across them, each image seeded from
    (manifest seed, image path).
    """
    per_class = []
    for cls in man.classes:
        if cls.patch_files:
            mats = []
            for pf in cls.patch_files:
                try:
                    arr = np.asarray(np.load(pf), dtype=np.float64)
                except ValueError as e:
                    raise AlsfError(f"{pf}: not a readable patch array: {e}") from e
                if arr.ndim != 2 or arr.shape[1] != man.patch_dim:
                    raise ManifestError(
                        f"{pf}: expected (n, {man.patch_dim}) patches, "
                        f"got shape {arr.shape}")
                mats.append(arr)
            per_class.append(np.vstack(mats))
            continue
        if not cls.images:
            raise EmptyClass(f"class {cls.name!r} has no patches or images")
        if man.patches_per_class is None:
            raise ManifestError(
                "patches_per_class is required when a class extracts from images")
        n_img = len(cls.images)
        base_n, extra = divmod(man.patches_per_class, n_img)
        batches = []
        for i, entry in enumerate(cls.images):
            n = base_n + (1 if i < extra else 0)
            if n == 0:
                continue
            img = load_manifest_image(man, entry)
            mask = _load_mask(man, entry, img)
            batches.append(data_mod.extract_random_patches(
                img, n, man.patch_size, mask, seed=_entry_seed(man.seed, entry.rel)))
        per_class.append(np.vstack(batches))
    return data_mod.build_training_set(per_class)


_HP_FIELDS = {f.name: f.type for f in dataclasses.fields(Hyperparams)}
_HP_INT_KEYS = {"k_per_class", "k_shared", "max_iters", "code_sweeps", "seed"}
_HP_BOOL_KEYS = {"joint_code_solve"}


def _hp_value(key: str, raw: str):
    if key in _HP_BOOL_KEYS:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"key {key!r} needs a boolean, got {raw!r}")
    try:
        return int(raw) if key in _HP_INT_KEYS else float(raw)
    except ValueError:
        raise ConfigError(f"key {key!r} needs a number, got {raw!r}")


def _read_config_dict(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, line in _read_lines(path):
        try:
            key, value = _parse_kv(path, line_no, line)
        except ManifestError as e:
            raise ConfigError(str(e)) from e
        if key in out:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_hyperparams(path=None, **overrides) -> Hyperparams:
    """Hyperparams from a key-value config file plus keyword overrides.

    Every key must be a Hyperparams field. Absent keys fall back to the
    field defaults, with k_per_class=40 and k_shared=10 when the file does
    not set them.
    """
    values: dict = {"k_per_class": 40, "k_shared": 10}
    if path is not None:
        for key, raw in _read_config_dict(path).items():
            if key not in _HP_FIELDS:
                raise ConfigError(f"{path}: unknown hyperparameter {key!r}")
            values[key] = _hp_value(key, raw)
    values.update(overrides)
    try:
        return Hyperparams(**values)
    except ValueError as e:
        raise ConfigError(f"invalid hyperparameters: {e}") from e


def parse_hyperparams_grid(path, **overrides) -> list[Hyperparams]:
    """Cross-validation grid: comma-separated values expand as a product.

    A file with `eta = 0.01, 0.1` and `tau = 1, 2` yields 4 grid points,
    varying the later key fastest.
    """
    keys, value_lists = [], []
    for key, raw in _read_config_dict(path).items():
        if key not in _HP_FIELDS:
            raise ConfigError(f"{path}: unknown hyperparameter {key!r}")
        keys.append(key)
        value_lists.append([_hp_value(key, part.strip())
                            for part in raw.split(",")])
    grid = []
    for combo in itertools.product(*value_lists):
        values = {"k_per_class": 40, "k_shared": 10}
        values.update(dict(zip(keys, combo)))
        values.update(overrides)
        try:
            grid.append(Hyperparams(**values))
        except ValueError as e:
            raise ConfigError(f"invalid grid point {dict(zip(keys, combo))}: {e}") from e
    return grid


_SYNTH_DEFAULTS = {
    "patch_size": 8,
    "classes": 2,
    "class_dim": 5,
    "shared_dim": 3,
    "train_patches": 200,
    "train_images": 2,
    "eval_images": 2,
    "grid_rows": 4,
    "grid_cols": 5,
    "noise_sigma": 0.0,
    "seed": 0,
    "rule": "ratio",
}


def parse_synth_config(path=None, **overrides) -> dict:
    """Settings for the synthetic dataset command (defaults for every key)."""
    values = dict(_SYNTH_DEFAULTS)
    raw_items = _read_config_dict(path).items() if path is not None else ()
    for key, raw in raw_items:
        if key not in _SYNTH_DEFAULTS:
            raise ConfigError(f"{path}: unknown synth key {key!r}")
        if key == "rule":
            values[key] = raw
            continue
        try:
            values[key] = float(raw) if key == "noise_sigma" else int(raw)
        except ValueError:
            raise ConfigError(f"{path}: bad value for {key!r}: {raw!r}")
    values.update(overrides)
    if values["rule"] not in RULE_KINDS:
        raise ConfigError(f"synth rule must be one of {RULE_KINDS}")
    if values["patch_size"] < 2:
        raise ConfigError("synth patch_size must be >= 2")
    for key in ("classes", "class_dim", "train_patches", "train_images",
                "eval_images", "grid_rows", "grid_cols"):
        if values[key] < 1:
            raise ConfigError(f"synth {key} must be >= 1")
    if values["shared_dim"] < 0 or values["noise_sigma"] < 0:
        raise ConfigError("synth shared_dim and noise_sigma must be >= 0")
    return values
