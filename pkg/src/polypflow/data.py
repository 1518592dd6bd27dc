"""Benchmark loading, deterministic splits and preprocessing."""
import csv
import os
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
DEFAULT_IMAGE_SIZE = 352


class DatasetName(str, Enum):
    KvasirSEG = "KvasirSEG"
    ClinicDB = "ClinicDB"
    ColonDB = "ColonDB"
    Endoscene = "Endoscene"
    ETIS = "ETIS"


class Split(str, Enum):
    train = "train"
    seen_test = "seen_test"
    unseen_test = "unseen_test"


# dataset -> (train count, seen-test count)
SEEN_SPLITS: Dict[DatasetName, tuple] = {
    DatasetName.KvasirSEG: (900, 100),
    DatasetName.ClinicDB: (550, 62),
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    mask_path: str
    dataset: DatasetName
    split: Optional[Split] = None

    @property
    def basename(self) -> str:
        return os.path.splitext(os.path.basename(self.image_path))[0]


def _stems(directory: str) -> Dict[str, str]:
    out = {}
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext.lower() in IMAGE_EXTENSIONS:
            if stem in out:
                raise DatasetError(f"duplicate stem {stem!r} in {directory}")
            out[stem] = os.path.join(directory, name)
    return out


def dataset_dir(root, name) -> str:
    """``root/<name>`` if it exists, otherwise ``root`` itself."""
    name = DatasetName(name)
    sub = os.path.join(root, name.value)
    return sub if os.path.isdir(sub) else str(root)


def load_dataset(root, name) -> List[SampleRecord]:
    name = DatasetName(name)
    base = dataset_dir(root, name)
    img_dir = os.path.join(base, "images")
    mask_dir = os.path.join(base, "masks")
    for d in (img_dir, mask_dir):
        if not os.path.isdir(d):
            raise DatasetError(f"missing directory: {d}")
    images, masks = _stems(img_dir), _stems(mask_dir)
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        names = [os.path.basename(images.get(s) or masks[s]) for s in orphans]
        raise DatasetError(f"unmatched image/mask files in {base}: {', '.join(names)}")
    if not images:
        raise DatasetError(f"no image/mask pairs found in {base}")
    return [SampleRecord(images[s], masks[s], name) for s in sorted(images)]


def make_splits(records: Sequence[SampleRecord], seed: int = 0,
                sizes: Optional[Dict[DatasetName, tuple]] = None) -> List[SampleRecord]:
    """Assign splits: a seeded shuffle of each seen dataset's sorted records.

    The first ``n_train`` shuffled records are ``train`` and the remainder
    ``seen_test``; every other dataset is ``unseen_test``. Output keeps the
    input order.
    """
    sizes = SEEN_SPLITS if sizes is None else {DatasetName(k): v for k, v in sizes.items()}
    by_ds: Dict[DatasetName, List[int]] = {}
    for i, r in enumerate(records):
        by_ds.setdefault(DatasetName(r.dataset), []).append(i)
    out = list(records)
    for ds, idxs in by_ds.items():
        if ds not in sizes:
            for i in idxs:
                out[i] = replace(records[i], split=Split.unseen_test)
            continue
        n_train, n_test = sizes[ds]
        if len(idxs) < n_train + n_test:
            raise DatasetError(
                f"{ds.value}: expected at least {n_train + n_test} records "
                f"({n_train} train + {n_test} seen_test), found {len(idxs)}"
            )
        ordered = sorted(idxs, key=lambda i: records[i].basename)
        rng = np.random.default_rng([seed, list(DatasetName).index(ds)])
        perm = rng.permutation(len(ordered))
        for rank, j in enumerate(perm):
            i = ordered[j]
            split = Split.train if rank < n_train else Split.seen_test
            out[i] = replace(records[i], split=split)
    return out


def write_split_manifest(records: Sequence[SampleRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "basename", "split"])
        for r in records:
            writer.writerow([DatasetName(r.dataset).value, r.basename, Split(r.split).value if r.split else ""])


def _open(path, mode):
    try:
        with Image.open(path) as img:
            return img.convert(mode)
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetError(f"cannot decode image {path}: {e}") from e


def preprocess(record: SampleRecord, size: int = DEFAULT_IMAGE_SIZE):
    """Return ``(image 3xSxS float32 in [0,1], mask 1xSxS float32 in {0,1})``."""
    img = _open(record.image_path, "RGB")
    mask = _open(record.mask_path, "L")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    if mask.size != (size, size):
        mask = mask.resize((size, size), Image.NEAREST)
    image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    m = (np.asarray(mask, dtype=np.float32) / 255.0 >= 0.5).astype(np.float32)[None]
    return image, m


def augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator):
    """Random horizontal/vertical flip and 90-degree rotation, applied jointly."""
    if rng.random() < 0.5:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    if rng.random() < 0.5:
        image, mask = image[:, ::-1, :], mask[:, ::-1, :]
    k = int(rng.integers(4))
    image, mask = np.rot90(image, k, axes=(1, 2)), np.rot90(mask, k, axes=(1, 2))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


class PolypDataset(Dataset):
    def __init__(self, records: Sequence[SampleRecord], size: int = DEFAULT_IMAGE_SIZE,
                 augment: bool = False, seed: int = 0, cache: bool = False):
        self.records = list(records)
        self.size = size
        self.augment = augment
        self.cache = cache
        self.rng = np.random.default_rng(seed)
        self._cache: Dict[int, tuple] = {}

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        if i in self._cache:
            image, mask = self._cache[i]
        else:
            image, mask = preprocess(self.records[i], self.size)
            if self.cache:
                self._cache[i] = (image, mask)
        if self.augment:
            image, mask = augment(image, mask, self.rng)
        return torch.from_numpy(image.copy()), torch.from_numpy(mask.copy())


def filter_split(records: Sequence[SampleRecord], split, datasets=None) -> List[SampleRecord]:
    split = Split(split)
    keep = None if datasets is None else {DatasetName(d) for d in datasets}
    return [r for r in records if r.split == split and (keep is None or r.dataset in keep)]
