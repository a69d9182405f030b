"""Dataset handling: loading, weak-mask dilation, target encoding, batching,
and a deterministic synthetic textured-smudge generator for desk-scale runs.

On-disk layout (8-bit grayscale PNG/PGM):

    <root>/images/<id>.png        input image
    <root>/masks/<id>.png         binary weak mask (255 = anomaly)
    <root>/tight_masks/<id>.png   optional ground-truth mask (synthetic data)
    <root>/defect_free.txt        optional: one id per line, no mask required
    <root>/manifest.jsonl         written by the generator (id, defect params)

The generator uses the counter-based Philox RNG so datasets are
bit-reproducible across platforms for a given seed.
"""

import json
import os
from dataclasses import dataclass, asdict

import numpy as np
from PIL import Image

IMAGE_EXTS = (".png", ".pgm")


@dataclass
class Sample:
    image: np.ndarray            # (H, W) float32 in [0, 1]
    mask: np.ndarray             # (H, W) uint8 in {0, 1}; the training label
    id: str
    tight_mask: np.ndarray = None   # ground truth for synthetic data

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(f"{self.id}: image {self.image.shape} vs mask {self.mask.shape}")


@dataclass
class Dataset:
    samples: list
    split: str = "train"
    seed: int = 0

    def __len__(self):
        return len(self.samples)

    def ids(self):
        return [s.id for s in self.samples]


@dataclass
class SynthSpec:
    count: int = 16
    size: tuple = (128, 128)
    noise_octaves: int = 4
    blur_sigma: float = 0.7
    axes_range: tuple = (16.0, 28.0)      # defect ellipse semi-axes, pixels
    delta_range: tuple = (0.45, 0.65)     # mean intensity offset inside the defect
    smudge_blur_sigma: float = 8.0        # texture suppression inside the defect
    weak_scale: float = 1.5               # weak ellipse = tight axes * weak_scale
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def _check_binary(mask):
    mask = np.asarray(mask)
    if not np.all(np.isin(np.unique(mask), (0, 1))):
        raise ValueError("mask must be binary (0/1)")
    return mask.astype(np.uint8)


def dilate_mask(mask, k=11):
    """Morphological dilation with a k x k all-ones structuring element."""
    if k % 2 == 0:
        raise ValueError(f"structuring element size must be odd, got {k}")
    mask = _check_binary(mask)
    pad = (k - 1) // 2
    padded = np.pad(mask, pad)
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return win.max(axis=(2, 3)).astype(np.uint8)


def encode_target(mask):
    """Binary mask -> tanh-range target: anomaly +1, normal -1 (float32)."""
    mask = _check_binary(mask)
    return np.where(mask > 0, 1.0, -1.0).astype(np.float32)


def decode_target(scores, threshold=0.0):
    """Scores -> binary mask at the given threshold."""
    return (np.asarray(scores) > threshold).astype(np.uint8)


def _to_gray(arr):
    arr = np.asarray(arr, dtype=np.float32) / 255.0
    if arr.ndim == 3:
        arr = arr.mean(axis=2)   # unweighted channel average
    return arr


def _find_pairs(root):
    img_dir = os.path.join(root, "images")
    if not os.path.isdir(img_dir):
        raise FileNotFoundError(f"{root}: missing images/ directory")
    stems = []
    for name in sorted(os.listdir(img_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in IMAGE_EXTS:
            stems.append((stem, os.path.join(img_dir, name)))
    return stems


def load_dataset(root, split="train", seed=0):
    """Load image/mask pairs from the documented directory layout."""
    mask_dir = os.path.join(root, "masks")
    tight_dir = os.path.join(root, "tight_masks")
    free_path = os.path.join(root, "defect_free.txt")
    defect_free = set()
    if os.path.isfile(free_path):
        with open(free_path) as fh:
            defect_free = {line.strip() for line in fh if line.strip()}
    samples = []
    for stem, img_path in _find_pairs(root):
        image = _to_gray(Image.open(img_path))
        mask_path = None
        for ext in IMAGE_EXTS:
            cand = os.path.join(mask_dir, stem + ext)
            if os.path.isfile(cand):
                mask_path = cand
                break
        if mask_path is None:
            if stem not in defect_free:
                raise FileNotFoundError(
                    f"{stem}: no mask and not listed in defect_free.txt")
            mask = np.zeros(image.shape, dtype=np.uint8)
        else:
            mask = (_to_gray(Image.open(mask_path)) > 0.5).astype(np.uint8)
            if mask.shape != image.shape:
                raise ValueError(f"{stem}: image {image.shape} vs mask {mask.shape}")
        tight = None
        for ext in IMAGE_EXTS:
            cand = os.path.join(tight_dir, stem + ext)
            if os.path.isfile(cand):
                tight = (_to_gray(Image.open(cand)) > 0.5).astype(np.uint8)
                break
        samples.append(Sample(image.astype(np.float32), mask, stem, tight))
    if not samples:
        raise FileNotFoundError(f"{root}: no images found")
    return Dataset(samples, split=split, seed=seed)


def save_png(arr, path):
    """Save a 2-D array as 8-bit grayscale.  Float input is taken as [0, 1]."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def save_dataset(dataset, root, manifest_extra=None):
    """Write a dataset in the standard layout (masks scaled to 0/255)."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    has_tight = any(s.tight_mask is not None for s in dataset.samples)
    if has_tight:
        os.makedirs(os.path.join(root, "tight_masks"), exist_ok=True)
    with open(os.path.join(root, "manifest.jsonl"), "w") as fh:
        for s in dataset.samples:
            save_png(s.image, os.path.join(root, "images", s.id + ".png"))
            save_png(s.mask * 255, os.path.join(root, "masks", s.id + ".png"))
            if s.tight_mask is not None:
                save_png(s.tight_mask * 255, os.path.join(root, "tight_masks", s.id + ".png"))
            entry = {"id": s.id, "shape": list(s.image.shape)}
            if manifest_extra and s.id in manifest_extra:
                entry.update(manifest_extra[s.id])
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _resize_bilinear(a, h, w):
    """Bilinear upsample of a small 2-D grid to (h, w)."""
    sh, sw = a.shape
    yy = np.linspace(0.0, sh - 1.0, h)
    xx = np.linspace(0.0, sw - 1.0, w)
    y0 = np.floor(yy).astype(int)
    x0 = np.floor(xx).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = (yy - y0)[:, None]
    fx = (xx - x0)[None, :]
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _gaussian_blur(img, sigma):
    if sigma <= 0:
        return img
    radius = max(1, int(round(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kern = np.exp(-(t * t) / (2.0 * sigma * sigma))
    kern /= kern.sum()
    padded = np.pad(img, radius, mode="reflect")
    out = np.apply_along_axis(np.convolve, 0, padded, kern, mode="same")
    out = np.apply_along_axis(np.convolve, 1, out, kern, mode="same")
    return out[radius:-radius, radius:-radius]


def _background(rng, h, w, octaves, blur_sigma):
    """Multi-octave smoothed noise texture around mid gray."""
    tex = np.zeros((h, w))
    cell = 2
    amp = 1.0
    for _ in range(octaves):
        gh = max(2, h // cell)
        gw = max(2, w // cell)
        tex += amp * _resize_bilinear(rng.standard_normal((gh, gw)), h, w)
        cell *= 2
        amp *= 0.7
    tex = _gaussian_blur(tex, blur_sigma)
    std = tex.std()
    if std > 0:
        tex = tex / std * 0.09
    return 0.45 + tex


def synth_generate(spec):
    """Generate a DAGM-like smudge dataset: one elliptical defect per image.

    A smudge both shifts the local intensity and wipes out the background
    texture (cross-fade to a heavily blurred copy), so it is visible to
    intensity statistics and to band-pass texture features alike.  Every
    sample carries the tight ground-truth mask (the defect core, q <= 1)
    and, as its training label, a larger covering ellipse (the weak
    annotation) at whose boundary the alteration fades to exactly zero.
    The mean intensity offset inside the tight mask is pinned to the
    sampled delta, so the core sits at least delta_range[0] away from the
    local background.
    """
    h, w = spec.size
    rng = np.random.Generator(np.random.Philox(spec.seed))
    samples = []
    params = {}
    for i in range(spec.count):
        image = _background(rng, h, w, spec.noise_octaves, spec.blur_sigma)
        a = rng.uniform(*spec.axes_range)
        b = rng.uniform(*spec.axes_range)
        angle = rng.uniform(0.0, np.pi)
        margin_y = spec.weak_scale * max(a, b) + 2
        margin_x = spec.weak_scale * max(a, b) + 2
        if 2 * margin_y >= h or 2 * margin_x >= w:
            raise ValueError("defect does not fit inside the image")
        cy = rng.uniform(margin_y, h - margin_y)
        cx = rng.uniform(margin_x, w - margin_x)
        delta = rng.uniform(*spec.delta_range)
        sign = 1.0 if rng.random() < 0.5 else -1.0

        yy, xx = np.mgrid[0:h, 0:w]
        yr = (yy - cy) * np.cos(angle) - (xx - cx) * np.sin(angle)
        xr = (yy - cy) * np.sin(angle) + (xx - cx) * np.cos(angle)
        q = (xr / a) ** 2 + (yr / b) ** 2
        # flat-core profile: full strength out to ~85% of the covering
        # radius, then a smoothstep to exactly zero at the weak boundary, so
        # the covering ellipse is a true bound on the visible alteration
        t = np.clip((1.0 - q / spec.weak_scale ** 2) / 0.15, 0.0, 1.0)
        profile = t * t * (3.0 - 2.0 * t)
        tight = (q <= 1.0).astype(np.uint8)
        weak = (q <= spec.weak_scale ** 2).astype(np.uint8)
        inside = tight > 0
        blurred = _gaussian_blur(image, spec.smudge_blur_sigma)
        base = image * (1.0 - profile) + blurred * profile
        # pin the mean offset inside the tight mask to exactly +-delta
        amp = (sign * delta - (base[inside].mean() - image[inside].mean())) \
            / profile[inside].mean()
        image = np.clip(base + amp * profile, 0.0, 1.0)

        sid = f"synth{i:04d}"
        samples.append(Sample(image.astype(np.float32), weak, sid, tight))
        params[sid] = {"center": [cy, cx], "axes": [a, b], "angle": angle,
                       "delta": sign * delta}
    ds = Dataset(samples, split="train", seed=spec.seed)
    ds.defect_params = params
    return ds


def train_val_split(dataset, ratio=0.8, seed=0):
    """Deterministic shuffled split, disjoint by sample id."""
    idx = np.random.default_rng(seed).permutation(len(dataset.samples))
    n_train = int(round(ratio * len(idx)))
    train = [dataset.samples[i] for i in idx[:n_train]]
    val = [dataset.samples[i] for i in idx[n_train:]]
    return (Dataset(train, split="train", seed=seed),
            Dataset(val, split="validation", seed=seed))


def make_batches(dataset, batch=16, seed=0, epoch=0, crop=None):
    """Deterministic shuffled batches of (images, targets, ids).

    Images are grouped by size so every batch is homogeneous; a final
    partial batch is kept.  ``crop`` = (H, W) center-crops everything to a
    single size instead.  Arrays are (N, 1, H, W) float32; targets are the
    +-1 encoding of the weak masks.
    """
    if not dataset.samples:
        raise ValueError("cannot batch an empty dataset")
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(dataset.samples))
    groups = {}
    for i in order:
        s = dataset.samples[i]
        img, msk = s.image, s.mask
        if crop is not None:
            ch, cw = crop
            if img.shape[0] < ch or img.shape[1] < cw:
                raise ValueError(f"{s.id}: image {img.shape} smaller than crop {crop}")
            y0 = (img.shape[0] - ch) // 2
            x0 = (img.shape[1] - cw) // 2
            img = img[y0:y0 + ch, x0:x0 + cw]
            msk = msk[y0:y0 + ch, x0:x0 + cw]
        groups.setdefault(img.shape, []).append((img, msk, s.id))
    batches = []
    for shape in sorted(groups, key=lambda sh: (sh[0], sh[1])):
        items = groups[shape]
        for start in range(0, len(items), batch):
            chunk = items[start:start + batch]
            images = np.stack([c[0] for c in chunk])[:, None, :, :].astype(np.float32)
            targets = np.stack([encode_target(c[1]) for c in chunk])[:, None, :, :]
            batches.append((images, targets, [c[2] for c in chunk]))
    return batches
