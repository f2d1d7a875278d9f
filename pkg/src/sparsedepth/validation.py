"""Input checks shared by the estimator and the command line."""
import numpy as np

from .pairs import as_table, check_in_bounds, check_relations


def check_images(X, input_size=None):
    """Return ``X`` as a finite float32 ``(N, H, W, 3)`` array.

    A single ``(H, W, 3)`` image is promoted to a batch of one. With
    ``input_size`` the spatial size must match exactly.
    """
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected images shaped (N, H, W, 3), got {np.shape(X)}")
    if arr.shape[0] == 0:
        raise ValueError("no images given")
    if not np.all(np.isfinite(arr)):
        raise ValueError("images contain NaN or infinite values")
    if input_size is not None and tuple(arr.shape[1:3]) != tuple(input_size):
        raise ValueError(f"image size {arr.shape[1:3]} does not match model input {tuple(input_size)}")
    return arr


def check_pair_lists(y, n_images, shape):
    """Validate one pair collection per image; returns a list of ``PairTable``."""
    if y is None:
        raise ValueError("ordinal pairs are required")
    y = list(y)
    if len(y) != n_images:
        raise ValueError(f"got {len(y)} pair lists for {n_images} images")
    tables = []
    for i, pairs in enumerate(y):
        table = as_table(pairs)
        try:
            check_in_bounds(table, shape)
            check_relations(table)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"pairs of image {i}: {exc}") from None
        tables.append(table)
    return tables


def check_depth_maps(y, n_images, shape):
    arr = np.asarray(y, dtype=np.float32)
    if arr.shape != (n_images, *shape):
        raise ValueError(f"expected depth maps shaped {(n_images, *shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("depth maps must be finite and strictly positive")
    return arr


def letterbox(image, size):
    """Fit ``image`` into ``size`` keeping its aspect ratio; pad the rest with zeros.

    Nearest-neighbour resampling. Returns ``(boxed, (top, left, h, w))`` where
    the tuple locates the resized content inside the output.
    """
    image = np.asarray(image)
    out_h, out_w = size
    in_h, in_w = image.shape[:2]
    scale = min(out_h / in_h, out_w / in_w)
    h = max(1, min(out_h, int(round(in_h * scale))))
    w = max(1, min(out_w, int(round(in_w * scale))))
    rows = np.minimum((np.arange(h) + 0.5) * in_h / h, in_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(w) + 0.5) * in_w / w, in_w - 1).astype(np.int64)
    top, left = (out_h - h) // 2, (out_w - w) // 2
    boxed = np.zeros((out_h, out_w) + image.shape[2:], dtype=image.dtype)
    boxed[top:top + h, left:left + w] = image[rows[:, None], cols[None, :]]
    return boxed, (top, left, h, w)
