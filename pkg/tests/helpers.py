"""Shared test fixtures: engineered collision datasets."""

import numpy as np


def chain_collision_images(
    n_images=8, channels=3, height=32, width=32, patch_size=8
):
    """Images whose pairwise shared-patch counts form a distinct chain.

    Image i and image i+1 share exactly i+1 patches (at identical patch
    indices); every other patch is a constant unique to that (image,
    patch) slot.  The resulting collision-count rows are all distinct,
    so matching is forced to recover the true pairing.
    """
    grid = (height // patch_size) * (width // patch_size)
    gw = width // patch_size

    def fill_patch(img, k, value):
        gy, gx = divmod(k, gw)
        img[:, gy * patch_size:(gy + 1) * patch_size,
            gx * patch_size:(gx + 1) * patch_size] = value

    total_slots = n_images * grid + n_images
    images = []
    uid = 0
    for i in range(n_images):
        img = np.zeros((channels, height, width), dtype=np.float32)
        for k in range(grid):
            fill_patch(img, k, (uid + 1) / (total_slots + 2))
            uid += 1
        images.append(img)
    # pair p = (p, p+1) shares p+1 patches; even pairs take low patch
    # indices, odd pairs high ones, so the two pairs touching one image
    # never overlap
    for p in range(n_images - 1):
        count = p + 1
        slots = list(range(count)) if p % 2 == 0 else list(
            range(grid - count, grid)
        )
        shared_value = (total_slots - p) / (total_slots + 2)
        for k in slots:
            fill_patch(images[p], k, shared_value)
            fill_patch(images[p + 1], k, shared_value)
    return images


def disjoint_patch_images(n_images=8, channels=3, height=32, width=32,
                          patch_size=8):
    """Images with no shared patch content anywhere (no collision signal)."""
    grid = (height // patch_size) * (width // patch_size)
    gw = width // patch_size
    images = []
    uid = 0
    total = n_images * grid
    for _ in range(n_images):
        img = np.zeros((channels, height, width), dtype=np.float32)
        for k in range(grid):
            gy, gx = divmod(k, gw)
            img[:, gy * patch_size:(gy + 1) * patch_size,
                gx * patch_size:(gx + 1) * patch_size] = (uid + 1) / (total + 2)
            uid += 1
        images.append(img)
    return images
