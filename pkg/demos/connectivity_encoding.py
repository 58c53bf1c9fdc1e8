"""
Connectivity labels for a tiny mask
===================================

A binary mask becomes 26 channels, one per neighbour direction. A voxel's
channel is set when the voxel and that neighbour are both foreground.
Decoding reverses this, except for isolated voxels, which carry no
connectivity and disappear.
"""

import numpy as np

from connseg import decode_connectivity, encode_connectivity, neighbor_offsets, pairwise_agreement_filter

# %%
# The neighbour directions, in lexicographic order. Channel ``i`` and
# channel ``27 - i`` point in opposite directions.
offsets = neighbor_offsets()
for i in (1, 13, 14, 26):
    print(f"channel {i:2d}: offset {offsets.offset(i)}  complement {27 - i}")

# %%
# A three-voxel line along W plus one stray voxel.
mask = np.zeros((1, 3, 5), dtype=bool)
mask[0, 1, 0:3] = True
mask[0, 0, 4] = True
cube = encode_connectivity(mask)
print("\nset channels per voxel (1-indexed):")
for p in (tuple(int(v) for v in q) for q in np.argwhere(mask)):
    print(f"  {p}: {(np.flatnonzero(cube[(slice(None), *p)]) + 1).tolist()}")

# %%
# Decoding a clean label gives the mask back without the stray voxel.
back = decode_connectivity(cube, 0.5)
print("\ndecoded == mask without isolated voxels:", np.array_equal(back, mask & (cube.any(axis=0))))

# %%
# A prediction that claims a link in only one direction is not trusted:
# the neighbour must confirm it through the complement channel.
noisy = cube.astype(np.float32)
noisy[13, 0, 1, 3] = 0.9  # (0,1,3) claims a link to (0,1,4), which is background
filtered = pairwise_agreement_filter((noisy >= 0.5).astype(np.uint8))
print("unconfirmed bit survives filtering:", bool(filtered[13, 0, 1, 3]))
