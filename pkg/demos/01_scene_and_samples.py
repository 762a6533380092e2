# A synthetic scene, its ground-truth radio maps and a sparse sample set.
import numpy as np

from radiolam.scene import SceneGenConfig, draw_samples, generate_scene

scene = generate_scene(SceneGenConfig(env_label="urban"), seed=7)
print(scene.grid.shape)           # (32, 32, 3): x, y, height index
print(scene.grid.heights_m)       # the three planes, metres above ground
print(scene.truth_maps.shape)     # (3, 32, 32), RSS normalised to [0, 1]

# building cells carry 0 in the truth maps
print("built fraction per plane:", scene.buildings.mean(axis=(0, 1)))

for h, m in enumerate(scene.truth_maps):
    free = m[~scene.buildings[:, :, h]]
    print(f"h{h}: mean {free.mean():.3f}  below 0.05: {np.mean(free < 0.05):.0%}")

# 16 sensors over 32*32*3 cells is roughly a 0.5% sampling rate
samples = draw_samples(scene, k=16, seed=0)
print(len(samples), "samples;", [len(samples.at_height(h)) for h in range(3)], "per plane")
print(samples.coords()[:4])       # x, y, height in cell units
print(samples.rss[:4])
