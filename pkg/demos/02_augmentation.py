# Projecting samples from other heights onto one target plane.
import numpy as np

from radiolam.augment import AugmentParams, SceneContext, augment, blend_weight
from radiolam.baselines import kriging3d_estimate
from radiolam.generation import guide_map, sample_channels
from radiolam.metrics import mse
from radiolam.scene import SceneGenConfig, draw_samples, generate_scene

scene = generate_scene(SceneGenConfig(env_label="suburban"), seed=3)
samples = draw_samples(scene, 16, seed=1)
ctx = SceneContext.of(scene)      # buildings + terrain only, never the transmitters

# how much of the free-space projection survives at each height (U = 20 m)
for h_m in scene.grid.heights_m:
    print(f"{h_m:6.1f} m  free-space share {blend_weight(h_m, 20.0):.3f}")

target = 1
projected = augment(samples, ctx, target, AugmentParams())
kept = projected.kept()
print(f"{len(kept)} of {len(samples)} samples usable on plane {target}")

# at 30 m the Hata share (0.35) still moves 3.5 GHz samples by tens of dB,
# which is why the free-space prior alone beats the sample-driven guide here
truth = scene.truth_maps[target]
err = [abs(e.rss_hat - truth[e.x, e.y]) for e in kept]
print("projection error: median %.3f, max %.3f" % (np.median(err), np.max(err)))

# the fitted free-space model over the whole plane, and the guide built on it
values, mask = sample_channels(projected, scene.grid)
guide = guide_map(values, mask, projected.prior)
print("prior MSE  ", mse(truth, projected.prior))
print("guide MSE  ", mse(truth, guide))
print("kriging MSE", mse(truth, kriging3d_estimate(samples, target)))
