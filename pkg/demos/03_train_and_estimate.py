# Train a tiny expert mixture and estimate one plane with election.
# Epoch counts are far below the defaults so this runs in about a minute.
from radiolam.augment import SceneContext
from radiolam.baselines import kriging3d_estimate, rbf3d_estimate
from radiolam.experiments import make_scenes
from radiolam.metrics import mse, psnr
from radiolam.pipeline import RunConfig, estimate_map, train_moe
from radiolam.scene import draw_samples

cfg = RunConfig.from_dict({
    "generation": {
        "shared": {"epochs": 30},
        "domain": {"epochs": 30},
        "finetune": {"epochs": 2},
        "train_draws": 2,
    }
})

train = make_scenes(8, seed_base=100)        # 8 scenes per environment label
losses = {}
moe = train_moe(train, cfg, losses)
print("shared expert loss:", [round(v, 3) for v in losses["shared"][::5]])

scene = make_scenes(1, seed_base=900)[2]     # one held-out urban scene
samples = draw_samples(scene, 16, seed=0)
est = estimate_map(moe, SceneContext.of(scene), samples, 0, cfg, seed=1)
rep = est.report
print("winner", rep.winner_index, "of", len(rep.distances), "candidates")
print("distance spread (variance) %.2e, next sigma %.3f" % (rep.variance, rep.updated_sigma))

# a toy model this small usually trails kriging; the benchmark-scale run
# (160 scenes, default epochs) is what tests/test_acceptance.py measures
for h in range(3):
    truth = scene.truth_maps[h]
    est = estimate_map(moe, SceneContext.of(scene), samples, h, cfg, seed=1)
    for name, m in [("radiolam", est.map), ("candidate 0", est.candidates.candidates[0]),
                    ("rbf", rbf3d_estimate(samples, h)), ("kriging", kriging3d_estimate(samples, h))]:
        print(f"h{h} {name:12s} mse {mse(truth, m):.4f}  psnr {psnr(truth, m):5.2f} dB")
