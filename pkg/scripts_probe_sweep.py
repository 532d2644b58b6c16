import time
import numpy as np
from causaltrim import GeneratorConfig, TrainConfig, TrimModel, build_splits, train
from causaltrim.training import model_config_for
from causaltrim import autodiff as ad

gen = GeneratorConfig(seed=101)
splits = build_splits(gen)


def run(label, use_trim_bank, feature_dim=64, vis_mult=1.0, fus_mult=1.0, q_mult=1.0):
    tc = TrainConfig(seed=101, use_bank=use_trim_bank, use_trim=use_trim_bank,
                     feature_dim=feature_dim)
    model = TrimModel(model_config_for(tc, gen), seed=101)
    model.vis_w.data = model.vis_w.data * vis_mult
    model.fus_w.data = model.fus_w.data * fus_mult
    model.head_w.data = model.head_w.data * fus_mult
    model.q_embed.data = model.q_embed.data * q_mult
    t0 = time.time()
    res = train(model, splits, tc)
    i, o = res.final_metrics["iid_test"], res.final_metrics["ood_test"]
    msk = ""
    if use_trim_bank:
        with ad.no_grad():
            insts = splits.iid_test[:400]
            _, _, _, tout, _ = model.forward_batch(insts)
        m = tout.mask.data.reshape(len(insts), gen.regions)
        les = np.array([x.meta.lesion_region_index for x in insts])
        lm = m[np.arange(len(insts)), les]
        bm = (m.sum(axis=1) - lm) / (gen.regions - 1)
        msk = f" | mask les {lm.mean():.3f} bg {bm.mean():.3f}"
    print(f"{label:36s} iid_ov {i.overall:5.1f} open {i.open_style:5.1f} | "
          f"ood_ov {o.overall:5.1f} open {o.open_style:5.1f}{msk} [{time.time()-t0:.0f}s]",
          flush=True)


for d in (16, 32, 64):
    run(f"D={d} baseline", False, feature_dim=d)
    run(f"D={d} full", True, feature_dim=d)

run("D=32 fus0.3 baseline", False, feature_dim=32, fus_mult=0.3)
run("D=32 fus0.3 full", True, feature_dim=32, fus_mult=0.3)
run("D=32 q3 baseline", False, feature_dim=32, q_mult=3.0)
run("D=32 q3 full", True, feature_dim=32, q_mult=3.0)
run("D=32 vis0.3 baseline", False, feature_dim=32, vis_mult=0.3)
run("D=32 vis0.3 full", True, feature_dim=32, vis_mult=0.3)
