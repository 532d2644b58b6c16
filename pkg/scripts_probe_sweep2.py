import time
import numpy as np
from causaltrim import GeneratorConfig, TrainConfig, TrimModel, build_splits, train
from causaltrim.training import model_config_for
from causaltrim import autodiff as ad

gen = GeneratorConfig(seed=101)
splits = build_splits(gen)


def run(label, use, **kw):
    tc = TrainConfig(seed=101, use_bank=use, use_trim=use, **kw)
    model = TrimModel(model_config_for(tc, gen), seed=101)
    t0 = time.time()
    res = train(model, splits, tc)
    i, o = res.final_metrics["iid_test"], res.final_metrics["ood_test"]
    msk = ""
    if use:
        with ad.no_grad():
            insts = splits.iid_test[:400]
            _, _, _, tout, _ = model.forward_batch(insts)
        m = tout.mask.data.reshape(len(insts), gen.regions)
        les = np.array([x.meta.lesion_region_index for x in insts])
        lm = m[np.arange(len(insts)), les]
        bm = (m.sum(axis=1) - lm) / (gen.regions - 1)
        msk = (f" | mask les {lm.mean():.3f} bg {bm.mean():.3f}"
               f" scale {model.trim.psi_scale.item():.2f}")
    print(f"{label:24s} iid_ov {i.overall:5.1f} op {i.open_style:5.1f} | "
          f"ood_ov {o.overall:5.1f} op {o.open_style:5.1f}{msk} [{time.time()-t0:.0f}s]",
          flush=True)


run("b4 baseline", False, batch_size=4)
run("b4 full", True, batch_size=4)
run("b16 H256 baseline", False, batch_size=16, hidden_dim=256)
run("b16 H256 full", True, batch_size=16, hidden_dim=256)
run("b8 wd0 baseline", False, batch_size=8, weight_decay=0.0)
run("b8 wd0 full", True, batch_size=8, weight_decay=0.0)
run("b2 full", True, batch_size=2)
