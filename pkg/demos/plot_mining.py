"""
Finding the strong modality
===========================

During the warm-up epochs the deployment network is asked to predict with
one modality removed at a time.  Removing the strong modality changes the
predicted class histogram the most.
"""

import logging

from mmanet import config_from_dict, format_mining_report, mining_report, pretrain_teacher, train_deployment

logging.basicConfig(level=logging.INFO, format="%(message)s")

names = ["RGB", "Depth", "IR"]
cfg = config_from_dict({"modality_names": names, "epochs": 6, "seed": 1, "data": {"seed": 1}})
teacher, _ = pretrain_teacher(cfg)
result = train_deployment(cfg, teacher)

# %%
# One divergence row per warm-up epoch, then their mean.  The weak set is
# every combination that lacks the winner.
print(format_mining_report(mining_report(result.mining, names)))
