"""
Relation distillation weighted by uncertainty
=============================================

The distillation loss compares the pairwise cosine structure of teacher and
deployment features, and leans on the samples the teacher is least sure of.
"""

import torch

from mmanet.mad import classification_uncertainty, mad_loss, relation_matrix

torch.manual_seed(0)
z_t = torch.randn(6, 4, dtype=torch.float64)

# %%
# A rotated, rescaled copy has the same relations, so the loss vanishes.
q, _ = torch.linalg.qr(torch.randn(4, 4, dtype=torch.float64))
z_same = 3.0 * z_t @ q
y_t = torch.randn(6, 2, dtype=torch.float64)
print("rotated copy:", mad_loss(z_t, z_same, y_t).item())
print(relation_matrix(z_t).numpy().round(2))

# %%
# Uncertain teacher predictions get most of the weight.
y_t = torch.tensor([[0.0, 0.0], [8.0, 0.0], [3.0, 1.0], [0.0, 12.0], [0.2, 0.0], [5.0, 4.0]],
                   dtype=torch.float64)
u = classification_uncertainty(y_t)
for h, w in zip(u.entropy, u.weights):
    print(f"entropy {h:.3f}  weight {w:.3f}")

# %%
# Weighted versus plain relation matching on unrelated features.
z_d = torch.randn(6, 5, dtype=torch.float64)
print("weighted:", mad_loss(z_t, z_d, y_t).item())
print("uniform: ", mad_loss(z_t, z_d, y_t, mode="sp").item())
