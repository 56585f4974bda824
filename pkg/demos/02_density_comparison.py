"""Held-out log-likelihood of a fitted tree model against simpler density models.

Deficits are measured against the generator's exact log-density, so 0 is perfect.

    python3 demos/02_density_comparison.py
"""

from tca.benchmark import table2_replicate

row = table2_replicate(m=4, tau=1, rep=0, contrasts=("kgv",))
print(f"status: {row['status']} ({row['seconds']:.0f}s)")
for name in ("GAU", "GMM", "IND", "ICA", "CL", "TCA_KGV"):
    print(f"  {name:8s} deficit {row[name]:.3f} nats")
