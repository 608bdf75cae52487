"""Regenerate the bundled toy dataset (src/debias_rec/data/toy)."""
from pathlib import Path

from debias_rec.ingestion import write_interactions
from debias_rec.splitter import SplitConfig, split, write_split
from debias_rec.synthgen import SynthConfig, generate

OUT = Path(__file__).resolve().parents[1] / "src" / "debias_rec" / "data" / "toy"

if __name__ == "__main__":
    data = generate(SynthConfig(num_users=80, num_items=120, latent_dim=4, interactions_per_user=30,
                                test_interactions_per_user=10, seed=7))
    log = sorted(set(data.train + data.test), key=lambda r: (r.timestamp, r.user, r.item))
    seen, unique = set(), []
    for r in log:
        if (r.user, r.item) not in seen:
            seen.add((r.user, r.item))
            unique.append(r)
    OUT.mkdir(parents=True, exist_ok=True)
    write_interactions(OUT / "positives.tsv", unique)
    cfg = SplitConfig(seed=0)
    write_split(split(unique, cfg, 80, 120), OUT, cfg)
    print(f"wrote {len(unique)} interactions to {OUT}")
