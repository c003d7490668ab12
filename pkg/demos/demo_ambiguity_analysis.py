"""Measure how ambiguous the corpus is: caption spread within one video.

For every multi-caption video we take the least similar caption pair
(min intra cosine) and compare it with the average similarity of caption
pairs from different videos (mean inter cosine). A video whose own
captions disagree more than random cross-video pairs is exactly the case
a single-vector embedding cannot serve.
"""

from pathlib import Path

from protomatch.dataset import SynthConfig, synth_corpus
from protomatch.diagnostics import intra_inter_stats, write_ambiguity_csvs
from protomatch.trainer import TrainConfig, train

OUT_DIR = Path("demo_runs/ambiguity")

corpus = synth_corpus(SynthConfig(seed=0))
print(f"corpus: {corpus.num_videos} videos, {corpus.num_texts} captions")

# ---------------------------------------------------------------------------
# Raw caption features.
# ---------------------------------------------------------------------------

raw = intra_inter_stats(corpus)
print()
print("raw caption features:")
print(f"  mean inter-video cosine: {raw.mean_inter:.3f}")
worst_id, worst_value = min(raw.min_intra, key=lambda pair: pair[1])
print(f"  most ambiguous video: {worst_id} (min intra cosine {worst_value:.3f})")
print(f"  fraction of videos with min intra < mean inter: {raw.fraction_below:.3f}")

# ---------------------------------------------------------------------------
# The same statistics in the learned joint space.
# ---------------------------------------------------------------------------

cfg = TrainConfig(
    n_prototypes=3, embed_dim=32, batch_size=16, epochs=80,
    warmup_epochs=5, peak_lr=5e-3, seed=0,
)
params, _ = train(corpus, cfg)
learned = intra_inter_stats(corpus, params)
print()
print("learned joint space:")
print(f"  mean inter-video cosine: {learned.mean_inter:.3f}")
print(f"  fraction of videos with min intra < mean inter: {learned.fraction_below:.3f}")

# ---------------------------------------------------------------------------
# Artifacts: histogram and per-video minima as CSV.
# ---------------------------------------------------------------------------

write_ambiguity_csvs(raw, OUT_DIR / "raw")
write_ambiguity_csvs(learned, OUT_DIR / "learned")
print()
print(f"wrote inter_hist.csv, min_intra.csv, summary.json under {OUT_DIR}/raw "
      f"and {OUT_DIR}/learned")
