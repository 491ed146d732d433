"""End-to-end analysis of a synthetic orchard image, then dataset splits."""
import tempfile
from pathlib import Path

from citruslens.backends import resolve_backends
from citruslens.dataset import ManifestEntry, SplitSpec, kfold, split
from citruslens.imaging import write_png
from citruslens.pipeline import PipelineConfig, analyze, report_to_json
from citruslens.synthetic import planted_scene

# %% Three fruits of known species, one with a disease patch
image, planted = planted_scene()
for p in planted:
    print("planted", p)

out = Path(tempfile.mkdtemp())
config = PipelineConfig(crops_dir=str(out / "crops"))
report, overlay = analyze(image, "scene", config, resolve_backends({}))
for f in report.findings:
    print(f.index, f.bbox.as_tuple(), round(f.det_confidence, 3), f.species.label, f.disease.present)
print("stages", {s.name: round(s.wall_ms, 1) for s in report.stages})
(out / "report.json").write_text(report_to_json(report))
write_png(out / "overlay.png", overlay)
print("wrote", out)

# %% Seeded 80:15:5 split and 5-fold cross-validation over 47 ids
ids = [ManifestEntry(f"img{i:03d}", f"img{i:03d}.jpg") for i in range(47)]
train, test, val = split(ids, SplitSpec(80, 15, 5, seed=11))
print("split sizes", len(train), len(test), len(val))
for i, (tr, va) in enumerate(kfold(ids, 5, seed=11)):
    print("fold", i, len(tr), len(va))
