"""Early, hybrid and late fusion on a short T-junction sequence.

Early fusion ships every point and sees the most; late fusion ships a few
boxes per sensor; hybrid sits between the two.
"""
import tempfile
from pathlib import Path

from coopfusion.dataset import Dataset, write_dataset
from coopfusion.detector import DetectorParams, OracleDetector
from coopfusion.experiments import (SchemeRunner, all_subsets, best_per_cardinality,
                                    compare_schemes, load_observations, sensor_sweep)
from coopfusion.fusion import FusionConfig
from coopfusion.metrics import recall_at_precision
from coopfusion.scene import build_scenario

cfg = build_scenario("t_junction")
root = Path(tempfile.mkdtemp()) / "tj"
write_dataset(root, cfg, n_frames=20, seed=0)
obs = load_observations(Dataset(root))

runner = SchemeRunner(OracleDetector(DetectorParams()), FusionConfig(hybrid_radius=cfg.hybrid_radius))
for r in compare_schemes(obs, cfg.detection_area, runner):
    aps = "  ".join(f"AP@{k:g}={v:.3f}" for k, v in r.ap.items())
    print(f"{r.scheme:7s} {aps}   {r.kbit_per_sensor:8.1f} kbit/sensor")

# which sensors matter: best set of each size
rows = sensor_sweep(obs, cfg.detection_area, runner, all_subsets(cfg.sensor_ids))
for k, (best,) in best_per_cardinality(rows, top=1).items():
    r95 = recall_at_precision(best.curve_early, 0.95)
    print(f"{k} sensors: {best.sensors}  EF={best.ap_early:.3f}  LF={best.ap_late:.3f}  recall@P.95={r95:.3f}")
