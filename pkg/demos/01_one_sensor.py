"""One infrastructure sensor, one frame: render a depth image, lift it to a
point cloud, crop to the detection area and run the oracle detector."""
import numpy as np

from coopfusion.detector import DetectorParams, OracleDetector
from coopfusion.geometry import depth_to_pointcloud
from coopfusion.metrics import iou3d, match, restrict
from coopfusion.preprocess import preprocess
from coopfusion.scene import build_scenario, downsample_depth, render_depth, spawn_objects

cfg = build_scenario("t_junction")
sensor = cfg.sensors[3]
objects = spawn_objects(cfg, rng_seed=4, frame_id=10)
print(f"{len(objects)} objects on the road, sensor {sensor.id} at {np.round(sensor.position, 1)}")

depth = render_depth(sensor, objects, rng_seed=1, noise_sigma=cfg.noise_sigma)
hit = depth < cfg.max_range
print(f"depth image {depth.shape}, {hit.mean():.0%} of pixels see something")

# stride-2 downsampling, then back-projection in the camera frame
small = downsample_depth(depth, cfg.downsample_factor)
intr = sensor.intrinsics.downsampled(cfg.downsample_factor)
cloud = depth_to_pointcloud(small, intr, cfg.max_range, sensor_id=sensor.id)
print(f"{len(cloud)} points in the sensor frame")

# to the global frame and into the 80 x 40 m area
area = cfg.detection_area
cloud = preprocess(cloud, sensor, area, cfg.height_cutoff)
print(f"{len(cloud)} points left after cropping")

detector = OracleDetector(DetectorParams(), seed=0)
dets = restrict(detector(cloud, objects, frame_id=10, source_sensor=sensor.id), area)
cars = restrict([o for o in objects if o.cls == "car"], area)
m = match(cars, dets, 0.7)
print(f"{len(dets)} detections for {len(cars)} cars, {m.tp} matched at IOU 0.7")
for d in dets[:5]:
    best = max((iou3d(d.box, c.box) for c in cars), default=0.0)
    print(f"  score {d.score:.2f}  centre {np.round(d.box.center, 1)}  best IOU {best:.2f}")
