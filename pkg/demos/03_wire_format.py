"""What travels from a sensor to the fusion centre, and what it costs."""
import numpy as np

from coopfusion.comms import (FusionCenterIngest, SensorPayload, TruncatedPayloadError,
                              cost_of_frame, decode_message, encode_message, points_message)

rng = np.random.default_rng(0)
pts = rng.uniform(-40, 40, size=(5000, 3))

data = encode_message(points_message(frame_id=7, sensor_id=2, points=pts))
print(f"5000 points -> {len(data)} bytes on the wire")
back = decode_message(data)
print(f"decoded frame {back.frame_id} from sensor {back.sensor_id}, {len(back.payload)} rows")

try:
    decode_message(data[:-100])
except TruncatedPayloadError as e:
    print("cut message rejected:", e)

# modelled cost per sensor, the number the scheme comparison reports
for scheme, payload in [("early", SensorPayload(5000, 0)), ("late", SensorPayload(0, 12)),
                        ("hybrid", SensorPayload(700, 12))]:
    print(f"{scheme:7s} {cost_of_frame(scheme, [payload]).kbit_per_sensor:8.3f} kbit")

# the fusion centre releases a frame once every sensor has reported
ingest = FusionCenterIngest([0, 1, 2])
for sid in (0, 2, 1):
    done = ingest.submit(encode_message(points_message(7, sid, pts[:10])))
    print(f"sensor {sid} in, frame released: {done}")
