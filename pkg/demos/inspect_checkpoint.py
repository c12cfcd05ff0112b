"""
What is inside a .dmnt checkpoint
=================================

Builds a model, saves it, then re-reads the file with nothing but struct
to show the wire format: magic, version, a sorted key=value config block,
and one length-prefixed tensor per parameter (then the batch-norm running
statistics). Finishes by proving the round trip is bit exact.
"""

import struct
import tempfile
from pathlib import Path

import numpy as np

from demnet import DemnetConfig, build_demnet, load_checkpoint, save_checkpoint

config = DemnetConfig(in_height=16, in_width=16, stem_filters=2,
                      block_filters=(3, 4), dense_widths=(10, 8, 6),
                      dropout_rates=(0.1, 0.1))
model = build_demnet(config, seed=31)
path = Path(tempfile.mkdtemp()) / "model.dmnt"
save_checkpoint(model, path)
raw = path.read_bytes()
print(f"wrote {path} ({len(raw)} bytes, "
      f"{model.parameter_count()} parameters)\n")

# --- header -------------------------------------------------------------------
magic, version, config_len = struct.unpack_from("<4sII", raw, 0)
print(f"magic {magic!r}  version {version}  config block {config_len} bytes")
offset = 12

# --- config block: sorted key=value lines ---------------------------------------
block = raw[offset:offset + config_len].decode("utf-8")
offset += config_len
print("config block:")
for line in block.splitlines():
    print(f"  {line}")

# --- tensors: u8 rank, rank u64 dims, float32 payload ----------------------------
print("\ntensors:")
count = 0
while offset < len(raw):
    rank = raw[offset]
    offset += 1
    dims = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    n = int(np.prod(dims)) if rank else 1
    payload = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
    offset += 4 * n
    name = (model.param_names[count] if count < len(model.param_names)
            else f"bn running stat {count - len(model.param_names)}")
    print(f"  {name:20s} shape {dims}  first value {payload[0]:+.6f}")
    count += 1
print(f"{count} tensors, no trailing bytes: {offset == len(raw)}")

# --- round trip -------------------------------------------------------------------
loaded = load_checkpoint(path)
same = all(a.tobytes() == b.tobytes()
           for a, b in zip(model.params, loaded.params))
print(f"\nreloaded parameters bit-identical: {same}")
