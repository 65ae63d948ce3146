"""
From DRAM commands back to physical addresses
=============================================

A bus probe sees ACTIVATE / READ / WRITE / PRECHARGE commands carrying
rank, bank group, bank and a row or column number.  With the address map
those commands turn back into physical addresses.
"""

import io

import numpy as np

from memsnoop.dram import (AddressMap, decode_commands, encode_requests, infer_address_map,
                           random_address_map, write_command_log)

amap = AddressMap.default()
print(amap.to_text())

# three reads, two of them in the same row: one ACTIVATE serves both
reqs = [(0, 0x1240, False), (4, 0x1280, False), (9, 0x7654_3200, True)]
log = encode_requests(reqs, amap)
buf = io.StringIO()
write_command_log(log, buf)
print(buf.getvalue())

bus = decode_commands(log, amap)
for rec in bus:
    print(rec.timestamp, rec.access_type, hex(rec.address))

###############################################################################
# The map itself is not documented by the vendor.  Probing a few hundred
# addresses whose DRAM coordinates are known (from timing side channels on
# real hardware) is enough to solve for it over GF(2).

rng = np.random.default_rng(1)
secret = random_address_map(rng)
pas = (rng.integers(0, secret.geometry.capacity >> 6, 200) << 6).tolist()
samples = [(pa, tuple(secret.to_dram(pa))) for pa in pas]
found = infer_address_map(samples)
print("recovered the hidden map:", found == secret)
