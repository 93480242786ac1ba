#!/usr/bin/env python3
# Copyright (c) 2026, The NVE Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the golden files used by the C++ tests.

Written against numpy and hashlib only, so it shares no code with the
library it checks. Run from this directory: python3 gen_golden.py
"""

import hashlib
import json
import math
import struct
from decimal import Decimal

import numpy as np

QK = 32


def f32(x):
    return np.float32(x)


def round_half_away(q):
    q = float(q)
    return int(math.copysign(math.floor(abs(q) + 0.5), q))


def encode(x, d):
    codes, clipped = [], False
    for v in x:
        c = round_half_away(f32(v) / d) + 8
        clipped |= c < 0 or c > 15
        codes.append(min(max(c, 0), 15))
    return codes, clipped


def quantize_q4_0(x):
    x = [f32(v) for v in x]
    imax = 0
    for i in range(1, QK):
        if abs(x[i]) > abs(x[imax]):
            imax = i
    m = x[imax]
    if m == 0:
        return 0, [8] * QK
    d16 = np.float16(m / f32(-8.0))
    if f32(d16) != 0:
        codes, clipped = encode(x, f32(d16))
        if not clipped:
            return int(d16.view(np.uint16)), codes
    opp = [abs(v) for v in x if v != 0 and (v > 0) != (m > 0)]
    if opp:
        d16 = np.float16(f32(max(opp)) / f32(7.0))
        if f32(d16) != 0:
            codes, clipped = encode(x, f32(d16))
            if not clipped:
                return int(d16.view(np.uint16)), codes
    pos = max([v for v in x if v > 0], default=f32(0))
    neg = max([-v for v in x if v < 0], default=f32(0))
    up = max(f32(pos) / f32(7.0), f32(neg) / f32(8.0))
    down = max(f32(neg) / f32(7.0), f32(pos) / f32(8.0))
    want = f32(min(up, down))
    d16 = np.float16(want)
    if f32(d16) < want:
        d16 = np.nextafter(d16, np.float16(np.inf))
    if down < up:
        d16 = -d16
    codes, _ = encode(x, f32(d16))
    return int(d16.view(np.uint16)), codes


def pack(d_bits, codes):
    out = bytes([d_bits & 0xFF, d_bits >> 8])
    return out + bytes(codes[j] | (codes[j + 16] << 4) for j in range(16))


def f32_bits(v):
    return struct.unpack("<I", struct.pack("<f", float(f32(v))))[0]


def q4_cases():
    rng = np.random.default_rng(20260101)
    cases = {
        "max_negative_unit": [-8.0] + [0.0] * 31,
        "all_zero": [0.0] * 32,
        "ramp": [(i - 15.5) / 4.0 for i in range(32)],
        "uniform_random": list(rng.uniform(-1.0, 1.0, QK).astype(np.float32)),
        "lopsided": [3.0] + list(rng.uniform(-2.9, 0.5, QK - 1).astype(np.float32)),
    }
    out = []
    for name, x in cases.items():
        d_bits, codes = quantize_q4_0(x)
        out.append({
            "name": name,
            "input_f32_bits": [f32_bits(v) for v in x],
            "d_bits": d_bits,
            "codes": codes,
            "bytes_hex": pack(d_bits, codes).hex(),
        })
    return out


def shortest(v):
    """printf-style shortest round-trip text: %f or %e, ties to %f."""
    if v == 0:
        return "0"
    dec = Decimal(repr(float(v)))
    sign, digits, exp = dec.as_tuple()
    digits = "".join(map(str, digits)).rstrip("0") or "0"
    exp10 = len("".join(map(str, dec.as_tuple().digits))) + exp - 1
    s = "-" if sign else ""
    mant = digits[0] + ("." + digits[1:] if len(digits) > 1 else "")
    sci = f"{s}{mant}e{'-' if exp10 < 0 else '+'}{abs(exp10):02d}"
    fixed = s + format(abs(dec).normalize(), "f")
    if "." in fixed:
        fixed = fixed.rstrip("0").rstrip(".")
    return fixed if len(fixed) <= len(sci) else sci


def canonical(value):
    if isinstance(value, dict):
        items = sorted(value.items(), key=lambda kv: kv[0].encode())
        return "{" + ",".join(json.dumps(k) + ":" + canonical(v) for k, v in items) + "}"
    if isinstance(value, list):
        return "[" + ",".join(canonical(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return shortest(value)
    return json.dumps(value)


def profile_case():
    raw = [3.0, 1.5, 0.25, 2.0, 0.0001]
    lo, hi = min(raw), max(raw)
    norm = [(r - lo) / (hi - lo) for r in raw]
    tau = 0.7
    doc = {
        "architecture_key": "0" * 64,
        "assignments": ["W4A16" if s >= tau else "W4A8" for s in norm],
        "epsilon": 1e-9,
        "format_version": 1,
        "normalized_scores": norm,
        "prompt_count": 12,
        "raw_scores": raw,
        "scorer_id": "combined",
        "tau": tau,
    }
    text = canonical(doc)
    return {"raw_scores": raw, "tau": tau, "epsilon": 1e-9, "prompt_count": 12,
            "architecture_key": "0" * 64, "canonical": text,
            "sha256": hashlib.sha256(text.encode()).hexdigest()}


def main():
    with open("q4_golden.json", "w") as f:
        json.dump({"blocks": q4_cases()}, f, indent=1)
        f.write("\n")
    with open("profile_golden.json", "w") as f:
        json.dump(profile_case(), f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
