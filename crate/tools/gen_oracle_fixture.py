#!/usr/bin/env python3
"""Regenerate crates/core/tests/fixtures/oracle_corpus.jsonl.gz.

Serializes random object graphs with the CPython pickler at protocols 0-5 and
records the `pickletools.genops` listing for each stream. Data-only graphs also
carry a typed value tree for the decompiler round-trip test.

Usage: python3 tools/gen_oracle_fixture.py [n_graphs] [seed]
"""
import collections
import datetime
import decimal
import fractions
import gzip
import io
import json
import os
import pickle
import pickletools
import random
import struct
import sys

ALPHABET = "abcXYZ019 _-'\"\\\n\téü中λ\U0001F600"


class Gen:
    def __init__(self, rng):
        self.rng = rng
        self.pool = []
        self.data_only = True

    def text(self):
        n = self.rng.choice([0, 1, 3, 8, 20, 300])
        return "".join(self.rng.choice(ALPHABET) for _ in range(n))

    def integer(self):
        r = self.rng
        kind = r.randrange(6)
        if kind == 0:
            return r.randrange(256)
        if kind == 1:
            return r.randrange(65536)
        if kind == 2:
            return r.randrange(-2**31, 2**31)
        if kind == 3:
            return r.randrange(-2**63, 2**64)
        if kind == 4:
            return r.choice([-1, 1]) * r.randrange(2**200)
        return r.choice([0, 1, -1, 255, 256, 65535, 65536, 2**31 - 1, -2**31, 2**31])

    def floating(self):
        r = self.rng
        return r.choice([
            0.0, -0.0, 1.0, 0.1, 1e300, -2.5e-310, float("inf"), float("-inf"),
            r.uniform(-1e6, 1e6), r.random(), 1e16, 123456789.125,
        ])

    def scalar(self):
        r = self.rng.randrange(9)
        if r == 0:
            return None
        if r == 1:
            return self.rng.choice([True, False])
        if r in (2, 3):
            return self.integer()
        if r == 4:
            return self.floating()
        if r in (5, 6):
            return self.text()
        if r == 7:
            return bytes(self.rng.randrange(256) for _ in range(self.rng.choice([0, 2, 9, 300])))
        return self.rng.choice([-7, "key", b"\x00\xff"])

    def hashable(self):
        r = self.rng.randrange(4)
        if r == 0:
            return self.integer()
        if r == 1:
            return self.text()
        if r == 2:
            return (self.integer(), self.text())
        return self.rng.choice([None, True, 2.5, b"k"])

    def extra(self, depth):
        global_objs = [
            lambda: collections.OrderedDict([(self.text(), self.integer())]),
            lambda: datetime.date(2000 + self.rng.randrange(30), 1 + self.rng.randrange(12), 1),
            lambda: complex(self.floating(), 1.5),
            lambda: decimal.Decimal("3.14159"),
            lambda: fractions.Fraction(self.rng.randrange(1, 99), 7),
            lambda: range(self.rng.randrange(10)),
            lambda: collections.Counter("hello"),
        ]
        self.data_only = False
        return self.rng.choice(global_objs)()

    def node(self, depth):
        r = self.rng
        if self.pool and r.random() < 0.1:
            return r.choice(self.pool)
        if depth <= 0:
            v = self.scalar()
        else:
            k = r.randrange(11)
            n = r.choice([0, 1, 2, 3, 4, 7])
            if k in (0, 1):
                v = [self.node(depth - 1) for _ in range(n)]
            elif k in (2, 3):
                v = tuple(self.node(depth - 1) for _ in range(n))
            elif k in (4, 5):
                v = {self.hashable(): self.node(depth - 1) for _ in range(n)}
            elif k == 6:
                v = {self.hashable() for _ in range(n)}
            elif k == 7:
                v = frozenset(self.hashable() for _ in range(n))
            elif k == 8:
                v = bytearray(r.randrange(256) for _ in range(n * 3))
            elif k == 9 and r.random() < 0.5:
                v = self.extra(depth)
            else:
                v = self.scalar()
        if isinstance(v, (list, dict, tuple, bytearray, set, frozenset, str, bytes)):
            self.pool.append(v)
        return v

    def graph(self):
        root = self.node(self.rng.randrange(1, 5))
        if self.rng.random() < 0.05:
            cyc = [root]
            cyc.append(cyc)
            self.data_only = False
            root = cyc
        return root


def typed_value(v):
    if v is None:
        return {"none": None}
    if isinstance(v, bool):
        return {"bool": v}
    if isinstance(v, int):
        return {"int": str(v)}
    if isinstance(v, float):
        return {"float": struct.pack("<d", v).hex()}
    if isinstance(v, str):
        return {"str": v}
    if isinstance(v, bytes):
        return {"bytes": v.hex()}
    if isinstance(v, bytearray):
        return {"bytearray": bytes(v).hex()}
    if isinstance(v, list):
        return {"list": [typed_value(x) for x in v]}
    if isinstance(v, tuple):
        return {"tuple": [typed_value(x) for x in v]}
    if isinstance(v, dict):
        return {"dict": [[typed_value(k), typed_value(x)] for k, x in v.items()]}
    if isinstance(v, frozenset):
        return {"frozenset": [typed_value(x) for x in v]}
    if isinstance(v, set):
        return {"set": [typed_value(x) for x in v]}
    raise TypeError(type(v))


def typed_arg(a):
    if a is None:
        return None
    if isinstance(a, bool):
        return {"bool": a}
    if isinstance(a, int):
        return {"int": str(a)}
    if isinstance(a, float):
        return {"float": struct.pack("<d", a).hex()}
    if isinstance(a, str):
        return {"str": a}
    if isinstance(a, (bytes, bytearray)):
        return {"bytes": bytes(a).hex()}
    raise TypeError(type(a))


class Thing:
    def __init__(self, a):
        self.a = a


class KwThing:
    def __new__(cls, *args, **kwargs):
        return super().__new__(cls)

    def __init__(self, x=0, *, tag=""):
        self.x = x
        self.tag = tag

    def __getnewargs_ex__(self):
        return (self.x,), {"tag": self.tag}


class PersistentPickler(pickle.Pickler):
    def __init__(self, f, protocol):
        super().__init__(f, protocol=protocol)
        self.proto_level = protocol

    def persistent_id(self, obj):
        if isinstance(obj, Thing):
            return ("storage", obj.a) if self.proto_level >= 1 else "storage%d" % obj.a
        return None


def object_samples(rng):
    """Streams exercising NEWOBJ, NEWOBJ_EX, BUILD, PERSID and BINPERSID."""
    out = []
    for proto in range(6):
        for _ in range(3):
            out.append((proto, pickle.dumps([Thing(rng.randrange(99)), KwThing(rng.randrange(9), tag="t")], protocol=proto)))
            buf = io.BytesIO()
            PersistentPickler(buf, protocol=proto).dump({"w": Thing(rng.randrange(99)), "b": [1, 2]})
            out.append((proto, buf.getvalue()))
    return out


def buffer_samples(rng):
    """Protocol-5 streams exercising NEXT_BUFFER / READONLY_BUFFER."""
    out = []
    for _ in range(4):
        ro = pickle.PickleBuffer(bytes(rng.randrange(256) for _ in range(16)))
        rw = pickle.PickleBuffer(bytearray(b"abcdef"))
        data = pickle.dumps([ro, rw, 3], protocol=5, buffer_callback=lambda b: False)
        out.append(data)
    return out


def main():
    n_graphs = int(sys.argv[1]) if len(sys.argv) > 1 else 1020
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 20240611
    rng = random.Random(seed)
    here = os.path.dirname(os.path.abspath(__file__))
    out_path = os.path.join(here, "..", "crates", "core", "tests", "fixtures", "oracle_corpus.jsonl.gz")
    records = []
    for gid in range(n_graphs):
        g = Gen(rng)
        obj = g.graph()
        value = typed_value(obj) if g.data_only else None
        for proto in range(6):
            data = pickle.dumps(obj, protocol=proto)
            ops = [[op.name, pos, typed_arg(arg)] for op, arg, pos in pickletools.genops(data)]
            records.append({"graph": gid, "proto": proto, "pickle": data.hex(), "ops": ops, "value": value})
    for data in buffer_samples(rng):
        ops = [[op.name, pos, typed_arg(arg)] for op, arg, pos in pickletools.genops(data)]
        records.append({"graph": -1, "proto": 5, "pickle": data.hex(), "ops": ops, "value": None})
    for proto, data in object_samples(rng):
        ops = [[op.name, pos, typed_arg(arg)] for op, arg, pos in pickletools.genops(data)]
        records.append({"graph": -2, "proto": proto, "pickle": data.hex(), "ops": ops, "value": None})
    with gzip.GzipFile(out_path, "wb", mtime=0) as f:
        for r in records:
            f.write((json.dumps(r, ensure_ascii=False) + "\n").encode("utf-8"))
    print(f"wrote {len(records)} streams from {n_graphs} graphs to {out_path}")


if __name__ == "__main__":
    main()
