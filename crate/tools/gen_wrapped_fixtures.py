"""Build the wrapped-payload fixtures with Python's standard compressors.

Writes crates/core/tests/fixtures/wrapped/: the raw exploit pickle, one file
per loading path, and a small torch.save checkpoint. Nothing is unpickled.

Requires: python3 with lz4 and torch.
"""

import bz2
import gzip
import io
import lzma
import os
import pickle
import tarfile
import zipfile
import zlib

import lz4.frame

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures", "wrapped")


class Exploit:
    def __reduce__(self):
        return (os.system, ("echo pwned",))


def zip_bytes(name, data):
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as z:
        z.writestr(name, data)
    return buf.getvalue()


def tar_bytes(name, data):
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as t:
        info = tarfile.TarInfo(name)
        info.size = len(data)
        t.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def main():
    os.makedirs(OUT, exist_ok=True)
    payload = pickle.dumps(Exploit(), protocol=4)
    rows = {
        "pkl": payload,
        "zip_pkl": zip_bytes("model.pkl", payload),
        "zip_zip_pkl": zip_bytes("inner.zip", zip_bytes("model.pkl", payload)),
        # deliberately unhelpful member name
        "tar_pkl": tar_bytes("weights", payload),
        "bz2_pkl": bz2.compress(payload),
        "gz_pkl": gzip.compress(payload, mtime=0),
        "zlib_pkl": zlib.compress(payload),
        "lz4_pkl": lz4.frame.compress(payload),
        "lzma_pkl": lzma.compress(payload, format=lzma.FORMAT_ALONE),
        "xz_pkl": lzma.compress(payload, format=lzma.FORMAT_XZ),
    }
    for name, data in rows.items():
        with open(os.path.join(OUT, name + ".bin"), "wb") as f:
            f.write(data)

    import torch

    torch.save({"weight": torch.arange(4, dtype=torch.float32)}, os.path.join(OUT, "torch_state.pt"))


if __name__ == "__main__":
    main()
