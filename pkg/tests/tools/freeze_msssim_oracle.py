"""Regenerate the frozen MS-SSIM reference values in tests/data.

Run manually: python tests/tools/freeze_msssim_oracle.py
Requires tensorflow (reference implementation); the test suite itself only
reads the frozen JSON.
"""

import json
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1]))
from oracle_pairs import oracle_pairs  # noqa: E402

import tensorflow as tf  # noqa: E402

OUT = pathlib.Path(__file__).resolve().parents[1] / "data" / "msssim_oracle.json"


def main():
    records = []
    for i, x, y in oracle_pairs():
        a = tf.constant(np.transpose(x, (1, 2, 0))[None], dtype=tf.float64)
        b = tf.constant(np.transpose(y, (1, 2, 0))[None], dtype=tf.float64)
        value = float(tf.image.ssim_multiscale(a, b, max_val=1.0)[0])
        records.append({"index": i, "ms_ssim": value})
        print(f"pair {i}: {value:.8f}")
    OUT.write_text(json.dumps({"pairs": records}, indent=1))
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
