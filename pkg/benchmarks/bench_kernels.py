"""Compare the compiled and numpy convolution kernels.

Micro-benchmarks time im2col / col2im directly on the shapes the network uses;
the end-to-end rows run one training step and one protection in a fresh
interpreter per backend (the backend is fixed at import time).

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from rtimplant import _pykernels, kernels

# (name, input shape, stride) for each conv in the default network, batch 8
SHAPES = [
    ("enc1", (8, 4, 64, 64), 2),
    ("enc2", (8, 16, 32, 32), 2),
    ("mid", (8, 32, 16, 16), 1),
    ("dec1", (8, 32, 32, 32), 1),
    ("dec2", (8, 16, 64, 64), 1),
]

END_TO_END = r"""
import json, time
import numpy as np
from rtimplant import diffcore as dc, imagecore, implant, inpaintnet, kernels, synthtrain
model = inpaintnet.init_model(0)
scenes = np.stack(synthtrain.load_dataset(synthtrain.make_manifest(8, 0))).astype(np.float32)
masks = np.stack([synthtrain.random_rect_mask(i, 64, (0.02, 0.12)) for i in range(8)])
def step():
    model.params.zero_grad()
    dc.mse(inpaintnet.predict_batch(model, scenes, masks), dc.Tensor(scenes)).backward()
step()
t = time.perf_counter(); [step() for _ in range(REPEAT)]; train = (time.perf_counter() - t) / REPEAT
model.train_steps = 1
spec = implant.ProtectionSpec(imagecore.centered_square(64, 16))
t = time.perf_counter(); implant.optimize(model, scenes[0].astype(np.float64), spec); protect = time.perf_counter() - t
print(json.dumps({"backend": kernels.BACKEND, "train_step": train, "protect": protect}))
"""


def micro(repeat: int) -> list[tuple[str, float, float]]:
    rows = []
    if kernels.BACKEND != "cython":
        return rows
    from rtimplant import _ckernels

    rng = np.random.default_rng(0)
    for name, shape, stride in SHAPES:
        x = rng.random(shape, dtype=np.float32)
        n, c, h, w = shape
        cols = _pykernels.im2col(x, 3, 3, stride, 1)
        t_c = min(timeit.repeat(lambda: (_ckernels.im2col(x, 3, 3, stride, 1),
                                         _ckernels.col2im(cols, n, c, h, w, 3, 3, stride, 1)),
                                number=1, repeat=repeat))
        t_p = min(timeit.repeat(lambda: (_pykernels.im2col(x, 3, 3, stride, 1),
                                         _pykernels.col2im(cols, n, c, h, w, 3, 3, stride, 1)),
                                number=1, repeat=repeat))
        rows.append((name, t_c, t_p))
    return rows


def end_to_end(repeat: int) -> dict[str, dict]:
    out = {}
    for forced in (False, True):
        env = dict(os.environ)
        env.pop("RTIMPLANT_PURE_PYTHON", None)
        if forced:
            env["RTIMPLANT_PURE_PYTHON"] = "1"
        res = subprocess.run([sys.executable, "-c", END_TO_END.replace("REPEAT", str(repeat))],
                             env=env, capture_output=True, text=True, check=True)
        row = json.loads(res.stdout.strip().splitlines()[-1])
        out[row["backend"]] = row
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rows = micro(args.repeat)
    if rows:
        print(f"{'layer':<8}{'cython ms':>12}{'numpy ms':>12}{'speedup':>10}")
        for name, t_c, t_p in rows:
            print(f"{name:<8}{t_c * 1e3:>12.2f}{t_p * 1e3:>12.2f}{t_p / t_c:>10.2f}")
    else:
        print("compiled extension not built; micro-benchmarks skipped")

    e2e = end_to_end(args.repeat)
    print(f"\n{'backend':<8}{'train step s':>14}{'protect s':>12}")
    for backend, row in e2e.items():
        print(f"{backend:<8}{row['train_step']:>14.3f}{row['protect']:>12.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
