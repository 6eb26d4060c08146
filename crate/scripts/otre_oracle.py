#!/usr/bin/env python3
"""Reference implementation of the OTRE generator and weight format.

Written independently of the Rust crate and used to produce the fixtures
under crates/core/tests/data:

    python3 scripts/otre_oracle.py golden   # 8x8 golden forward pass, test image
    python3 scripts/otre_oracle.py toy      # small trained denoiser

Both commands are deterministic for a given torch version.
"""

import argparse
import math
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

DATA = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "data"

KIND = {"conv2d": 0, "eca": 1, "norm": 2, "bias": 3}
SLOPE = 0.2
EPS = 1e-5


class Spec:
    def __init__(self, depth, base, ch=3, gamma=2, b=1, normalize=True, residual=True):
        self.depth, self.base, self.ch = depth, base, ch
        self.gamma, self.b = gamma, b
        self.normalize, self.residual = normalize, residual

    def arch_id(self):
        return "unet-eca-d{}-c{}-i{}-g{}-b{}-{}-{}".format(
            self.depth, self.base, self.ch, self.gamma, self.b,
            "in" if self.normalize else "nn", "res" if self.residual else "abs")

    def width(self, i):
        return self.base << i

    def eca_k(self, c):
        t = int(abs((math.log2(c) + self.b) / self.gamma))
        return t if t % 2 == 1 else t + 1

    def plan(self):
        out = []

        def conv(name, cin, cout, k):
            out.append((name + ".weight", "conv2d", [cout, cin, k, k]))
            out.append((name + ".bias", "bias", [cout]))

        def block(name, cin, cout):
            conv(name + ".conv", cin, cout, 3)
            if self.normalize:
                out.append((name + ".norm", "norm", [2, cout]))

        def rb(name, c):
            for j in (1, 2):
                conv(f"{name}.conv{j}", c, c, 3)
                if self.normalize:
                    out.append((f"{name}.norm{j}", "norm", [2, c]))
            out.append((name + ".eca", "eca", [self.eca_k(c)]))

        prev = self.ch
        for i in range(self.depth):
            c = self.width(i)
            block(f"enc{i}", prev, c)
            rb(f"enc{i}.rb", c)
            conv(f"enc{i}.down", c, c, 3)
            prev = c
        c = self.width(self.depth)
        block("mid", prev, c)
        rb("mid.rb", c)
        prev = c
        for i in reversed(range(self.depth)):
            c = self.width(i)
            conv(f"dec{i}.up", prev, c, 3)
            block(f"dec{i}", 2 * c, c)
            rb(f"dec{i}.rb", c)
            prev = c
        conv("out", prev, self.ch, 1)
        return out


def write_otre(path, arch_id, records):
    """records: list of (name, kind, shape, float32 array, sn_sigma or None)."""
    buf = bytearray(b"OTRE")
    buf += struct.pack("<H", 1)

    def put_str(s):
        b = s.encode()
        buf.extend(struct.pack("<I", len(b)) + b)

    put_str(arch_id)
    buf += struct.pack("<I", len(records))
    for name, kind, shape, data, sn in records:
        put_str(name)
        buf += struct.pack("<BB", KIND[kind], len(shape))
        for d in shape:
            buf += struct.pack("<I", d)
        if sn is None:
            buf += b"\x00"
        else:
            buf += b"\x01" + struct.pack("<f", sn)
        buf += np.asarray(data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def forward(spec, p, x):
    """p maps record names to float64 tensors; x is (1, C, H, W) float64."""

    def conv(name, t, stride=1):
        w = p[name + ".weight"]
        return F.conv2d(t, w, p[name + ".bias"], stride=stride, padding=w.shape[-1] // 2)

    def norm(name, t):
        if not spec.normalize:
            return t
        mean = t.mean(dim=(2, 3), keepdim=True)
        var = t.var(dim=(2, 3), unbiased=False, keepdim=True)
        g, b = p[name][0], p[name][1]
        return (t - mean) / torch.sqrt(var + EPS) * g.view(1, -1, 1, 1) + b.view(1, -1, 1, 1)

    def lrelu(t):
        return F.leaky_relu(t, SLOPE)

    def block(name, t):
        return lrelu(norm(name + ".norm", conv(name + ".conv", t)))

    def eca(name, t):
        k = p[name]
        pooled = t.mean(dim=(2, 3)).unsqueeze(1)
        att = torch.sigmoid(F.conv1d(pooled, k.view(1, 1, -1), padding=k.numel() // 2))
        return t * att.squeeze(1).unsqueeze(-1).unsqueeze(-1)

    def rb(name, t):
        r = lrelu(norm(name + ".norm1", conv(name + ".conv1", t)))
        r = norm(name + ".norm2", conv(name + ".conv2", r))
        return t + eca(name + ".eca", r)

    h = x
    skips = []
    for i in range(spec.depth):
        h = rb(f"enc{i}.rb", block(f"enc{i}", h))
        skips.append(h)
        h = lrelu(conv(f"enc{i}.down", h, stride=2))
    h = rb("mid.rb", block("mid", h))
    for i in reversed(range(spec.depth)):
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = lrelu(conv(f"dec{i}.up", h))
        h = torch.cat([h, skips[i]], dim=1)
        h = rb(f"dec{i}.rb", block(f"dec{i}", h))
    out = conv("out", h)
    return torch.clamp(x + out if spec.residual else out, 0.0, 1.0)


def sigma_max(w):
    return torch.linalg.matrix_norm(w.reshape(w.shape[0], -1), ord=2)


def random_params(spec, gen):
    """Spectrally normalized random weights; returns float64 params and records."""
    params, records = {}, []
    for name, kind, shape in spec.plan():
        if kind == "conv2d":
            w = torch.randn(shape, generator=gen, dtype=torch.float64)
            s = sigma_max(w).item()
            data = (w / s).float()
            sn = s
        elif kind == "bias":
            data = (0.1 * torch.randn(shape, generator=gen, dtype=torch.float64)).float()
            sn = None
        elif kind == "norm":
            g = 1.0 + 0.3 * torch.randn(shape[1], generator=gen, dtype=torch.float64)
            b = 0.2 * torch.randn(shape[1], generator=gen, dtype=torch.float64)
            data = torch.stack([g, b]).float()
            sn = None
        else:
            data = torch.randn(shape, generator=gen, dtype=torch.float64).float()
            sn = None
        params[name] = data.double()
        records.append((name, kind, shape, data.numpy().ravel(), sn))
    return params, records


def to_u8(t):
    """(C, H, W) in [0, 1] -> HWC uint8, rounding half away from zero."""
    a = np.clip(t.detach().numpy(), 0.0, 1.0) * 255.0
    return np.floor(a + 0.5).astype(np.uint8).transpose(1, 2, 0)


def golden():
    DATA.mkdir(parents=True, exist_ok=True)
    spec = Spec(depth=2, base=4)
    gen = torch.Generator().manual_seed(20240507)
    params, records = random_params(spec, gen)
    # keep most outputs away from the clamp
    for i, (name, kind, shape, data, sn) in enumerate(records):
        if name.startswith("out."):
            data = (0.1 * torch.from_numpy(data)).float()
            params[name] = data.double().view(shape)
            records[i] = (name, kind, shape, data.numpy(), sn)
    write_otre(DATA / "golden_8x8.otre", spec.arch_id(), records)

    rng = np.random.default_rng(7)
    pixels = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    Image.fromarray(pixels, "RGB").save(DATA / "golden_input.png")
    x = torch.from_numpy(pixels.transpose(2, 0, 1).astype(np.float64) / 255.0).unsqueeze(0)

    y = forward(spec, params, x)[0]
    y.numpy().astype("<f4").tofile(DATA / "golden_output.f32")
    Image.fromarray(to_u8(y), "RGB").save(DATA / "golden_output.png")
    fundus = fundus_image()
    Image.fromarray(to_u8(torch.from_numpy(fundus)), "RGB").save(DATA / "fundus_64.png")

    clamped = ((y == 0) | (y == 1)).double().mean().item()
    print(f"golden: max |G(x) - x| = {(y - x[0]).abs().max().item():.4f}, clamped {clamped:.3f}")


def fundus_image(side=64):
    """Fundus-like RGB test picture: orange disc, bright optic disc, dark vessels."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / (side - 1)
    r = np.hypot(yy - 0.5, xx - 0.5)
    disc = np.clip((0.48 - r) * 20, 0, 1)
    img = np.stack([0.85 - 0.4 * r, 0.45 - 0.3 * r, 0.2 - 0.1 * r]) * disc
    od = np.exp(-((yy - 0.5) ** 2 + (xx - 0.7) ** 2) / 0.004)
    img += np.array([0.15, 0.4, 0.3])[:, None, None] * od * disc
    for a, b in [(0.6, -0.3), (-0.5, 0.2), (0.2, 0.4)]:
        curve = 0.5 + a * (xx - 0.7) ** 2 + b * (xx - 0.7)
        img *= 1 - 0.5 * np.exp(-((yy - curve) ** 2) / 0.0003) * disc
    return np.clip(img, 0, 1)


def smooth_batch(n, side, gen):
    u = torch.arange(side, dtype=torch.float64) / side
    vv, uu = torch.meshgrid(u, u, indexing="ij")
    out = torch.empty(n, 3, side, side, dtype=torch.float64)
    for i in range(n):
        for c in range(3):
            img = torch.full((side, side), 0.25 + 0.5 * torch.rand(1, generator=gen).item(), dtype=torch.float64)
            for _ in range(4):
                amp, f, ang, ph = torch.rand(4, generator=gen, dtype=torch.float64).tolist()
                amp = 0.03 + 0.09 * amp
                f = (0.5 + 2.5 * f) * 2 * math.pi
                ang, ph = ang * 2 * math.pi, ph * 2 * math.pi
                img = img + amp * torch.cos(f * math.cos(ang) * uu + f * math.sin(ang) * vv + ph)
            out[i, c] = img.clamp(0.02, 0.98)
    return out


def degrade(x, gen, blur=1.0, noise=0.05):
    r = math.ceil(3 * blur)
    taps = torch.exp(-torch.arange(-r, r + 1, dtype=torch.float64) ** 2 / (2 * blur * blur))
    taps = taps / taps.sum()
    c = x.shape[1]
    y = F.pad(x, (r, r, r, r), mode="replicate")
    y = F.conv2d(y, taps.view(1, 1, 1, -1).repeat(c, 1, 1, 1), groups=c)
    y = F.conv2d(y, taps.view(1, 1, -1, 1).repeat(c, 1, 1, 1), groups=c)
    y = y + noise * torch.randn(y.shape, generator=gen, dtype=torch.float64)
    return y.clamp(0.0, 1.0)


def psnr(a, b):
    mse = ((a - b) ** 2).mean(dim=(1, 2, 3))
    return (10 * torch.log10(1.0 / mse)).mean().item()


def toy(steps, out):
    torch.set_num_threads(max(1, torch.get_num_threads()))
    spec = Spec(depth=2, base=8)
    gen = torch.Generator().manual_seed(11)
    _, records = random_params(spec, gen)
    raw = {}
    for name, kind, shape, data, _ in records:
        t = torch.tensor(np.asarray(data).reshape(shape), dtype=torch.float32)
        if kind == "conv2d":
            t = t * 0.5
        if name == "out.weight":
            t = t * 0.01
        if name == "out.bias":
            t = torch.zeros_like(t)
        raw[name] = t.requires_grad_(True)
    kinds = {name: kind for name, kind, _ in spec.plan()}

    def effective(params):
        eff = {}
        for name, t in params.items():
            eff[name] = t / sigma_max(t) if kinds[name] == "conv2d" else t
        return eff

    opt = torch.optim.Adam(raw.values(), lr=2e-3)
    data_gen = torch.Generator().manual_seed(12)
    clean_val = smooth_batch(16, 64, data_gen).float()
    noisy_val = degrade(clean_val.double(), data_gen).float()
    for step in range(steps):
        clean = smooth_batch(8, 64, data_gen)
        noisy = degrade(clean, data_gen)
        pred = forward(spec, effective(raw), noisy.float())
        loss = F.mse_loss(pred, clean.float())
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 100 == 0 or step == steps - 1:
            with torch.no_grad():
                v = forward(spec, effective(raw), noisy_val)
                print(f"step {step}: loss {loss.item():.6f} val gain "
                      f"{psnr(v, clean_val) - psnr(noisy_val, clean_val):.3f} dB", flush=True)

    recs = []
    with torch.no_grad():
        for name, kind, shape in spec.plan():
            t = raw[name].detach().double()
            sn = None
            if kind == "conv2d":
                s = sigma_max(t).item()
                t, sn = t / s, s
            recs.append((name, kind, shape, t.float().numpy().ravel(), sn))
    write_otre(out, spec.arch_id(), recs)
    print("wrote", out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    sub.add_parser("golden")
    t = sub.add_parser("toy")
    t.add_argument("--steps", type=int, default=1500)
    t.add_argument("--out", type=Path, default=DATA / "toy_denoiser.otre")
    args = ap.parse_args()
    torch.manual_seed(0)
    if args.cmd == "golden":
        golden()
    else:
        toy(args.steps, args.out)


if __name__ == "__main__":
    main()
