#!/usr/bin/env python3
"""Build the desk-scale MNIST fixture used by the LeNet-5 tests.

Reads the 10,000 digits shipped with the `mnist` npm package (v1.1.0),
writes a deterministic train/test split as IDX files and trains a float
LeNet-5 whose weights are written in the portable tensor format read by
`imac_core::nn::tensor_file`.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_fixture.py package crates/core/tests/fixtures/mnist

Only the test split and the weights are committed; the train split is
written next to them with `--keep-train`.
"""

import argparse
import json
import math
import os
import struct

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SEED = 20190511
TEST_FRACTION = 0.4


def load_digits(pkg_dir):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg_dir, "src", "digits", f"{digit}.json")) as fh:
            data = np.asarray(json.load(fh)["data"], dtype=np.float64)
        data = data.reshape(-1, 28 * 28)
        images.append(np.rint(data * 255.0).clip(0, 255).astype(np.uint8))
        labels.append(np.full(len(data), digit, dtype=np.uint8))
    return images, labels


def split(images, labels):
    train_x, train_y, test_x, test_y = [], [], [], []
    for x, y in zip(images, labels):
        n_test = int(round(len(x) * TEST_FRACTION))
        train_x.append(x[:-n_test])
        train_y.append(y[:-n_test])
        test_x.append(x[-n_test:])
        test_y.append(y[-n_test:])
    rng = np.random.RandomState(SEED)
    out = []
    for xs, ys in ((train_x, train_y), (test_x, test_y)):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        perm = rng.permutation(len(x))
        out.append((x[perm], y[perm]))
    return out


def write_idx_images(path, x):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(x), 28, 28))
        fh.write(x.astype(np.uint8).tobytes())


def write_idx_labels(path, y):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(y)))
        fh.write(y.astype(np.uint8).tobytes())


def write_tensors(path, named):
    with open(path, "wb") as fh:
        fh.write(b"IMACTNS1")
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", 0, arr.ndim))
            fh.write(struct.pack("<" + "I" * arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


class RoundSte(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return torch.round(x)

    @staticmethod
    def backward(ctx, grad):
        return grad


def fake_quant_weight(w, bits=5):
    scale = w.abs().max().clamp(min=1e-12) / (2 ** (bits - 1) - 1)
    return RoundSte.apply(w / scale) * scale


def fake_quant_weight_scale(w, bits=5):
    return w.abs().max().clamp(min=1e-12) / (2 ** (bits - 1) - 1)


def fake_quant_act(x, bits=4):
    flat = x.flatten(1).max(1).values.clamp(min=1e-12)
    scale = (flat / (2 ** bits - 1)).view(-1, *([1] * (x.dim() - 1)))
    return RoundSte.apply(x / scale) * scale, scale.flatten()


# Per-group MAC error during fine-tuning, in units of one integer product.
MAC_SIGMA = 0.6
GROUP = 10


class LeNet5(nn.Module):
    def __init__(self):
        super().__init__()
        self.quant = False
        self.conv1 = nn.Conv2d(1, 6, 5, padding=2)
        self.conv2 = nn.Conv2d(6, 16, 5)
        self.fc1 = nn.Linear(400, 120)
        self.fc2 = nn.Linear(120, 84)
        self.fc3 = nn.Linear(84, 10)

    def layer(self, module, x):
        if not self.quant:
            return module(x)
        x, act_scale = fake_quant_act(x)
        w = fake_quant_weight(module.weight)
        if isinstance(module, nn.Conv2d):
            y = F.conv2d(x, w, module.bias, padding=module.padding)
        else:
            y = F.linear(x, w, module.bias)
        if self.training:
            fan_in = module.weight[0].numel()
            sigma = MAC_SIGMA * math.sqrt(math.ceil(fan_in / GROUP))
            lsb = fake_quant_weight_scale(module.weight).detach() * act_scale
            lsb = lsb.view(-1, *([1] * (y.dim() - 1)))
            y = y + torch.randn_like(y) * sigma * lsb
        return y

    def forward(self, x):
        x = F.max_pool2d(F.relu(self.layer(self.conv1, x)), 2)
        x = F.max_pool2d(F.relu(self.layer(self.conv2, x)), 2)
        x = x.flatten(1)
        x = F.relu(self.layer(self.fc1, x))
        x = F.relu(self.layer(self.fc2, x))
        return self.layer(self.fc3, x)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--epochs", type=int, default=24)
    ap.add_argument("--qat-epochs", type=int, default=12)
    ap.add_argument("--keep-train", action="store_true")
    args = ap.parse_args()

    torch.manual_seed(SEED)
    np.random.seed(SEED)
    os.makedirs(args.out_dir, exist_ok=True)

    images, labels = load_digits(args.package_dir)
    (train_x, train_y), (test_x, test_y) = split(images, labels)
    write_idx_images(os.path.join(args.out_dir, "test-images-idx3-ubyte"), test_x)
    write_idx_labels(os.path.join(args.out_dir, "test-labels-idx1-ubyte"), test_y)
    if args.keep_train:
        write_idx_images(os.path.join(args.out_dir, "train-images-idx3-ubyte"), train_x)
        write_idx_labels(os.path.join(args.out_dir, "train-labels-idx1-ubyte"), train_y)

    xt = torch.tensor(train_x, dtype=torch.float32).reshape(-1, 1, 28, 28) / 255.0
    yt = torch.tensor(train_y, dtype=torch.long)
    xv = torch.tensor(test_x, dtype=torch.float32).reshape(-1, 1, 28, 28) / 255.0
    yv = torch.tensor(test_y, dtype=torch.long)

    model = LeNet5()
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=[12, 20], gamma=0.1)
    for epoch in range(args.epochs + args.qat_epochs):
        if epoch == args.epochs:
            # Quantization- and noise-aware fine-tune: 5-bit symmetric weights,
            # 4-bit activations, Gaussian MAC error on every output.
            model.quant = True
            opt = torch.optim.Adam(model.parameters(), lr=1e-4)
            sched = torch.optim.lr_scheduler.StepLR(opt, step_size=1000)
        model.train()
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i : i + 64]
            batch = xt[idx]
            # +-2 pixel shifts
            dx, dy = np.random.randint(-2, 3, size=2)
            batch = torch.roll(batch, shifts=(int(dy), int(dx)), dims=(2, 3))
            loss = F.cross_entropy(model(batch), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
        model.eval()
        with torch.no_grad():
            quant = model.quant
            model.quant = False
            acc = (model(xv).argmax(1) == yv).float().mean().item()
            model.quant = True
            qacc = (model(xv).argmax(1) == yv).float().mean().item()
            model.quant = quant
        print(
            f"epoch {epoch + 1:2d} loss {loss.item():.4f} "
            f"float {acc * 100:.2f}% quantized {qacc * 100:.2f}%"
        )

    named = []
    for name in ("conv1", "conv2", "fc1", "fc2", "fc3"):
        layer = getattr(model, name)
        named.append((f"{name}.weight", layer.weight.detach().numpy()))
        named.append((f"{name}.bias", layer.bias.detach().numpy()))
    write_tensors(os.path.join(args.out_dir, "lenet5.tensors"), named)


if __name__ == "__main__":
    main()
