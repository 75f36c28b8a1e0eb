#!/usr/bin/env python3
"""Export ImageNet weights to the safetensors files `lungfuse` loads.

    python scripts/export_torchvision_weights.py weights/
    python scripts/export_torchvision_weights.py weights/ --shufflenet shufflenet_v1.pth

SqueezeNet 1.1, MobileNet-v2 and EfficientNet-B0 come from torchvision.
torchvision has no ShuffleNet v1, so pass a PyTorch state dict for it
(g=1, widths 136/272/544, repeats 4/8/4) whose keys follow the layout
printed by `lungfuse layers shufflenet`.

With --random-init no download happens; each model also gets a
`<name>.reference.json` holding its logits for the input stored in
`reference_input.safetensors`; the Rust test suite uses these to
cross-check the layer implementations.
"""

import argparse
import json
import pathlib

import torch
import torchvision
from safetensors.torch import save_file

MODELS = {
    "squeezenet1_1": (torchvision.models.squeezenet1_1, "SqueezeNet1_1_Weights"),
    "mobilenet_v2": (torchvision.models.mobilenet_v2, "MobileNet_V2_Weights"),
    "efficientnet_b0": (torchvision.models.efficientnet_b0, "EfficientNet_B0_Weights"),
}


class ShuffleUnit(torch.nn.Module):
    def __init__(self, c_in, c_out, groups, first_grouped, downsample):
        super().__init__()
        mid = c_out // 4
        branch_out = c_out - c_in if downsample else c_out
        g1 = groups if first_grouped else 1
        nn = torch.nn
        self.gconv1 = nn.Conv2d(c_in, mid, 1, groups=g1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.dwconv = nn.Conv2d(mid, mid, 3, stride=2 if downsample else 1, padding=1, groups=mid, bias=False)
        self.bn2 = nn.BatchNorm2d(mid)
        self.gconv2 = nn.Conv2d(mid, branch_out, 1, groups=groups, bias=False)
        self.bn3 = nn.BatchNorm2d(branch_out)
        self.g1 = g1
        self.downsample = downsample

    def forward(self, x):
        h = torch.relu(self.bn1(self.gconv1(x)))
        if self.g1 > 1:
            n, c, hh, ww = h.shape
            h = h.view(n, self.g1, c // self.g1, hh, ww).transpose(1, 2).reshape(n, c, hh, ww)
        h = self.bn3(self.gconv2(self.bn2(self.dwconv(h))))
        if self.downsample:
            return torch.relu(torch.cat([torch.nn.functional.avg_pool2d(x, 3, 2, 1), h], 1))
        return torch.relu(x + h)


class ShuffleNetV1(torch.nn.Module):
    """Reference ShuffleNet v1 (g=1) with the parameter layout lungfuse expects."""

    def __init__(self, groups=1, stem=24, widths=(136, 272, 544), repeats=(4, 8, 4), num_classes=1000):
        super().__init__()
        nn = torch.nn
        self.conv1 = nn.Sequential(nn.Conv2d(3, stem, 3, 2, 1, bias=False), nn.BatchNorm2d(stem), nn.ReLU())
        self.maxpool = nn.MaxPool2d(3, 2, 1)
        c_in = stem
        for si, (c_out, reps) in enumerate(zip(widths, repeats)):
            units = []
            for u in range(reps):
                units.append(ShuffleUnit(c_in, c_out, groups, not (si == 0 and u == 0), u == 0))
                c_in = c_out
            setattr(self, f"stage{si + 2}", nn.Sequential(*units))
        self.classifier = nn.Linear(c_in, num_classes)

    def forward(self, x):
        x = self.maxpool(self.conv1(x))
        x = self.stage4(self.stage3(self.stage2(x)))
        return self.classifier(x.mean((2, 3)))


def reference_input():
    g = torch.Generator().manual_seed(0)
    return torch.rand((1, 3, 224, 224), generator=g) * 4.0 - 2.0


def clean(state):
    return {k: v.detach().float().contiguous() for k, v in state.items() if not k.endswith("num_batches_tracked")}


def perturb_bn(model, seed):
    # Fresh running stats are 0/1, which would leave eval-mode batch norm
    # untested; give them random values.
    g = torch.Generator().manual_seed(seed)
    for m in model.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.running_mean.copy_(torch.randn(m.num_features, generator=g) * 0.1)
            m.running_var.copy_(torch.rand(m.num_features, generator=g) + 0.5)
            m.weight.data.copy_(torch.rand(m.num_features, generator=g) + 0.5)
            m.bias.data.copy_(torch.randn(m.num_features, generator=g) * 0.1)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--shufflenet", type=pathlib.Path, help="ShuffleNet v1 state dict (.pth)")
    ap.add_argument("--random-init", action="store_true", help="skip downloads; write reference logits")
    ap.add_argument("--only", choices=sorted(MODELS), action="append")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(0)
    if args.random_init:
        save_file({"input": reference_input()}, str(args.out / "reference_input.safetensors"))
    for i, (name, (ctor, weights)) in enumerate(MODELS.items()):
        if args.only and name not in args.only:
            continue
        model = ctor(weights=None if args.random_init else getattr(torchvision.models, weights).IMAGENET1K_V1)
        model.eval()
        with torch.no_grad():
            if args.random_init:
                perturb_bn(model, i)
            path = args.out / f"{name}.safetensors"
            save_file(clean(model.state_dict()), str(path))
            print(f"wrote {path}")
            if args.random_init:
                logits = model(reference_input())[0].tolist()
                ref = args.out / f"{name}.reference.json"
                ref.write_text(json.dumps({"input_seed": 0, "logits": logits}))
                print(f"wrote {ref}")

    if args.random_init and not args.only:
        model = ShuffleNetV1().eval()
        with torch.no_grad():
            perturb_bn(model, len(MODELS))
            save_file(clean(model.state_dict()), str(args.out / "shufflenet_v1.safetensors"))
            logits = model(reference_input())[0].tolist()
        (args.out / "shufflenet_v1.reference.json").write_text(json.dumps({"input_seed": 0, "logits": logits}))
        print(f"wrote {args.out / 'shufflenet_v1.safetensors'} (reference implementation)")

    if args.shufflenet:
        state = torch.load(args.shufflenet, map_location="cpu")
        state = state.get("state_dict", state)
        state = {k.removeprefix("module."): v for k, v in state.items()}
        path = args.out / "shufflenet_v1.safetensors"
        save_file(clean(state), str(path))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
