#!/usr/bin/env python3
"""Export feature-extractor backbones (and optionally a detector) to ONNX.

Each model is written as `<out>/<model_id>.onnx` next to a `<model_id>.model`
manifest that the `picsearch` tool reads.

By default weights are randomly initialised from a fixed seed, which keeps the
exported graphs reproducible without network access. Pass `--pretrained` to
pull the torchvision ImageNet weights instead (needs network access).

    python3 scripts/export_models.py --out models
    python3 scripts/export_models.py --out models --models mobilenetv2 resnet50
    python3 scripts/export_models.py --out models --detector owlvit-tiny
"""

import argparse
import os
import sys

import torch
import torchvision

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class VggFeatures(torch.nn.Module):
    """VGG16 up to fc7 (the layer feeding the 1000-way classifier)."""

    def __init__(self, net):
        super().__init__()
        self.features = net.features
        self.avgpool = net.avgpool
        self.fc = torch.nn.Sequential(*list(net.classifier.children())[:-1])

    def forward(self, x):
        x = self.avgpool(self.features(x))
        return self.fc(torch.flatten(x, 1))


class PooledFeatures(torch.nn.Module):
    """Global-average-pooled output of the final convolutional block."""

    def __init__(self, body):
        super().__init__()
        self.body = body

    def forward(self, x):
        x = self.body(x)
        return torch.flatten(torch.nn.functional.adaptive_avg_pool2d(x, 1), 1)


def resnet_body(net):
    return torch.nn.Sequential(
        net.conv1, net.bn1, net.relu, net.maxpool, net.layer1, net.layer2, net.layer3, net.layer4
    )


def inception_body(net):
    return torch.nn.Sequential(
        net.Conv2d_1a_3x3, net.Conv2d_2a_3x3, net.Conv2d_2b_3x3, net.maxpool1,
        net.Conv2d_3b_1x1, net.Conv2d_4a_3x3, net.maxpool2,
        net.Mixed_5b, net.Mixed_5c, net.Mixed_5d, net.Mixed_6a, net.Mixed_6b,
        net.Mixed_6c, net.Mixed_6d, net.Mixed_6e, net.Mixed_7a, net.Mixed_7b, net.Mixed_7c,
    )


def build(model_id, pretrained):
    m = torchvision.models
    if model_id == "vgg16":
        net = m.vgg16(weights="DEFAULT" if pretrained else None)
        return VggFeatures(net), 4096
    if model_id == "resnet50":
        net = m.resnet50(weights="DEFAULT" if pretrained else None)
        return PooledFeatures(resnet_body(net)), 2048
    if model_id == "mobilenetv2":
        net = m.mobilenet_v2(weights="DEFAULT" if pretrained else None)
        return PooledFeatures(net.features), 1280
    if model_id == "inceptionv3":
        net = m.inception_v3(
            weights="DEFAULT" if pretrained else None, aux_logits=pretrained, init_weights=not pretrained
        )
        return PooledFeatures(inception_body(net)), 2048
    raise SystemExit(f"unknown model id {model_id}")


def write_manifest(path, fields):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in fields:
            f.write(f"{key} = {value}\n")


def fmt3(values):
    return ",".join(repr(float(v)) for v in values)


def export_extractor(model_id, out, pretrained, seed):
    torch.manual_seed(seed)
    model, dim = build(model_id, pretrained)
    model.eval()
    dummy = torch.zeros(1, 3, 224, 224)
    onnx_path = os.path.join(out, f"{model_id}.onnx")
    torch.onnx.export(
        model, dummy, onnx_path, input_names=["pixel_values"], output_names=["features"],
        opset_version=17, dynamo=False,
    )
    write_manifest(
        os.path.join(out, f"{model_id}.model"),
        [
            ("model_id", model_id),
            ("role", "extractor"),
            ("file", f"{model_id}.onnx"),
            ("feature_dim", dim),
            ("preprocess.width", 224),
            ("preprocess.height", 224),
            ("preprocess.scale", repr(1.0 / 255.0)),
            ("preprocess.mean", fmt3(IMAGENET_MEAN)),
            ("preprocess.std", fmt3(IMAGENET_STD)),
            ("preprocess.order", "RGB"),
            ("preprocess.resize", "stretch"),
        ],
    )
    print(f"{model_id}: {os.path.getsize(onnx_path)} bytes, dim {dim}")


class OwlDetector(torch.nn.Module):
    def __init__(self, net):
        super().__init__()
        self.net = net

    def forward(self, input_ids, pixel_values, attention_mask):
        out = self.net(input_ids=input_ids, pixel_values=pixel_values, attention_mask=attention_mask)
        return out.logits, out.pred_boxes


def export_owl_tiny(out, seed):
    """A small randomly initialised OWL-ViT with the real model's I/O signature."""
    from tokenizers import Tokenizer, models, pre_tokenizers, processors
    from transformers import OwlViTConfig, OwlViTForObjectDetection

    words = ["cat", "dog", "food", "road", "statue", "family", "car", "person", "a", "photo", "of"]
    vocab = {"<pad>": 0, "<unk>": 1, "<bos>": 2, "<eos>": 3}
    for w in words:
        vocab.setdefault(w, len(vocab))
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tok.post_processor = processors.TemplateProcessing(
        single="<bos> $A <eos>", special_tokens=[("<bos>", 2), ("<eos>", 3)]
    )
    tok.save(os.path.join(out, "owlvit-tiny.tokenizer.json"))

    torch.manual_seed(seed)
    config = OwlViTConfig(
        text_config=dict(
            vocab_size=len(vocab), hidden_size=32, intermediate_size=64, num_hidden_layers=2,
            num_attention_heads=2, max_position_embeddings=16, bos_token_id=2, eos_token_id=3,
            pad_token_id=0,
        ),
        vision_config=dict(
            hidden_size=32, intermediate_size=64, num_hidden_layers=2, num_attention_heads=2,
            image_size=64, patch_size=16,
        ),
        projection_dim=32,
    )
    net = OwlViTForObjectDetection(config).eval()
    model = OwlDetector(net)
    ids = torch.tensor([[2, 4, 3] + [0] * 13], dtype=torch.long)
    mask = (ids != 0).long()
    mask[0, 0] = 1
    pixels = torch.zeros(1, 3, 64, 64)
    onnx_path = os.path.join(out, "owlvit-tiny.onnx")
    torch.onnx.export(
        model, (ids, pixels, mask), onnx_path,
        input_names=["input_ids", "pixel_values", "attention_mask"],
        output_names=["logits", "pred_boxes"], opset_version=17, dynamo=False,
    )
    write_manifest(
        os.path.join(out, "owlvit-tiny.model"),
        [
            ("model_id", "owlvit-tiny"),
            ("role", "detector"),
            ("file", "owlvit-tiny.onnx"),
            ("tokenizer", "owlvit-tiny.tokenizer.json"),
            ("text_length", 16),
            ("preprocess.width", 64),
            ("preprocess.height", 64),
            ("preprocess.scale", repr(1.0 / 255.0)),
            ("preprocess.mean", fmt3(CLIP_MEAN)),
            ("preprocess.std", fmt3(CLIP_STD)),
            ("preprocess.order", "RGB"),
            ("preprocess.resize", "stretch"),
        ],
    )
    print(f"owlvit-tiny: {os.path.getsize(onnx_path)} bytes")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="models")
    p.add_argument("--models", nargs="*", default=["mobilenetv2", "resnet50", "inceptionv3", "vgg16"])
    p.add_argument("--detector", choices=["owlvit-tiny"], default=None)
    p.add_argument("--pretrained", action="store_true")
    p.add_argument("--seed", type=int, default=7)
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for model_id in args.models:
        export_extractor(model_id, args.out, args.pretrained, args.seed)
    if args.detector == "owlvit-tiny":
        export_owl_tiny(args.out, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
