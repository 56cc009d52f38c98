"""Export open_clip CLIP weights for the C++ MaskCLIP saliency backend.

Writes <out>.pt (float32 state dict) and <out>.json (architecture), and prints
the registry entry to add to assets/backends.json.

    python tools/export_clip_weights.py --model ViT-B-16 --pretrained openai --out weights/clip_vit_b16

--tiny-random builds a small randomly initialized model instead (no download),
and --reference writes inputs and outputs of the Python implementation for the
C++ comparison test.
"""
import argparse
import hashlib
import json
import os
import sys

import torch

try:
    import open_clip
    from open_clip.model import CLIP, CLIPTextCfg, CLIPVisionCfg
except ImportError:
    print("open_clip is not installed (pip install open_clip_torch)", file=sys.stderr)
    sys.exit(77)

MEAN = [0.48145466, 0.4578275, 0.40821073]
STD = [0.26862954, 0.26130258, 0.27577711]


def tiny_model(seed):
    torch.manual_seed(seed)
    model = CLIP(
        embed_dim=32,
        vision_cfg=CLIPVisionCfg(layers=2, width=64, head_width=32, patch_size=8, image_size=32),
        text_cfg=CLIPTextCfg(context_length=77, vocab_size=49408, width=32, heads=2, layers=2),
        quick_gelu=True,
    )
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn_like(p) * 0.1)
    return model


def architecture(model, quick_gelu):
    v, t = model.visual, model.transformer
    return {
        "embed_dim": int(model.text_projection.shape[1]),
        "image_size": int(v.image_size[0]),
        "patch_size": int(v.patch_size[0]),
        "vision_width": int(v.conv1.out_channels),
        "vision_layers": len(v.transformer.resblocks),
        "vision_heads": int(v.transformer.resblocks[0].attn.num_heads),
        "context_length": int(model.context_length),
        "vocab_size": int(model.vocab_size),
        "text_width": int(t.width),
        "text_heads": int(t.resblocks[0].attn.num_heads),
        "text_layers": len(t.resblocks),
        "quick_gelu": quick_gelu,
        "mean": MEAN,
        "std": STD,
    }


def dense_features(model, images):
    """Per-patch embeddings from the last block's value path (MaskCLIP)."""
    v = model.visual
    x = v.conv1(images)
    x = x.reshape(x.shape[0], x.shape[1], -1).permute(0, 2, 1)
    cls = v.class_embedding.to(x.dtype) + torch.zeros(x.shape[0], 1, x.shape[-1], dtype=x.dtype)
    x = torch.cat([cls, x], dim=1) + v.positional_embedding.to(x.dtype)
    x = v.ln_pre(x)
    blocks = v.transformer.resblocks
    for blk in blocks[:-1]:
        x = blk(x)
    last = blocks[-1]
    width = x.shape[-1]
    y = last.ln_1(x)
    value = torch.nn.functional.linear(y, last.attn.in_proj_weight[2 * width:], last.attn.in_proj_bias[2 * width:])
    value = last.attn.out_proj(value) + x
    value = value + last.mlp(last.ln_2(value))
    feats = v.ln_post(value)[:, 1:] @ v.proj
    g = int(round(feats.shape[1] ** 0.5))
    return feats.permute(0, 2, 1).reshape(feats.shape[0], -1, g, g)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default="ViT-B-16")
    ap.add_argument("--pretrained", default="openai", help="open_clip tag or local checkpoint path")
    ap.add_argument("--tiny-random", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True, help="output stem")
    ap.add_argument("--reference", help="write reference inputs/outputs to this .pt file")
    args = ap.parse_args()

    if args.tiny_random:
        model, quick_gelu, source = tiny_model(args.seed), True, f"tiny-random seed {args.seed}"
    else:
        model, _, _ = open_clip.create_model_and_transforms(args.model, pretrained=args.pretrained)
        quick_gelu = args.pretrained == "openai" or "quickgelu" in args.model
        source = f"open_clip {args.model} {args.pretrained}"
    model.eval()

    for path in (args.out, args.reference):
        if path and os.path.dirname(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)
    state = {k: t.detach().float().contiguous() for k, t in model.state_dict().items()}
    torch.save(state, args.out + ".pt")
    arch = architecture(model, quick_gelu)
    arch["source"] = source
    with open(args.out + ".json", "w") as f:
        json.dump(arch, f, indent=2)
    digest = hashlib.sha256(open(args.out + ".pt", "rb").read()).hexdigest()

    if args.reference:
        tok = open_clip.get_tokenizer("ViT-B-16")
        phrases = ["a photo of a dog.", "a photo of a airplane.", "tie"]
        tokens = tok(phrases)
        g = torch.Generator().manual_seed(1)
        size = arch["image_size"]
        images = torch.randn(2, 3, size, size, generator=g)
        with torch.no_grad():
            ref = {
                "tokens": tokens,
                "text_embeddings": model.encode_text(tokens).float(),
                "images": images,
                "image_embeddings": model.encode_image(images).float(),
                "dense_features": dense_features(model, images).float(),
            }
        torch.save(ref, args.reference)

    entry = {"weights": args.out + ".pt", "architecture": args.out + ".json", "sha256": digest, "source": source}
    print(json.dumps(entry, indent=2))


if __name__ == "__main__":
    main()
