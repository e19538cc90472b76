# SPDX-License-Identifier: MIT OR Apache-2.0
"""Export a Hugging Face masked LM to a model directory the ONNX backend reads.

The attention mask is turned into an additive 4D mask before it reaches the
model, which keeps mask construction out of the traced graph (recent
transformers releases build it with ops tract cannot type with symbolic
batch and sequence dims).

Usage: python3 tools/export_model.py roberta-large /path/to/model-dir
"""

import argparse
import os

import torch
from transformers import AutoConfig, AutoModelForMaskedLM, AutoTokenizer


class ExportWrapper(torch.nn.Module):
    def __init__(self, model):
        super().__init__()
        self.model = model

    def forward(self, input_ids, attention_mask):
        ext = (1.0 - attention_mask[:, None, None, :].float()) * torch.finfo(torch.float32).min
        return self.model(input_ids=input_ids, attention_mask=ext).logits


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("model")
    ap.add_argument("out")
    ap.add_argument("--opset", type=int, default=14)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    tok = AutoTokenizer.from_pretrained(args.model)
    config = AutoConfig.from_pretrained(args.model)
    config._attn_implementation = "eager"
    model = AutoModelForMaskedLM.from_pretrained(args.model, config=config)
    wrapper = ExportWrapper(model).eval()

    dummy = tok("spill the beans", return_tensors="pt")
    torch.onnx.export(
        wrapper,
        (dummy["input_ids"], dummy["attention_mask"]),
        os.path.join(args.out, "model.onnx"),
        input_names=["input_ids", "attention_mask"],
        output_names=["logits"],
        dynamic_axes={
            "input_ids": {0: "batch", 1: "sequence"},
            "attention_mask": {0: "batch", 1: "sequence"},
            "logits": {0: "batch", 1: "sequence"},
        },
        opset_version=args.opset,
        dynamo=False,
    )
    tok.backend_tokenizer.save(os.path.join(args.out, "tokenizer.json"))
    config.save_pretrained(args.out)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
