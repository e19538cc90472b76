# SPDX-License-Identifier: MIT OR Apache-2.0
"""Regenerate the tiny byte-level BPE tokenizer and ONNX masked LM used by tests.

Writes:
  crates/core/tests/fixtures/tiny-bpe/tokenizer.json
  crates/onnx/tests/fixtures/tokenizer.json
  crates/onnx/tests/fixtures/tiny-mlm.onnx
  crates/onnx/tests/fixtures/expected.json

Usage: python3 tools/make_tiny_fixtures.py
"""

import json
import os
import random

import torch
from tokenizers import Tokenizer, models, pre_tokenizers, decoders, processors, trainers
from transformers import RobertaConfig, RobertaForMaskedLM

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CORE_FIX = os.path.join(ROOT, "crates/core/tests/fixtures/tiny-bpe")
ONNX_FIX = os.path.join(ROOT, "crates/onnx/tests/fixtures")

CORPUS = [
    "It is a secret so do not spill the beans.",
    "Day by day the work got done.",
    "day after day we waited.",
    "Week after week and year after year.",
    "He read book upon book.",
    "They stood face to face.",
    "My favorite band is Green Day.",
    "I saw my favorite band, Green Day, in concert.",
    "It was so big that it fell over.",
    "I was so happy that I cried.",
    "I was so certain that I saw you.",
    "The more the merrier.",
    "The higher up the nicer!",
    "He kicked at the ball.",
    "We made our way home.",
    "She loaded the truck with books.",
    "Alice went to the hardware store and bought a hammer.",
    "The old man kicked the bucket.",
    "It's his lucky quarter.",
    "spill the water on the table.",
]

SPECIALS = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"]


def build_tokenizer():
    tok = Tokenizer(models.BPE(unk_token=None))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=420,
        min_frequency=2,
        special_tokens=SPECIALS,
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tok.train_from_iterator(CORPUS * 20, trainer=trainer)
    tok.post_processor = processors.RobertaProcessing(
        sep=("</s>", tok.token_to_id("</s>")),
        cls=("<s>", tok.token_to_id("<s>")),
        trim_offsets=True,
        add_prefix_space=False,
    )
    return tok


class ExportWrapper(torch.nn.Module):
    """Builds the additive 4D attention mask in plain ops so the exported
    graph has the same shape as older transformers exports."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    def forward(self, input_ids, attention_mask):
        ext = (1.0 - attention_mask[:, None, None, :].float()) * torch.finfo(torch.float32).min
        return self.model(input_ids=input_ids, attention_mask=ext).logits


def main():
    random.seed(0)
    torch.manual_seed(0)
    os.makedirs(CORE_FIX, exist_ok=True)
    os.makedirs(ONNX_FIX, exist_ok=True)

    tok = build_tokenizer()
    tok.save(os.path.join(CORE_FIX, "tokenizer.json"))
    tok.save(os.path.join(ONNX_FIX, "tokenizer.json"))
    vocab_size = tok.get_vocab_size()
    mask_id = tok.token_to_id("<mask>")
    pad_id = tok.token_to_id("<pad>")

    config = RobertaConfig(
        vocab_size=vocab_size,
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=66,
        type_vocab_size=1,
        pad_token_id=pad_id,
        bos_token_id=tok.token_to_id("<s>"),
        eos_token_id=tok.token_to_id("</s>"),
    )
    config._attn_implementation = "eager"
    model = RobertaForMaskedLM(config)

    # A few hundred MLM steps so the fixture model has some structure.
    encoded = [tok.encode(s).ids for s in CORPUS]
    opt = torch.optim.AdamW(model.parameters(), lr=3e-3)
    model.train()
    for _ in range(400):
        batch = random.sample(encoded, 8)
        width = max(len(x) for x in batch)
        ids = torch.full((len(batch), width), pad_id)
        att = torch.zeros((len(batch), width), dtype=torch.long)
        for r, x in enumerate(batch):
            ids[r, : len(x)] = torch.tensor(x)
            att[r, : len(x)] = 1
        labels = torch.full_like(ids, -100)
        inputs = ids.clone()
        for r, x in enumerate(batch):
            pos = random.randrange(1, len(x) - 1)
            labels[r, pos] = ids[r, pos]
            inputs[r, pos] = mask_id
        loss = model(input_ids=inputs, attention_mask=att, labels=labels).loss
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()

    dummy = torch.tensor([tok.encode("spill the beans").ids])
    torch.onnx.export(
        ExportWrapper(model).eval(),
        (dummy, torch.ones_like(dummy)),
        os.path.join(ONNX_FIX, "tiny-mlm.onnx"),
        input_names=["input_ids", "attention_mask"],
        output_names=["logits"],
        dynamic_axes={
            "input_ids": {0: "batch", 1: "sequence"},
            "attention_mask": {0: "batch", 1: "sequence"},
            "logits": {0: "batch", 1: "sequence"},
        },
        opset_version=14,
        dynamo=False,
    )

    queries = []
    for text, masked_words in [
        ("It is a secret so do not spill the beans.", [8]),
        ("day by day", [0, 2]),
        ("My favorite band is Green Day.", [4]),
    ]:
        enc = tok.encode(text)
        ids = list(enc.ids)
        word_ids = enc.word_ids
        positions = [p for p, w in enumerate(word_ids) if w in masked_words]
        for p in positions:
            ids[p] = mask_id
        with torch.no_grad():
            logits = model(input_ids=torch.tensor([ids])).logits[0]
        probs = torch.softmax(logits.double(), dim=-1)
        queries.append(
            {
                "text": text,
                "token_ids": ids,
                "masked_positions": positions,
                "probs": [probs[p].tolist() for p in positions],
            }
        )
    with open(os.path.join(ONNX_FIX, "expected.json"), "w") as f:
        json.dump(
            {"vocab_size": vocab_size, "mask_token_id": mask_id, "pad_token_id": pad_id, "queries": queries},
            f,
        )


if __name__ == "__main__":
    main()
