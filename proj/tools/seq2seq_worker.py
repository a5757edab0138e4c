#!/usr/bin/env python3
"""Model worker for nluqa.

Reads one JSON request per line on stdin and answers with one JSON line on
stdout. Library chatter is redirected to stderr so the protocol stream stays
clean.

Ops: train, generate, embed, count_parameters, token_lengths, probe, shutdown.

Checkpoints are a hub id, a local directory, or "random-t5:<config>" where
<config> is a JSON object or a path to a config.json. Random checkpoints use
the byte-level tokenizer, so they need no downloads.
"""

import argparse
import json
import os
import random
import sys
import traceback

PROTOCOL_OUT = os.fdopen(os.dup(sys.stdout.fileno()), "w", buffering=1)
os.dup2(sys.stderr.fileno(), sys.stdout.fileno())
sys.stdout = sys.stderr

import torch  # noqa: E402
from torch import nn  # noqa: E402

RANDOM_PREFIX = "random-t5:"


class WorkerError(Exception):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


# ---------------------------------------------------------------- models


class AdapterFF(nn.Module):
    """Feed-forward block followed by a residual bottleneck adapter."""

    def __init__(self, ff, d_model, bottleneck):
        super().__init__()
        self.ff = ff
        self.down = nn.Linear(d_model, bottleneck)
        self.up = nn.Linear(bottleneck, d_model)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, hidden_states):
        y = self.ff(hidden_states)
        return y + self.up(torch.relu(self.down(y)))


def add_adapters(model, reduction_factor):
    for p in model.parameters():
        p.requires_grad_(False)
    d_model = model.config.d_model
    bottleneck = max(1, d_model // reduction_factor)
    for stack in (model.encoder, model.decoder):
        for block in stack.block:
            block.layer[-1] = AdapterFF(block.layer[-1], d_model, bottleneck)
    return model


def random_config(spec):
    from transformers import T5Config

    text = spec[len(RANDOM_PREFIX):]
    if text.lstrip().startswith("{"):
        cfg = json.loads(text)
    else:
        with open(text) as f:
            cfg = json.load(f)
    tie = cfg.pop("tie_word_embeddings", True)
    # Byte tokenizer ids: pad 0 (also the decoder start), eos 1.
    cfg.setdefault("pad_token_id", 0)
    cfg.setdefault("eos_token_id", 1)
    cfg.setdefault("decoder_start_token_id", 0)
    config = T5Config(**cfg)
    # The constructor ignores this keyword in some library versions.
    config.tie_word_embeddings = tie
    return config


def build_random(spec, meta=False):
    from transformers import ByT5Tokenizer, T5ForConditionalGeneration

    config = random_config(spec)
    torch.manual_seed(0)
    if meta:
        with torch.device("meta"):
            model = T5ForConditionalGeneration(config)
    else:
        model = T5ForConditionalGeneration(config)
    # Untied output heads must still share the input embeddings between stacks.
    model.encoder.embed_tokens = model.shared
    model.decoder.embed_tokens = model.shared
    tokenizer = ByT5Tokenizer()
    if config.vocab_size < len(tokenizer):
        raise WorkerError(f"vocab_size {config.vocab_size} is smaller than the byte tokenizer ({len(tokenizer)})")
    return tokenizer, model


class Registry:
    def __init__(self, cache_dir):
        self.cache_dir = cache_dir
        self.key = None
        self.loaded = None
        self.encoders = {}

    def base(self, checkpoint, meta=False):
        if checkpoint.startswith(RANDOM_PREFIX):
            return build_random(checkpoint, meta)
        from transformers import AutoConfig, AutoModelForSeq2SeqLM, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(checkpoint, cache_dir=self.cache_dir)
        if meta:
            config = AutoConfig.from_pretrained(checkpoint, cache_dir=self.cache_dir)
            with torch.device("meta"):
                model = AutoModelForSeq2SeqLM.from_config(config)
        else:
            model = AutoModelForSeq2SeqLM.from_pretrained(checkpoint, cache_dir=self.cache_dir)
        return tokenizer, model

    def build(self, checkpoint, state):
        tokenizer, model = self.base(checkpoint)
        if state:
            with open(os.path.join(state, "meta.json")) as f:
                meta = json.load(f)
            if meta.get("adapter"):
                add_adapters(model, meta["adapter"]["reduction_factor"])
            weights = torch.load(os.path.join(state, "state.pt"), map_location="cpu")
            missing = set(weights) - set(model.state_dict())
            if missing:
                raise WorkerError(f"state has unknown parameters: {sorted(missing)[:3]}")
            model.load_state_dict(weights, strict=False)
        return tokenizer, model

    def model(self, checkpoint, state):
        key = (checkpoint, state or "")
        if self.key != key:
            tokenizer, model = self.build(checkpoint, state)
            model.eval()
            self.key, self.loaded = key, (tokenizer, model)
        return self.loaded

    def forget(self):
        self.key, self.loaded = None, None

    def encoder(self, name):
        if name not in self.encoders:
            from sentence_transformers import SentenceTransformer

            self.encoders[name] = SentenceTransformer(name, cache_folder=self.cache_dir)
        return self.encoders[name]


# ---------------------------------------------------------------- encoding


def encode_input(tokenizer, text, question_start, max_len):
    """Token ids with the question kept whole; context is cut from its end."""
    # question_start is a UTF-8 byte offset.
    raw = text.encode("utf-8")
    prefix = raw[:question_start].decode("utf-8", errors="ignore")
    suffix = raw[question_start:].decode("utf-8", errors="ignore")
    head = tokenizer(prefix, add_special_tokens=False)["input_ids"] if prefix else []
    tail = tokenizer(suffix)["input_ids"]
    truncated = False
    if len(head) + len(tail) > max_len:
        truncated = True
        keep = max(0, max_len - len(tail))
        head = head[:keep]
        if len(tail) > max_len:
            tail = tail[: max_len - 1] + tail[-1:]
    return head + tail, truncated


def pad(sequences, pad_id):
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(sequences), width), dtype=torch.long)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        mask[i, : len(s)] = 1
    return ids, mask


def count(model):
    seen = set()
    total = trainable = 0
    for p in model.parameters():
        if id(p) in seen:
            continue
        seen.add(id(p))
        total += p.numel()
        if p.requires_grad:
            trainable += p.numel()
    return total, trainable


# ---------------------------------------------------------------- ops


def op_train(reg, req):
    cfg = req["config"]
    seed = int(cfg.get("seed", 0))
    random.seed(seed)
    torch.manual_seed(seed)
    reg.forget()
    tokenizer, model = reg.build(req["checkpoint"], req.get("state"))
    adapter = cfg.get("adapter")
    if adapter and not any(isinstance(m, AdapterFF) for m in model.modules()):
        add_adapters(model, int(adapter["reduction_factor"]))
    total, trainable = count(model)

    max_in = int(cfg["max_input_length"])
    max_out = int(cfg["max_target_length"])
    inputs, targets = [], []
    truncated_inputs = truncated_targets = 0
    for ex in req["data"]:
        ids, cut = encode_input(tokenizer, ex["input"], int(ex.get("question_start", 0)), max_in)
        truncated_inputs += cut
        inputs.append(ids)
        tgt = tokenizer(ex["target"])["input_ids"]
        if len(tgt) > max_out:
            truncated_targets += 1
            tgt = tgt[: max_out - 1] + tgt[-1:]
        targets.append(tgt)

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=float(cfg["learning_rate"]), weight_decay=0.0)
    generator = torch.Generator().manual_seed(seed)
    batch = int(cfg["batch_size"])
    pad_id = tokenizer.pad_token_id
    model.train()
    final_loss = 0.0
    for _ in range(int(cfg["epochs"])):
        order = torch.randperm(len(inputs), generator=generator).tolist()
        losses = []
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            ids, mask = pad([inputs[i] for i in idx], pad_id)
            labels, _ = pad([targets[i] for i in idx], pad_id)
            labels[labels == pad_id] = -100
            loss = model(input_ids=ids, attention_mask=mask, labels=labels).loss
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        final_loss = sum(losses) / len(losses)

    out_dir = req["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    names = {id(p): n for n, p in model.named_parameters()}
    state = {n: t for n, t in model.state_dict().items()}
    trained = {names[id(p)] for p in params}
    torch.save({n: state[n] for n in trained if n in state}, os.path.join(out_dir, "state.pt"))
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump({"checkpoint": req["checkpoint"], "adapter": adapter, "base_state": req.get("state", "")}, f)
    model.eval()
    reg.key, reg.loaded = (req["checkpoint"], out_dir), (tokenizer, model)
    return {
        "state": out_dir,
        "examples": len(inputs),
        "truncated_inputs": truncated_inputs,
        "truncated_targets": truncated_targets,
        "trainable_parameters": trainable,
        "total_parameters": total,
        "final_loss": final_loss,
        "warnings": [],
    }


def op_generate(reg, req):
    tokenizer, model = reg.model(req["checkpoint"], req.get("state"))
    texts = req["inputs"]
    starts = req.get("question_starts") or [0] * len(texts)
    max_len = int(req.get("max_input_length", 512))
    batch = max(1, int(req.get("batch_size", 32)))
    outputs, truncated = [], 0
    for start in range(0, len(texts), batch):
        try:
            encoded = []
            for text, qs in zip(texts[start : start + batch], starts[start : start + batch]):
                ids, cut = encode_input(tokenizer, text, int(qs), max_len)
                truncated += cut
                encoded.append(ids)
            ids, mask = pad(encoded, tokenizer.pad_token_id)
            with torch.no_grad():
                out = model.generate(
                    input_ids=ids,
                    attention_mask=mask,
                    max_new_tokens=int(req.get("max_new_tokens", 16)),
                    do_sample=False,
                    num_beams=1,
                )
            outputs.extend(tokenizer.batch_decode(out, skip_special_tokens=True))
        except WorkerError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise WorkerError(str(exc), index=start) from exc
    return {"outputs": outputs, "truncated": truncated}


def op_embed(reg, req):
    vectors = reg.encoder(req["model"]).encode(req["texts"], normalize_embeddings=True, convert_to_numpy=True)
    return {"vectors": vectors.astype(float).tolist()}


def op_count_parameters(reg, req):
    _, model = reg.base(req["checkpoint"], meta=True)
    adapter = req.get("adapter")
    if adapter:
        add_adapters(model, int(adapter["reduction_factor"]))
    total, trainable = count(model)
    return {"total": total, "trainable": trainable}


def op_token_lengths(reg, req):
    if req["checkpoint"].startswith(RANDOM_PREFIX):
        from transformers import ByT5Tokenizer

        tokenizer = ByT5Tokenizer()
    else:
        from transformers import AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(req["checkpoint"], cache_dir=reg.cache_dir)
    return {"lengths": [len(ids) for ids in tokenizer(req["texts"])["input_ids"]]}


def op_probe(reg, req):
    """Whether a checkpoint or encoder can be loaded without network access."""
    source = req["source"]
    if source.startswith(RANDOM_PREFIX) or os.path.isdir(source):
        return {"available": True}
    from huggingface_hub import try_to_load_from_cache

    try:
        hit = try_to_load_from_cache(source, "config.json", cache_dir=reg.cache_dir)
    except Exception as exc:  # noqa: BLE001
        return {"available": False, "reason": str(exc)}
    if isinstance(hit, str) and os.path.exists(hit):
        return {"available": True}
    return {"available": False, "reason": f"{source} not in the local model cache"}


OPS = {
    "probe": op_probe,
    "train": op_train,
    "generate": op_generate,
    "embed": op_embed,
    "count_parameters": op_count_parameters,
    "token_lengths": op_token_lengths,
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--cache-dir", default=None)
    args = parser.parse_args()
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    reg = Registry(args.cache_dir)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req.get("op")
            if op == "shutdown":
                break
            if op not in OPS:
                raise WorkerError(f"unknown op '{op}'")
            response = {"ok": True, **OPS[op](reg, req)}
        except WorkerError as exc:
            response = {"ok": False, "error": str(exc), "index": exc.index}
        except Exception as exc:  # noqa: BLE001
            traceback.print_exc(file=sys.stderr)
            response = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        PROTOCOL_OUT.write(json.dumps(response) + "\n")
        PROTOCOL_OUT.flush()


if __name__ == "__main__":
    main()
