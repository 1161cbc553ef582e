"""Two-stream captioning model with a topic-guided top-down decoder.

Appearance and motion projections feed a Vision-LSTM; the projected audio
features feed a separate Audio-LSTM. Decoding runs an Attention-LSTM whose
input combines the previous Language-LSTM state, the topic embedding, the
mean vision context, and the previous word embedding; its hidden state
queries two independent additive attention modules (one per context
stream), and the Language-LSTM turns [h_att; vision context; audio context]
into vocabulary logits.

Parameters live in a flat name->tensor dict so initialization, the
optimizer, and the checkpoint container can treat them uniformly. All
operations accept either a single video (no batch axis) or a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace, asdict

import torch

from .corpus import BOS, EOS

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


@dataclass
class ModelConfig:
    vocab_size: int
    n_topics: int
    d_app: int = 2048
    d_mot: int = 1024
    d_aud: int = 128
    e_app: int = 512
    e_mot: int = 512
    e_aud: int = 128
    h_vis: int = 512
    h_aud: int = 128
    e_word: int = 512
    e_topic: int = 256
    h_att: int = 512
    h_lang: int = 512
    h_score: int = 512
    max_len: int = 20  # decoded content tokens, excluding BOS/EOS

    def validate(self) -> "ModelConfig":
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"ModelConfig.{name} must be a positive integer, got {value!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**obj).validate()


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape table, in fixed creation order.

    LSTM weights are packed (4H, in+H) with gate order i, f, g, o; biases
    are (4H,) so the forget-gate slice is [H:2H].
    """
    c = config
    return {
        "word_emb": (c.vocab_size, c.e_word),
        "topic_emb": (c.n_topics, c.e_topic),
        "proj_app_w": (c.e_app, c.d_app),
        "proj_app_b": (c.e_app,),
        "proj_mot_w": (c.e_mot, c.d_mot),
        "proj_mot_b": (c.e_mot,),
        "proj_aud_w": (c.e_aud, c.d_aud),
        "proj_aud_b": (c.e_aud,),
        "vis_lstm_w": (4 * c.h_vis, c.e_app + c.e_mot + c.h_vis),
        "vis_lstm_b": (4 * c.h_vis,),
        "aud_lstm_w": (4 * c.h_aud, c.e_aud + c.h_aud),
        "aud_lstm_b": (4 * c.h_aud,),
        "att_lstm_w": (4 * c.h_att, c.h_lang + c.e_topic + c.h_vis + c.e_word + c.h_att),
        "att_lstm_b": (4 * c.h_att,),
        "vatt_wc": (c.h_score, c.h_vis),
        "vatt_wq": (c.h_score, c.h_att),
        "vatt_v": (c.h_score,),
        "aatt_wc": (c.h_score, c.h_aud),
        "aatt_wq": (c.h_score, c.h_att),
        "aatt_v": (c.h_score,),
        "lang_lstm_w": (4 * c.h_lang, c.h_att + c.h_vis + c.h_aud + c.h_lang),
        "lang_lstm_b": (4 * c.h_lang,),
        "out_w": (c.vocab_size, c.h_lang),
        "out_b": (c.vocab_size,),
    }


_LSTM_HIDDEN = {"vis_lstm_b": "h_vis", "aud_lstm_b": "h_aud",
                "att_lstm_b": "h_att", "lang_lstm_b": "h_lang"}


def init_params(config: ModelConfig, seed: int, dtype=torch.float32) -> dict[str, torch.Tensor]:
    """Uniform(-0.08, 0.08) weights, zero biases, forget-gate bias 1.0."""
    gen = torch.Generator().manual_seed(seed)
    params = {}
    for name, shape in param_shapes(config.validate()).items():
        t = torch.empty(shape, dtype=dtype)
        if name.endswith("_b"):
            t.zero_()
            if name in _LSTM_HIDDEN:
                h = getattr(config, _LSTM_HIDDEN[name])
                t[h : 2 * h] = FORGET_BIAS
        else:
            t.uniform_(-INIT_SCALE, INIT_SCALE, generator=gen)
        params[name] = t
    return params


def lstm_cell(x, h, c, w, b):
    """One LSTM step. Packed weight (4H, in+H), gate order i, f, g, o."""
    gates = torch.nn.functional.linear(torch.cat([x, h], dim=-1), w, b)
    i, f, g, o = gates.chunk(4, dim=-1)
    i = torch.sigmoid(i)
    f = torch.sigmoid(f)
    g = torch.tanh(g)
    o = torch.sigmoid(o)
    c_next = f * c + i * g
    return o * torch.tanh(c_next), c_next


def _run_lstm(inputs, w, b, hidden: int):
    """Unroll over the time axis. inputs (..., T, D) -> outputs (..., T, H)."""
    lead = inputs.shape[:-2]
    h = inputs.new_zeros(*lead, hidden)
    c = inputs.new_zeros(*lead, hidden)
    outs = []
    for t in range(inputs.shape[-2]):
        h, c = lstm_cell(inputs[..., t, :], h, c, w, b)
        outs.append(h)
    return torch.stack(outs, dim=-2)


@dataclass
class EncodedVideo:
    vision_ctx: torch.Tensor  # (..., T, h_vis)
    audio_ctx: torch.Tensor  # (..., T, h_aud)
    topic_emb: torch.Tensor  # (..., e_topic)

    def index(self, idx) -> "EncodedVideo":
        return EncodedVideo(self.vision_ctx[idx], self.audio_ctx[idx], self.topic_emb[idx])


def encode(appearance, motion, audio, topic_id, params, config: ModelConfig) -> EncodedVideo:
    """Run both encoder streams and look up the topic embedding.

    Feature tensors are (T, d) or (B, T, d); topic_id is an int or a (B,)
    id tensor matching the batch shape.
    """
    topic = torch.as_tensor(topic_id)
    if (topic < 0).any() or (topic >= config.n_topics).any():
        raise ValueError(f"topic id out of range [0, {config.n_topics})")
    lin = torch.nn.functional.linear
    vis_in = torch.cat(
        [lin(appearance, params["proj_app_w"], params["proj_app_b"]),
         lin(motion, params["proj_mot_w"], params["proj_mot_b"])],
        dim=-1,
    )
    aud_in = lin(audio, params["proj_aud_w"], params["proj_aud_b"])
    return EncodedVideo(
        vision_ctx=_run_lstm(vis_in, params["vis_lstm_w"], params["vis_lstm_b"], config.h_vis),
        audio_ctx=_run_lstm(aud_in, params["aud_lstm_w"], params["aud_lstm_b"], config.h_aud),
        topic_emb=params["topic_emb"][topic],
    )


def attend(query, contexts, w_c, w_q, v):
    """Additive attention: score_t = v . tanh(W_c ctx_t + W_q query).

    query (..., hq), contexts (..., T, d) -> (weights (..., T), pooled (..., d)).
    """
    if contexts.shape[-2] == 0:
        raise ValueError("cannot attend over zero contexts")
    scores = torch.tanh(
        contexts @ w_c.T + (query @ w_q.T).unsqueeze(-2)
    ) @ v
    weights = torch.softmax(scores, dim=-1)
    return weights, (weights.unsqueeze(-2) @ contexts).squeeze(-2)


@dataclass
class DecoderState:
    h_att: torch.Tensor
    c_att: torch.Tensor
    h_lang: torch.Tensor
    c_lang: torch.Tensor
    prev_word: torch.Tensor  # long tensor of ids, shape matches batch

    def with_word(self, word_ids) -> "DecoderState":
        return replace(self, prev_word=torch.as_tensor(word_ids, dtype=torch.long))


def initial_state(enc: EncodedVideo, config: ModelConfig) -> DecoderState:
    lead = enc.vision_ctx.shape[:-2]
    ref = enc.vision_ctx
    return DecoderState(
        h_att=ref.new_zeros(*lead, config.h_att),
        c_att=ref.new_zeros(*lead, config.h_att),
        h_lang=ref.new_zeros(*lead, config.h_lang),
        c_lang=ref.new_zeros(*lead, config.h_lang),
        prev_word=torch.full(lead, BOS, dtype=torch.long),
    )


def decoder_step(state: DecoderState, enc: EncodedVideo, params, config: ModelConfig):
    """One decoding step: returns (logits over vocab, next state).

    The next state keeps prev_word unchanged; the caller decides the next
    input word (teacher forcing or decoded token) via state.with_word().
    """
    att_in = torch.cat(
        [state.h_lang, enc.topic_emb, enc.vision_ctx.mean(dim=-2),
         params["word_emb"][state.prev_word]],
        dim=-1,
    )
    h_att, c_att = lstm_cell(att_in, state.h_att, state.c_att,
                             params["att_lstm_w"], params["att_lstm_b"])
    _, ctx_vis = attend(h_att, enc.vision_ctx, params["vatt_wc"], params["vatt_wq"], params["vatt_v"])
    _, ctx_aud = attend(h_att, enc.audio_ctx, params["aatt_wc"], params["aatt_wq"], params["aatt_v"])
    lang_in = torch.cat([h_att, ctx_vis, ctx_aud], dim=-1)
    h_lang, c_lang = lstm_cell(lang_in, state.h_lang, state.c_lang,
                               params["lang_lstm_w"], params["lang_lstm_b"])
    logits = torch.nn.functional.linear(h_lang, params["out_w"], params["out_b"])
    return logits, replace(state, h_att=h_att, c_att=c_att, h_lang=h_lang, c_lang=c_lang)


def teacher_logits(input_ids, enc: EncodedVideo, params, config: ModelConfig):
    """Teacher-forced logits for each position of input_ids (..., L).

    logits[..., t, :] predicts the token following input_ids[..., t].
    """
    state = initial_state(enc, config)
    outs = []
    for t in range(input_ids.shape[-1]):
        state = state.with_word(input_ids[..., t])
        logits, state = decoder_step(state, enc, params, config)
        outs.append(logits)
    return torch.stack(outs, dim=-2)


def greedy_decode(enc: EncodedVideo, params, config: ModelConfig) -> list[int]:
    """Argmax decoding for a single video; returns content ids without
    BOS/EOS, at most max_len tokens."""
    with torch.no_grad():
        state = initial_state(enc, config)
        out = []
        for _ in range(config.max_len):
            logits, state = decoder_step(state, enc, params, config)
            word = int(torch.argmax(logits, dim=-1))
            if word == EOS:
                break
            out.append(word)
            state = state.with_word(word)
        return out


def greedy_decode_batch(enc: EncodedVideo, params, config: ModelConfig) -> list[list[int]]:
    """Argmax decoding for a batch; per-video content ids without BOS/EOS."""
    with torch.no_grad():
        batch = enc.vision_ctx.shape[0]
        state = initial_state(enc, config)
        done = torch.zeros(batch, dtype=torch.bool)
        seqs: list[list[int]] = [[] for _ in range(batch)]
        for _ in range(config.max_len):
            logits, state = decoder_step(state, enc, params, config)
            words = torch.argmax(logits, dim=-1)
            for b in range(batch):
                if done[b]:
                    continue
                if int(words[b]) == EOS:
                    done[b] = True
                else:
                    seqs[b].append(int(words[b]))
            if bool(done.all()):
                break
            state = state.with_word(torch.where(done, torch.full_like(words, EOS), words))
        return seqs


def sample_decode(enc: EncodedVideo, params, config: ModelConfig, rng: torch.Generator):
    """Multinomial sampling for a single video.

    Returns (content ids, per-step log-probabilities of the drawn tokens).
    The log-probability of the terminating EOS draw is included; the EOS id
    itself is not part of the returned sequence.
    """
    state = initial_state(enc, config)
    out: list[int] = []
    logps: list[torch.Tensor] = []
    for _ in range(config.max_len):
        logits, state = decoder_step(state, enc, params, config)
        logp = torch.log_softmax(logits, dim=-1)
        word = int(torch.multinomial(torch.exp(logp), 1, generator=rng))
        logps.append(logp[word])
        if word == EOS:
            break
        out.append(word)
        state = state.with_word(word)
    return out, torch.stack(logps)


def sample_decode_batch(enc: EncodedVideo, params, config: ModelConfig, rng: torch.Generator):
    """Multinomial sampling for a batch.

    Returns (per-video content ids, per-video summed log-probability of all
    drawn tokens including the terminating EOS). The sum keeps the autograd
    graph for policy-gradient training.
    """
    batch = enc.vision_ctx.shape[0]
    state = initial_state(enc, config)
    done = torch.zeros(batch, dtype=torch.bool)
    seqs: list[list[int]] = [[] for _ in range(batch)]
    logp_sum = enc.vision_ctx.new_zeros(batch)
    for _ in range(config.max_len):
        logits, state = decoder_step(state, enc, params, config)
        logp = torch.log_softmax(logits, dim=-1)
        words = torch.multinomial(torch.exp(logp.detach()), 1, generator=rng).squeeze(-1)
        step_logp = logp.gather(-1, words.unsqueeze(-1)).squeeze(-1)
        active = ~done
        logp_sum = logp_sum + torch.where(active, step_logp, torch.zeros_like(step_logp))
        for b in range(batch):
            if active[b] and int(words[b]) != EOS:
                seqs[b].append(int(words[b]))
        done = done | (words == EOS)
        if bool(done.all()):
            break
        state = state.with_word(torch.where(done, torch.full_like(words, EOS), words))
    return seqs, logp_sum
