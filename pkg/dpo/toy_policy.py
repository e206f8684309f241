"""Tabular softmax language model over a closed whitespace vocabulary.

Each next-token distribution is a logit row keyed by a hash of
(prompt, previous token). Rows never touched by training stay at zero, which
is the uniform distribution.
"""

import hashlib
from pathlib import Path

import numpy as np

from chronopref.artifacts import read_json, write_json_atomic
from chronopref.exceptions import DataError

SNAPSHOT_FORMAT = "chronopref.toy_policy/1"


class OutOfVocabularyError(DataError):
    def __init__(self, token):
        super().__init__(f"token {token!r} is not in the toy vocabulary")
        self.token = token


def log_softmax(logits):
    return logits - np.logaddexp.reduce(logits)


class ToyPolicy:
    BOS = "<s>"
    EOS = "</s>"

    def __init__(self, vocab, rows=None, config_hash=""):
        vocab = list(vocab)
        if self.EOS not in vocab:
            vocab.append(self.EOS)
        self.vocab = tuple(vocab)
        self._ids = {token: i for i, token in enumerate(self.vocab)}
        if len(self._ids) != len(self.vocab):
            raise DataError("toy vocabulary has duplicate tokens")
        self.rows = {key: np.asarray(row, dtype=np.float64) for key, row in (rows or {}).items()}
        self.config_hash = config_hash

    @classmethod
    def from_texts(cls, texts):
        return cls(sorted({token for text in texts for token in text.split()}))

    @classmethod
    def from_pairs(cls, pairs):
        return cls.from_texts([text for pair in pairs for text in (pair.chosen_text, pair.rejected_text)])

    @staticmethod
    def tokenize(text):
        return text.split()

    @staticmethod
    def context_key(prompt, prev):
        return hashlib.sha256(f"{prompt}\x1f{prev}".encode("utf-8")).hexdigest()[:16]

    def token_id(self, token):
        try:
            return self._ids[token]
        except KeyError:
            raise OutOfVocabularyError(token) from None

    def check_text(self, text):
        for token in self.tokenize(text):
            self.token_id(token)

    def logits(self, prompt, prev):
        row = self.rows.get(self.context_key(prompt, prev))
        return np.zeros(len(self.vocab)) if row is None else row

    def next_token_logprobs(self, prompt, prev):
        return log_softmax(self.logits(prompt, prev))

    def _steps(self, prompt, response):
        """(context key, target id, log-probs) for every token of ``response`` and the closing EOS."""
        prev = self.BOS
        for token in self.tokenize(response) + [self.EOS]:
            target = self.token_id(token)
            yield self.context_key(prompt, prev), target, self.next_token_logprobs(prompt, prev)
            prev = token

    def sequence_logprob(self, prompt, response):
        total = 0.0
        for _, target, logprobs in self._steps(prompt, response):
            total += float(logprobs[target])
        return total

    def sequence_logprob_grad(self, prompt, response):
        """d sequence_logprob / d logit rows, as {context key: gradient row}."""
        grads = {}
        for key, target, logprobs in self._steps(prompt, response):
            row = grads.setdefault(key, np.zeros(len(self.vocab)))
            row -= np.exp(logprobs)
            row[target] += 1.0
        return grads

    def apply_update(self, grads, step_size):
        """Gradient descent on the logit rows: ``rows -= step_size * grads``."""
        for key, grad in grads.items():
            row = self.rows.get(key)
            self.rows[key] = (np.zeros(len(self.vocab)) if row is None else row) - step_size * grad

    def generate(self, prompt, max_tokens, temperature, rng):
        tokens, prev = [], self.BOS
        for _ in range(max_tokens):
            logprobs = self.next_token_logprobs(prompt, prev)
            if temperature == 0:
                choice = int(np.argmax(logprobs))
            else:
                scaled = log_softmax(logprobs / temperature)
                choice = int(rng.choice(len(self.vocab), p=np.exp(scaled)))
            token = self.vocab[choice]
            if token == self.EOS:
                break
            tokens.append(token)
            prev = token
        return tokens

    def copy(self):
        return ToyPolicy(self.vocab, {key: row.copy() for key, row in self.rows.items()}, self.config_hash)

    def extended(self, tokens):
        """Copy with ``tokens`` appended to the vocabulary; new logits start at zero."""
        new = [t for t in dict.fromkeys(tokens) if t not in self._ids]
        if not new:
            return self.copy()
        vocab = [t for t in self.vocab if t != self.EOS] + sorted(new) + [self.EOS]
        old_index = [self._ids[t] if t in self._ids else None for t in vocab]
        rows = {}
        for key, row in self.rows.items():
            rows[key] = np.array([row[i] if i is not None else 0.0 for i in old_index])
        return ToyPolicy(vocab, rows, self.config_hash)

    def to_dict(self):
        return {
            "format": SNAPSHOT_FORMAT,
            "config_hash": self.config_hash,
            "vocab": list(self.vocab),
            "rows": {key: [float(x) for x in self.rows[key]] for key in sorted(self.rows)},
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != SNAPSHOT_FORMAT:
            raise DataError(f"unsupported toy policy snapshot format {data.get('format')!r}")
        return cls(data["vocab"], data["rows"], data.get("config_hash", ""))

    def save(self, path):
        return write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(Path(path)))
