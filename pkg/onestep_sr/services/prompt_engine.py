import colorsys
import hashlib
import logging
import os
import re
from dataclasses import dataclass
from typing import List, Dict, Optional, Sequence, FrozenSet

import chardet
import numpy as np

from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions
from onestep_sr.models.run_configs import PromptConfig
from onestep_sr.services.tensor_ops import Rng, gaussian_fill, resolve_dtype

_RESOURCES_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'resources')
_TOKEN_SPLIT = re.compile(r'[\s,]+')

# Luminance bucket edges on mean Y, edge-density bucket edges on the fraction of strong gradients.
_LUMINANCE_EDGES = (0.2, 0.4, 0.6, 0.8)
_EDGE_DENSITY_EDGES = (0.01, 0.08, 0.25)
_EDGE_MAGNITUDE = 0.1
_SATURATION_THRESHOLD = 0.15


def load_word_list(path: str) -> List[str]:
    """
    Reads a one-entry-per-line text file, skipping blank lines and '#' comments.
    UTF-8 is tried first; other encodings are detected with chardet.

    Raises:
        ValueError: If the file cannot be decoded.
    """
    with open(path, 'rb') as file:
        raw = file.read()

    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError:
        encoding = chardet.detect(raw)['encoding']
        if encoding is None:
            raise ValueError(f'Cannot detect the text encoding of "{path}"')

        logging.warning(f'"{path}" is not UTF-8, decoding as {encoding}')
        text = raw.decode(encoding)

    words = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith('#'):
            words.append(line)

    return words


def load_tag_table(path: Optional[str] = None) -> Dict[str, str]:
    path = path or os.path.join(_RESOURCES_DIR, DefaultValuesAndOptions.TAG_TABLE_FILE)
    table = {}

    for entry in load_word_list(path):
        if '=' not in entry:
            raise ValueError(f'Malformed tag table entry "{entry}" in "{path}", expected key=tag')
        key, tag = entry.split('=', 1)
        table[key.strip()] = tag.strip()

    return table


def load_stoplist(path: Optional[str] = None) -> FrozenSet[str]:
    path = path or os.path.join(_RESOURCES_DIR, DefaultValuesAndOptions.STOPLIST_FILE)

    return frozenset(word.lower() for word in load_word_list(path))


@dataclass
class PromptCondition:
    """
    Text condition consumed by cross-attention.

    Attributes:
        c (np.ndarray): Embeddings, [T_tok, d_t] for one prompt or [B, T_tok, d_t] for a batch.
        m (np.ndarray): Binary mask with the matching leading shape; masked rows of c stay populated.
    """
    c: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        if self.c.shape[:-1] != self.m.shape:
            raise ValueError(f"Condition embeddings {self.c.shape} and mask {self.m.shape} disagree")
        if not np.all((self.m == 0) | (self.m == 1)):
            raise ValueError("Condition mask must be binary")
        if np.any(self.m.reshape(-1, self.m.shape[-1]).sum(axis=-1) == 0):
            raise ValueError("Condition mask has no unmasked token")

    def batched(self, batch: int) -> 'PromptCondition':
        """
        Returns a [B, T, d_t] view, broadcasting a single prompt over the batch.
        """
        if self.c.ndim == 2:
            return PromptCondition(np.broadcast_to(self.c, (batch,) + self.c.shape),
                                   np.broadcast_to(self.m, (batch,) + self.m.shape))
        if self.c.shape[0] != batch:
            raise ValueError(f"Condition batch {self.c.shape[0]} differs from latent batch {batch}")

        return self

    @staticmethod
    def stack(conditions: Sequence['PromptCondition']) -> 'PromptCondition':
        return PromptCondition(np.stack([cond.c for cond in conditions]),
                               np.stack([cond.m for cond in conditions]))


class Vocabulary:
    """
    Hash-bucket tokenizer with a frozen seeded embedding table and a degradation stoplist.

    Attributes:
        vocab_size (int): Number of hash buckets V.
        text_width (int): Embedding width d_t.
        seed (int): Embedding table seed.
        stoplist (FrozenSet[str]): Lowercase tokens masked out of the condition.
    """
    vocab_size: int
    text_width: int
    seed: int
    stoplist: FrozenSet[str]

    def __init__(self, vocab_size: int, text_width: int, seed: int, stoplist: FrozenSet[str] = frozenset(),
                 dtype: str = 'float32'):
        if vocab_size < 1 or text_width < 1:
            raise ValueError("Vocabulary size and text width must be positive")

        self.vocab_size = vocab_size
        self.text_width = text_width
        self.seed = seed
        self.stoplist = frozenset(word.lower() for word in stoplist)

        table = gaussian_fill(Rng(seed, (0x7E47,)), (vocab_size, text_width), np.float64) / np.sqrt(text_width)
        table = table.astype(resolve_dtype(dtype))
        table.setflags(write=False)
        self.__table = table

    @property
    def table(self) -> np.ndarray:
        return self.__table

    def token_id(self, token: str) -> int:
        digest = hashlib.sha256(token.encode('utf-8')).digest()

        return int.from_bytes(digest[:8], 'little') % self.vocab_size


def tokenize(prompt: str) -> List[str]:
    return [token for token in _TOKEN_SPLIT.split(prompt.lower()) if token]


def build_prompt(tags: Sequence[str], template: str) -> str:
    if not template:
        raise ValueError("Quality template must be non-empty")

    return ', '.join(list(tags) + [template])


def encode_prompt(prompt: str, vocab: Vocabulary, text_tokens: int) -> PromptCondition:
    """
    Tokenizes on whitespace and commas, hashes tokens into the vocabulary, then truncates or pads to
    `text_tokens`. Padding and stoplist tokens get m = 0.

    Raises:
        ValueError: If text_tokens < 1 or no token survives the mask.
    """
    if text_tokens < 1:
        raise ValueError(f"text_tokens must be >= 1, got {text_tokens}")

    tokens = tokenize(prompt)[:text_tokens]
    ids = np.zeros(text_tokens, dtype=np.int64)
    mask = np.zeros(text_tokens, dtype=vocab.table.dtype)

    for position, token in enumerate(tokens):
        ids[position] = vocab.token_id(token)
        if token not in vocab.stoplist:
            mask[position] = 1

    if not mask.any():
        raise ValueError(f'Prompt "{prompt}" has no unmasked token after stoplist suppression')

    return PromptCondition(vocab.table[ids], mask)


def _bucket(value: float, edges: Sequence[float]) -> int:
    return int(np.searchsorted(edges, value, side='right'))


def extract_tags(x: np.ndarray, tag_table: Dict[str, str]) -> List[str]:
    """
    Deterministic tags from image statistics: mean-luminance bucket, edge-density bucket and,
    for colorful images only, the hue bucket of the mean color.

    Args:
        x (np.ndarray): [3, H, W] image in [0, 1].
        tag_table (Dict[str, str]): Maps "luminance.i", "edges.i", "hue.i" to tag words.
    """
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"Expected a [3, H, W] image, got shape {x.shape}")

    image = np.asarray(x, dtype=np.float64)
    luma = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]

    grad_y = np.abs(np.diff(luma, axis=0))
    grad_x = np.abs(np.diff(luma, axis=1))
    strong = np.count_nonzero(grad_y > _EDGE_MAGNITUDE) + np.count_nonzero(grad_x > _EDGE_MAGNITUDE)
    density = strong / max(grad_y.size + grad_x.size, 1)

    tags = [tag_table[f'luminance.{_bucket(float(luma.mean()), _LUMINANCE_EDGES)}'],
            tag_table[f'edges.{_bucket(density, _EDGE_DENSITY_EDGES)}']]

    hue, saturation, _ = colorsys.rgb_to_hsv(*image.reshape(3, -1).mean(axis=1))
    if saturation > _SATURATION_THRESHOLD:
        tags.append(tag_table[f'hue.{int(round(hue * 6)) % 6}'])

    return tags


class PromptEngine:
    """
    Image -> tags -> prompt -> (c, m), with the vocabulary, stoplist, tag table and template fixed for a run.
    """
    cfg: PromptConfig
    vocab: Vocabulary
    tag_table: Dict[str, str]

    def __init__(self, cfg: Optional[PromptConfig] = None, dtype: str = 'float32'):
        self.cfg = cfg or PromptConfig()
        self.tag_table = load_tag_table(self.cfg.tag_table_path)
        self.vocab = Vocabulary(self.cfg.vocab_size, self.cfg.text_width, self.cfg.vocab_seed,
                                load_stoplist(self.cfg.stoplist_path), dtype)

    def prompt_for(self, x: np.ndarray, template: Optional[str] = None) -> str:
        return build_prompt(extract_tags(x, self.tag_table), template or self.cfg.template)

    def condition_for(self, x: np.ndarray, template: Optional[str] = None) -> PromptCondition:
        return encode_prompt(self.prompt_for(x, template), self.vocab, self.cfg.text_tokens)

    def build_condition_batch(self, images: np.ndarray, template: Optional[str] = None) -> PromptCondition:
        """
        Conditions for every image of a [B, 3, H, W] batch, stacked to [B, T_tok, d_t].
        Callers pick the tag source image (degraded input or reference) once per run.
        """
        if images.ndim != 4:
            raise ValueError(f"Expected a [B, 3, H, W] batch, got shape {images.shape}")

        return PromptCondition.stack([self.condition_for(image, template) for image in images])
