import numpy as np
import pytest

from onestep_sr.services.prompt_engine import (PromptCondition, Vocabulary, build_prompt, encode_prompt,
                                               extract_tags, load_stoplist, load_tag_table, load_word_list, tokenize)


@pytest.fixture
def vocab():
    return Vocabulary(97, 8, seed=0, stoplist=frozenset({'blurry', 'noisy'}), dtype='float64')


def test_tokenize_splits_on_commas_and_whitespace():
    assert tokenize("Bright, textured  sky,clean") == ['bright', 'textured', 'sky', 'clean']


def test_encode_pads_and_masks_padding(vocab):
    cond = encode_prompt("sharp, clean", vocab, 5)

    assert cond.c.shape == (5, 8)
    assert cond.m.tolist() == [1, 1, 0, 0, 0]


def test_encode_truncates_long_prompts(vocab):
    cond = encode_prompt("a b c d e f g", vocab, 3)

    assert cond.m.tolist() == [1, 1, 1]
    assert np.array_equal(cond.c[0], vocab.table[vocab.token_id('a')])


def test_stoplist_tokens_are_masked_but_embedded(vocab):
    cond = encode_prompt("blurry, sharp", vocab, 3)

    assert cond.m.tolist() == [0, 1, 0]
    assert np.array_equal(cond.c[0], vocab.table[vocab.token_id('blurry')])


def test_prompt_made_only_of_stop_words_fails(vocab):
    with pytest.raises(ValueError):
        encode_prompt("blurry noisy", vocab, 4)


def test_encoding_is_deterministic(vocab):
    other = Vocabulary(97, 8, seed=0, dtype='float64')

    assert np.array_equal(encode_prompt("clean sky", vocab, 4).c, encode_prompt("clean sky", other, 4).c)


def test_build_prompt_appends_template():
    assert build_prompt(['dark', 'flat'], 'clean') == 'dark, flat, clean'
    with pytest.raises(ValueError):
        build_prompt(['dark'], '')


def test_extract_tags_reads_luminance_and_edges():
    table = load_tag_table()
    black = np.zeros((3, 16, 16))

    assert extract_tags(black, table) == ['dark', 'flat']


def test_extract_tags_adds_hue_for_colorful_images():
    table = load_tag_table()
    red = np.zeros((3, 16, 16))
    red[0] = 0.9

    assert extract_tags(red, table)[-1] == 'red'


def test_condition_rejects_all_masked_rows():
    with pytest.raises(ValueError):
        PromptCondition(np.zeros((3, 4)), np.zeros(3))


def test_condition_broadcasts_over_batch():
    cond = PromptCondition(np.ones((3, 4)), np.array([1.0, 1.0, 0.0])).batched(5)

    assert cond.c.shape == (5, 3, 4)
    assert cond.m.shape == (5, 3)


def test_packaged_stoplist_contains_degradation_words():
    assert {'blurry', 'noisy', 'jpeg'} <= load_stoplist()


def test_word_list_skips_comments_and_blanks(tmp_path):
    path = tmp_path / 'words.txt'
    path.write_text("# header\nalpha\n\n  beta  \n", encoding='utf-8')

    assert load_word_list(str(path)) == ['alpha', 'beta']


def test_word_list_falls_back_to_detected_encoding(tmp_path):
    path = tmp_path / 'words.txt'
    words = ['flou', 'détérioré', 'bruité', 'dégradé', 'compressé', 'pixelisé', 'très abîmé'] * 4
    path.write_bytes('\n'.join(words).encode('latin-1'))

    assert load_word_list(str(path))[:3] == ['flou', 'détérioré', 'bruité']
