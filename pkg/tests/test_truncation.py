import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phishdebate.truncation import (
    NOTICE_SUFFIX,
    TRUNCATION_NOTICE,
    BudgetError,
    TokenBudget,
    estimate_tokens,
    truncate_html,
    truncate_text,
)


def budget(html=64, text=64, cpt=4):
    return TokenBudget("test", html, text, cpt)


def brute_force_html_cut(html, b):
    """Longest prefix ending at '>' whose estimate leaves room for the notice."""
    room = b.html_token_limit - math.ceil(Fraction(len(NOTICE_SUFFIX)) / Fraction(b.chars_per_token))
    best = None
    for i, ch in enumerate(html):
        if ch == ">" and math.ceil(Fraction(i + 1) / Fraction(b.chars_per_token)) <= room:
            best = i + 1
    return best


@pytest.mark.parametrize("n, expected", [(0, 0), (400, 100), (401, 101), (1, 1), (4, 1)])
def test_estimate_tokens(n, expected):
    assert estimate_tokens("x" * n, budget()) == expected


def test_fractional_ratio_is_exact():
    assert estimate_tokens("x" * 7, budget(cpt=3.5)) == 2
    assert estimate_tokens("x" * 8, budget(cpt=3.5)) == 3


@pytest.mark.parametrize("kwargs", [{"html": 63}, {"text": 10}, {"cpt": 0}, {"cpt": -1}, {"html": 64.0}])
def test_budget_validation(kwargs):
    with pytest.raises(ValueError):
        budget(**kwargs)


def test_notice_is_its_own_line():
    assert NOTICE_SUFFIX == "\n" + TRUNCATION_NOTICE


def test_short_html_unchanged():
    html = "<p>short</p>"
    assert truncate_html(html, budget(html=8000)) == (html, False)


def test_ten_tags_keep_four():
    # Each tag is 50 chars; limit 64 tokens at 4 chars/token leaves room for four.
    tag = "<p " + "x" * 46 + ">"
    assert len(tag) == 50
    html = tag * 10
    notice_tokens = estimate_tokens(NOTICE_SUFFIX, budget())
    assert (64 - notice_tokens) * 4 // 50 == 4
    out, cut = truncate_html(html, budget())
    assert cut
    assert out == tag * 4 + NOTICE_SUFFIX


def test_no_tag_boundary_within_budget_is_an_error():
    with pytest.raises(BudgetError):
        truncate_html("<" + "a" * 1000 + ">", budget())


def test_text_examples():
    assert truncate_text("a b c", budget(text=8000)) == ("a b c", False)
    assert truncate_text("", budget()) == ("", False)


def test_long_text_cut_at_word_boundary():
    words = " ".join(f"word{i:03d}" for i in range(100))
    out, cut = truncate_text(words, budget())
    assert cut and out.endswith(NOTICE_SUFFIX)
    head = out[: -len(NOTICE_SUFFIX)]
    assert words.startswith(head)
    assert words[len(head)] == " "
    assert not head.endswith(" ")
    # allowance: (64 - 12) * 4 = 208 chars; words are 7 chars plus a space
    assert len(head) == 207


def test_unbroken_text_falls_back_to_hard_cut():
    out, cut = truncate_text("x" * 1000, budget())
    assert cut
    assert out == "x" * 208 + NOTICE_SUFFIX


html_pieces = st.lists(
    st.one_of(
        st.sampled_from(["<p>", "</p>", "<div class='a'>", "</div>", "<br>", "<input type=password>"]),
        st.text(alphabet="abc xyz", min_size=1, max_size=30),
    ),
    max_size=120,
)


@settings(max_examples=300, deadline=None)
@given(html_pieces, st.integers(64, 200), st.sampled_from([1, 2, 3, 3.5, 4, 5]))
def test_html_truncation_properties(pieces, limit, cpt):
    html = "".join(pieces)
    b = budget(html=limit, cpt=cpt)
    expected = brute_force_html_cut(html, b)
    try:
        out, cut = truncate_html(html, b)
    except BudgetError:
        assert estimate_tokens(html, b) > limit and expected is None
        return
    assert estimate_tokens(out, b) <= limit
    assert cut == out.endswith(NOTICE_SUFFIX)
    assert cut == (estimate_tokens(html, b) > limit)
    if cut:
        head = out[: -len(NOTICE_SUFFIX)]
        assert html.startswith(head) and head.endswith(">")
        assert len(head) == expected
    else:
        assert out == html


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="ab \n\t", max_size=800), st.integers(64, 150), st.sampled_from([1, 2, 4, 4.5]))
def test_text_truncation_properties(text, limit, cpt):
    b = budget(text=limit, cpt=cpt)
    out, cut = truncate_text(text, b)
    assert estimate_tokens(out, b) <= limit
    assert cut == (estimate_tokens(text, b) > limit)
    if cut:
        head = out[: -len(NOTICE_SUFFIX)]
        assert text.startswith(head)
    else:
        assert out == text
