"""Reply builders, scripted-backend scenarios and independent oracles for tests."""

from __future__ import annotations

import json
import random
import re
from html.parser import HTMLParser
from pathlib import Path

from hypothesis import strategies as st

from phishdebate.agents import PEER_SECTION_HEADER, AgentKind, format_agent_reply
from phishdebate.backend import JUDGE, MODERATOR, ScriptedBackend
from phishdebate.coordination import ConsensusEvaluation, Verdict
from phishdebate.ingest import ProcessedSample
from phishdebate.labels import Assessment

CASE_STUDY_URL = "https://mail.mxcapital.com.br/wp-includes/wells/wells/page/index.htm"


def agent_reply(claim: str, confidence: float, evidence: str) -> str:
    return f"- Claim: {claim}\n- Confidence: {confidence}\n- Evidence: {evidence}"


def moderator_reply(reached: bool, assessment: str, confidence: float, cont: bool | None = None,
                    reasoning: str = "evaluated") -> str:
    return json.dumps({
        "consensus": "Yes" if reached else "No",
        "assessment": assessment,
        "reasoning": reasoning,
        "confidence": confidence,
        "continue_debate": (not reached) if cont is None else cont,
    })


def judge_reply(assessment: str, confidence: float, reasoning: str = "weighed all rounds",
                summary: str = "see transcript") -> str:
    return json.dumps({
        "assessment": assessment,
        "confidence": confidence,
        "reasoning": reasoning,
        "evidence_summary": summary,
    })


def make_sample(sample_id: str = "s1", url: str = "https://login.example-bank.com.evil.io/verify",
                html: str = "<html><body><form action='x'><input type='password'></form><p>Verify now</p></body></html>",
                text: str = "Verify now", label: Assessment | None = Assessment.PHISHING) -> ProcessedSample:
    return ProcessedSample(sample_id, url, html, text, label)


def round_rule(agent: AgentKind, reply: str, debate_round: bool) -> dict:
    """Rule for one specialist; the debate-round variant must be listed first."""
    if debate_round:
        return {"role": agent.value, "contains": PEER_SECTION_HEADER, "reply": reply}
    return {"role": agent.value, "reply": reply}


def moderator_rule(round: int, reply: str) -> dict:
    return {"role": MODERATOR, "contains": f"analyses for round {round}:", "reply": reply}


def unanimous_backend(claim="PHISHING", mod_conf=0.9, verdict="PHISHING", verdict_conf=0.95, **kw) -> ScriptedBackend:
    rules = [{"role": a.value, "reply": agent_reply(claim, 0.9, f"{a.short_name} evidence")} for a in AgentKind]
    rules.append({"role": MODERATOR, "reply": moderator_reply(True, claim, mod_conf)})
    rules.append({"role": JUDGE, "reply": judge_reply(verdict, verdict_conf)})
    return ScriptedBackend(rules, **kw)


def no_consensus_backend(**kw) -> ScriptedBackend:
    claims = {AgentKind.URL_ANALYST: "PHISHING", AgentKind.HTML_STRUCTURE: "LEGITIMATE",
              AgentKind.CONTENT_SEMANTIC: "LEGITIMATE", AgentKind.BRAND_IMPERSONATION: "PHISHING"}
    rules = [{"role": a.value, "reply": agent_reply(c, 0.6, "split view")} for a, c in claims.items()]
    rules.append({"role": MODERATOR, "reply": moderator_reply(False, "UNCERTAIN", 0.5)})
    rules.append({"role": JUDGE, "reply": judge_reply("PHISHING", 0.6)})
    return ScriptedBackend(rules, **kw)


CASE_ROUND1 = {
    AgentKind.URL_ANALYST: agent_reply(
        "PHISHING", 0.85,
        "The directory string /wp-includes/wells/wells/ suggests Wells Fargo brand spoofing; "
        "legitimate sites never expose /wp-includes/."),
    AgentKind.HTML_STRUCTURE: agent_reply(
        "LEGITIMATE", 0.7, "No forms, iframes or obfuscated scripts found."),
    AgentKind.CONTENT_SEMANTIC: agent_reply(
        "LEGITIMATE", 0.7, "No persuasive or urgent language; reads like an error page."),
    AgentKind.BRAND_IMPERSONATION: agent_reply(
        "PHISHING", 0.8, "Path /wp-includes/wells/wells/ references Wells Fargo on an unrelated domain."),
}
CASE_ROUND2 = {
    AgentKind.URL_ANALYST: agent_reply("Likely Phishing", 0.9, "Irregular path outweighs everything else."),
    AgentKind.HTML_STRUCTURE: agent_reply(
        "Likely Phishing", 0.75, "Benign error pages are frequently used as decoys."),
    AgentKind.CONTENT_SEMANTIC: agent_reply(
        "Likely Phishing", 0.75, "Decoy content; the path outweighs absent credential-stealing code."),
    AgentKind.BRAND_IMPERSONATION: agent_reply("Likely Phishing", 0.85, "Wells Fargo spoofing in the path."),
}


def case_study_rules() -> dict:
    rules = []
    for agent in AgentKind:
        rules.append(round_rule(agent, CASE_ROUND2[agent], debate_round=True))
        rules.append(round_rule(agent, CASE_ROUND1[agent], debate_round=False))
    rules.append(moderator_rule(1, moderator_reply(False, "UNCERTAIN", 0.5, True,
                                                   "Agents split 2-2; no clear majority.")))
    rules.append(moderator_rule(2, moderator_reply(True, "PHISHING", 0.88, False,
                                                   "All four agents converged on phishing.")))
    rules.append({"role": JUDGE, "reply": judge_reply("PHISHING", 0.88, "The judge confirms the consensus.")})
    return {"rules": rules, "default_reply": ""}


def case_study_sample() -> ProcessedSample:
    html = "<html><head><title>404 Not Found</title></head><body><h1>Not Found</h1></body></html>"
    return ProcessedSample("case-study", CASE_STUDY_URL, html, "404 Not Found Not Found", Assessment.PHISHING)


def write_sample(root: Path, label: str, name: str, url: str, html: str) -> Path:
    d = root / label / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "url.txt").write_text(url, encoding="utf-8")
    (d / "html.txt").write_text(html, encoding="utf-8")
    return d


# -- independent HTML oracle ---------------------------------------------------

VOID_TAGS = {"area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr"}
REMOVED = {"style", "script", "noscript"}


class _EventRecorder(HTMLParser):
    """Flat event stream of a document, with adjacent text merged."""

    def __init__(self, drop_removed: bool):
        super().__init__(convert_charrefs=True)
        self.drop_removed = drop_removed
        self.events: list[tuple] = []
        self._skip_depth = 0

    def _emit(self, event):
        if event[0] == "data" and self.events and self.events[-1][0] == "data":
            self.events[-1] = ("data", self.events[-1][1] + event[1])
        else:
            self.events.append(event)

    def _is_removed(self, tag, attrs):
        if tag in REMOVED:
            return True
        if tag == "link":
            rel = dict(attrs).get("rel") or ""
            return "stylesheet" in rel.lower().split()
        return False

    def handle_starttag(self, tag, attrs):
        if self._skip_depth:
            if tag not in VOID_TAGS:
                self._skip_depth += 1
            return
        if self.drop_removed and self._is_removed(tag, attrs):
            if tag not in VOID_TAGS:
                self._skip_depth = 1
            return
        self._emit(("start", tag, tuple(sorted((k, v or "") for k, v in attrs))))

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)

    def handle_endtag(self, tag):
        if self._skip_depth:
            self._skip_depth -= 1
            return
        if tag in VOID_TAGS:
            return
        self._emit(("end", tag))

    def handle_data(self, data):
        if not self._skip_depth:
            self._emit(("data", data))

    def handle_comment(self, data):
        if not self._skip_depth:
            self._emit(("comment", data))

    def handle_decl(self, decl):
        self._emit(("decl", decl.lower()))


def html_events(html: str, drop_removed: bool = False) -> list[tuple]:
    recorder = _EventRecorder(drop_removed)
    recorder.feed(html)
    recorder.close()
    return recorder.events


def reference_sanitize_events(html: str) -> list[tuple]:
    """Event stream of ``html`` with the removal list applied by a streaming filter."""
    return html_events(html, drop_removed=True)


def reference_visible_text(html: str) -> str:
    """Whitespace-normalized concatenation of text events, outside removed elements."""
    texts = [e[1] for e in reference_sanitize_events(html) if e[0] == "data"]
    return " ".join(" ".join(texts).split())


# -- synthetic page corpus -----------------------------------------------------

_WORDS = ["account", "verify", "login", "secure", "update", "bank", "PayPal", "password", "now", "click",
          "here", "support", "team", "welcome", "home", "news", "contact", "&amp;", "&copy;", "2024", "&gt;"]


def _words(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(n))


def synthetic_page(seed: int) -> str:
    """A well-formed page mixing content with everything the cleaner must drop."""
    rng = random.Random(seed)
    head = ["<meta charset=\"utf-8\">", f"<title>{_words(rng, 3)}</title>"]
    if rng.random() < 0.8:
        head.append(f"<style>body {{ color: #{rng.randrange(0xffffff):06x}; }} p > b {{ margin: 0 }}</style>")
    if rng.random() < 0.7:
        head.append(f"<link rel=\"stylesheet\" href=\"/css/site{seed}.css\">")
    if rng.random() < 0.5:
        head.append("<link rel=\"icon\" href=\"/favicon.ico\">")
    if rng.random() < 0.6:
        head.append(f"<script>var t = '<b>{seed}</b>'; if (a < b && c > d) {{ go(); }}</script>")
    body = []
    for _ in range(rng.randint(2, 8)):
        kind = rng.randrange(9)
        if kind == 0:
            body.append(f"<p>{_words(rng, rng.randint(1, 12))}</p>")
        elif kind == 1:
            body.append(f"<div class=\"c{rng.randrange(9)}\"><span>{_words(rng, 3)}</span> {_words(rng, 2)}</div>")
        elif kind == 2:
            body.append("<form action=\"/login.php\" method=\"post\"><input type=\"text\" name=\"user\">"
                        f"<input type=\"password\" name=\"pw\"><button>{_words(rng, 1)}</button></form>")
        elif kind == 3:
            body.append(f"<noscript><img src=\"/t{seed}.gif\"><p>{_words(rng, 4)}</p></noscript>")
        elif kind == 4:
            body.append(f"<script type=\"text/javascript\">document.write(\"{_words(rng, 2)}\");</script>")
        elif kind == 5:
            body.append(f"<!-- {_words(rng, 3)} -->")
        elif kind == 6:
            items = "".join(f"<li><a href=\"/p{i}\">{_words(rng, 2)}</a></li>" for i in range(rng.randint(1, 4)))
            body.append(f"<ul>{items}</ul>")
        elif kind == 7:
            body.append(f"<iframe src=\"https://frame{seed}.example\" style=\"display:none\"></iframe>")
        else:
            body.append(f"<style>.x{seed} {{ display: none }}</style><p>{_words(rng, 2)}<br>{_words(rng, 2)}</p>")
    doctype = "<!DOCTYPE html>\n" if rng.random() < 0.7 else ""
    return f"{doctype}<html><head>{''.join(head)}</head><body>{''.join(body)}</body></html>"


def synthetic_corpus(n: int = 50) -> list[str]:
    return [synthetic_page(seed) for seed in range(n)]


# -- hypothesis strategies for canonical replies -------------------------------

_EVIDENCE_CHARS = st.characters(
    whitelist_categories=("Lu", "Ll", "Nd", "Zs"), whitelist_characters=".,;:/()'%-_?!*",
)
# A continuation line must not look like another field label.
_evidence_line = st.text(_EVIDENCE_CHARS, max_size=60).filter(
    lambda s: not re.search(r"(claim|confidence|evidence)\W*:", s, re.I)
)
confidences = st.one_of(st.none(), st.floats(0.0, 1.0, allow_nan=False))
claims = st.sampled_from(list(Assessment))
evidence_texts = st.lists(_evidence_line, min_size=1, max_size=4).map("\n".join)


@st.composite
def canonical_agent_replies(draw):
    claim, confidence, evidence = draw(claims), draw(confidences), draw(evidence_texts)
    return (claim, confidence, evidence), format_agent_reply(claim, confidence, evidence)


_free_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=80)


@st.composite
def consensus_evaluations(draw):
    reached = draw(st.booleans())
    labels = [Assessment.PHISHING, Assessment.LEGITIMATE] if reached else list(Assessment)
    return ConsensusEvaluation(
        reached=reached,
        assessment=draw(st.sampled_from(labels)),
        reasoning=draw(_free_text),
        confidence=draw(st.floats(0.0, 1.0, allow_nan=False)),
        continue_debate=False if reached else draw(st.booleans()),
    )


@st.composite
def verdicts(draw):
    return Verdict(
        assessment=draw(st.sampled_from([Assessment.PHISHING, Assessment.LEGITIMATE])),
        confidence=draw(st.floats(0.0, 1.0, allow_nan=False)),
        reasoning=draw(_free_text),
        evidence_summary=draw(_free_text),
    )


def fenced(text: str, lang: str = "json") -> str:
    return f"Here is my evaluation:\n```{lang}\n{text}\n```\nThanks."


# -- planted campaigns ---------------------------------------------------------

COT_TEMPLATE = ("STEP 1: url\nSTEP 2: content\nSTEP 3: text\nSTEP 4: technical\nSTEP 5: overall\n\n"
                "CLASSIFICATION: {label}\nCONFIDENCE: Medium\nREASONING: planted")


def planted_url(sample_id: str) -> str:
    return f"https://{sample_id.replace('/', '-')}.test/"


def planted_samples(golds: list[Assessment], prefix: str = "s") -> list[ProcessedSample]:
    samples = []
    for i, gold in enumerate(golds):
        sid = f"{prefix}{i:03d}"
        samples.append(ProcessedSample(sid, planted_url(sid), f"<p>{sid}</p>", sid, gold))
    return samples


def planted_cot_rules(outcomes: dict[str, Assessment]) -> list[dict]:
    return [{"role": "cot", "contains": planted_url(sid), "reply": COT_TEMPLATE.format(label=label.value)}
            for sid, label in outcomes.items()]


def planted_debate_rules(outcomes: dict[str, Assessment], without_url: dict[str, Assessment] | None = None) -> list[dict]:
    """Debate rules whose Judge verdict per sample follows ``outcomes``.

    The URL-seeing agents echo a per-sample marker into their evidence, and the
    Judge rule keys on it. ``without_url`` gives the verdicts used when the URL
    Analyst is excluded.
    """
    rules = []
    for sid in outcomes:
        marker = f"marker<{sid}>"
        for agent in (AgentKind.URL_ANALYST, AgentKind.BRAND_IMPERSONATION):
            rules.append({"role": agent.value, "contains": planted_url(sid),
                          "reply": agent_reply("PHISHING", 0.8, f"saw {marker}")})
    for agent in (AgentKind.HTML_STRUCTURE, AgentKind.CONTENT_SEMANTIC):
        rules.append({"role": agent.value, "reply": agent_reply("LEGITIMATE", 0.6, "nothing odd")})
    rules.append({"role": MODERATOR, "reply": moderator_reply(True, "PHISHING", 0.9)})
    for sid, label in outcomes.items():
        marker = f"marker<{sid}>"
        if without_url is not None:
            rules.append({"role": JUDGE, "contains": [marker, "[URL Analyst Agent]\nClaim"],
                          "reply": judge_reply(label.value, 0.9)})
            rules.append({"role": JUDGE, "contains": marker, "reply": judge_reply(without_url[sid].value, 0.9)})
        else:
            rules.append({"role": JUDGE, "contains": marker, "reply": judge_reply(label.value, 0.9)})
    return rules


def dataset_dir_from_samples(root: Path, samples: list[ProcessedSample]) -> Path:
    for s in samples:
        write_sample(root, s.label.value.lower(), s.id, s.url, s.cleaned_html)
    return root
