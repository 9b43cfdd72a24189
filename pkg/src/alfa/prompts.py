"""Vanilla anomaly prompt pool: template-grammar expansion plus cached
LLM-generated descriptions."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

NORMAL = "normal"
ABNORMAL = "abnormal"
POLARITIES = (NORMAL, ABNORMAL)

TEMPLATE_PLACEHOLDER = "{Ω}"  # {Ω} — slot for the state phrase
CLASS_PLACEHOLDER = "ς"       # ς  — slot for the class name


class PromptError(Exception):
    pass


class LlmError(PromptError):
    pass


@dataclass(frozen=True)
class AnomalyPrompt:
    text: str
    polarity: str          # "normal" | "abnormal"
    source: str            # "template" | "llm"
    class_name: str

    def __post_init__(self):
        if not self.text:
            raise PromptError("prompt text must be non-empty")
        if self.polarity not in POLARITIES:
            raise PromptError(f"bad polarity {self.polarity!r}")


@dataclass
class PromptSet:
    class_name: str
    prompts: list[AnomalyPrompt]

    @property
    def counts(self) -> tuple[int, int, int, int]:
        """(n_template_normal, n_template_abnormal, n_llm_normal, n_llm_abnormal)."""
        c = {("template", NORMAL): 0, ("template", ABNORMAL): 0,
             ("llm", NORMAL): 0, ("llm", ABNORMAL): 0}
        for p in self.prompts:
            c[(p.source, p.polarity)] += 1
        return (c[("template", NORMAL)], c[("template", ABNORMAL)],
                c[("llm", NORMAL)], c[("llm", ABNORMAL)])

    def by_polarity(self, polarity: str) -> list[AnomalyPrompt]:
        return [p for p in self.prompts if p.polarity == polarity]

    def validate(self) -> None:
        if not self.by_polarity(NORMAL) or not self.by_polarity(ABNORMAL):
            raise PromptError("prompt set needs at least one prompt per polarity")

    def to_json(self) -> str:
        return json.dumps(
            {"class": self.class_name,
             "prompts": [{"text": p.text, "polarity": p.polarity, "source": p.source}
                         for p in self.prompts]},
            sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PromptSet":
        raw = json.loads(text)
        name = raw["class"]
        return cls(name, [AnomalyPrompt(p["text"], p["polarity"], p["source"], name)
                          for p in raw["prompts"]])


# Shipped default grammar: 8 domain templates x 9 states per polarity,
# with an "image" -> "photo" enhancement doubling the pool.
DEFAULT_TEMPLATES = [
    "an image of a {Ω}",
    "a close-up image of a {Ω}",
    "an industrial image of a {Ω}",
    "a manufacturing image of a {Ω}",
    "a production image of a {Ω}",
    "a textural image of a {Ω}",
    "a surface image of a {Ω}",
    "a cross-section image of a {Ω}",
]
DEFAULT_NORMAL_STATES = [
    "ς",
    "normal ς",
    "undamaged ς",
    "flawless ς",
    "perfect ς",
    "unblemished ς",
    "ς without flaw",
    "ς without defect",
    "ς without damage",
]
DEFAULT_ABNORMAL_STATES = [
    "abnormal ς",
    "damaged ς",
    "flawed ς",
    "imperfect ς",
    "impaired ς",
    "blemished ς",
    "ς with flaw",
    "ς with defect",
    "ς with damage",
]
DEFAULT_ENHANCEMENTS = [("image", "photo")]
# Ambiguous benchmark class names mapped to plainer object names; user-editable.
DEFAULT_CLASS_ALIASES = {
    "pcb1": "printed circuit board",
    "pcb2": "printed circuit board",
    "pcb3": "printed circuit board",
    "pcb4": "printed circuit board",
    "macaroni1": "macaroni",
    "macaroni2": "macaroni",
}


@dataclass
class TemplateGrammar:
    templates: list[str] = field(default_factory=lambda: list(DEFAULT_TEMPLATES))
    normal_states: list[str] = field(default_factory=lambda: list(DEFAULT_NORMAL_STATES))
    abnormal_states: list[str] = field(default_factory=lambda: list(DEFAULT_ABNORMAL_STATES))
    enhancements: list[tuple[str, str]] = field(default_factory=lambda: list(DEFAULT_ENHANCEMENTS))
    class_aliases: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CLASS_ALIASES))

    def validate(self) -> None:
        if not self.templates:
            raise PromptError("grammar has no templates")
        if not self.normal_states or not self.abnormal_states:
            raise PromptError("grammar needs states for both polarities")
        for t in self.templates:
            if t.count(TEMPLATE_PLACEHOLDER) != 1:
                raise PromptError(f"template {t!r} must contain exactly one {TEMPLATE_PLACEHOLDER}")
        for s in self.normal_states + self.abnormal_states:
            if s.count(CLASS_PLACEHOLDER) != 1:
                raise PromptError(f"state {s!r} must contain exactly one {CLASS_PLACEHOLDER}")

    @classmethod
    def from_file(cls, path) -> "TemplateGrammar":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        g = cls(
            templates=raw.get("templates", list(DEFAULT_TEMPLATES)),
            normal_states=raw.get("normal_states", list(DEFAULT_NORMAL_STATES)),
            abnormal_states=raw.get("abnormal_states", list(DEFAULT_ABNORMAL_STATES)),
            enhancements=[tuple(e) for e in raw.get("enhancements", DEFAULT_ENHANCEMENTS)],
            class_aliases=raw.get("class_aliases", dict(DEFAULT_CLASS_ALIASES)),
        )
        g.validate()
        return g


def expand_templates(grammar: TemplateGrammar, class_name: str) -> PromptSet:
    """Cartesian template x state expansion plus enhancement variants, deduplicated."""
    grammar.validate()
    name = grammar.class_aliases.get(class_name, class_name)

    prompts: list[AnomalyPrompt] = []
    for polarity, states in ((NORMAL, grammar.normal_states),
                             (ABNORMAL, grammar.abnormal_states)):
        base = []
        for tpl in grammar.templates:
            for state in states:
                phrase = state.replace(CLASS_PLACEHOLDER, name)
                base.append(tpl.replace(TEMPLATE_PLACEHOLDER, phrase))
        texts = list(base)
        for find, repl in grammar.enhancements:
            texts.extend(t.replace(find, repl) for t in base if find in t)
        seen: set[str] = set()
        for t in texts:
            if t not in seen:
                seen.add(t)
                prompts.append(AnomalyPrompt(t, polarity, "template", class_name))
    return PromptSet(class_name, prompts)


@dataclass
class LlmConfig:
    endpoint: str = ""
    model: str = "gpt-3.5-turbo-instruct"
    max_tokens: int = 50
    temperature: float = 0.9
    count: int = 100               # completions requested per polarity
    cache_path: str | None = None
    api_key_env: str = "ALFA_API_KEY"
    request_delay: float = 0.0     # politeness delay between requests, seconds
    timeout: float = 30.0

    def validate(self) -> None:
        if self.max_tokens <= 0:
            raise PromptError("max_tokens must be positive")
        if self.temperature < 0:
            raise PromptError("temperature must be non-negative")
        if self.count < 0:
            raise PromptError("count must be non-negative")


def llm_query(class_name: str, polarity: str) -> str:
    """The completion query for one polarity, with the syntactic-consistency suffix."""
    if polarity == ABNORMAL:
        head = f"Describe what the image will look like if there is an anomaly in the image of {class_name}."
        prefix = f"An abnormal image of {class_name}"
    else:
        head = f"Describe what the image will look like if the {class_name} is normal."
        prefix = f"A normal image of {class_name}"
    return f"{head} Please state the description beginning with: {prefix}."


def _required_prefix(class_name: str, polarity: str) -> str:
    return (f"An abnormal image of {class_name}" if polarity == ABNORMAL
            else f"A normal image of {class_name}")


def trim_sentence(text: str, prefix: str) -> str:
    """Cut at the first period after the required prefix; max_tokens responses may run on."""
    text = text.strip()
    start = len(prefix) if text.startswith(prefix) else 0
    dot = text.find(".", start)
    if dot >= 0:
        text = text[:dot + 1]
    return text


def _load_cache(path) -> dict[str, str]:
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _save_cache(path, cache: dict[str, str]) -> None:
    if not path:
        return
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(cache, fh, sort_keys=True, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _default_post(config: LlmConfig, query: str) -> str:
    import requests

    headers = {}
    key = os.environ.get(config.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    resp = requests.post(
        config.endpoint,
        json={"model": config.model, "prompt": query,
              "max_tokens": config.max_tokens, "temperature": config.temperature},
        headers=headers,
        timeout=config.timeout,
    )
    resp.raise_for_status()
    return resp.json()["choices"][0]["text"]


def llm_generate(config: LlmConfig, class_name: str, polarity: str,
                 post=None) -> list[AnomalyPrompt]:
    """Fetch ``config.count`` single-sentence descriptions for one polarity.

    Responses are cached keyed by (model, class, polarity, index); on network
    failure a cached entry is served, and missing entries raise.  ``post`` is
    the transport, injectable for tests.
    """
    config.validate()
    if config.count == 0:
        return []
    post = post or _default_post
    name = class_name  # alias substitution happens in build_vanilla_pool
    query = llm_query(name, polarity)
    prefix = _required_prefix(name, polarity)

    cache = _load_cache(config.cache_path)
    dirty = False
    texts: list[str] = []
    for i in range(config.count):
        key = f"{config.model}/{class_name}/{polarity}/{i}"
        if key in cache:
            texts.append(cache[key])
            continue
        try:
            raw = post(config, query)
            if config.request_delay:
                time.sleep(config.request_delay)
        except Exception as exc:
            raise LlmError(
                f"LLM request failed and no cache entry for {key}: {exc}") from exc
        if not isinstance(raw, str) or not raw.strip():
            log.warning("malformed LLM response for %s, skipping", key)
            continue
        text = trim_sentence(raw, prefix)
        cache[key] = text
        dirty = True
        texts.append(text)
    if dirty:
        _save_cache(config.cache_path, cache)

    out, seen = [], set()
    for t in texts:
        if t and t not in seen:
            seen.add(t)
            out.append(AnomalyPrompt(t, polarity, "llm", class_name))
    return out


def build_vanilla_pool(grammar: TemplateGrammar, llm_config: LlmConfig | None,
                       class_name: str, post=None) -> PromptSet:
    """Template prompts first (generation order), then LLM prompts (cache index order)."""
    pool = expand_templates(grammar, class_name)
    prompts = list(pool.prompts)
    if llm_config is not None and llm_config.count > 0:
        alias = grammar.class_aliases.get(class_name, class_name)
        for polarity in POLARITIES:
            generated = llm_generate(llm_config, alias, polarity, post=post)
            # keep the benchmark class name on the record even when aliased
            prompts.extend(AnomalyPrompt(p.text, p.polarity, p.source, class_name)
                           for p in generated)
    out = PromptSet(class_name, prompts)
    out.validate()
    return out
