"""Generation strategies: five single-stage baselines, the two-stage
base-then-refine pipeline, and its instruct-instruct ablation.

Every strategy returns exactly ``n`` accepted records or raises
BudgetExhausted; malformed generations (derails) are discarded, counted in
the manifest, and replaced by issuing extra calls, up to 3n transport calls
per stage. With a fixed global seed and mock endpoints every strategy is
bit-reproducible end to end: the prompt of call ``i`` for the
independent-style strategies is a pure function of (config, seed, i), and
per-call sampling seeds derive from (seed, stage, slot, attempt).

Single-call strategies fan out concurrently under the client's in-flight
limit; the sequential strategy is inherently serial. Records are ordered by
slot index regardless of completion order.
"""

from __future__ import annotations

import dataclasses
import math
import random
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Callable, Sequence

from .client import CompletionRequest, ModelClient
from .errors import BudgetExhausted, ConfigError, PoolTooSmall
from .prompting import (
    Derail,
    Messages,
    extract_class,
    format_example,
    load_template,
    parse_base_generation,
    parse_in_one,
    render_base_prompt,
    render_in_one_prompt,
    render_instruct_prompt,
    render_persona_prompt,
    render_refine_prompt,
    render_sequential_prompt,
    template_filename,
)
from .types import (
    Dataset,
    DomainSpec,
    FewShotExample,
    GenerationRecord,
    ModelEndpoint,
    RunManifest,
    STRATEGY_NAMES,
    canonical_json,
    record_id,
    sha256_hex,
    stable_hash_int,
    validate_domain_spec,
)


CALL_BUDGET_FACTOR = 3

_STAGE_RANK = {"generate": 0, "refine": 1}


@dataclass(frozen=True)
class StrategyConfig:
    """Which procedure to run and its knobs; part of the run config file."""

    name: str
    n: int
    k_per_call: int | None = None
    personas: tuple[str, ...] = ()
    fewshot_pool: tuple[FewShotExample, ...] = ()
    fewshot_count: int = 3
    class_schedule: tuple[str, ...] | None = None
    history_char_budget: int = 100_000
    generator: str = "instruct"

    def __post_init__(self):
        for name in ("personas", "fewshot_pool", "class_schedule"):
            value = getattr(self, name)
            if isinstance(value, list):
                object.__setattr__(self, name, tuple(value))

    def validate(self, spec: DomainSpec) -> "StrategyConfig":
        if self.name not in STRATEGY_NAMES:
            raise ConfigError(f"unknown strategy {self.name!r}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.fewshot_count < 1:
            raise ConfigError("fewshot_count must be >= 1")
        if self.name == "in_one" and (self.k_per_call is None or self.k_per_call < 2):
            raise ConfigError("in_one needs k_per_call >= 2")
        if self.name == "persona" and not self.personas:
            raise ConfigError("persona strategy needs a non-empty personas list")
        if self.name == "dynamic_fewshot" and len(self.fewshot_pool) < self.fewshot_count:
            raise PoolTooSmall(
                f"pool of {len(self.fewshot_pool)} cannot supply "
                f"{self.fewshot_count} examples per call")
        if self.generator not in ("base", "instruct"):
            raise ConfigError("generator must be 'base' or 'instruct'")
        if self.class_schedule is not None:
            unknown = set(self.class_schedule) - set(spec.class_set or ())
            if unknown:
                raise ConfigError(f"class_schedule labels not in class_set: {unknown}")
        return self

    def schedule_for(self, spec: DomainSpec) -> tuple[str, ...] | None:
        """Round-robin class schedule for conditioned domains (uniform split)."""
        if self.class_schedule is not None:
            return self.class_schedule
        if spec.label_mode == "conditioned":
            return spec.class_set
        return None


class _Budget:
    """Thread-safe cap on transport calls for one stage."""

    def __init__(self, limit: int, stage: str):
        self.limit = limit
        self.stage = stage
        self._used = 0
        self._lock = threading.Lock()

    def take(self) -> None:
        with self._lock:
            if self._used >= self.limit:
                raise BudgetExhausted(
                    f"{self.stage} stage exceeded {self.limit} transport calls")
            self._used += 1

    @property
    def used(self) -> int:
        with self._lock:
            return self._used


class _Counter:
    def __init__(self):
        self.value = 0
        self._lock = threading.Lock()

    def inc(self, amount: int = 1) -> None:
        with self._lock:
            self.value += amount


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _hash_prompt(prompt: str | None, messages: Messages | None) -> str:
    if prompt is not None:
        return sha256_hex(prompt)
    return sha256_hex(canonical_json([[r, c] for r, c in (messages or ())]))


class GenerationEngine:
    """Runs strategies against a shared client, collecting a replayable event log."""

    def __init__(self, client: ModelClient, global_seed: int = 0,
                 templates_dir=None):
        self.client = client
        self.global_seed = global_seed
        self.templates_dir = templates_dir
        self.events: list[dict[str, Any]] = []
        self._events_lock = threading.Lock()

    # -- shared machinery -------------------------------------------------

    def _seed(self, strategy: str, stage: str, slot: int, attempt: int) -> int:
        return stable_hash_int(self.global_seed, strategy, stage, slot, attempt)

    def _log(self, event: dict[str, Any]) -> None:
        with self._events_lock:
            self.events.append(event)

    def sorted_events(self) -> list[dict[str, Any]]:
        with self._events_lock:
            return sorted(
                self.events,
                key=lambda e: (_STAGE_RANK.get(e.get("stage", "generate"), 0),
                               e.get("slot", -1), e.get("attempt", -1),
                               e.get("kind", "")),
            )

    def _complete(self, endpoint: ModelEndpoint,
                  prompt: str | None, messages: Messages | None, seed: int) -> str:
        if endpoint.role == "base_completion":
            req = CompletionRequest(endpoint=endpoint, prompt=prompt, seed_tag=seed)
        else:
            req = CompletionRequest(endpoint=endpoint, messages=messages, seed_tag=seed)
        return self.client.complete(req)

    def _call_once(self, *, strategy: str, stage: str, slot: int, attempt: int,
                   endpoint: ModelEndpoint, prompt: str | None,
                   messages: Messages | None, spec: DomainSpec):
        """One transport call + parse; logs the event; returns record or Derail."""
        seed = self._seed(strategy, stage, slot, attempt)
        text = self._complete(endpoint, prompt, messages, seed)
        parsed = parse_base_generation(text, spec)
        event = {
            "kind": "call",
            "strategy": strategy,
            "stage": stage,
            "slot": slot,
            "attempt": attempt,
            "seed": seed,
            "prompt_hash": _hash_prompt(prompt, messages),
            "response": text,
            "accepted": not isinstance(parsed, Derail),
        }
        if prompt is not None:
            event["prompt"] = prompt
        if messages is not None:
            event["messages"] = [[r, c] for r, c in messages]
        if isinstance(parsed, Derail):
            event["derail_reason"] = parsed.reason
        self._log(event)
        return parsed, seed

    def _sample_slot(self, *, strategy, stage, slot, endpoint, spec, prompt_builder,
                     budget, discards, attempts):
        """Keep calling until one accepted record for this slot, within budget."""
        prompt, messages, class_label, persona = prompt_builder(slot)
        while True:
            with attempts["lock"]:
                attempt = attempts["next"].get(slot, 0)
                attempts["next"][slot] = attempt + 1
            budget.take()
            parsed, seed = self._call_once(
                strategy=strategy, stage=stage, slot=slot, attempt=attempt,
                endpoint=endpoint, prompt=prompt, messages=messages, spec=spec)
            if isinstance(parsed, Derail):
                discards.inc()
                continue
            label = class_label
            if label is None and spec.label_mode == "model_generated":
                label = extract_class(parsed.final_text, spec)
            return dataclasses.replace(
                parsed,
                id=record_id(self.global_seed, slot),
                strategy=strategy,
                class_label=label,
                persona=persona,
                prompt_hash=_hash_prompt(prompt, messages),
                seed=seed,
            )

    def _fan_out(self, n: int, worker: Callable[[int], GenerationRecord]) -> list[GenerationRecord]:
        results: dict[int, GenerationRecord] = {}
        workers = min(n, max(1, self.client.concurrency_limit))
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futures = {ex.submit(worker, slot): slot for slot in range(n)}
            error: Exception | None = None
            for fut in as_completed(futures):
                try:
                    results[futures[fut]] = fut.result()
                except Exception as exc:  # first error wins; drain the rest
                    error = error or exc
            if error is not None:
                raise error
        return [results[slot] for slot in range(n)]

    def _manifest(self, cfg: StrategyConfig, spec: DomainSpec, strategy: str,
                  endpoints: dict[str, ModelEndpoint],
                  examples: Sequence[FewShotExample],
                  discards: int, surplus: int, started: str,
                  template_kinds: Sequence[str]) -> RunManifest:
        prompt_hashes = {}
        for kind in template_kinds:
            filename = template_filename(kind, spec)
            prompt_hashes[filename] = sha256_hex(
                load_template(kind, spec, self.templates_dir))
        return RunManifest(
            requested_n=cfg.n,
            domain=spec.name,
            strategy=strategy,
            endpoints=dict(endpoints),
            few_shot_hashes=tuple(e.digest() for e in examples),
            prompt_hashes=prompt_hashes,
            global_seed=self.global_seed,
            started_at=started,
            finished_at=_now(),
            discard_count=discards,
            surplus_count=surplus,
            domain_spec=spec,
        )

    # -- single-stage strategies ------------------------------------------

    def _run_single_stage(self, cfg, spec, endpoint, examples, *, strategy,
                          prompt_builder, endpoints_name, template_kinds) -> Dataset:
        validate_domain_spec(spec)
        cfg.validate(spec)
        started = _now()
        budget = _Budget(CALL_BUDGET_FACTOR * cfg.n, "generate")
        discards = _Counter()
        attempts = {"next": {}, "lock": threading.Lock()}

        def worker(slot: int) -> GenerationRecord:
            return self._sample_slot(
                strategy=strategy, stage="generate", slot=slot, endpoint=endpoint,
                spec=spec, prompt_builder=prompt_builder, budget=budget,
                discards=discards, attempts=attempts)

        records = self._fan_out(cfg.n, worker)
        manifest = self._manifest(cfg, spec, strategy, {endpoints_name: endpoint},
                                  examples, discards.value, 0, started, template_kinds)
        return Dataset(records=tuple(records), manifest=manifest)

    def generate_independent(self, cfg: StrategyConfig, spec: DomainSpec,
                             endpoint: ModelEndpoint,
                             examples: Sequence[FewShotExample]) -> Dataset:
        """n independent samples; no cross-call conditioning. Conditioned
        domains walk the class schedule round-robin so labels split uniformly."""
        if endpoint.role not in ("base_completion", "instruct_chat"):
            raise ConfigError("independent generation needs a base or instruct endpoint")
        schedule = cfg.schedule_for(spec)
        use_base = endpoint.role == "base_completion"

        def prompt_builder(slot: int):
            label = schedule[slot % len(schedule)] if schedule else None
            if use_base:
                return (render_base_prompt(spec, examples, label, self.templates_dir),
                        None, label, None)
            return (None, render_instruct_prompt(spec, examples, label, self.templates_dir),
                    label, None)

        return self._run_single_stage(
            cfg, spec, endpoint, examples, strategy=cfg.name,
            prompt_builder=prompt_builder,
            endpoints_name="base" if use_base else "instruct",
            template_kinds=["base"] if use_base else ["instruct_fewshot"])

    def generate_persona(self, cfg: StrategyConfig, spec: DomainSpec,
                         endpoint: ModelEndpoint,
                         examples: Sequence[FewShotExample]) -> Dataset:
        """Round-robin persona prompting: slot i uses personas[i mod |personas|]."""
        if endpoint.role != "instruct_chat":
            raise ConfigError("persona prompting needs an instruct endpoint")
        schedule = cfg.schedule_for(spec)

        def prompt_builder(slot: int):
            persona = cfg.personas[slot % len(cfg.personas)]
            label = schedule[slot % len(schedule)] if schedule else None
            messages = render_persona_prompt(spec, examples, persona, label,
                                             self.templates_dir)
            return None, messages, label, persona

        return self._run_single_stage(
            cfg, spec, endpoint, examples, strategy=cfg.name,
            prompt_builder=prompt_builder, endpoints_name="instruct",
            template_kinds=["persona"])

    def generate_dynamic_fewshot(self, cfg: StrategyConfig, spec: DomainSpec,
                                 endpoint: ModelEndpoint) -> Dataset:
        """Each call draws fewshot_count examples from the pool, seeded by
        (global_seed, call index) so two runs select identical sequences."""
        if endpoint.role != "instruct_chat":
            raise ConfigError("dynamic few-shot prompting needs an instruct endpoint")
        schedule = cfg.schedule_for(spec)

        def prompt_builder(slot: int):
            rng = random.Random(stable_hash_int(self.global_seed, "dynamic_fewshot", slot))
            chosen = rng.sample(list(cfg.fewshot_pool), cfg.fewshot_count)
            label = schedule[slot % len(schedule)] if schedule else None
            messages = render_instruct_prompt(spec, chosen, label, self.templates_dir)
            return None, messages, label, None

        return self._run_single_stage(
            cfg, spec, endpoint, list(cfg.fewshot_pool), strategy=cfg.name,
            prompt_builder=prompt_builder, endpoints_name="instruct",
            template_kinds=["instruct_fewshot"])

    def generate_sequential(self, cfg: StrategyConfig, spec: DomainSpec,
                            endpoint: ModelEndpoint,
                            examples: Sequence[FewShotExample]) -> Dataset:
        """Serial generation; call i's prompt embeds all prior accepted outputs.

        When accumulated history exceeds the character budget the oldest
        generated entries are evicted (static few-shots are never evicted)
        and an eviction event is logged.
        """
        if endpoint.role != "instruct_chat":
            raise ConfigError("sequential prompting needs an instruct endpoint")
        validate_domain_spec(spec)
        cfg.validate(spec)
        started = _now()
        budget = _Budget(CALL_BUDGET_FACTOR * cfg.n, "generate")
        discards = _Counter()
        schedule = cfg.schedule_for(spec)
        static_texts = [format_example(e, spec) for e in examples]
        history: list[str] = []
        records: list[GenerationRecord] = []

        for slot in range(cfg.n):
            while sum(len(t) for t in history) > cfg.history_char_budget:
                evicted = history.pop(0)
                self._log({"kind": "eviction", "strategy": cfg.name, "stage": "generate",
                           "slot": slot, "attempt": -1, "evicted_chars": len(evicted)})
            label = schedule[slot % len(schedule)] if schedule else None
            messages = render_sequential_prompt(spec, static_texts + history, label,
                                                self.templates_dir)
            attempt = 0
            while True:
                budget.take()
                parsed, seed = self._call_once(
                    strategy=cfg.name, stage="generate", slot=slot, attempt=attempt,
                    endpoint=endpoint, prompt=None, messages=messages, spec=spec)
                if isinstance(parsed, Derail):
                    discards.inc()
                    attempt += 1
                    continue
                break
            if label is None and spec.label_mode == "model_generated":
                label = extract_class(parsed.final_text, spec)
            record = dataclasses.replace(
                parsed, id=record_id(self.global_seed, slot), strategy=cfg.name,
                class_label=label, prompt_hash=_hash_prompt(None, messages), seed=seed)
            records.append(record)
            history.append(parsed.final_text)

        manifest = self._manifest(cfg, spec, cfg.name, {"instruct": endpoint},
                                  examples, discards.value, 0, started, ["sequential"])
        return Dataset(records=tuple(records), manifest=manifest)

    def generate_in_one(self, cfg: StrategyConfig, spec: DomainSpec,
                        endpoint: ModelEndpoint,
                        examples: Sequence[FewShotExample]) -> Dataset:
        """ceil(n / k) batched calls, each yielding k delimited entries;
        shortfalls are covered by extra calls and overshoot is truncated."""
        if endpoint.role != "instruct_chat":
            raise ConfigError("in-one prompting needs an instruct endpoint")
        validate_domain_spec(spec)
        cfg.validate(spec)
        started = _now()
        k = cfg.k_per_call
        budget = _Budget(CALL_BUDGET_FACTOR * cfg.n, "generate")
        discards = _Counter()
        schedule = cfg.schedule_for(spec)
        by_call: dict[int, list[GenerationRecord]] = {}
        lock = threading.Lock()

        def issue_call(call_idx: int) -> int:
            label = schedule[call_idx % len(schedule)] if schedule else None
            messages = render_in_one_prompt(spec, examples, k, label, self.templates_dir)
            budget.take()
            seed = self._seed(cfg.name, "generate", call_idx, 0)
            text = self._complete(endpoint, None, messages, seed)
            items = parse_in_one(text)
            accepted: list[GenerationRecord] = []
            for item in items:
                parsed = parse_base_generation(item, spec)
                if isinstance(parsed, Derail):
                    discards.inc()
                    continue
                item_label = label
                if item_label is None and spec.label_mode == "model_generated":
                    item_label = extract_class(parsed.final_text, spec)
                accepted.append(dataclasses.replace(
                    parsed, strategy=cfg.name, class_label=item_label,
                    prompt_hash=_hash_prompt(None, messages), seed=seed))
            self._log({"kind": "call", "strategy": cfg.name, "stage": "generate",
                       "slot": call_idx, "attempt": 0, "seed": seed,
                       "messages": [[r, c] for r, c in messages],
                       "prompt_hash": _hash_prompt(None, messages),
                       "response": text, "accepted": bool(accepted),
                       "items_parsed": len(items), "items_accepted": len(accepted)})
            with lock:
                by_call[call_idx] = accepted
                return sum(len(v) for v in by_call.values())

        initial_calls = math.ceil(cfg.n / k)
        workers = min(initial_calls, max(1, self.client.concurrency_limit))
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(issue_call, range(initial_calls)))
        total = sum(len(v) for v in by_call.values())
        call_idx = initial_calls
        while total < cfg.n:
            total = issue_call(call_idx)
            call_idx += 1

        ordered = [rec for idx in sorted(by_call) for rec in by_call[idx]]
        surplus = len(ordered) - cfg.n
        records = [dataclasses.replace(rec, id=record_id(self.global_seed, i))
                   for i, rec in enumerate(ordered[:cfg.n])]
        manifest = self._manifest(cfg, spec, cfg.name, {"instruct": endpoint},
                                  examples, discards.value, surplus, started, ["in_one"])
        return Dataset(records=tuple(records), manifest=manifest)

    # -- refinement --------------------------------------------------------

    def refine_record(self, record: GenerationRecord, spec: DomainSpec,
                      endpoint: ModelEndpoint, examples: Sequence[FewShotExample],
                      *, slot: int = 0, attempt: int = 0) -> GenerationRecord | Derail:
        """One refine pass: edit the candidate while retaining its concept.

        The refined record keeps the candidate's id and class label;
        ``base_text`` records the stage-1 text and ``base_prompt_hash`` its
        prompt, so both stages stay auditable. The refine prompt never
        mentions the class: refinement targets realism and correctness only.
        """
        if endpoint.role != "instruct_chat":
            raise ConfigError("refinement needs an instruct endpoint")
        messages = render_refine_prompt(spec, record, examples, self.templates_dir)
        parsed, seed = self._call_once(
            strategy=record.strategy or "refine", stage="refine", slot=slot,
            attempt=attempt, endpoint=endpoint, prompt=None, messages=messages,
            spec=spec)
        if isinstance(parsed, Derail):
            return parsed
        return dataclasses.replace(
            parsed,
            id=record.id,
            strategy=record.strategy,
            base_text=record.final_text,
            class_label=record.class_label,
            persona=record.persona,
            prompt_hash=_hash_prompt(None, messages),
            base_prompt_hash=record.prompt_hash,
            seed=seed,
        )

    # -- two-stage strategies ----------------------------------------------

    def _run_two_stage(self, cfg, spec, stage1_endpoint, refine_endpoint, examples,
                       *, strategy, stage1_builder, stage1_name, template_kinds) -> Dataset:
        if refine_endpoint.role != "instruct_chat":
            raise ConfigError("refine stage needs an instruct endpoint")
        validate_domain_spec(spec)
        cfg.validate(spec)
        started = _now()
        gen_budget = _Budget(CALL_BUDGET_FACTOR * cfg.n, "generate")
        refine_budget = _Budget(CALL_BUDGET_FACTOR * cfg.n, "refine")
        discards = _Counter()
        attempts = {"next": {}, "lock": threading.Lock()}

        def sample_base(slot: int) -> GenerationRecord:
            return self._sample_slot(
                strategy=strategy, stage="generate", slot=slot,
                endpoint=stage1_endpoint, spec=spec, prompt_builder=stage1_builder,
                budget=gen_budget, discards=discards, attempts=attempts)

        stage1 = self._fan_out(cfg.n, sample_base)

        def refine_worker(slot: int) -> GenerationRecord:
            base = stage1[slot]
            refine_attempt = 0
            while True:
                refine_budget.take()
                refined = self.refine_record(base, spec, refine_endpoint, examples,
                                             slot=slot, attempt=refine_attempt)
                if not isinstance(refined, Derail):
                    return refined
                # A failed refinement regenerates the base sample rather than
                # re-refining the same text: keeps the 1:1 stage mapping
                # without biasing toward hard-to-refine candidates.
                discards.inc()
                refine_attempt += 1
                base = sample_base(slot)

        records = self._fan_out(cfg.n, refine_worker)
        endpoints = {stage1_name: stage1_endpoint, "refine": refine_endpoint}
        manifest = self._manifest(cfg, spec, strategy, endpoints, examples,
                                  discards.value, 0, started, template_kinds)
        return Dataset(records=tuple(records), manifest=manifest)

    def generate_bare(self, cfg: StrategyConfig, spec: DomainSpec,
                      base_endpoint: ModelEndpoint, refine_endpoint: ModelEndpoint,
                      examples: Sequence[FewShotExample]) -> Dataset:
        """Two stages: a base model drafts a diverse initial set, then an
        instruct model refines each entry individually. Class conditioning
        applies to stage 1 only."""
        if base_endpoint.role != "base_completion":
            raise ConfigError("bare stage 1 needs a base_completion endpoint")
        schedule = cfg.schedule_for(spec)

        def stage1_builder(slot: int):
            label = schedule[slot % len(schedule)] if schedule else None
            prompt = render_base_prompt(spec, examples, label, self.templates_dir)
            return prompt, None, label, None

        return self._run_two_stage(
            cfg, spec, base_endpoint, refine_endpoint, examples,
            strategy="bare", stage1_builder=stage1_builder, stage1_name="base",
            template_kinds=["base", "refine"])

    def generate_instruct_refine(self, cfg: StrategyConfig, spec: DomainSpec,
                                 gen_endpoint: ModelEndpoint,
                                 refine_endpoint: ModelEndpoint,
                                 examples: Sequence[FewShotExample]) -> Dataset:
        """Ablation: identical pipeline with an instruct model in stage 1."""
        if gen_endpoint.role != "instruct_chat":
            raise ConfigError("instruct_refine stage 1 needs an instruct endpoint")
        schedule = cfg.schedule_for(spec)

        def stage1_builder(slot: int):
            label = schedule[slot % len(schedule)] if schedule else None
            messages = render_instruct_prompt(spec, examples, label, self.templates_dir)
            return None, messages, label, None

        return self._run_two_stage(
            cfg, spec, gen_endpoint, refine_endpoint, examples,
            strategy="instruct_refine", stage1_builder=stage1_builder,
            stage1_name="instruct", template_kinds=["instruct_fewshot", "refine"])
