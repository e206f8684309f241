import tempfile
import threading
import time
import typing
from unittest import mock

import httpx
import openai
from django.test import SimpleTestCase

from prompting.renderer import RenderedPrompt

from .backends import MockBackend, OpenAIBackend, tokenize
from .cache import ReplayCache, completion_key, score_key
from .exceptions import CapabilityError, GatewayConfigError, GatewayTransportError, ReplayMissError
from .gateway import Gateway, GatewayMode
from .types import Completion, ModelHandle, ModelRole, SamplingParams, sequence_logprob

POLICY = ModelHandle("mathllama-7b", "http://localhost:8000/v1", "CHRONOPREF_TEST_KEY", ModelRole.POLICY)
SAMPLED = SamplingParams(temperature=0.8, top_p=0.95, n=5, max_tokens=64)


def task_prompt(instance_id="relation-00001"):
    return RenderedPrompt.from_layout((("user", "Question: when?\n(A) before (B) after\nAnswer:"),), "few_shot", instance_id)


class FlakyBackend:
    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def complete(self, handle, prompt, params, index):
        self.calls += 1
        if self.calls <= self.failures:
            raise GatewayTransportError("connection refused")
        return Completion(text=f"sample {index}")


class SlowBackend:
    def __init__(self):
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def complete(self, handle, prompt, params, index):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.01)
        with self.lock:
            self.active -= 1
        return Completion(text=prompt.instance_id)


def no_sleep(_):
    return None


class TypeTests(SimpleTestCase):
    def test_endpoint_must_be_absolute(self):
        with self.assertRaises(GatewayConfigError):
            ModelHandle("m", "/v1/chat")

    def test_greedy_implies_single_sample(self):
        with self.assertRaises(GatewayConfigError):
            SamplingParams(temperature=0.0, n=5)
        self.assertEqual(SamplingParams.greedy().n, 1)

    def test_seed_is_an_optional_int(self):
        hint = typing.get_type_hints(SamplingParams)["seed"]
        self.assertEqual(set(typing.get_args(hint)), {int, type(None)})
        self.assertIsNone(SamplingParams().seed)
        self.assertEqual(SamplingParams(seed=7).seed, 7)

    def test_top_p_range(self):
        with self.assertRaises(GatewayConfigError):
            SamplingParams(top_p=0.0)

    def test_cache_key_ignores_n_but_not_index(self):
        one = SamplingParams(n=1)
        five = SamplingParams(n=5)
        self.assertEqual(completion_key("m", "p", one, 2), completion_key("m", "p", five, 2))
        self.assertNotEqual(completion_key("m", "p", one, 2), completion_key("m", "p", one, 3))
        self.assertNotEqual(completion_key("m", "p", one, 2), completion_key("n", "p", one, 2))


class GatewayTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_sampled_params_give_n_completions(self):
        completions = Gateway(MockBackend({"relation-00001": ("A", ("A", "B"))})).complete(POLICY, task_prompt(), SAMPLED)
        self.assertEqual(len(completions), 5)
        self.assertEqual(len({c.cache_key for c in completions}), 5)

    def test_record_then_replay_is_identical(self):
        recorder = Gateway(MockBackend(), mode=GatewayMode.RECORD, cache_dir=self.tmp.name)
        recorded = recorder.complete(POLICY, task_prompt(), SamplingParams.greedy())
        replayer = Gateway(mode=GatewayMode.REPLAY, cache_dir=self.tmp.name)
        self.assertEqual(replayer.complete(POLICY, task_prompt(), SamplingParams.greedy()), recorded)
        self.assertEqual(replayer.complete(POLICY, task_prompt(), SamplingParams.greedy()), recorded)
        self.assertEqual(replayer.calls, 0)

    def test_cache_layout(self):
        gateway = Gateway(MockBackend(), mode=GatewayMode.RECORD, cache_dir=self.tmp.name)
        key = gateway.complete(POLICY, task_prompt(), SamplingParams.greedy())[0].cache_key
        self.assertTrue(ReplayCache(self.tmp.name).path_for("mathllama-7b", key).exists())
        self.assertIn(f"mathllama-7b/{key[:2]}/{key}.json", str(ReplayCache(self.tmp.name).path_for("mathllama-7b", key)))

    def test_replay_miss_names_the_key(self):
        gateway = Gateway(mode=GatewayMode.REPLAY, cache_dir=self.tmp.name)
        key = completion_key(POLICY.name, task_prompt().text, SamplingParams.greedy(), 0)
        with self.assertRaisesMessage(ReplayMissError, key):
            gateway.complete(POLICY, task_prompt(), SamplingParams.greedy())

    def test_transport_error_after_bounded_retries(self):
        backend = FlakyBackend(failures=10)
        gateway = Gateway(backend, max_retries=3, sleep=no_sleep)
        with self.assertRaises(GatewayTransportError) as ctx:
            gateway.complete(POLICY, task_prompt(), SamplingParams.greedy())
        self.assertEqual(ctx.exception.attempts, 3)
        self.assertEqual(ctx.exception.exit_code, 3)
        self.assertEqual(backend.calls, 3)

    def test_transient_failure_recovers(self):
        delays = []
        gateway = Gateway(FlakyBackend(failures=2), max_retries=3, backoff_base=1.0, sleep=delays.append)
        with self.assertLogs("llm_gateway.gateway", level="WARNING"):
            completions = gateway.complete(POLICY, task_prompt(), SamplingParams.greedy())
        self.assertEqual(completions[0].text, "sample 0")
        self.assertEqual(len(delays), 2)
        self.assertTrue(1.0 <= delays[0] <= 1.25 and 2.0 <= delays[1] <= 2.5)

    def test_in_flight_bound(self):
        backend = SlowBackend()
        gateway = Gateway(backend, max_in_flight=3)
        prompts = [task_prompt(f"relation-{i:05d}") for i in range(24)]
        results = gateway.map(lambda p: gateway.complete(POLICY, p, SamplingParams.greedy())[0].text, prompts)
        self.assertEqual(results, [p.instance_id for p in prompts])
        self.assertLessEqual(backend.peak, 3)
        self.assertLessEqual(gateway.peak_in_flight, 3)

    def test_missing_api_key_names_the_variable(self):
        gateway = Gateway(OpenAIBackend(), mode=GatewayMode.LIVE)
        with mock.patch.dict("os.environ", {}, clear=True):
            with self.assertRaisesMessage(GatewayConfigError, "CHRONOPREF_TEST_KEY"):
                gateway.require_credentials([POLICY])

    def test_mock_mode_needs_no_credentials(self):
        with mock.patch.dict("os.environ", {}, clear=True):
            Gateway(mode=GatewayMode.MOCK).require_credentials([POLICY])


class ScoreTokensTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.prompt = RenderedPrompt.raw("The meeting starts at", "p1")

    def test_empty_continuation(self):
        tokens = Gateway(mode=GatewayMode.REPLAY, cache_dir=self.tmp.name).score_tokens(POLICY, self.prompt, "")
        self.assertEqual(tokens, [])
        self.assertEqual(sequence_logprob(tokens), 0.0)

    def test_replayed_fixture_sums(self):
        key = score_key(POLICY.name, self.prompt.text, " noon today")
        ReplayCache(self.tmp.name).put(POLICY.name, key, {"tokens": [[" noon", -1.0, []], [" today", -2.0, []]]})
        gateway = Gateway(mode=GatewayMode.REPLAY, cache_dir=self.tmp.name)
        self.assertEqual(sequence_logprob(gateway.score_tokens(POLICY, self.prompt, " noon today")), -3.0)
        with self.assertRaises(ReplayMissError):
            gateway.score_tokens(POLICY, self.prompt, " noon  today")


class MockBackendTests(SimpleTestCase):
    def test_echo_ids_answer_exactly(self):
        backend = MockBackend({"a": ("B", ("A", "B", "C")), "b": ("B", ("A", "B", "C"))}, echo_ids={"a"})
        gateway = Gateway(backend)
        right = gateway.complete(POLICY, task_prompt("a"), SamplingParams.greedy())[0].text
        wrong = gateway.complete(POLICY, task_prompt("b"), SamplingParams.greedy())[0].text
        self.assertTrue(right.endswith("The answer is (B)."))
        self.assertFalse(wrong.endswith("The answer is (B)."))

    def test_judge_prompts_get_verdicts(self):
        prompt = RenderedPrompt.from_layout((("user", "Rate this. Score: <k>"),), "judge_chosen")
        texts = [c.text for c in Gateway(MockBackend(unparseable_rate=0.0)).complete(POLICY, prompt, SAMPLED)]
        self.assertTrue(all("Score: " in text for text in texts))

    def test_logprobs_are_non_positive_and_self_consistent(self):
        gateway = Gateway(MockBackend())
        prompt = RenderedPrompt.raw("Describe the schedule.", "p")
        greedy = gateway.complete(POLICY, prompt, SamplingParams.greedy(logprobs=True, top_logprobs=5))[0]
        self.assertTrue(greedy.token_logprobs)
        self.assertTrue(all(t.logprob <= 0 for t in greedy.token_logprobs))
        self.assertEqual("".join(t.token for t in greedy.token_logprobs), greedy.text)
        scored = gateway.score_tokens(POLICY, prompt, greedy.text, top_logprobs=5)
        self.assertEqual([t.rank_of(t.token) for t in scored], [1] * len(scored))

    def test_tokenize_keeps_leading_space(self):
        self.assertEqual(tokenize("a  b c"), ["a", "  b", " c"])


class OpenAIBackendTests(SimpleTestCase):
    def backend_with(self, error):
        backend = OpenAIBackend()
        client = mock.MagicMock()
        client.chat.completions.create.side_effect = error
        client.completions.create.side_effect = error
        backend._clients[(POLICY.endpoint_url, POLICY.api_key_env)] = client
        return backend

    def request(self):
        return httpx.Request("POST", "http://localhost:8000/v1/chat/completions")

    def test_connection_error_is_transport(self):
        backend = self.backend_with(openai.APIConnectionError(request=self.request()))
        gateway = Gateway(backend, mode=GatewayMode.LIVE, sleep=no_sleep)
        with self.assertRaises(GatewayTransportError) as ctx:
            gateway.complete(POLICY, task_prompt(), SamplingParams.greedy())
        self.assertEqual(ctx.exception.attempts, 3)

    def test_client_error_is_config_and_not_retried(self):
        response = httpx.Response(401, request=self.request())
        backend = self.backend_with(openai.AuthenticationError("bad key", response=response, body=None))
        gateway = Gateway(backend, mode=GatewayMode.LIVE, sleep=no_sleep)
        with self.assertRaises(GatewayConfigError):
            gateway.complete(POLICY, task_prompt(), SamplingParams.greedy())
        self.assertEqual(gateway.calls, 1)

    def test_missing_completions_endpoint_is_a_capability_error(self):
        response = httpx.Response(404, request=self.request())
        backend = self.backend_with(openai.NotFoundError("no such route", response=response, body=None))
        with self.assertRaises(CapabilityError):
            Gateway(backend, mode=GatewayMode.LIVE).score_tokens(POLICY, RenderedPrompt.raw("x"), " y")
