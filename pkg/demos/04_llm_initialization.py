"""Prompting a language model for a starting allocation, then searching the rest.

The mock provider answers with the exhaustive-search optimum, which shows the
best case.  Point MLOALLOC_LLM_ENDPOINT at a chat-completion server and swap
in HttpProvider to try a real model.
"""
import numpy as np

from mloalloc import NetworkEnv, ScenarioSpec, generate_topology, optimum
from mloalloc.llm import (MockProvider, build_prompt, conflict_pairs, oracle_reply, run_llm_bai_mcts,
                          scenario_hash, solved_example)
from mloalloc.search import BaiParams, run_bai_mcts

# %% A solved three-STA example for in-context learning
example_env = NetworkEnv(generate_topology(ScenarioSpec(stas_per_ap=(1, 1, 1)), seed=42), oracle_draws=50)
example = solved_example(example_env)

# %% The target network and its prompt
env = NetworkEnv(generate_topology(ScenarioSpec(stas_per_ap=(2, 2, 2)), seed=1))
bundle = build_prompt(env.topology, conflict_pairs(env.topology, env.params), [example], params=env.params)
print(bundle.task_description, "\n")
print(bundle.user_text()[:1500], "...\n")

# %% Mock model that knows the optimum
best = optimum(env)
mock = MockProvider({scenario_hash(env.topology): oracle_reply(best.best, env.configs)})
params = BaiParams(epsilon=0.02, delta=0.1, height=env.height, budget=2000)
target = 0.98 * best.normalized
for L in (0, 2, 4, 6):
    rng = np.random.default_rng(3)
    res = run_llm_bai_mcts(env, params, mock, L, rng, bundle, exploit_after_stop=True)
    hit = next((i + 1 for i, v in enumerate(res.trace.recommended) if v >= target), None)
    print(f"L={L}: final {env.expected(res.allocation) / best.normalized:.3f} of optimum, "
          f"98% reached at slot {hit}")

plain = run_bai_mcts(env, params, np.random.default_rng(3), exploit_after_stop=True)
print("plain search reaches", f"{env.expected(plain.allocation) / best.normalized:.3f}", "of optimum")
