"""Per-step compute cost and offered-load estimates."""

from typing import Tuple

from agentsim.core.model import CostModel


def step_cost(prompt_tokens: int, cached_tokens: int, output_tokens: int,
              cost_model: CostModel) -> Tuple[float, float, int]:
    """
    Cost of one inference step.

    Parameters:
    - prompt_tokens (int): tokens in the step's prompt.
    - cached_tokens (int): prompt tokens already held in KV cache.
    - output_tokens (int): tokens decoded.
    - cost_model (CostModel): token rates.

    Returns:
    - Tuple[float, float, int]: (prefill ms, decode ms, regenerated tokens).
    """
    if min(prompt_tokens, cached_tokens, output_tokens) < 0:
        raise ValueError("token counts must be >= 0")
    if cached_tokens > prompt_tokens:
        raise ValueError(f"cached tokens ({cached_tokens}) exceed prompt tokens ({prompt_tokens})")
    regen = prompt_tokens - cached_tokens
    return cost_model.prefill_ms(regen), cost_model.decode_ms(output_tokens), regen
