"""Environment registry."""
from agentmixer.envs.base import MultiAgentEnv, StepResult
from agentmixer.envs.bridge import BridgeCrossing
from agentmixer.envs.climbing import CLIMBING_PAYOFF, MatrixGame, load_payoff
from agentmixer.envs.ice_lake import ice_lake_tabular
from agentmixer.envs.predator_prey import PredatorPrey
from agentmixer.envs.spread import ContinuousSpread
from agentmixer.envs.tabular import TabularEnv, TabularPomdp, value_iteration


def make_env(name, **params):
    if name == "climbing":
        payoff_file = params.pop("payoff_file", None)
        if payoff_file is not None:
            params["payoff"] = load_payoff(payoff_file)
        return MatrixGame(**params)
    if name == "predator_prey":
        return PredatorPrey(**params)
    if name == "bridge_crossing":
        return BridgeCrossing(**params)
    if name == "continuous_spread":
        return ContinuousSpread(**params)
    if name == "ice_lake":
        observable = params.pop("observable", False)
        return TabularEnv(ice_lake_tabular(observable=observable), **params)
    raise ValueError(
        f"unknown environment {name!r}; known: climbing, predator_prey, "
        "bridge_crossing, continuous_spread, ice_lake"
    )
