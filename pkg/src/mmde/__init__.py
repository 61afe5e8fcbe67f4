"""mmde: multimodal optimization with RL-selected differential-evolution strategies.

A population-based optimizer for problems with many global optima. Each
generation, a small attention-based actor-critic picks one of five search
strategies per individual; the policy is trained with PPO against a
clustering-based reward that values both solution quality and population
diversity. Ships the 20-problem CEC2013 multimodal benchmark suite and
peak-ratio / success-rate scoring.
"""

__version__ = "0.1.0"
