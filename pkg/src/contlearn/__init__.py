"""contlearn: a task-incremental continual-learning workbench.

Learning-without-Forgetting with temperature-scaled distillation, the
EWC/IMM/fine-tune/joint baselines, ResNet/WideResNet and AlexNet-like
architectures with hand-written backpropagation, the ACC/BWT evaluation
protocol, and a reproducible multi-seed experiment runner.
"""

__version__ = "0.1.0"

from .data import AugPolicy, Dataset, TaskSequence, augment, split_tasks, synth_tasks
from .metrics import RMatrix, RunResult, acc_final, aggregate, bwt_final, curves
from .nn import MultiHeadNetwork, cross_entropy, init_params, make_network, softmax
from .runner import run_lifecycle
from .strategies import distill_loss, make_strategy, temperature_scale
from .tensor import Prng
from .train import evaluate, train_task

__all__ = [
    "AugPolicy", "Dataset", "TaskSequence", "augment", "split_tasks", "synth_tasks",
    "RMatrix", "RunResult", "acc_final", "aggregate", "bwt_final", "curves",
    "MultiHeadNetwork", "cross_entropy", "init_params", "make_network", "softmax",
    "run_lifecycle", "distill_loss", "make_strategy", "temperature_scale",
    "Prng", "evaluate", "train_task", "__version__",
]
