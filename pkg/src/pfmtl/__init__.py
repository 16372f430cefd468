"""Parameter-free online multi-task and meta-learning with a learned bias."""
from .core import (
    Ball,
    BetState,
    DirectionState,
    ParameterError,
    ScaleViolation,
    bet_init,
    bet_step,
    direction_init,
    direction_step,
    phi,
    project_ball,
)
from .environments import Environment, Task, gen_synthetic, load_csv, split_train_test, truncate_tasks
from .evaluation import (
    BoundInputs,
    RunLedger,
    bound_fixed_bias,
    bound_meta,
    linear_regret,
    meta_transfer_estimate,
    mtl_risk,
    online_to_batch_check,
    oracle_bias,
    var_terms,
)
from .losses import LossSpec, abs_loss, full_subgradient
from .meta import MetaLearner, collect_biases, meta_end_task, meta_init, meta_observe, run_tasks
from .within_task import WithinTaskLearner, wt_init, wt_observe, wt_predict

__version__ = "0.1.0"
