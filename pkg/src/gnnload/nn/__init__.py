"""Small graph neural networks with exact reverse-mode gradients."""
from .layers import LayerSpec
from .model import (
    GnnModel,
    build_model,
    evaluate_loss,
    load_checkpoint,
    loss_and_gradients,
    model_forward,
    predict,
    save_checkpoint,
    with_self_loops,
)
from .train import (
    FULL_GRID,
    AdamState,
    GridResult,
    TrainConfig,
    TrainResult,
    adam_step,
    grid_points,
    grid_search,
    panel_arrays,
    train,
    train_arrays,
    write_loss_curve,
)
