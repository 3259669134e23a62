"""Screen-sequence embedding, contrastive training, and user-flow retrieval."""

from .dataio import (
    Dataset,
    Episode,
    SynthConfig,
    filter_episodes,
    read_dataset,
    split,
    synth_dataset,
    toy_text_embed,
    write_dataset,
)
from .evalkit import EvalSpec, evaluate, median_rank, recall_at_k
from .pooler import (
    PoolerConfig,
    PoolerParams,
    SequenceBatch,
    attention_weights,
    checkpoint_id,
    forward,
    init_params,
    load_checkpoint,
    pack_sequences,
    save_checkpoint,
)
from .retrieval import (
    EmbeddingIndex,
    RetrievalResult,
    build_index,
    get_embedder,
    load_index,
    save_index,
    search,
    search_by_sequence,
    search_by_text,
)
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    contrastive_loss,
    grad,
    loss_and_grad,
    train,
)

__version__ = "0.1.0"
