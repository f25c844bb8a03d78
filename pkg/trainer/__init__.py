from trainer.config import MODES, TrainConfig
from trainer.ce_baseline import CEHead, ce_loss, train_ce_baseline
from trainer.trainer_class import (Banks, EpochStats, RepCache, TrainResult, extract_rep_cache, make_batches, prepare,
                                   recluster, train, train_epoch)
