from losses.contrastive import LossOutput, mcl_loss, ocl_loss, scl_loss, total_loss
