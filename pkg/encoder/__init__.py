from encoder.encoder_class import (PARAM_NAMES, EncoderConfig, EncoderParams, EncoderState, FeatureMap,
                                   ForwardCache, Representation, backward, backward_pooled, forward_batch,
                                   forward_map, init_params, momentum_update, pool, project, sgd_step)
