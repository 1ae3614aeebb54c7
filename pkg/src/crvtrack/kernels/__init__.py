"""Numerical kernels of the view-aware tracker: tokens, attention, BAR, CGCT and losses."""

from .attention import (
    AttentionWeights,
    MHAParams,
    ViewTokenState,
    dynamic_view_token,
    ema_smooth,
    l2_normalize,
    multi_head_attention,
    softmax,
    text_update,
    vcca,
    visual_update,
)
from .bar import BarInputs, BarOutput, bar_bias_label, bar_fuse, object_tokens
from .cgct import CgctInputs, MLP, cgct_embed, cgct_grad, cgct_loss, film_modulate, fused_feature, masked_pool
from .gradcheck import NumericError, central_difference, finite_diff_grad_check
from .losses import (
    DomainError,
    ProposalWeights,
    bar_loss,
    bar_loss_grad,
    clip_prob,
    dice_loss,
    focal_loss,
    gbce_grad,
    gbce_loss,
    proposal_grad,
    proposal_losses,
    rank_hinge_grad,
    rank_hinge_loss,
    smooth_l1,
    soft_iou_target,
    vc_cma_grad,
    vc_cma_loss,
)
