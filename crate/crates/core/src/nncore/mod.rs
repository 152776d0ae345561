//! Minimal dense numerical core: tensors, recurrent cells, linear layers,
//! losses, optimizers, and finite-difference gradient checking.

pub mod cells;
pub mod gradcheck;
mod linear;
mod loss;
mod optim;
pub mod tensor;

pub use cells::{CellKind, RecurrentCell, StepCache};
pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use linear::Linear;
pub use loss::{
    bce_with_logit, log_sigmoid, log_sum_exp, sigmoid, softmax_cross_entropy, softmax_in_place,
    softmax_nll,
};
pub use optim::{adam_update, clip_grad_norm, sgd_update, AdamConfig, Optimizer, Parameter};
pub use tensor::{
    add_in_place, axpy, debug_assert_all_finite, dot, l2_norm, matvec, matvec_acc, outer_acc, rf,
    scale_in_place, tmatvec_acc, Real, Tensor,
};
