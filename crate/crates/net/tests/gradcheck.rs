use imt_autograd::{inject_backward_fault, OpKind};
use imt_net::check::GradientProblem;
use imt_net::model::Mode;
use imt_net::ModelConfig;

fn config() -> ModelConfig {
    ModelConfig {
        channels: 16,
        heads: 2,
        window: 4,
        patch: 1,
        cells_per_block: 2,
        slice_depth: 2,
    }
}

#[test]
fn full_model_and_loss_match_finite_differences() {
    let p = GradientProblem::phantom(config(), 2, 16, 3).unwrap();
    let err = p.max_relative_error(200, 1e-4, 11).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn eval_mode_matches_finite_differences() {
    let mut p = GradientProblem::phantom(ModelConfig { channels: 8, ..config() }, 2, 8, 4).unwrap();
    p.mode = Mode::Eval;
    // fresh running statistics leave activations at input scale, so the
    // truncation error at h = 1e-4 is large; it shrinks as h²
    let err = p.max_relative_error(60, 1e-6, 12).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn corrupted_derivative_is_detected() {
    let p = GradientProblem::phantom(ModelConfig { channels: 8, ..config() }, 2, 8, 5).unwrap();
    for kind in [OpKind::MatMul, OpKind::Attention, OpKind::BatchNorm] {
        inject_backward_fault(Some(kind));
        let err = p.max_relative_error(40, 1e-4, 13);
        inject_backward_fault(None);
        let err = err.unwrap();
        assert!(err > 1e-2, "{kind:?}: fault went unnoticed ({err})");
    }
}
