//! Every training loss against central finite differences.

mod common;

use common::gradcheck::{self, REL_TOL};

#[test]
fn clip_loss_gradient() {
    assert!(gradcheck::clip_loss_gradient() < REL_TOL);
}

#[test]
fn value_loss_gradient() {
    assert!(gradcheck::value_loss_gradient() < REL_TOL);
}

#[test]
fn entropy_gradient() {
    assert!(gradcheck::entropy_gradient() < REL_TOL);
}

#[test]
fn kl_loss_gradient() {
    assert!(gradcheck::kl_loss_gradient() < REL_TOL);
}

#[test]
fn l2_penalty_gradient() {
    assert!(gradcheck::l2_penalty_gradient() < REL_TOL);
}
