mod common;

use common::gradients;

const TOL: f64 = 1e-3;

#[test]
fn point_distance_gradients() {
    let err = gradients::point_distances(30);
    assert!(err < TOL, "{err:.2e}");
}

#[test]
fn joint_loss_gradients() {
    let err = gradients::joint_losses_l1(20);
    assert!(err < TOL, "{err:.2e}");
}

#[test]
fn geodesic_loss_gradients() {
    let err = gradients::geodesic(20);
    assert!(err < TOL, "{err:.2e}");
}

#[test]
fn body_forward_gradients() {
    let err = gradients::body_forward(3);
    assert!(err < TOL, "{err:.2e}");
}
