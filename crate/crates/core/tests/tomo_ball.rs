use holotomo::tomo::{cg_tomo, uniform_angles, RadonOperator};
use ndarray::Array3;

#[test]
fn ball_reconstruction_from_sixty_angles() {
    let n = 64;
    let voxel = 1e-7;
    let c = (n as f64 - 1.0) / 2.0;
    let delta = 1e-6;
    // Partial-volume edge: linear ramp over one voxel.
    let truth = Array3::from_shape_fn((n, n, n), |(z, y, x)| {
        let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt();
        delta * (20.5 - r).clamp(0.0, 1.0)
    });
    let op = RadonOperator::new(n, voxel, &uniform_angles(60)).unwrap();
    let sino = op.forward(&truth).unwrap();
    let out = cg_tomo(&op, &sino, 200, None).unwrap();
    let err = (&out.volume - &truth).mapv(|v| v * v).sum().sqrt() / truth.mapv(|v| v * v).sum().sqrt();
    assert!(err < 5e-2, "relative error {err}");
    assert!(out.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}
