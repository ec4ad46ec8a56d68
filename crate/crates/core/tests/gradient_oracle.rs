mod common;

use tradyn::model::TerrainMode;

#[test]
fn lookup_gradients_match_finite_differences() {
    let e = common::elbo_gradient_error(TerrainMode::Lookup);
    assert!(e <= 1e-3, "relative error {e:.3e}");
}

#[test]
fn concat_gradients_match_finite_differences() {
    let e = common::elbo_gradient_error(TerrainMode::ObservedConcat);
    assert!(e <= 1e-3, "relative error {e:.3e}");
}
