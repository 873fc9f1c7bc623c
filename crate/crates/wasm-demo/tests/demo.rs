use rescomp_wasm::{control, ks, lorenz};

#[test]
fn getters_expose_flat_buffers() {
    let d = lorenz(150, 3, 2500, 300).unwrap();
    assert_eq!(d.truth().len(), d.prediction().len());
    assert_eq!(d.dt(), 0.01);
    assert!(d.valid_time_lt() >= 0.0);

    let f = ks(32, 20.0, 2.0, 0).unwrap();
    assert_eq!(f.values().len(), f.rows() * f.cols());

    let c = control(100, 5, 20, 1e-3).unwrap();
    assert_eq!(c.controls().len(), 20);
    assert_eq!(c.free().len(), 40);
    assert!(c.controlled_final_norm().is_finite());
}

#[test]
fn same_seed_same_forecast() {
    let a = lorenz(100, 7, 1000, 50).unwrap();
    let b = lorenz(100, 7, 1000, 50).unwrap();
    assert_eq!(a.prediction(), b.prediction());
}
