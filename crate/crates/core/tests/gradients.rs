mod common;

use common::{op_suite, unet_gradcheck};
use minidiff::UNetConfig;

#[test]
fn every_op_matches_finite_differences() {
    for (op, err) in op_suite() {
        assert!(err < 1e-5, "{op}: relative error {err:e}");
    }
}

#[test]
fn tiny_unet_matches_finite_differences() {
    let cfg = UNetConfig { class_count: Some(10), ..UNetConfig::unconditional(1, 32) };
    for (name, err) in unet_gradcheck(cfg, 11, 6) {
        assert!(err < 1e-3, "{name}: relative error {err:e}");
    }
}

#[test]
fn deeper_unet_matches_finite_differences() {
    let cfg = UNetConfig { depth_extension: true, ..UNetConfig::unconditional(3, 32) };
    for (name, err) in unet_gradcheck(cfg, 12, 4) {
        assert!(err < 1e-3, "{name}: relative error {err:e}");
    }
}
