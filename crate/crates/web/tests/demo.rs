use fairforge_web::{blend_panels, demo_predictions, fairness_report_json, quadratic_trajectory, BlendParams, PREVIEW_SIZE};

fn params() -> BlendParams {
    BlendParams {
        face_seed: 3,
        group: 2,
        scale: 1.05,
        rotation_deg: 8.0,
        brightness: 0.05,
        contrast: 1.1,
        center: (0.5, 0.5),
        half_extent: (0.25, 0.25),
        feather_px: 4.0,
        blend_ratio: 0.8,
    }
}

fn panel(bytes: &[u8], k: usize, r: usize, c: usize) -> [u8; 4] {
    let i = (r * 4 * PREVIEW_SIZE + k * PREVIEW_SIZE + c) * 4;
    [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]
}

#[test]
fn blend_panels_layout() {
    let bytes = blend_panels(&params()).unwrap();
    assert_eq!(bytes.len(), 4 * PREVIEW_SIZE * PREVIEW_SIZE * 4);
    assert!(bytes.chunks(4).all(|p| p[3] == 255));
    // Outside the mask the fake equals the source; the mask panel is black there.
    assert_eq!(panel(&bytes, 0, 0, 0), panel(&bytes, 3, 0, 0));
    assert_eq!(panel(&bytes, 2, 0, 0), [0, 0, 0, 255]);
    let mid = PREVIEW_SIZE / 2;
    assert_eq!(panel(&bytes, 2, mid, mid), [255, 255, 255, 255]);
    assert_eq!(bytes, blend_panels(&params()).unwrap());
}

#[test]
fn zero_ratio_leaves_source_untouched() {
    let bytes = blend_panels(&BlendParams { blend_ratio: 0.0, ..params() }).unwrap();
    for r in 0..PREVIEW_SIZE {
        for c in 0..PREVIEW_SIZE {
            assert_eq!(panel(&bytes, 0, r, c), panel(&bytes, 3, r, c));
        }
    }
    assert!(blend_panels(&BlendParams { group: 9, ..params() }).is_err());
}

#[test]
fn sam_and_sgd_paths() {
    let sgd = quadratic_trajectory((1.0, 1.0, 0.0), (1.0, 0.0), 0.0, 0.1, 0.0, 3).unwrap();
    assert_eq!(sgd.len(), 8);
    assert!((sgd[2] - 0.9).abs() < 1e-15);
    let sam = quadratic_trajectory((1.0, 1.0, 0.0), (1.0, 0.0), 0.05, 0.1, 0.0, 1).unwrap();
    assert!((sam[2] - 0.895).abs() < 1e-12 && sam[3].abs() < 1e-12);
    // Divergent settings stop early instead of producing infinities.
    let wild = quadratic_trajectory((50.0, 1.0, 0.0), (1.0, 1.0), 0.0, 1.0, 0.0, 500).unwrap();
    assert!(wild.len() < 1002 && wild.iter().all(|v| v.is_finite()));
    assert!(quadratic_trajectory((1.0, 1.0, 0.0), (1.0, 0.0), 0.05, -1.0, 0.0, 3).is_err());
}

#[test]
fn skew_creates_disparity() {
    let even = fairness_report_json(400, 0.0, 1, 0.5).unwrap();
    let skewed = fairness_report_json(400, 2.5, 1, 0.5).unwrap();
    let gap = |s: &str| -> f64 {
        let v: serde_json::Value = serde_json::from_str(s).unwrap();
        v["max_disparity_accuracy"].as_f64().unwrap()
    };
    assert!(gap(&skewed) > gap(&even));
    assert_eq!(demo_predictions(10, 1.0, 4), demo_predictions(10, 1.0, 4));
}
