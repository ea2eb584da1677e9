use featcache_demo::explore::{channel_sensitivity, codec_explorer, shuffle_trace, TAU_SWEEP};

#[test]
fn codec_view_respects_tolerance() {
    for smooth in [0.0, 0.5, 1.0] {
        let out = codec_explorer(1e-2, smooth, 3).unwrap();
        assert!(out.max_error <= 1e-2);
        assert_eq!(out.original.len(), out.decoded.len());
        assert_eq!(out.curve.len(), TAU_SWEEP.len());
        // lossless end of the sweep stores raw bits plus framing
        assert!(out.curve[0].1 > 1.0);
    }
    let smooth = codec_explorer(1e-2, 1.0, 3).unwrap().ratio;
    let noisy = codec_explorer(1e-2, 0.0, 3).unwrap().ratio;
    assert!(smooth < noisy);
    assert!(codec_explorer(1e-2, 1.5, 3).is_err());
}

#[test]
fn channel_view_selects_lowest_scores() {
    let out = channel_sensitivity(2, 0.25).unwrap();
    assert_eq!(out.scores.len(), 8);
    assert_eq!(out.selected.len(), 2);
    let max_selected = out
        .selected
        .iter()
        .map(|&c| out.scores[c])
        .fold(f64::MIN, f64::max);
    for c in (0..8).filter(|c| !out.selected.contains(c)) {
        assert!(out.scores[c] >= max_selected);
    }
    assert_eq!(out.flipped_original.len(), 8 * out.side * out.side);
}

#[test]
fn shuffle_trace_is_chunk_cohesive() {
    let order = shuffle_trace(10, 3, 4).unwrap();
    let mut sorted = order.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    assert!(shuffle_trace(0, 3, 4).is_err());
}
