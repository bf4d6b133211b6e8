use crate::diffusion::Context;
use crate::geom::Vec2;
use crate::percept::DepthFrame;

/// Columns of the horizon row are min-pooled into this many bins.
pub const DEPTH_BINS: usize = 8;
/// Goal direction (2) + depth bins + null-goal flag.
pub const CONTEXT_DIM: usize = 2 + DEPTH_BINS + 1;

/// Row whose rays are closest to horizontal.
pub fn horizon_row(frame: &DepthFrame) -> usize {
    (frame.intrinsics.cy - 0.5).round().clamp(0.0, (frame.height - 1) as f64) as usize
}

/// Min-pooled horizon-row ranges over equal column groups, divided by
/// `max_range`. Columns without a return count as `max_range`.
pub fn horizon_bins(frame: &DepthFrame, max_range: f64) -> [f64; DEPTH_BINS] {
    let row = horizon_row(frame);
    let mut bins = [1.0f64; DEPTH_BINS];
    for u in 0..frame.width {
        let b = u * DEPTH_BINS / frame.width;
        let r = frame.range(u, row).map_or(1.0, |r| (r / max_range).min(1.0));
        bins[b] = bins[b].min(r);
    }
    bins
}

/// Policy conditioning: ego-frame goal direction (zeros plus a set flag when
/// there is no goal) and coarse free-space ranges.
pub fn policy_context(frame: &DepthFrame, max_range: f64, goal: Option<Vec2>) -> Context {
    let mut c = Vec::with_capacity(CONTEXT_DIM);
    match goal.and_then(Vec2::normalized) {
        Some(g) => c.extend([g.x, g.y]),
        None => c.extend([0.0, 0.0]),
    }
    c.extend(horizon_bins(frame, max_range));
    c.push(if goal.is_some() { 0.0 } else { 1.0 });
    Context(c)
}
