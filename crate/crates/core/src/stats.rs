//! Robust location and scale helpers shared by the monitors and aggregators.

/// Consistency constant turning a MAD into a normal-equivalent standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// Floor applied to robust scales so degenerate samples never divide by zero.
pub const SCALE_FLOOR: f64 = 1e-9;

/// Median; the mean of the two middle values for even lengths. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median absolute deviation around the median.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// `1.4826 * MAD`, floored at [`SCALE_FLOOR`].
pub fn robust_scale(values: &[f64]) -> Option<f64> {
    mad(values).map(|m| (MAD_SCALE * m).max(SCALE_FLOOR))
}

/// Coordinate-wise median of equally long vectors.
pub fn coordinate_median(rows: &[&[f64]]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut column = vec![0.0; rows.len()];
    (0..dim)
        .map(|j| {
            for (c, r) in column.iter_mut().zip(rows) {
                *c = r[j];
            }
            median(&column).expect("at least one row")
        })
        .collect()
}
